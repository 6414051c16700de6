#pragma once

// Token-map visualisation: every token region gets a palette colour with a
// dark outline along region boundaries; an optional score heatmap is drawn
// to the right. Output is binary PPM (P6) or SVG.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "atoken/binary_io.hpp"
#include "atoken/cce.hpp"
#include "atoken/error.hpp"
#include "atoken/fmcore.hpp"

namespace atoken {

using Rgb = std::array<std::uint8_t, 3>;

struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> rgb;

    Image(std::size_t w, std::size_t h, Rgb fill = {255, 255, 255}) : width(w), height(h), rgb(w * h * 3) {
        for (std::size_t i = 0; i < w * h; ++i) std::copy(fill.begin(), fill.end(), rgb.begin() + i * 3);
    }
    Rgb at(std::size_t x, std::size_t y) const {
        const auto* p = rgb.data() + (y * width + x) * 3;
        return {p[0], p[1], p[2]};
    }
    void set(std::size_t x, std::size_t y, Rgb c) { std::copy(c.begin(), c.end(), rgb.begin() + (y * width + x) * 3); }
};

inline constexpr Rgb kOutline{20, 20, 20};
inline constexpr std::size_t kPaletteSize = 64;

/// Fixed palette: golden-angle hues at two brightness levels.
inline const std::array<Rgb, kPaletteSize>& token_palette() {
    static const auto palette = [] {
        std::array<Rgb, kPaletteSize> p{};
        for (std::size_t i = 0; i < kPaletteSize; ++i) {
            double h = std::fmod(static_cast<double>(i) * 137.50776405003785, 360.0) / 60.0;
            double s = 0.55 + 0.35 * static_cast<double>(i % 2);
            double v = 0.95 - 0.25 * static_cast<double>((i / 2) % 2);
            double c = v * s, x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0)), m = v - c;
            double r = 0, g = 0, b = 0;
            switch (static_cast<int>(h)) {
                case 0: r = c, g = x; break;
                case 1: r = x, g = c; break;
                case 2: g = c, b = x; break;
                case 3: g = x, b = c; break;
                case 4: r = x, b = c; break;
                default: r = c, b = x; break;
            }
            auto q = [&](double t) { return static_cast<std::uint8_t>(std::lround((t + m) * 255.0)); };
            p[i] = {q(r), q(g), q(b)};
        }
        return p;
    }();
    return palette;
}

/// Colour for a token index; 37 is odd, so the first 64 tokens never share.
inline Rgb token_color(std::size_t token) { return token_palette()[(token * 37) % kPaletteSize]; }

/// Blue -> cyan -> yellow ramp for t in [0, 1].
inline Rgb heat_color(double t) {
    t = std::clamp(t, 0.0, 1.0);
    auto lerp = [](double a, double b, double s) { return static_cast<std::uint8_t>(std::lround(a + (b - a) * s)); };
    if (t < 0.5) {
        double s = t / 0.5;
        return {lerp(20, 30, s), lerp(30, 200, s), lerp(120, 210, s)};
    }
    double s = (t - 0.5) / 0.5;
    return {lerp(30, 250, s), lerp(200, 230, s), lerp(210, 40, s)};
}

struct RenderOptions {
    std::size_t cell = 8;  // output pixels per grid pixel
    bool outline = true;
};

/// Token map from a pixel -> token owner table. With `scores`, the heatmap
/// is placed to the right of the token map.
inline Image render_token_map(std::span<const std::uint32_t> owners, std::size_t width, std::size_t height,
                              const std::optional<ScoreMap>& scores = std::nullopt, RenderOptions opt = {}) {
    require(owners.size() == width * height, "owner table does not match the grid");
    require(opt.cell >= 1, "cell size must be >= 1");
    if (scores) require(scores->width() == width && scores->height() == height, "score map does not match the grid");
    std::size_t cell = opt.cell;
    Image img(width * cell * (scores ? 2 : 1), height * cell);
    auto owner = [&](long u, long v) -> long {
        if (u < 0 || v < 0 || u >= static_cast<long>(width) || v >= static_cast<long>(height)) return -1;
        return owners[static_cast<std::size_t>(v) * width + static_cast<std::size_t>(u)];
    };
    for (std::size_t v = 0; v < height; ++v) {
        for (std::size_t u = 0; u < width; ++u) {
            long me = owner(static_cast<long>(u), static_cast<long>(v));
            Rgb fill = token_color(static_cast<std::size_t>(me));
            auto differs = [&](long du, long dv) {
                long n = owner(static_cast<long>(u) + du, static_cast<long>(v) + dv);
                return n >= 0 && n != me;
            };
            bool left = differs(-1, 0);
            bool right = differs(1, 0);
            bool up = differs(0, -1);
            bool down = differs(0, 1);
            for (std::size_t y = 0; y < cell; ++y) {
                for (std::size_t x = 0; x < cell; ++x) {
                    bool edge = opt.outline && cell >= 3 &&
                                ((left && x == 0) || (right && x == cell - 1) || (up && y == 0) || (down && y == cell - 1));
                    img.set(u * cell + x, v * cell + y, edge ? kOutline : fill);
                }
            }
        }
    }
    if (scores) {
        auto [lo, hi] = std::minmax_element(scores->values().begin(), scores->values().end());
        double span = *hi - *lo;
        for (std::size_t v = 0; v < height; ++v)
            for (std::size_t u = 0; u < width; ++u) {
                Rgb c = heat_color(span > 0 ? (scores->at(u, v) - *lo) / span : 0.5);
                for (std::size_t y = 0; y < cell; ++y)
                    for (std::size_t x = 0; x < cell; ++x) img.set((width + u) * cell + x, v * cell + y, c);
            }
    }
    return img;
}

inline Image render_token_map(const TokenSet& ts, const std::optional<ScoreMap>& scores = std::nullopt, RenderOptions opt = {}) {
    auto owners = ts.pixel_owners();
    return render_token_map(owners, ts.grid_width(), ts.grid_height(), scores, opt);
}

inline std::vector<std::uint8_t> encode_ppm(const Image& img) {
    std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.rgb.begin(), img.rgb.end());
    return out;
}

inline Image decode_ppm(const std::vector<std::uint8_t>& bytes) {
    std::string text(bytes.begin(), bytes.end());
    std::istringstream in(text);
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255 || !in) throw IoError("unsupported PPM");
    in.get();
    auto offset = static_cast<std::size_t>(in.tellg());
    if (bytes.size() - offset != w * h * 3) throw IoError("PPM payload length mismatch");
    Image img(w, h);
    std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end(), img.rgb.begin());
    return img;
}

inline std::string hex_color(Rgb c) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
    return buf;
}

/// SVG with one rect per pixel and line segments along token boundaries.
inline std::string render_token_svg(std::span<const std::uint32_t> owners, std::size_t width, std::size_t height,
                                    std::size_t cell = 8) {
    require(owners.size() == width * height, "owner table does not match the grid");
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width * cell << "\" height=\"" << height * cell
      << "\" shape-rendering=\"crispEdges\">\n";
    for (std::size_t v = 0; v < height; ++v)
        for (std::size_t u = 0; u < width; ++u)
            s << "<rect x=\"" << u * cell << "\" y=\"" << v * cell << "\" width=\"" << cell << "\" height=\"" << cell
              << "\" fill=\"" << hex_color(token_color(owners[v * width + u])) << "\"/>\n";
    s << "<g stroke=\"" << hex_color(kOutline) << "\" stroke-width=\"1\">\n";
    for (std::size_t v = 0; v < height; ++v)
        for (std::size_t u = 0; u < width; ++u) {
            auto me = owners[v * width + u];
            if (u + 1 < width && owners[v * width + u + 1] != me)
                s << "<line x1=\"" << (u + 1) * cell << "\" y1=\"" << v * cell << "\" x2=\"" << (u + 1) * cell << "\" y2=\""
                  << (v + 1) * cell << "\"/>\n";
            if (v + 1 < height && owners[(v + 1) * width + u] != me)
                s << "<line x1=\"" << u * cell << "\" y1=\"" << (v + 1) * cell << "\" x2=\"" << (u + 1) * cell << "\" y2=\""
                  << (v + 1) * cell << "\"/>\n";
        }
    s << "</g>\n</svg>\n";
    return s.str();
}

/// Pixel owners after `stages` merges, composed from trace assignments.
inline std::vector<std::uint32_t> owners_from_assignments(std::size_t pixel_count,
                                                          std::span<const std::vector<std::uint32_t>> assignments,
                                                          std::size_t stages) {
    require(stages <= assignments.size(), "stage index beyond the recorded traces");
    std::vector<std::uint32_t> owner(pixel_count);
    for (std::size_t p = 0; p < pixel_count; ++p) owner[p] = static_cast<std::uint32_t>(p);
    for (std::size_t l = 0; l < stages; ++l) {
        const auto& a = assignments[l];
        for (auto& o : owner) {
            require(o < a.size(), "trace assignment does not cover the previous stage");
            o = a[o];
        }
    }
    return owner;
}

}  // namespace atoken
