#pragma once

// Synthetic scenes standing in for backbone features: rectangles with
// distinct feature signatures on a background, plus seeded noise.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "atoken/cce.hpp"
#include "atoken/error.hpp"
#include "atoken/fmcore.hpp"
#include "atoken/rng.hpp"

namespace atoken {

struct SceneObject {
    std::size_t x = 0;  // left column
    std::size_t y = 0;  // top row
    std::size_t w = 1;
    std::size_t h = 1;
    std::vector<double> signature;
};

struct SceneSpec {
    std::size_t width = 32;
    std::size_t height = 32;
    std::size_t channels = 8;
    CameraIntrinsics camera;
    std::vector<double> background;  // empty = zeros
    double noise_amplitude = 0.05;
    std::vector<SceneObject> objects;
    double keypoint_sigma = 2.0;

    void validate() const {
        require_config(width >= 1 && height >= 1 && channels >= 1, "scene dimensions must be >= 1");
        require_config(background.empty() || background.size() == channels, "background signature length must equal channels");
        require_config(noise_amplitude >= 0.0, "noise amplitude must be non-negative");
        require_config(keypoint_sigma > 0.0, "keypoint sigma must be positive");
        camera.validate();
        for (const auto& o : objects) {
            require_config(o.w >= 1 && o.h >= 1, "scene objects must be at least one pixel");
            require_config(o.x + o.w <= width && o.y + o.h <= height, "scene object outside the map");
            require_config(o.signature.size() == channels, "object signature length must equal channels");
        }
    }
};

struct Scene {
    FeatureMap features;
    KeypointSet keypoints;
};

/// Paint objects over the background (later objects on top), add uniform
/// noise in [-a, a], and emit the four corners of each object as keypoints.
inline Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::size_t c = spec.channels;
    std::vector<double> data(spec.width * spec.height * c, 0.0);
    for (std::size_t p = 0; p < spec.width * spec.height; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) data[p * c + ch] = spec.background.empty() ? 0.0 : spec.background[ch];

    KeypointSet kps;
    kps.gaussian_sigma = spec.keypoint_sigma;
    for (const auto& o : spec.objects) {
        for (std::size_t v = o.y; v < o.y + o.h; ++v)
            for (std::size_t u = o.x; u < o.x + o.w; ++u)
                std::copy(o.signature.begin(), o.signature.end(), data.begin() + (v * spec.width + u) * c);
        double l = static_cast<double>(o.x), r = static_cast<double>(o.x + o.w - 1);
        double t = static_cast<double>(o.y), b = static_cast<double>(o.y + o.h - 1);
        kps.points.insert(kps.points.end(), {{l, t}, {r, t}, {l, b}, {r, b}});
    }

    Rng rng(seed);
    if (spec.noise_amplitude > 0.0)
        for (auto& d : data) d += rng.uniform(-spec.noise_amplitude, spec.noise_amplitude);
    return {FeatureMap(spec.width, spec.height, spec.channels, std::move(data)), std::move(kps)};
}

/// Street-like camera for a width x height feature map: horizon at 30% of
/// the height, focal length equal to the width.
inline CameraIntrinsics default_camera(std::size_t width, std::size_t height) {
    CameraIntrinsics k;
    k.f_x = k.f_y = static_cast<double>(width);
    k.c_x = static_cast<double>(width) / 2.0;
    k.c_y = 0.3 * static_cast<double>(height);
    k.cam_height = 1.65;
    k.score_gain = 1.0;
    return k;
}

/// Two to five random objects resting below the horizon.
inline SceneSpec random_scene_spec(std::uint64_t seed, std::size_t width = 32, std::size_t height = 32, std::size_t channels = 8) {
    Rng rng(seed);
    SceneSpec spec;
    spec.width = width;
    spec.height = height;
    spec.channels = channels;
    spec.camera = default_camera(width, height);
    spec.background.assign(channels, 0.0);
    std::size_t count = 2 + rng.index(4);
    std::size_t horizon = static_cast<std::size_t>(spec.camera.c_y);
    for (std::size_t i = 0; i < count; ++i) {
        SceneObject o;
        std::size_t max_side = std::max<std::size_t>(2, std::min(width, height) / 4);
        o.w = std::min(width, 2 + rng.index(max_side - 1));
        o.h = std::min(height, 2 + rng.index(max_side - 1));
        std::size_t top_lo = std::min(horizon, height - o.h);
        o.x = rng.index(width - o.w + 1);
        o.y = top_lo + rng.index(height - o.h - top_lo + 1);
        o.signature.resize(channels);
        for (auto& s : o.signature) s = rng.uniform(-1.0, 1.0);
        spec.objects.push_back(std::move(o));
    }
    return spec;
}

}  // namespace atoken
