#pragma once

// Little-endian containers:
//   ATFM  "ATFM" u32 width u32 height u32 channels, then f64 values
//         (row-major, channel fastest).
//   ATSW  "ATSW" u32 layer_count, then per layer u32 out,in,kh,kw,
//         out*in*kh*kw f64 weights, out f64 biases.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "atoken/error.hpp"
#include "atoken/fmcore.hpp"

namespace atoken {

namespace le {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64(std::vector<std::uint8_t>& out, double d) {
    auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

/// Bounds-checked cursor over a byte buffer.
class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

    void expect_magic(const char (&magic)[5]) {
        need(4);
        if (std::memcmp(buf_.data() + pos_, magic, 4) != 0) throw IoError(std::string("bad magic, expected ") + magic);
        pos_ += 4;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return std::bit_cast<double>(v);
    }
    bool at_end() const { return pos_ == buf_.size(); }
    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw IoError("truncated file");
    }
    const std::vector<std::uint8_t>& buf_;
    std::size_t pos_ = 0;
};

}  // namespace le

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path);
}

inline std::vector<std::uint8_t> encode_feature_map(const FeatureMap& fm) {
    std::vector<std::uint8_t> out{'A', 'T', 'F', 'M'};
    out.reserve(16 + fm.data().size() * 8);
    le::put_u32(out, static_cast<std::uint32_t>(fm.width()));
    le::put_u32(out, static_cast<std::uint32_t>(fm.height()));
    le::put_u32(out, static_cast<std::uint32_t>(fm.channels()));
    for (double d : fm.data()) le::put_f64(out, d);
    return out;
}

inline FeatureMap decode_feature_map(const std::vector<std::uint8_t>& bytes) {
    le::Reader r(bytes);
    r.expect_magic("ATFM");
    std::uint64_t w = r.u32(), h = r.u32(), c = r.u32();
    if (w == 0 || h == 0 || c == 0) throw IoError("ATFM dimensions must be >= 1");
    if (r.remaining() != w * h * c * 8) throw IoError("ATFM payload length does not match header");
    std::vector<double> data(w * h * c);
    for (auto& d : data) d = r.f64();
    try {
        return FeatureMap(w, h, c, std::move(data));
    } catch (const Error& e) {
        throw IoError(std::string("invalid ATFM payload: ") + e.what());
    }
}

inline void write_feature_map(const std::string& path, const FeatureMap& fm) {
    write_file_bytes(path, encode_feature_map(fm));
}

inline FeatureMap read_feature_map(const std::string& path) { return decode_feature_map(read_file_bytes(path)); }

/// One tensor of an ATSW container. Linear layers use kh = kw = 1.
struct WeightLayer {
    std::uint32_t out = 0, in = 0, kh = 1, kw = 1;
    std::vector<double> weights;  // [out][in][kh][kw]
    std::vector<double> biases;   // [out]

    std::size_t weight_count() const { return std::size_t{out} * in * kh * kw; }
    bool operator==(const WeightLayer&) const = default;
};

inline std::vector<std::uint8_t> encode_weights(const std::vector<WeightLayer>& layers) {
    std::vector<std::uint8_t> out{'A', 'T', 'S', 'W'};
    le::put_u32(out, static_cast<std::uint32_t>(layers.size()));
    for (const auto& l : layers) {
        require(l.weights.size() == l.weight_count() && l.biases.size() == l.out, "weight layer payload does not match dims");
        for (auto d : {l.out, l.in, l.kh, l.kw}) le::put_u32(out, d);
        for (double w : l.weights) le::put_f64(out, w);
        for (double b : l.biases) le::put_f64(out, b);
    }
    return out;
}

inline std::vector<WeightLayer> decode_weights(const std::vector<std::uint8_t>& bytes) {
    le::Reader r(bytes);
    r.expect_magic("ATSW");
    std::uint32_t n = r.u32();
    std::vector<WeightLayer> layers;
    for (std::uint32_t i = 0; i < n; ++i) {
        WeightLayer l;
        l.out = r.u32();
        l.in = r.u32();
        l.kh = r.u32();
        l.kw = r.u32();
        if (l.weight_count() * 8 > r.remaining()) throw IoError("ATSW layer larger than file");
        l.weights.resize(l.weight_count());
        for (auto& w : l.weights) w = r.f64();
        l.biases.resize(l.out);
        for (auto& b : l.biases) b = r.f64();
        layers.push_back(std::move(l));
    }
    if (!r.at_end()) throw IoError("trailing bytes after ATSW layers");
    return layers;
}

inline void write_weights(const std::string& path, const std::vector<WeightLayer>& layers) {
    write_file_bytes(path, encode_weights(layers));
}

inline std::vector<WeightLayer> read_weights(const std::string& path) { return decode_weights(read_file_bytes(path)); }

}  // namespace atoken
