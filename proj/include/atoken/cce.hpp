#pragma once

// Cluster-center estimation: a ground-plane depth prior and a learned
// semantic score are mixed into one per-pixel score map, averaged per token,
// and the top-ranked tokens become cluster centers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "atoken/binary_io.hpp"
#include "atoken/error.hpp"
#include "atoken/fmcore.hpp"
#include "atoken/nn.hpp"
#include "atoken/parallel.hpp"
#include "atoken/rng.hpp"

namespace atoken {

/// Per-pixel scalar map, row-major.
class ScoreMap {
public:
    ScoreMap(std::size_t width, std::size_t height, std::vector<double> values)
        : width_(width), height_(height), values_(std::move(values)) {
        require(width_ >= 1 && height_ >= 1, "score map dimensions must be >= 1");
        require(values_.size() == width_ * height_, "score map length does not match dimensions");
        for (double x : values_) require(std::isfinite(x), "score map values must be finite");
    }
    ScoreMap(std::size_t width, std::size_t height) : ScoreMap(width, height, std::vector<double>(width * height, 0.0)) {}

    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    std::size_t size() const { return values_.size(); }
    double at(std::size_t u, std::size_t v) const { return values_[v * width_ + u]; }
    double operator[](std::size_t i) const { return values_[i]; }
    const std::vector<double>& values() const { return values_; }

    bool operator==(const ScoreMap&) const = default;

private:
    std::size_t width_;
    std::size_t height_;
    std::vector<double> values_;
};

struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

/// Lift pixel (u, v) at depth z_hat into camera coordinates.
inline Point3 back_project(double u, double v, double z_hat, const CameraIntrinsics& k) {
    require(z_hat > 0.0, "depth must be positive");
    return {(u - k.c_x) / k.f_x * z_hat, (v - k.c_y) / k.f_y * z_hat, z_hat};
}

/// Depth of the ground plane seen at image row v: f_y * H / (v - c_y).
inline double ground_depth(double v, const CameraIntrinsics& k) {
    if (!(v > k.c_y)) throw Error("row is above or at vanishing point");
    return k.f_y * k.cam_height / (v - k.c_y);
}

/// Negated, clamped inverse ground depth: -relu(B (v - c_y) / (f_y H)).
/// Constant along each row, zero at and above the horizon.
inline ScoreMap depth_score(const CameraIntrinsics& k, std::size_t height, std::size_t width) {
    require(height >= 1 && width >= 1, "score map dimensions must be >= 1");
    std::vector<double> values(width * height);
    for (std::size_t v = 0; v < height; ++v) {
        double row = -relu(k.score_gain * (static_cast<double>(v) - k.c_y) / (k.f_y * k.cam_height));
        std::fill_n(values.begin() + v * width, width, row);
    }
    return ScoreMap(width, height, std::move(values));
}

/// Stack of stride-1, zero-padded convolutions with ReLU between layers,
/// ending in a single output channel.
class SemanticScorer {
public:
    explicit SemanticScorer(std::vector<WeightLayer> layers) : layers_(std::move(layers)) {
        require_config(!layers_.empty(), "semantic scorer needs at least one layer");
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const auto& l = layers_[i];
            require_config(l.weights.size() == l.weight_count() && l.biases.size() == l.out,
                           "semantic scorer layer payload does not match its dims");
            require_config(l.kh % 2 == 1 && l.kw % 2 == 1, "semantic scorer kernels must have odd size");
            if (i > 0) require_config(l.in == layers_[i - 1].out, "semantic scorer layer shapes do not chain");
        }
        require_config(layers_.back().out == 1, "semantic scorer must end in one channel");
    }

    /// Default C -> 16 -> 1 stack of 3x3 convolutions with seeded weights.
    static SemanticScorer random(std::size_t channels, Rng& rng, std::size_t hidden = 16) {
        auto make = [&](std::uint32_t in, std::uint32_t out) {
            WeightLayer l{out, in, 3, 3, {}, std::vector<double>(out, 0.0)};
            double bound = 1.0 / std::sqrt(static_cast<double>(in * 9));
            l.weights.resize(l.weight_count());
            for (auto& w : l.weights) w = rng.uniform(-bound, bound);
            return l;
        };
        auto c = static_cast<std::uint32_t>(channels);
        auto h = static_cast<std::uint32_t>(hidden);
        return SemanticScorer({make(c, h), make(h, 1)});
    }

    static SemanticScorer load(const std::string& path) {
        try {
            return SemanticScorer(read_weights(path));
        } catch (const ConfigError& e) {
            throw IoError(path + ": " + e.what());
        }
    }

    std::size_t input_channels() const { return layers_.front().in; }
    const std::vector<WeightLayer>& layers() const { return layers_; }

private:
    std::vector<WeightLayer> layers_;
};

namespace detail {

// One convolution over a width x height x in map (channel fastest).
inline std::vector<double> conv_same(const std::vector<double>& x, std::size_t width, std::size_t height,
                                     const WeightLayer& l) {
    std::vector<double> y(width * height * l.out);
    long rh = l.kh / 2, rw = l.kw / 2;
    parallel_for(height, [&](std::size_t v) {
        for (std::size_t u = 0; u < width; ++u) {
            for (std::size_t o = 0; o < l.out; ++o) {
                double s = l.biases[o];
                for (std::size_t i = 0; i < l.in; ++i) {
                    for (long dy = -rh; dy <= rh; ++dy) {
                        long yy = static_cast<long>(v) + dy;
                        if (yy < 0 || yy >= static_cast<long>(height)) continue;
                        for (long dx = -rw; dx <= rw; ++dx) {
                            long xx = static_cast<long>(u) + dx;
                            if (xx < 0 || xx >= static_cast<long>(width)) continue;
                            double w = l.weights[((o * l.in + i) * l.kh + (dy + rh)) * l.kw + (dx + rw)];
                            s += w * x[(yy * width + xx) * l.in + i];
                        }
                    }
                }
                y[(v * width + u) * l.out + o] = s;
            }
        }
    }, 1);
    return y;
}

}  // namespace detail

/// One semantic score per pixel from the convolution stack.
inline ScoreMap semantic_score(const FeatureMap& fm, const SemanticScorer& scorer) {
    if (scorer.input_channels() != fm.channels())
        throw ConfigError("semantic scorer expects " + std::to_string(scorer.input_channels()) +
                          " channels, feature map has " + std::to_string(fm.channels()));
    std::vector<double> x = fm.data();
    const auto& layers = scorer.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        x = detail::conv_same(x, fm.width(), fm.height(), layers[i]);
        if (i + 1 < layers.size())
            for (auto& v : x) v = relu(v);
    }
    return ScoreMap(fm.width(), fm.height(), std::move(x));
}

/// sd + alpha * ss, element-wise.
inline ScoreMap combine_scores(const ScoreMap& sd, const ScoreMap& ss, double alpha) {
    if (sd.width() != ss.width() || sd.height() != ss.height()) throw Error("score map dimensions differ");
    std::vector<double> out(sd.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sd[i] + alpha * ss[i];
    return ScoreMap(sd.width(), sd.height(), std::move(out));
}

/// Mean pixel score over each token region.
inline std::vector<double> token_scores(const TokenSet& ts, const ScoreMap& s) {
    if (s.width() != ts.grid_width() || s.height() != ts.grid_height())
        throw Error("score map does not match the token grid");
    std::vector<double> out(ts.count());
    for (std::size_t t = 0; t < ts.count(); ++t) {
        const auto& region = ts.regions()[t];
        double sum = 0.0;
        for (PixelIndex p : region) sum += s[p];
        out[t] = sum / static_cast<double>(region.size());
    }
    return out;
}

/// Indices of the n_l best tokens, by descending score then ascending index.
inline std::vector<std::uint32_t> select_centers(const TokenSet& ts, std::size_t n_l, std::span<const double> scores) {
    if (scores.size() != ts.count()) throw Error("one score per token required");
    if (n_l < 1 || n_l > ts.count())
        throw ConfigError("center count " + std::to_string(n_l) + " outside [1, " + std::to_string(ts.count()) + "]");
    std::vector<std::uint32_t> order(ts.count());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return scores[a] > scores[b]; });
    order.resize(n_l);
    return order;
}

/// Ground-truth keypoints for heatmap supervision.
struct KeypointSet {
    std::vector<Point> points;
    double gaussian_sigma = 2.0;

    void validate(std::size_t width, std::size_t height) const {
        require(gaussian_sigma > 0.0, "keypoint sigma must be positive");
        for (const auto& p : points)
            require(p.u >= 0 && p.v >= 0 && p.u <= static_cast<double>(width) - 1 && p.v <= static_cast<double>(height) - 1,
                    "keypoint outside the map");
    }
};

/// Max over keypoints of exp(-d^2 / (2 sigma^2)), centred on the nearest pixel.
inline ScoreMap keypoint_heatmap(const KeypointSet& kps, std::size_t width, std::size_t height) {
    kps.validate(width, height);
    std::vector<double> values(width * height, 0.0);
    double denom = 2.0 * kps.gaussian_sigma * kps.gaussian_sigma;
    for (const auto& kp : kps.points) {
        double cu = std::round(kp.u), cv = std::round(kp.v);
        for (std::size_t v = 0; v < height; ++v) {
            for (std::size_t u = 0; u < width; ++u) {
                double du = static_cast<double>(u) - cu, dv = static_cast<double>(v) - cv;
                double g = std::exp(-(du * du + dv * dv) / denom);
                double& cell = values[v * width + u];
                cell = std::max(cell, g);
            }
        }
    }
    return ScoreMap(width, height, std::move(values));
}

/// log(1 + e^x) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

/// Fixed-order compensated sum.
class NeumaierSum {
public:
    void add(double x) {
        double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// Penalty-reduced focal loss on sigmoid(pred) against a Gaussian heatmap,
/// normalised by the number of gt == 1 pixels (at least one).
inline double focal_loss(const ScoreMap& pred, const ScoreMap& gt) {
    if (pred.width() != gt.width() || pred.height() != gt.height()) throw Error("focal loss maps differ in size");
    NeumaierSum total;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double x = pred[i];
        double p = sigmoid(x);
        double q = sigmoid(-x);  // 1 - p
        if (gt[i] == 1.0) {
            ++positives;
            total.add(q * q * softplus(-x));  // -(1-p)^2 log p
        } else {
            double w = 1.0 - gt[i];
            w *= w;
            w *= w;
            total.add(w * p * p * softplus(x));  // -(1-gt)^4 p^2 log(1-p)
        }
    }
    return total.value() / static_cast<double>(std::max<std::size_t>(1, positives));
}

}  // namespace atoken
