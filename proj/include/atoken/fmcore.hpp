#pragma once

// Value types shared by the whole pipeline: dense feature maps, token sets
// with explicit pixel regions, and the per-stage merge record.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "atoken/error.hpp"
#include "atoken/matrix.hpp"

namespace atoken {

/// Pixel index into a row-major grid: index = v * width + u.
using PixelIndex = std::uint32_t;
/// Sorted, duplicate-free list of pixel indices.
using Region = std::vector<PixelIndex>;

struct Point {
    double u = 0.0;  // column
    double v = 0.0;  // row, grows downward
    bool operator==(const Point&) const = default;
};

/// Dense width x height x channels array, row-major with channels fastest.
class FeatureMap {
public:
    FeatureMap(std::size_t width, std::size_t height, std::size_t channels, std::vector<double> data)
        : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
        require(width_ >= 1 && height_ >= 1 && channels_ >= 1, "feature map dimensions must be >= 1");
        require(data_.size() == width_ * height_ * channels_, "feature map data length does not match dimensions");
        for (double x : data_) require(std::isfinite(x), "feature map values must be finite");
    }
    FeatureMap(std::size_t width, std::size_t height, std::size_t channels)
        : FeatureMap(width, height, channels, std::vector<double>(width * height * channels, 0.0)) {}

    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    std::size_t channels() const { return channels_; }
    std::size_t pixel_count() const { return width_ * height_; }

    double at(std::size_t u, std::size_t v, std::size_t c) const { return data_[(v * width_ + u) * channels_ + c]; }
    std::span<const double> pixel(std::size_t index) const { return {data_.data() + index * channels_, channels_}; }
    const std::vector<double>& data() const { return data_; }

    bool operator==(const FeatureMap&) const = default;

private:
    std::size_t width_;
    std::size_t height_;
    std::size_t channels_;
    std::vector<double> data_;
};

/// Pinhole intrinsics plus the camera elevation and depth-score gain.
struct CameraIntrinsics {
    double f_x = 1.0;
    double f_y = 1.0;
    double c_x = 0.0;
    double c_y = 0.0;
    double cam_height = 1.65;  // metres above the ground plane
    double score_gain = 1.0;

    void validate() const {
        require_config(f_x > 0 && f_y > 0, "focal lengths must be positive");
        require_config(cam_height > 0, "camera height must be positive");
        require_config(score_gain > 0, "score gain must be positive");
        require_config(std::isfinite(c_x) && std::isfinite(c_y), "principal point must be finite");
    }
};

inline Point pixel_position(PixelIndex index, std::size_t width) {
    return {static_cast<double>(index % width), static_cast<double>(index / width)};
}

/// Mean (u, v) of a region. Coordinate sums are exact integers, so the
/// result carries a single rounding.
inline Point region_centroid(std::span<const PixelIndex> region, std::size_t width) {
    require(!region.empty(), "token region is empty");
    double su = 0.0;
    double sv = 0.0;
    for (PixelIndex p : region) {
        su += static_cast<double>(p % width);
        sv += static_cast<double>(p / width);
    }
    double n = static_cast<double>(region.size());
    return {su / n, sv / n};
}

/// Merge two sorted regions.
inline Region region_union(std::span<const PixelIndex> a, std::span<const PixelIndex> b) {
    Region out;
    out.reserve(a.size() + b.size());
    std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

/// Throws unless the regions are non-empty, sorted, pairwise disjoint and
/// cover exactly [0, pixel_count).
inline void check_partition(std::span<const Region> regions, std::size_t pixel_count) {
    std::vector<std::uint8_t> seen(pixel_count, 0);
    std::size_t covered = 0;
    for (const auto& region : regions) {
        require(!region.empty(), "token region is empty");
        for (std::size_t k = 0; k < region.size(); ++k) {
            PixelIndex p = region[k];
            require(p < pixel_count, "token region pixel out of range");
            require(k == 0 || region[k - 1] < p, "token region must be sorted and duplicate-free");
            require(!seen[p], "token regions overlap");
            seen[p] = 1;
            ++covered;
        }
    }
    require(covered == pixel_count, "token regions do not cover the grid");
}

inline bool is_partition(std::span<const Region> regions, std::size_t pixel_count) {
    try {
        check_partition(regions, pixel_count);
        return true;
    } catch (const Error&) {
        return false;
    }
}

/// n tokens over a width x height grid. Regions always partition the grid and
/// positions are always the region centroids.
class TokenSet {
public:
    TokenSet(std::size_t grid_width, std::size_t grid_height, Matrix features, std::vector<Region> regions)
        : grid_width_(grid_width), grid_height_(grid_height), features_(std::move(features)), regions_(std::move(regions)) {
        require(grid_width_ >= 1 && grid_height_ >= 1, "token grid dimensions must be >= 1");
        require(features_.rows() == regions_.size(), "one feature row per token region required");
        require(features_.cols() >= 1, "token features must have at least one channel");
        check_partition(regions_, grid_width_ * grid_height_);
        positions_.reserve(regions_.size());
        for (const auto& r : regions_) positions_.push_back(region_centroid(r, grid_width_));
    }

    std::size_t count() const { return regions_.size(); }
    std::size_t channels() const { return features_.cols(); }
    std::size_t grid_width() const { return grid_width_; }
    std::size_t grid_height() const { return grid_height_; }
    std::size_t pixel_count() const { return grid_width_ * grid_height_; }

    const Matrix& features() const { return features_; }
    const std::vector<Region>& regions() const { return regions_; }
    const std::vector<Point>& positions() const { return positions_; }

    /// Same regions with replaced features.
    TokenSet with_features(Matrix features) const {
        require(features.rows() == count() && features.cols() >= 1, "replacement features have the wrong shape");
        TokenSet copy = *this;
        copy.features_ = std::move(features);
        return copy;
    }

    /// Token owning each pixel.
    std::vector<std::uint32_t> pixel_owners() const {
        std::vector<std::uint32_t> owner(pixel_count());
        for (std::size_t t = 0; t < regions_.size(); ++t)
            for (PixelIndex p : regions_[t]) owner[p] = static_cast<std::uint32_t>(t);
        return owner;
    }

private:
    std::size_t grid_width_;
    std::size_t grid_height_;
    Matrix features_;
    std::vector<Region> regions_;
    std::vector<Point> positions_;
};

/// Record of one clustering stage, enough to undo the merge later.
struct StageTrace {
    std::size_t stage_index = 0;
    std::vector<std::uint32_t> assignment;            // input token -> cluster
    std::vector<std::uint32_t> center_token_indices;  // cluster -> input token
    std::vector<double> attention_scores;             // per input token
    Matrix input_features;                            // snapshot of stage input

    std::size_t input_count() const { return assignment.size(); }
    std::size_t cluster_count() const { return center_token_indices.size(); }

    void validate() const {
        std::size_t k = cluster_count();
        require(k >= 1, "stage trace has no clusters");
        require(attention_scores.size() == assignment.size(), "stage trace score length mismatch");
        require(input_features.rows() == assignment.size(), "stage trace feature snapshot has wrong row count");
        std::vector<std::uint8_t> used(k, 0);
        for (auto a : assignment) {
            require(a < k, "stage trace cluster index out of range");
            used[a] = 1;
        }
        for (auto u : used) require(u != 0, "stage trace has an empty cluster");
        for (std::size_t j = 0; j < k; ++j) {
            require(center_token_indices[j] < assignment.size(), "stage trace center index out of range");
            require(assignment[center_token_indices[j]] == j, "cluster center is not a member of its own cluster");
        }
    }
};

/// Stage schedule and hyperparameters.
struct PipelineConfig {
    std::size_t num_stages = 3;
    std::vector<std::size_t> token_schedule;  // n_1 > n_2 > ... > n_N; empty = ratio 1/4
    double alpha = 1.0;
    double beta = 0.05;
    std::size_t d_k = 16;
    std::uint64_t rng_seed = 0;
    std::size_t mlp_hidden = 0;  // 0 = twice the channel count
    std::size_t num_heads = 1;
    bool raw_pixel_beta = false;  // false: positions scaled by 1/max(W, H) in the grouping cost

    /// n_1 .. n_N for a grid of n0 tokens.
    std::vector<std::size_t> resolved_schedule(std::size_t n0) const {
        if (!token_schedule.empty()) return token_schedule;
        std::vector<std::size_t> s;
        std::size_t n = n0;
        for (std::size_t l = 0; l < num_stages; ++l) {
            n = std::max<std::size_t>(1, n / 4);
            s.push_back(n);
        }
        return s;
    }

    std::size_t resolved_mlp_hidden(std::size_t channels) const { return mlp_hidden ? mlp_hidden : 2 * channels; }

    void validate(std::size_t n0) const {
        require_config(num_stages >= 1, "num_stages must be >= 1");
        require_config(token_schedule.empty() || token_schedule.size() == num_stages,
                       "token_schedule length must equal num_stages");
        auto s = resolved_schedule(n0);
        for (std::size_t l = 0; l < s.size(); ++l) {
            require_config(s[l] >= 1, "token counts must be >= 1");
            if (l == 0)
                require_config(s[0] <= n0, "first stage token count " + std::to_string(s[0]) +
                                               " exceeds the " + std::to_string(n0) + " pixel tokens");
            else
                require_config(s[l] < s[l - 1], "token_schedule must be strictly decreasing");
        }
        if (token_schedule.empty())
            for (std::size_t l = 1; l < s.size(); ++l)
                require_config(s[l] < s[l - 1], "grid too small for the default schedule");
        require_config(std::isfinite(alpha) && std::isfinite(beta), "alpha and beta must be finite");
        require_config(d_k >= 1, "d_k must be >= 1");
        require_config(num_heads >= 1 && d_k % num_heads == 0, "d_k must be divisible by num_heads");
    }
};

/// Every pixel becomes a token: token i has region {i}.
inline TokenSet slice_to_tokens(const FeatureMap& fm) {
    std::size_t n = fm.pixel_count();
    Matrix features(n, fm.channels(), fm.data());
    std::vector<Region> regions(n);
    for (std::size_t i = 0; i < n; ++i) regions[i] = {static_cast<PixelIndex>(i)};
    return TokenSet(fm.width(), fm.height(), std::move(features), std::move(regions));
}

/// n x 2 matrix of region centroids (u, v). Throws on an empty region.
inline Matrix token_centroids(std::span<const Region> regions, std::size_t grid_width) {
    Matrix out(regions.size(), 2);
    for (std::size_t i = 0; i < regions.size(); ++i) {
        Point c = region_centroid(regions[i], grid_width);
        out(i, 0) = c.u;
        out(i, 1) = c.v;
    }
    return out;
}

inline Matrix token_centroids(const TokenSet& ts) { return token_centroids(ts.regions(), ts.grid_width()); }

/// Scatter token features back onto the pixel grid.
inline FeatureMap assemble_feature_map(const TokenSet& ts) {
    std::size_t c = ts.channels();
    std::vector<double> data(ts.pixel_count() * c);
    for (std::size_t t = 0; t < ts.count(); ++t) {
        auto f = ts.features().row(t);
        for (PixelIndex p : ts.regions()[t]) std::copy(f.begin(), f.end(), data.begin() + p * c);
    }
    return FeatureMap(ts.grid_width(), ts.grid_height(), c, std::move(data));
}

}  // namespace atoken
