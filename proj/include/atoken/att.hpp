#pragma once

// Adaptive token transformer: outline-preferred grouping of tokens around
// the selected centers, score-weighted merging, and attention from merged
// tokens (queries) to the stage input tokens (keys/values) with the token
// scores added as a key bias.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "atoken/cce.hpp"
#include "atoken/error.hpp"
#include "atoken/fmcore.hpp"
#include "atoken/matrix.hpp"
#include "atoken/nn.hpp"
#include "atoken/parallel.hpp"
#include "atoken/rng.hpp"

namespace atoken {

/// Linear map from a token feature to its scalar attention score p.
struct AttentionScoreHead {
    std::vector<double> weight;
    double bias = 0.0;

    static AttentionScoreHead zeros(std::size_t channels) { return {std::vector<double>(channels, 0.0), 0.0}; }
    static AttentionScoreHead random(std::size_t channels, Rng& rng) {
        AttentionScoreHead h = zeros(channels);
        double bound = 1.0 / std::sqrt(static_cast<double>(channels));
        for (auto& w : h.weight) w = rng.uniform(-bound, bound);
        return h;
    }

    std::vector<WeightLayer> to_layers() const {
        return {WeightLayer{1, static_cast<std::uint32_t>(weight.size()), 1, 1, weight, {bias}}};
    }
    static AttentionScoreHead from_layers(const std::vector<WeightLayer>& layers) {
        if (layers.size() != 1 || layers[0].out != 1 || layers[0].kh != 1 || layers[0].kw != 1)
            throw IoError("attention score head expects one 1 x C layer");
        return {layers[0].weights, layers[0].biases[0]};
    }
    bool operator==(const AttentionScoreHead&) const = default;
};

/// Pre-norm transformer block: attention sub-layer then feed-forward, each
/// wrapped in a residual connection.
struct TransformerBlock {
    LayerNorm norm1;
    Linear query;  // C -> d_k
    Linear key;    // C -> d_k
    Linear value;  // C -> d_k
    Linear proj;   // d_k -> C
    LayerNorm norm2;
    Linear ffn1;  // C -> hidden
    Linear ffn2;  // hidden -> C
    std::size_t num_heads = 1;

    static TransformerBlock zeros(std::size_t channels, std::size_t d_k, std::size_t hidden, std::size_t heads = 1) {
        return {LayerNorm::identity(channels), Linear::zeros(channels, d_k), Linear::zeros(channels, d_k),
                Linear::zeros(channels, d_k),  Linear::zeros(d_k, channels), LayerNorm::identity(channels),
                Linear::zeros(channels, hidden), Linear::zeros(hidden, channels), heads};
    }

    static TransformerBlock random(std::size_t channels, std::size_t d_k, std::size_t hidden, std::size_t heads, Rng& rng) {
        TransformerBlock b;
        b.norm1 = LayerNorm::identity(channels);
        b.query = Linear::random(channels, d_k, rng);
        b.key = Linear::random(channels, d_k, rng);
        b.value = Linear::random(channels, d_k, rng);
        b.proj = Linear::random(d_k, channels, rng);
        b.norm2 = LayerNorm::identity(channels);
        b.ffn1 = Linear::random(channels, hidden, rng);
        b.ffn2 = Linear::random(hidden, channels, rng);
        b.num_heads = heads;
        return b;
    }

    void validate(std::size_t channels) const {
        std::size_t d_k = query.out;
        require_config(norm1.gamma.size() == channels && norm2.gamma.size() == channels, "block norm width mismatch");
        require_config(query.in == channels && key.in == channels && value.in == channels, "block projection input mismatch");
        require_config(key.out == d_k && value.out == d_k && proj.in == d_k && proj.out == channels,
                       "block projection shapes do not chain");
        require_config(ffn1.in == channels && ffn2.in == ffn1.out && ffn2.out == channels, "block feed-forward shapes do not chain");
        require_config(num_heads >= 1 && d_k % num_heads == 0, "d_k must be divisible by the head count");
    }

    std::vector<WeightLayer> to_layers() const {
        return {norm1.to_layer(), query.to_layer(), key.to_layer(), value.to_layer(),
                proj.to_layer(),  norm2.to_layer(), ffn1.to_layer(), ffn2.to_layer()};
    }
    static TransformerBlock from_layers(const std::vector<WeightLayer>& l, std::size_t heads = 1) {
        if (l.size() != 8) throw IoError("transformer block expects 8 layers");
        return {LayerNorm::from_layer(l[0]), Linear::from_layer(l[1]), Linear::from_layer(l[2]),
                Linear::from_layer(l[3]),    Linear::from_layer(l[4]), LayerNorm::from_layer(l[5]),
                Linear::from_layer(l[6]),    Linear::from_layer(l[7]), heads};
    }
    bool operator==(const TransformerBlock&) const = default;
};

namespace detail {

inline void check_centers(std::span<const std::uint32_t> centers, std::size_t n) {
    if (centers.empty()) throw Error("at least one cluster center is required");
    std::vector<std::uint8_t> seen(n, 0);
    for (auto c : centers) {
        if (c >= n) throw Error("center index out of range");
        if (seen[c]) throw Error("duplicate center index " + std::to_string(c));
        seen[c] = 1;
    }
}

}  // namespace detail

/// Cluster index for every token: the center minimising
///   |x_i - x_j|^2 - beta * |s g(i) - s g(j)|^2
/// where g is the token centroid and s = position_scale. Centers always take
/// their own cluster; ties go to the lower cluster index.
inline std::vector<std::uint32_t> assign_clusters(const TokenSet& ts, std::span<const std::uint32_t> centers, double beta,
                                                  double position_scale = 1.0) {
    std::size_t n = ts.count();
    detail::check_centers(centers, n);
    std::size_t k = centers.size();
    std::size_t c = ts.channels();

    std::vector<std::int64_t> own(n, -1);
    std::vector<double> center_feat(k * c);
    std::vector<double> center_u(k), center_v(k);
    for (std::size_t j = 0; j < k; ++j) {
        own[centers[j]] = static_cast<std::int64_t>(j);
        auto f = ts.features().row(centers[j]);
        std::copy(f.begin(), f.end(), center_feat.begin() + j * c);
        center_u[j] = ts.positions()[centers[j]].u * position_scale;
        center_v[j] = ts.positions()[centers[j]].v * position_scale;
    }

    std::vector<std::uint32_t> out(n);
    parallel_for(n, [&](std::size_t i) {
        if (own[i] >= 0) {
            out[i] = static_cast<std::uint32_t>(own[i]);
            return;
        }
        auto x = ts.features().row(i);
        double pu = ts.positions()[i].u * position_scale;
        double pv = ts.positions()[i].v * position_scale;
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t best_j = 0;
        for (std::size_t j = 0; j < k; ++j) {
            double feat = squared_distance(x, {center_feat.data() + j * c, c});
            double du = pu - center_u[j];
            double dv = pv - center_v[j];
            double delta = feat - beta * (du * du + dv * dv);
            if (delta < best) {
                best = delta;
                best_j = static_cast<std::uint32_t>(j);
            }
        }
        out[i] = best_j;
    });
    return out;
}

/// p_i = w . x_i + b.
inline std::vector<double> attention_scores(const TokenSet& ts, const AttentionScoreHead& head) {
    if (head.weight.size() != ts.channels()) throw Error("attention head width does not match token features");
    std::vector<double> p(ts.count());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = dot(head.weight, ts.features().row(i)) + head.bias;
    return p;
}

/// Score-weighted mean of the rows of x: sum e^{p_j} x_j / sum e^{p_j}.
/// `weights` receives the normalised weights when non-empty.
inline std::vector<double> weighted_merge(const Matrix& x, std::span<const double> p, std::span<double> weights = {}) {
    require(x.rows() == p.size() && x.rows() >= 1, "merge needs one score per member");
    double m = *std::max_element(p.begin(), p.end());
    std::vector<double> e(p.size());
    double denom = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        e[j] = std::exp(p[j] - m);
        denom += e[j];
    }
    std::vector<double> y(x.cols(), 0.0);
    for (std::size_t j = 0; j < p.size(); ++j)
        for (std::size_t ch = 0; ch < x.cols(); ++ch) y[ch] += e[j] * x(j, ch);
    for (auto& v : y) v /= denom;
    if (!weights.empty())
        for (std::size_t j = 0; j < p.size(); ++j) weights[j] = e[j] / denom;
    return y;
}

struct MergeResult {
    TokenSet merged;
    StageTrace trace;
};

/// Merge every cluster into one token. Regions are unioned; features are
/// the score-weighted member mean.
inline MergeResult merge_clusters(const TokenSet& ts, std::span<const std::uint32_t> assignment, std::span<const double> p,
                                  std::span<const std::uint32_t> centers, std::size_t stage_index = 1) {
    std::size_t n = ts.count();
    if (assignment.size() != n || p.size() != n) throw Error("assignment and scores must cover every token");
    detail::check_centers(centers, n);
    std::size_t k = centers.size();

    std::vector<std::vector<std::uint32_t>> members(k);
    for (std::size_t i = 0; i < n; ++i) {
        if (assignment[i] >= k) throw Error("cluster index out of range");
        members[assignment[i]].push_back(static_cast<std::uint32_t>(i));
    }
    for (std::size_t j = 0; j < k; ++j) {
        if (members[j].empty()) throw Error("empty cluster " + std::to_string(j));
        if (assignment[centers[j]] != j) throw Error("center is not assigned to its own cluster");
    }

    std::size_t c = ts.channels();
    Matrix features(k, c);
    std::vector<Region> regions(k);
    parallel_for(k, [&](std::size_t j) {
        const auto& mem = members[j];
        Matrix x(mem.size(), c);
        std::vector<double> pj(mem.size());
        std::size_t total = 0;
        for (std::size_t r = 0; r < mem.size(); ++r) {
            auto src = ts.features().row(mem[r]);
            std::copy(src.begin(), src.end(), x.row(r).begin());
            pj[r] = p[mem[r]];
            total += ts.regions()[mem[r]].size();
        }
        auto y = weighted_merge(x, pj);
        std::copy(y.begin(), y.end(), features.row(j).begin());
        Region& region = regions[j];
        region.reserve(total);
        for (auto t : mem) region.insert(region.end(), ts.regions()[t].begin(), ts.regions()[t].end());
        std::sort(region.begin(), region.end());
    }, 8);

    StageTrace trace;
    trace.stage_index = stage_index;
    trace.assignment.assign(assignment.begin(), assignment.end());
    trace.center_token_indices.assign(centers.begin(), centers.end());
    trace.attention_scores.assign(p.begin(), p.end());
    trace.input_features = ts.features();
    return {TokenSet(ts.grid_width(), ts.grid_height(), std::move(features), std::move(regions)), std::move(trace)};
}

/// Row-softmax of Q K^T / sqrt(d_k) + 1 p^T (n_q x n_k).
inline Matrix biased_attention_weights(const Matrix& q, const Matrix& k, std::span<const double> p) {
    if (q.cols() != k.cols() || q.cols() == 0) throw Error("query and key widths differ");
    if (p.size() != k.rows()) throw Error("one attention score per key required");
    if (k.rows() == 0) throw Error("attention needs at least one key");
    double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Matrix a(q.rows(), k.rows());
    parallel_for(q.rows(), [&](std::size_t r) {
        auto row = a.row(r);
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k.rows(); ++j) {
            row[j] = dot(q.row(r), k.row(j)) * scale + p[j];
            m = std::max(m, row[j]);
        }
        double denom = 0.0;
        for (auto& v : row) {
            v = std::exp(v - m);
            denom += v;
        }
        for (auto& v : row) v /= denom;
    }, 16);
    return a;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matrix product shape mismatch");
    Matrix out(a.rows(), b.cols());
    parallel_for(a.rows(), [&](std::size_t r) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            double s = a(r, j);
            for (std::size_t c = 0; c < b.cols(); ++c) out(r, c) += s * b(j, c);
        }
    }, 16);
    return out;
}

/// softmax(Q K^T / sqrt(d_k) + p) V, with p broadcast across query rows.
inline Matrix biased_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::span<const double> p) {
    if (v.rows() != k.rows()) throw Error("keys and values differ in count");
    return matmul(biased_attention_weights(q, k, p), v);
}

namespace detail {

inline Matrix column_slice(const Matrix& m, std::size_t begin, std::size_t width) {
    Matrix out(m.rows(), width);
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < width; ++c) out(r, c) = m(r, begin + c);
    return out;
}

}  // namespace detail

/// Update the merged tokens by attending to the stage's input tokens.
/// Regions and positions are unchanged.
inline TokenSet transformer_stage(const TokenSet& merged, const TokenSet& original, std::span<const double> p,
                                  const TransformerBlock& blk) {
    std::size_t channels = merged.channels();
    if (original.channels() != channels) throw Error("merged and original tokens differ in width");
    if (p.size() != original.count()) throw Error("one attention score per original token required");
    blk.validate(channels);

    Matrix qn = blk.norm1.apply_rows(merged.features());
    Matrix kn = blk.norm1.apply_rows(original.features());
    Matrix q = blk.query.apply_rows(qn);
    Matrix k = blk.key.apply_rows(kn);
    Matrix v = blk.value.apply_rows(kn);

    std::size_t d_k = q.cols();
    std::size_t dh = d_k / blk.num_heads;
    Matrix attended(merged.count(), d_k);
    for (std::size_t h = 0; h < blk.num_heads; ++h) {
        Matrix out = biased_attention(detail::column_slice(q, h * dh, dh), detail::column_slice(k, h * dh, dh),
                                      detail::column_slice(v, h * dh, dh), p);
        for (std::size_t r = 0; r < out.rows(); ++r)
            for (std::size_t c = 0; c < dh; ++c) attended(r, h * dh + c) = out(r, c);
    }

    Matrix hidden = merged.features();
    Matrix projected = blk.proj.apply_rows(attended);
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden.data()[i] += projected.data()[i];

    Matrix normed = blk.norm2.apply_rows(hidden);
    Matrix ff = blk.ffn1.apply_rows(normed);
    for (auto& x : ff.data()) x = relu(x);
    Matrix ff_out = blk.ffn2.apply_rows(ff);
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden.data()[i] += ff_out.data()[i];
    return merged.with_features(std::move(hidden));
}

struct AttResult {
    TokenSet final_tokens;
    std::vector<StageTrace> traces;
    std::vector<TokenSet> stage_tokens;  // output of every stage, in order
};

/// Position scale used in the grouping cost for a given grid.
inline double grouping_position_scale(const PipelineConfig& cfg, std::size_t width, std::size_t height) {
    return cfg.raw_pixel_beta ? 1.0 : 1.0 / static_cast<double>(std::max(width, height));
}

/// N stages of score -> select -> group -> score heads -> merge -> attend.
/// Pixel scores stay fixed and are re-averaged over each stage's regions.
inline AttResult run_att(const FeatureMap& fm, const ScoreMap& s, const PipelineConfig& cfg,
                         std::span<const AttentionScoreHead> heads, std::span<const TransformerBlock> blocks) {
    cfg.validate(fm.pixel_count());
    auto schedule = cfg.resolved_schedule(fm.pixel_count());
    if (heads.size() != schedule.size() || blocks.size() != schedule.size())
        throw ConfigError("need one attention head and one transformer block per stage");
    if (s.width() != fm.width() || s.height() != fm.height()) throw Error("score map does not match the feature map");
    double scale = grouping_position_scale(cfg, fm.width(), fm.height());

    TokenSet tokens = slice_to_tokens(fm);
    std::vector<StageTrace> traces;
    std::vector<TokenSet> stages;
    for (std::size_t l = 0; l < schedule.size(); ++l) {
        if (schedule[l] > tokens.count())
            throw ConfigError("stage " + std::to_string(l + 1) + " asks for more tokens than it receives");
        auto scores = token_scores(tokens, s);
        auto centers = select_centers(tokens, schedule[l], scores);
        auto assignment = assign_clusters(tokens, centers, cfg.beta, scale);
        auto p = attention_scores(tokens, heads[l]);
        auto [merged, trace] = merge_clusters(tokens, assignment, p, centers, l + 1);
        TokenSet next = transformer_stage(merged, tokens, p, blocks[l]);
        traces.push_back(std::move(trace));
        stages.push_back(next);
        tokens = std::move(next);
    }
    return {std::move(tokens), std::move(traces), std::move(stages)};
}

}  // namespace atoken
