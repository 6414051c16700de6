#pragma once

// Multi-stage feature reconstruction: walk the stage traces backwards,
// copying each merged token to the tokens it absorbed, adding the skip
// features recorded at that stage and refining with a per-stage MLP, until
// every pixel has its own feature vector again.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "atoken/error.hpp"
#include "atoken/fmcore.hpp"
#include "atoken/matrix.hpp"
#include "atoken/nn.hpp"
#include "atoken/rng.hpp"

namespace atoken {

/// Residual two-layer MLP applied after each upsampling step.
using MlpBlock = ResidualMlp;

inline std::vector<WeightLayer> mlp_to_layers(const MlpBlock& m) { return {m.fc1.to_layer(), m.fc2.to_layer()}; }

inline MlpBlock mlp_from_layers(const std::vector<WeightLayer>& layers) {
    if (layers.size() != 2) throw IoError("MLP block expects 2 layers");
    return {Linear::from_layer(layers[0]), Linear::from_layer(layers[1])};
}

/// out[i] = merged[assignment[i]].
inline Matrix upsample_stage(const Matrix& merged_feats, const StageTrace& trace) {
    Matrix out(trace.assignment.size(), merged_feats.cols());
    for (std::size_t i = 0; i < trace.assignment.size(); ++i) {
        auto a = trace.assignment[i];
        if (a >= merged_feats.rows()) throw Error("trace assignment " + std::to_string(a) + " has no merged token");
        auto src = merged_feats.row(a);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

/// upsampled + the stage's recorded input features.
inline Matrix aggregate_stage(const Matrix& upsampled, const StageTrace& trace) {
    const Matrix& prev = trace.input_features;
    if (prev.rows() != upsampled.rows() || prev.cols() != upsampled.cols())
        throw Error("skip features do not match the upsampled tokens");
    Matrix out = upsampled;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += prev.data()[i];
    return out;
}

/// Dense width x height x C map from the final tokens. traces[0] must be the
/// first stage, whose inputs are the pixel tokens in row-major order.
inline FeatureMap reconstruct(const TokenSet& final_tokens, std::span<const StageTrace> traces, std::span<const MlpBlock> mlps) {
    if (traces.empty()) throw ConfigError("reconstruction needs at least one stage trace");
    if (mlps.size() != traces.size()) throw ConfigError("need one MLP block per stage");
    if (traces.back().cluster_count() != final_tokens.count())
        throw ConfigError("last trace cluster count does not match the final token count");
    for (std::size_t l = 0; l + 1 < traces.size(); ++l)
        if (traces[l].cluster_count() != traces[l + 1].input_count())
            throw ConfigError("stage traces do not chain at stage " + std::to_string(l + 1));
    if (traces.front().input_count() != final_tokens.pixel_count())
        throw ConfigError("first trace does not start from the pixel tokens");

    Matrix feats = final_tokens.features();
    for (std::size_t l = traces.size(); l-- > 0;) {
        Matrix up = upsample_stage(feats, traces[l]);
        Matrix agg = aggregate_stage(up, traces[l]);
        feats = mlps[l].apply_rows(agg);
    }
    return FeatureMap(final_tokens.grid_width(), final_tokens.grid_height(), feats.cols(), std::move(feats.data()));
}

}  // namespace atoken
