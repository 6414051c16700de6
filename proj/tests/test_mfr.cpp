#include <gtest/gtest.h>

#include "atoken/atoken.hpp"
#include "golden_util.hpp"
#include "oracles.hpp"

using namespace atoken;

namespace {

StageTrace make_trace(std::vector<std::uint32_t> assignment, std::vector<std::uint32_t> centers, Matrix input) {
    StageTrace t;
    t.stage_index = 1;
    t.attention_scores.assign(assignment.size(), 0.0);
    t.assignment = std::move(assignment);
    t.center_token_indices = std::move(centers);
    t.input_features = std::move(input);
    return t;
}

}  // namespace

TEST(UpsampleStage, Examples) {
    Matrix merged(3, 2, {1, 2, 3, 4, 5, 6});
    auto ident = make_trace({0, 1, 2}, {0, 1, 2}, Matrix(3, 2));
    EXPECT_EQ(upsample_stage(merged, ident), merged);

    auto t = make_trace({0, 0, 1}, {0, 2}, Matrix(3, 1));
    EXPECT_EQ(upsample_stage(Matrix(2, 1, {2, 5}), t).data(), (std::vector<double>{2, 2, 5}));

    auto bad = make_trace({0, 3, 1}, {0, 2}, Matrix(3, 1));
    EXPECT_THROW(upsample_stage(Matrix(2, 1, {2, 5}), bad), Error);
}

TEST(UpsampleStage, RowsCopyTheirClusterBitwise) {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t n = 5 + rng.index(60), k = 1 + rng.index(n);
        std::vector<std::uint32_t> a(n);
        for (std::size_t i = 0; i < n; ++i) a[i] = std::uint32_t(i < k ? i : rng.index(k));
        std::vector<std::uint32_t> centers(k);
        for (std::size_t j = 0; j < k; ++j) centers[j] = std::uint32_t(j);
        auto merged = testgen::random_matrix(rng, k, 5);
        auto up = upsample_stage(merged, make_trace(a, centers, Matrix(n, 5)));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(up(i, c), merged(a[i], c));
    }
}

TEST(AggregateStage, Examples) {
    auto up = Matrix(2, 2, {1, 2, 3, 4});
    EXPECT_EQ(aggregate_stage(up, make_trace({0, 0}, {0}, Matrix(2, 2))), up);
    EXPECT_EQ(aggregate_stage(Matrix(1, 1, {2}), make_trace({0}, {0}, Matrix(1, 1, {1})))(0, 0), 3.0);
    EXPECT_THROW(aggregate_stage(up, make_trace({0, 0}, {0}, Matrix(2, 3))), Error);

    Rng rng(4);
    auto a = testgen::random_matrix(rng, 64, 8), b = testgen::random_matrix(rng, 64, 8);
    auto sum = aggregate_stage(a, make_trace(std::vector<std::uint32_t>(64, 0), {0}, b));
    for (std::size_t r = 0; r < 64; ++r)
        for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(sum(r, c), a(r, c) + b(r, c));
}

TEST(Reconstruct, SingleIdentityStage) {
    Rng rng(8);
    auto fm = testgen::random_feature_map(rng, 3, 2, 2);
    auto ts = slice_to_tokens(fm);
    std::vector<std::uint32_t> ident = {0, 1, 2, 3, 4, 5};
    auto t = make_trace(ident, ident, Matrix(6, 2));
    std::vector<MlpBlock> mlps = {MlpBlock::zeros(2, 4)};
    std::vector<StageTrace> traces = {t};
    EXPECT_EQ(reconstruct(ts, traces, mlps), fm);
}

TEST(Reconstruct, TwoStageSingletonsSumSkipFeatures) {
    // 2x1 grid, every cluster a singleton but permuted; zero MLPs.
    Matrix x0(2, 1, {1.0, 2.0});   // stage-1 inputs (pixels)
    Matrix x1(2, 1, {10.0, 20.0});  // stage-2 inputs, in stage-1 cluster order
    Matrix final_feats(2, 1, {100.0, 200.0});
    auto s1 = make_trace({1, 0}, {1, 0}, x0);  // pixel 0 -> cluster 1
    auto s2 = make_trace({0, 1}, {0, 1}, x1);
    TokenSet final_tokens(2, 1, final_feats, {{1}, {0}});
    std::vector<StageTrace> traces = {s1, s2};
    std::vector<MlpBlock> mlps = {MlpBlock::zeros(1, 2), MlpBlock::zeros(1, 2)};
    auto out = reconstruct(final_tokens, traces, mlps);
    // pixel 0: cluster 1 at stage 1 -> final token 1: 200 + 20 + 1
    EXPECT_EQ(out.at(0, 0, 0), 221.0);
    EXPECT_EQ(out.at(1, 0, 0), 112.0);
}

TEST(Reconstruct, MismatchedTracesAreRejected) {
    TokenSet final_tokens(2, 1, Matrix(1, 1), {{0, 1}});
    auto t = make_trace({0, 0}, {0}, Matrix(2, 1));
    std::vector<StageTrace> traces = {t};
    EXPECT_THROW(reconstruct(final_tokens, traces, std::vector<MlpBlock>{}), ConfigError);
    std::vector<MlpBlock> mlps = {MlpBlock::zeros(1, 2)};
    TokenSet two(2, 1, Matrix(2, 1), {{0}, {1}});
    EXPECT_THROW(reconstruct(two, traces, mlps), ConfigError);
    EXPECT_THROW(reconstruct(final_tokens, std::vector<StageTrace>{}, std::vector<MlpBlock>{}), ConfigError);
}

TEST(Reconstruct, PiecewiseConstantOverFinalRegions) {
    Rng rng(15);
    for (int trial = 0; trial < 10; ++trial) {
        auto fm = testgen::random_feature_map(rng, 8, 6, 3);
        ScoreMap s(8, 6, testgen::random_vector(rng, 48));
        PipelineConfig cfg;
        cfg.token_schedule = {20, 6};
        cfg.num_stages = 2;
        cfg.rng_seed = trial;
        auto w = make_pipeline_weights(cfg, 3, 2);
        auto att = run_att(fm, s, cfg, w.heads, w.blocks);
        for (auto& t : att.traces) t.input_features = Matrix(t.input_features.rows(), t.input_features.cols());
        std::vector<MlpBlock> zero(2, MlpBlock::zeros(3, 6));
        auto out = reconstruct(att.final_tokens, att.traces, zero);
        EXPECT_EQ(out.width(), 8u);
        EXPECT_EQ(out.height(), 6u);
        EXPECT_EQ(out.channels(), 3u);
        for (std::size_t t = 0; t < att.final_tokens.count(); ++t)
            for (auto p : att.final_tokens.regions()[t])
                for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out.pixel(p)[c], att.final_tokens.features()(t, c), 1e-12);
    }
}

TEST(Reconstruct, SeededEightByEightGolden) {
    SceneSpec spec = random_scene_spec(3, 8, 8, 4);
    auto scene = generate_scene(spec, 3);
    PipelineConfig cfg;
    cfg.token_schedule = {64, 16, 4};
    cfg.rng_seed = 3;
    auto w = make_pipeline_weights(cfg, 4, 3);
    auto res = run_pipeline(scene.features, spec.camera, cfg, w);
    expect_matches_golden(res.reconstructed, "pipeline_8x8.atfm");
}

TEST(MlpBlock, AtswRoundTrip) {
    Rng rng(3);
    auto m = MlpBlock::random(3, 6, rng);
    EXPECT_EQ(mlp_from_layers(decode_weights(encode_weights(mlp_to_layers(m)))), m);
}
