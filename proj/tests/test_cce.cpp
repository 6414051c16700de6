#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "atoken/atoken.hpp"
#include "oracles.hpp"

using namespace atoken;

namespace {

CameraIntrinsics camera(double f, double cy, double h = 1.65) {
    CameraIntrinsics k;
    k.f_x = k.f_y = f;
    k.c_x = 0;
    k.c_y = cy;
    k.cam_height = h;
    return k;
}

}  // namespace

TEST(BackProject, PrincipalPointAndDirectEvaluation) {
    CameraIntrinsics k = camera(1000, 0);
    k.c_x = 320;
    k.c_y = 180;
    auto p = back_project(320, 180, 7.5, k);
    EXPECT_EQ(p.x, 0.0);
    EXPECT_EQ(p.y, 0.0);
    EXPECT_EQ(p.z, 7.5);

    auto q = back_project(100, 50, 10, camera(1000, 0));
    EXPECT_DOUBLE_EQ(q.x, 1.0);
    EXPECT_DOUBLE_EQ(q.y, 0.5);
    EXPECT_EQ(q.z, 10.0);

    auto r = back_project(100, 50, 20, camera(1000, 0));
    EXPECT_DOUBLE_EQ(r.x, 2 * q.x);
    EXPECT_DOUBLE_EQ(r.y, 2 * q.y);

    EXPECT_THROW(back_project(1, 1, 0.0, k), Error);
    EXPECT_THROW(back_project(1, 1, -1.0, k), Error);
}

TEST(GroundDepth, Examples) {
    EXPECT_NEAR(ground_depth(300, camera(1000, 200)), 16.5, 1e-12);
    auto k = camera(800, 120, 2.0);
    EXPECT_DOUBLE_EQ(ground_depth(120 + 800, k), 2.0);
    EXPECT_THROW(ground_depth(120, k), Error);
    EXPECT_THROW(ground_depth(50, k), Error);
}

TEST(GroundDepth, VirtualPlaneConsistency) {
    auto k = camera(721.5, 172.8);
    for (double v = 173; v < 375; v += 1.0) {
        auto p = back_project(100.0, v, ground_depth(v, k), k);
        EXPECT_NEAR(p.y, k.cam_height, 1e-12);
    }
}

TEST(DepthScore, RowsAndClamp) {
    auto k = camera(1000, 200);
    auto s = depth_score(k, 400, 3);
    EXPECT_EQ(s.width(), 3u);
    EXPECT_EQ(s.height(), 400u);
    EXPECT_EQ(s.at(0, 200), 0.0);
    EXPECT_EQ(s.at(2, 10), 0.0);
    EXPECT_NEAR(s.at(1, 300), -100.0 / 1650.0, 1e-15);
    double max = -INFINITY;
    for (std::size_t v = 0; v < 400; ++v) {
        EXPECT_EQ(s.at(0, v), s.at(2, v));
        if (v > 200) {
            EXPECT_LT(s.at(0, v), s.at(0, v - 1));
        } else {
            EXPECT_EQ(s.at(0, v), 0.0);
        }
        max = std::max(max, s.at(0, v));
    }
    EXPECT_EQ(max, 0.0);
}

TEST(SemanticScore, ZeroWeightsAndIdentity) {
    Rng rng(1);
    auto fm = testgen::random_feature_map(rng, 5, 4, 3);
    SemanticScorer zero({WeightLayer{1, 3, 3, 3, std::vector<double>(27, 0.0), {0.0}}});
    auto zeroed = semantic_score(fm, zero);
    for (double v : zeroed.values()) EXPECT_EQ(v, 0.0);

    auto single = testgen::random_feature_map(rng, 5, 4, 1);
    SemanticScorer ident({WeightLayer{1, 1, 1, 1, {1.0}, {0.0}}});
    EXPECT_EQ(semantic_score(single, ident).values(), single.data());
}

TEST(SemanticScore, ZeroPaddedConvolutionMatchesHandSum) {
    // 3x3 box filter on a 3x3 ones map: corners see 4, edges 6, centre 9.
    FeatureMap fm(3, 3, 1, std::vector<double>(9, 1.0));
    SemanticScorer box({WeightLayer{1, 1, 3, 3, std::vector<double>(9, 1.0), {0.5}}});
    auto s = semantic_score(fm, box);
    EXPECT_EQ(s.at(0, 0), 4.5);
    EXPECT_EQ(s.at(1, 0), 6.5);
    EXPECT_EQ(s.at(1, 1), 9.5);
}

TEST(SemanticScore, SeededScorerIsDeterministic) {
    Rng data_rng(5);
    auto fm = testgen::random_feature_map(data_rng, 9, 7, 4);
    Rng a(42), b(42);
    auto s1 = semantic_score(fm, SemanticScorer::random(4, a));
    auto s2 = semantic_score(fm, SemanticScorer::random(4, b));
    EXPECT_EQ(encode_feature_map(FeatureMap(9, 7, 1, s1.values())), encode_feature_map(FeatureMap(9, 7, 1, s2.values())));
}

TEST(SemanticScore, ShapeErrors) {
    Rng rng(2);
    auto fm = testgen::random_feature_map(rng, 3, 3, 2);
    EXPECT_THROW(semantic_score(fm, SemanticScorer::random(3, rng)), ConfigError);
    EXPECT_THROW(SemanticScorer({WeightLayer{2, 1, 1, 1, {1, 1}, {0, 0}}}), ConfigError);  // not one channel
    EXPECT_THROW(SemanticScorer({WeightLayer{4, 2, 3, 3, std::vector<double>(72), std::vector<double>(4)},
                                 WeightLayer{1, 3, 3, 3, std::vector<double>(27), std::vector<double>(1)}}),
                 ConfigError);  // 4 -> 3 does not chain
}

TEST(SemanticScore, LoadsAtswFile) {
    Rng rng(9);
    auto scorer = SemanticScorer::random(2, rng);
    auto path = (std::filesystem::temp_directory_path() / "atoken_scorer_test.atsw").string();
    write_weights(path, scorer.layers());
    auto loaded = SemanticScorer::load(path);
    EXPECT_EQ(loaded.layers(), scorer.layers());
    std::filesystem::remove(path);
}

TEST(CombineScores, Examples) {
    ScoreMap sd(2, 1, {-0.5, -0.1});
    ScoreMap ss(2, 1, {2.0, 3.0});
    EXPECT_EQ(combine_scores(sd, ss, 0.0), sd);
    EXPECT_EQ(combine_scores(sd, ScoreMap(2, 1), 0.7), sd);
    EXPECT_EQ(combine_scores(sd, ss, 0.25).at(0, 0), 0.0);
    EXPECT_THROW(combine_scores(sd, ScoreMap(1, 2), 1.0), Error);
}

TEST(TokenScores, Examples) {
    FeatureMap fm(2, 2, 1, {0, 0, 0, 0});
    auto ts = slice_to_tokens(fm);
    ScoreMap s(2, 2, {0.1, 0.2, 0.3, 0.4});
    EXPECT_EQ(token_scores(ts, s), s.values());

    TokenSet pair(2, 1, Matrix(1, 1), {{0, 1}});
    EXPECT_EQ(token_scores(pair, ScoreMap(2, 1, {0, 1}))[0], 0.5);
}

TEST(TokenScores, MatchesPixelScatterOracle) {
    Rng rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        auto ts = testgen::random_token_set(rng, 8, 8, 1 + rng.index(64), 1);
        ScoreMap s(8, 8, testgen::random_vector(rng, 64));
        auto got = token_scores(ts, s);
        auto want = oracle::token_scores_by_pixel(ts, s);
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-14);
    }
}

TEST(TokenScores, WholeGridTokenIsGlobalMean) {
    Rng rng(4);
    std::vector<double> v = testgen::random_vector(rng, 30);
    Region all(30);
    for (std::size_t i = 0; i < 30; ++i) all[i] = PixelIndex(i);
    TokenSet one(6, 5, Matrix(1, 1), {all});
    double mean = 0;
    for (double x : v) mean += x;
    mean /= 30;
    EXPECT_NEAR(token_scores(one, ScoreMap(6, 5, v))[0], mean, 1e-15);
}

TEST(SelectCenters, Examples) {
    TokenSet ts(3, 1, Matrix(3, 1), {{0}, {1}, {2}});
    std::vector<double> scores = {0.9, 0.1, 0.5};
    EXPECT_EQ(select_centers(ts, 2, scores), (std::vector<std::uint32_t>{0, 2}));
    EXPECT_EQ(select_centers(ts, 3, scores), (std::vector<std::uint32_t>{0, 2, 1}));
    std::vector<double> flat = {0.3, 0.3, 0.3};
    EXPECT_EQ(select_centers(ts, 2, flat), (std::vector<std::uint32_t>{0, 1}));
    EXPECT_THROW(select_centers(ts, 0, scores), ConfigError);
    EXPECT_THROW(select_centers(ts, 4, scores), ConfigError);
}

TEST(SelectCenters, InvariantUnderMonotoneTransforms) {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t n = 1 + rng.index(40);
        auto ts = testgen::random_token_set(rng, 8, 5, n, 1);
        auto scores = testgen::random_vector(rng, n);
        // quantise to force ties
        for (auto& s : scores) s = std::round(s * 4) / 4;
        std::size_t k = 1 + rng.index(n);
        auto base = select_centers(ts, k, scores);
        std::vector<double> t1, t2;
        for (double s : scores) {
            t1.push_back(std::exp(3 * s) + 7);
            t2.push_back(2.5 * s - 1);
        }
        EXPECT_EQ(select_centers(ts, k, t1), base);
        EXPECT_EQ(select_centers(ts, k, t2), base);
    }
}

TEST(KeypointHeatmap, Examples) {
    auto empty = keypoint_heatmap({}, 5, 4);
    for (double v : empty.values()) EXPECT_EQ(v, 0.0);

    KeypointSet one{{{3, 3}}, 2.0};
    auto h = keypoint_heatmap(one, 7, 7);
    EXPECT_EQ(h.at(3, 3), 1.0);
    EXPECT_LT(h.at(4, 3), 1.0);
    EXPECT_LT(h.at(5, 3), h.at(4, 3));
    EXPECT_LT(h.at(5, 5), h.at(4, 4));
    EXPECT_EQ(h.at(4, 3), h.at(3, 2));

    KeypointSet two{{{1, 1}, {3, 2}}, 1.5};
    auto h2 = keypoint_heatmap(two, 6, 5);
    auto loop = oracle::heatmap_loop(two, 6, 5);
    for (std::size_t i = 0; i < loop.size(); ++i) EXPECT_EQ(h2[i], loop[i]);

    KeypointSet outside{{{7, 0}}, 1.0};
    EXPECT_THROW(keypoint_heatmap(outside, 6, 5), Error);
}

TEST(FocalLoss, PerfectPredictionLimit) {
    std::vector<double> gt(9, 0.0), logits(9, -40.0);
    gt[4] = 1.0;
    logits[4] = 40.0;
    EXPECT_LT(focal_loss(ScoreMap(3, 3, logits), ScoreMap(3, 3, gt)), 1e-15);
    EXPECT_LT(focal_loss(ScoreMap(3, 3, std::vector<double>(9, -40.0)), ScoreMap(3, 3)), 1e-15);
}

TEST(FocalLoss, HandEvaluatedTwoByTwo) {
    ScoreMap pred(2, 2, {0, 0, 0, 0});  // sigmoid -> 0.5
    ScoreMap gt(2, 2, {1, 0, 0, 0});
    double expected = (-0.25 * std::log(0.5) - 3 * 0.25 * std::log(0.5)) / 1.0;
    EXPECT_NEAR(focal_loss(pred, gt), expected, 1e-15);
}

TEST(FocalLoss, NonNegativeAndNormalisedByPositives) {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        KeypointSet kps{{{double(rng.index(6)), double(rng.index(6))}}, 1.5};
        auto gt = keypoint_heatmap(kps, 6, 6);
        ScoreMap pred(6, 6, testgen::random_vector(rng, 36, -4, 4));
        EXPECT_GT(focal_loss(pred, gt), 0.0);
    }
    // Two disjoint copies of a one-positive problem give the same loss as one.
    ScoreMap gt1(2, 1, {1, 0.3}), pred1(2, 1, {0.2, -0.7});
    ScoreMap gt2(4, 1, {1, 0.3, 1, 0.3}), pred2(4, 1, {0.2, -0.7, 0.2, -0.7});
    EXPECT_NEAR(focal_loss(pred1, gt1), focal_loss(pred2, gt2), 1e-15);
    EXPECT_THROW(focal_loss(pred1, gt2), Error);
}
