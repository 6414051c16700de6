#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <set>

#include "atoken/atoken.hpp"
#include "oracles.hpp"

using namespace atoken;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("atoken_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write(const fs::path& p, const std::string& text) { detail::write_text_file(p.string(), text); }

}  // namespace

TEST(GenerateScene, EmptySceneIsBackgroundPlusNoise) {
    SceneSpec spec;
    spec.width = 6;
    spec.height = 5;
    spec.channels = 2;
    spec.background = {0.5, -0.5};
    spec.noise_amplitude = 0.01;
    auto scene = generate_scene(spec, 1);
    EXPECT_TRUE(scene.keypoints.points.empty());
    for (std::size_t p = 0; p < 30; ++p) {
        EXPECT_NEAR(scene.features.pixel(p)[0], 0.5, 0.01);
        EXPECT_NEAR(scene.features.pixel(p)[1], -0.5, 0.01);
    }
}

TEST(GenerateScene, ObjectPixelsCarrySignature) {
    SceneSpec spec;
    spec.width = spec.height = 16;
    spec.channels = 3;
    spec.noise_amplitude = 0.0;
    spec.objects = {{5, 6, 4, 4, {1.0, 2.0, 3.0}}};
    auto scene = generate_scene(spec, 9);
    int count = 0;
    for (std::size_t p = 0; p < 256; ++p)
        if (scene.features.pixel(p)[1] == 2.0) ++count;
    EXPECT_EQ(count, 16);
    EXPECT_EQ(scene.features.at(5, 6, 2), 3.0);
    EXPECT_EQ(scene.features.at(8, 9, 0), 1.0);
    EXPECT_EQ(scene.features.at(9, 9, 0), 0.0);
    ASSERT_EQ(scene.keypoints.points.size(), 4u);
    EXPECT_EQ(scene.keypoints.points[3], (Point{8, 9}));
}

TEST(GenerateScene, SeedDeterminismAndBounds) {
    auto spec = random_scene_spec(4);
    EXPECT_EQ(encode_feature_map(generate_scene(spec, 4).features), encode_feature_map(generate_scene(spec, 4).features));
    EXPECT_NE(encode_feature_map(generate_scene(spec, 4).features), encode_feature_map(generate_scene(spec, 5).features));
    spec.objects[0].x = spec.width;
    EXPECT_THROW(generate_scene(spec, 1), ConfigError);
}

TEST(RenderTokenMap, SinglePixelTokensGetDistinctColours) {
    auto ts = slice_to_tokens(FeatureMap(2, 2, 1));
    auto img = render_token_map(ts, std::nullopt, {4, true});
    EXPECT_EQ(img.width, 8u);
    std::set<Rgb> colours;
    for (std::size_t v = 0; v < 2; ++v)
        for (std::size_t u = 0; u < 2; ++u) colours.insert(img.at(u * 4 + 2, v * 4 + 2));
    EXPECT_EQ(colours.size(), 4u);
}

TEST(RenderTokenMap, OneTokenIsFlat) {
    Region all = {0, 1, 2, 3, 4, 5};
    TokenSet ts(3, 2, Matrix(1, 1), {all});
    auto img = render_token_map(ts, std::nullopt, {5, true});
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) EXPECT_EQ(img.at(x, y), token_color(0));
}

TEST(RenderTokenMap, CoverageScanMatchesOwners) {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        auto ts = testgen::random_token_set(rng, 9, 7, 1 + rng.index(40), 1);
        auto img = render_token_map(ts, std::nullopt, {6, true});
        auto owners = ts.pixel_owners();
        for (std::size_t v = 0; v < 7; ++v)
            for (std::size_t u = 0; u < 9; ++u) {
                // interior of every cell holds exactly its owner's colour
                for (std::size_t y = 1; y < 5; ++y)
                    for (std::size_t x = 1; x < 5; ++x) ASSERT_EQ(img.at(u * 6 + x, v * 6 + y), token_color(owners[v * 9 + u]));
            }
    }
}

TEST(RenderTokenMap, HeatmapPanelAndPpmRoundTrip) {
    auto ts = slice_to_tokens(FeatureMap(3, 2, 1));
    ScoreMap s(3, 2, {0, 1, 2, 3, 4, 5});
    auto img = render_token_map(ts, s, {2, false});
    EXPECT_EQ(img.width, 12u);
    EXPECT_EQ(img.at(6, 0), heat_color(0.0));
    EXPECT_EQ(img.at(11, 3), heat_color(1.0));
    auto bytes = encode_ppm(img);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 3), "P6\n");
    EXPECT_EQ(decode_ppm(bytes).rgb, img.rgb);
}

TEST(RenderTokenSvg, HasOneRectPerPixelAndBoundaryLines) {
    std::vector<std::uint32_t> owners = {0, 0, 1, 1};
    auto svg = render_token_svg(owners, 2, 2, 4);
    std::size_t rects = 0, lines = 0;
    for (std::size_t pos = 0; (pos = svg.find("<rect", pos)) != std::string::npos; ++pos) ++rects;
    for (std::size_t pos = 0; (pos = svg.find("<line", pos)) != std::string::npos; ++pos) ++lines;
    EXPECT_EQ(rects, 4u);
    EXPECT_EQ(lines, 2u);
}

TEST(OwnersFromAssignments, ComposesStages) {
    std::vector<std::vector<std::uint32_t>> a = {{0, 1, 0, 2}, {1, 0, 0}};
    EXPECT_EQ(owners_from_assignments(4, a, 0), (std::vector<std::uint32_t>{0, 1, 2, 3}));
    EXPECT_EQ(owners_from_assignments(4, a, 1), (std::vector<std::uint32_t>{0, 1, 0, 2}));
    EXPECT_EQ(owners_from_assignments(4, a, 2), (std::vector<std::uint32_t>{1, 0, 1, 0}));
    EXPECT_THROW(owners_from_assignments(4, a, 3), Error);
}

TEST(RunMetrics, PairAccounting) {
    std::vector<std::size_t> schedule = {256, 64, 16};
    auto m = compute_run_metrics(1024, schedule);
    EXPECT_EQ(m.stage_token_counts, (std::vector<std::size_t>{1024, 256, 64, 16}));
    EXPECT_EQ(m.adaptive_pairs, 1024u * 256 + 256 * 64 + 64 * 16);
    EXPECT_EQ(m.grid_pairs, 3u * 1024 * 1024);
    EXPECT_EQ(m.reduction_factor, 3145728.0 / 279552.0);
}

TEST(Config, ParsesKnownKeysAndRejectsUnknown) {
    auto rc = run_config_from_json(Json::parse(R"({"token_schedule":[64,16,4],"alpha":0.5,"beta":0.1,"d_k":8,
        "rng_seed":7,"mlp_hidden":12,"num_heads":2,"raw_pixel_beta":true,
        "camera":{"f_x":8,"f_y":8,"c_x":4,"c_y":2,"cam_height":1.65,"score_gain":1}})"));
    EXPECT_EQ(rc.pipeline.num_stages, 3u);
    EXPECT_EQ(rc.pipeline.token_schedule, (std::vector<std::size_t>{64, 16, 4}));
    EXPECT_EQ(rc.pipeline.alpha, 0.5);
    EXPECT_EQ(rc.pipeline.num_heads, 2u);
    EXPECT_TRUE(rc.pipeline.raw_pixel_beta);
    ASSERT_TRUE(rc.camera);
    EXPECT_EQ(rc.camera->c_y, 2.0);

    EXPECT_THROW(run_config_from_json(Json::parse(R"({"gamma":1})")), ConfigError);
    EXPECT_THROW(run_config_from_json(Json::parse(R"({"alpha":"x"})")), ConfigError);
    EXPECT_THROW(run_config_from_json(Json::parse(R"({"num_stages":2,"token_schedule":[4,2,1]})")), ConfigError);
    EXPECT_THROW(run_config_from_json(Json::parse(R"({"camera":{"f_x":1}})")), ConfigError);
}

TEST(SceneSpecJson, RoundTrip) {
    auto spec = random_scene_spec(11, 16, 12, 3);
    auto back = scene_spec_from_json(scene_spec_to_json(spec));
    EXPECT_EQ(scene_spec_to_json(back), scene_spec_to_json(spec));
    EXPECT_THROW(scene_spec_from_json(Json::parse(R"({"width":4,"height":4,"channels":1,"extra":0})")), ConfigError);
}

TEST(RunPipelineFiles, WritesArtifactsAndMatchesScheduleCounts) {
    auto dir = scratch("run");
    write(dir / "config.json", R"({"token_schedule":[64,16,4],"rng_seed":5})");
    SceneSpec spec = random_scene_spec(5, 8, 8, 4);
    write(dir / "scene.json", scene_spec_to_json(spec).dump());
    RunRequest req{(dir / "config.json").string(), (dir / "scene.json").string(), std::nullopt, (dir / "out").string()};
    auto out = run_pipeline_files(req);
    EXPECT_EQ(out.result.metrics.stage_token_counts, (std::vector<std::size_t>{64, 64, 16, 4}));
    for (const char* f : {"features.atfm", "tokens.ppm", "tokens.svg", "trace.json", "metrics.json"})
        EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
    auto fm = read_feature_map((dir / "out" / "features.atfm").string());
    EXPECT_EQ(fm.width(), 8u);
    EXPECT_EQ(fm.channels(), 4u);
    auto metrics = detail::read_json_file((dir / "out" / "metrics.json").string());
    EXPECT_EQ(metrics["stage_token_counts"].get<std::vector<std::size_t>>(), (std::vector<std::size_t>{64, 64, 16, 4}));

    auto tf = read_trace_file((dir / "out" / "trace.json").string());
    EXPECT_EQ(tf.assignments.size(), 3u);
    auto owners = owners_from_assignments(64, tf.assignments, 3);
    EXPECT_EQ(owners, out.result.att.final_tokens.pixel_owners());
}

TEST(RunPipelineFiles, InputFileNeedsCameraAndValidSchedule) {
    auto dir = scratch("input");
    Rng rng(1);
    write_feature_map((dir / "in.atfm").string(), testgen::random_feature_map(rng, 8, 8, 2));
    write(dir / "nocam.json", R"({"token_schedule":[16,4]})");
    write(dir / "big.json", R"({"token_schedule":[65,16,4],"camera":{"f_x":8,"f_y":8,"c_x":4,"c_y":2,"cam_height":1.65,"score_gain":1}})");
    write(dir / "ok.json", R"({"token_schedule":[16,4],"camera":{"f_x":8,"f_y":8,"c_x":4,"c_y":2,"cam_height":1.65,"score_gain":1}})");
    auto req = [&](const char* cfg) {
        return RunRequest{(dir / cfg).string(), std::nullopt, (dir / "in.atfm").string(), (dir / "out").string()};
    };
    EXPECT_THROW(run_pipeline_files(req("nocam.json")), ConfigError);
    EXPECT_THROW(run_pipeline_files(req("big.json")), ConfigError);
    EXPECT_NO_THROW(run_pipeline_files(req("ok.json")));
    EXPECT_THROW(run_pipeline_files(req("missing.json")), IoError);
    auto bad_input = req("ok.json");
    bad_input.input_path = (dir / "nothere.atfm").string();
    EXPECT_THROW(run_pipeline_files(bad_input), IoError);
}

TEST(RunPipelineFiles, ScorerWeightsFromFile) {
    auto dir = scratch("scorer");
    WeightLayer ident{1, 8, 1, 1, {1, 0, 0, 0, 0, 0, 0, 0}, {0}};
    write_weights((dir / "scorer.atsw").string(), {ident});
    write(dir / "config.json", R"({"token_schedule":[16,4],"scorer_weights":")" + (dir / "scorer.atsw").string() + "\"}");
    RunRequest req{(dir / "config.json").string(), std::nullopt, std::nullopt, (dir / "out").string()};
    auto out = run_pipeline_files(req);
    // semantic score = first channel of the generated scene
    auto spec = random_scene_spec(0);
    auto scene = generate_scene(spec, 0);
    for (std::size_t p = 0; p < scene.features.pixel_count(); ++p)
        EXPECT_EQ(out.result.semantic[p], scene.features.pixel(p)[0]);
}
