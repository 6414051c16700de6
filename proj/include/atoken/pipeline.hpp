#pragma once

// End-to-end driver: configuration and scene files, the cce -> att -> mfr
// chain, and the artifacts written by `atoken run`.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "atoken/att.hpp"
#include "atoken/binary_io.hpp"
#include "atoken/cce.hpp"
#include "atoken/error.hpp"
#include "atoken/fmcore.hpp"
#include "atoken/metrics.hpp"
#include "atoken/mfr.hpp"
#include "atoken/numerics.hpp"
#include "atoken/render.hpp"
#include "atoken/rng.hpp"
#include "atoken/scene.hpp"

namespace atoken {

using Json = nlohmann::json;

namespace detail {

inline void reject_unknown_keys(const Json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
T get_as(const Json& j, const std::string& key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

inline Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("write failed for " + path);
}

}  // namespace detail

inline CameraIntrinsics camera_from_json(const Json& j) {
    detail::reject_unknown_keys(j, {"f_x", "f_y", "c_x", "c_y", "cam_height", "score_gain"}, "camera");
    CameraIntrinsics k;
    for (auto [key, slot] : {std::pair{"f_x", &k.f_x}, {"f_y", &k.f_y}, {"c_x", &k.c_x}, {"c_y", &k.c_y},
                             {"cam_height", &k.cam_height}, {"score_gain", &k.score_gain}}) {
        if (!j.contains(key)) throw ConfigError(std::string("camera.") + key + " is required");
        *slot = detail::get_as<double>(j, key, "camera");
    }
    k.validate();
    return k;
}

inline Json camera_to_json(const CameraIntrinsics& k) {
    return {{"f_x", k.f_x}, {"f_y", k.f_y}, {"c_x", k.c_x}, {"c_y", k.c_y}, {"cam_height", k.cam_height}, {"score_gain", k.score_gain}};
}

/// Contents of a run configuration file. Keys mirror PipelineConfig.
struct RunConfig {
    PipelineConfig pipeline;
    std::optional<CameraIntrinsics> camera;
    std::optional<std::string> scorer_weights;
};

inline RunConfig run_config_from_json(const Json& j) {
    detail::reject_unknown_keys(j,
                                {"num_stages", "token_schedule", "alpha", "beta", "d_k", "rng_seed", "mlp_hidden",
                                 "num_heads", "raw_pixel_beta", "camera", "scorer_weights"},
                                "config");
    RunConfig rc;
    auto& c = rc.pipeline;
    const std::string w = "config";
    if (j.contains("token_schedule")) {
        c.token_schedule = detail::get_as<std::vector<std::size_t>>(j, "token_schedule", w);
        c.num_stages = c.token_schedule.size();
    }
    if (j.contains("num_stages")) c.num_stages = detail::get_as<std::size_t>(j, "num_stages", w);
    if (j.contains("alpha")) c.alpha = detail::get_as<double>(j, "alpha", w);
    if (j.contains("beta")) c.beta = detail::get_as<double>(j, "beta", w);
    if (j.contains("d_k")) c.d_k = detail::get_as<std::size_t>(j, "d_k", w);
    if (j.contains("rng_seed")) c.rng_seed = detail::get_as<std::uint64_t>(j, "rng_seed", w);
    if (j.contains("mlp_hidden")) c.mlp_hidden = detail::get_as<std::size_t>(j, "mlp_hidden", w);
    if (j.contains("num_heads")) c.num_heads = detail::get_as<std::size_t>(j, "num_heads", w);
    if (j.contains("raw_pixel_beta")) c.raw_pixel_beta = detail::get_as<bool>(j, "raw_pixel_beta", w);
    if (j.contains("camera")) rc.camera = camera_from_json(j.at("camera"));
    if (j.contains("scorer_weights")) rc.scorer_weights = detail::get_as<std::string>(j, "scorer_weights", w);
    require_config(c.num_stages >= 1, "num_stages must be >= 1");
    require_config(c.token_schedule.empty() || c.token_schedule.size() == c.num_stages,
                   "token_schedule length must equal num_stages");
    return rc;
}

inline SceneSpec scene_spec_from_json(const Json& j) {
    detail::reject_unknown_keys(j, {"width", "height", "channels", "camera", "background", "noise_amplitude", "objects", "keypoint_sigma"},
                                "scene");
    SceneSpec s;
    const std::string w = "scene";
    s.width = detail::get_as<std::size_t>(j, "width", w);
    s.height = detail::get_as<std::size_t>(j, "height", w);
    s.channels = detail::get_as<std::size_t>(j, "channels", w);
    s.camera = j.contains("camera") ? camera_from_json(j.at("camera")) : default_camera(s.width, s.height);
    if (j.contains("background")) s.background = detail::get_as<std::vector<double>>(j, "background", w);
    if (j.contains("noise_amplitude")) s.noise_amplitude = detail::get_as<double>(j, "noise_amplitude", w);
    if (j.contains("keypoint_sigma")) s.keypoint_sigma = detail::get_as<double>(j, "keypoint_sigma", w);
    if (j.contains("objects")) {
        for (const auto& o : j.at("objects")) {
            detail::reject_unknown_keys(o, {"x", "y", "w", "h", "signature"}, "scene object");
            s.objects.push_back({detail::get_as<std::size_t>(o, "x", "object"), detail::get_as<std::size_t>(o, "y", "object"),
                                 detail::get_as<std::size_t>(o, "w", "object"), detail::get_as<std::size_t>(o, "h", "object"),
                                 detail::get_as<std::vector<double>>(o, "signature", "object")});
        }
    }
    s.validate();
    return s;
}

inline Json scene_spec_to_json(const SceneSpec& s) {
    Json objects = Json::array();
    for (const auto& o : s.objects) objects.push_back({{"x", o.x}, {"y", o.y}, {"w", o.w}, {"h", o.h}, {"signature", o.signature}});
    return {{"width", s.width},
            {"height", s.height},
            {"channels", s.channels},
            {"camera", camera_to_json(s.camera)},
            {"background", s.background},
            {"noise_amplitude", s.noise_amplitude},
            {"keypoint_sigma", s.keypoint_sigma},
            {"objects", objects}};
}

/// Every learned tensor of the pipeline.
struct PipelineWeights {
    SemanticScorer scorer;
    std::vector<AttentionScoreHead> heads;
    std::vector<TransformerBlock> blocks;
    std::vector<MlpBlock> mlps;
};

/// Seeded weights drawn in a fixed order: scorer, then per stage head,
/// block, MLP.
inline PipelineWeights make_pipeline_weights(const PipelineConfig& cfg, std::size_t channels, std::size_t stages) {
    Rng rng(cfg.rng_seed);
    PipelineWeights w{SemanticScorer::random(channels, rng), {}, {}, {}};
    std::size_t hidden = cfg.resolved_mlp_hidden(channels);
    for (std::size_t l = 0; l < stages; ++l) {
        w.heads.push_back(AttentionScoreHead::random(channels, rng));
        w.blocks.push_back(TransformerBlock::random(channels, cfg.d_k, hidden, cfg.num_heads, rng));
        w.mlps.push_back(MlpBlock::random(channels, hidden, rng));
    }
    return w;
}

struct PipelineResult {
    ScoreMap depth;
    ScoreMap semantic;
    ScoreMap combined;
    AttResult att;
    FeatureMap reconstructed;
    RunMetrics metrics;
    FocusStats focus;
};

/// cce -> att -> mfr on one feature map.
inline PipelineResult run_pipeline(const FeatureMap& fm, const CameraIntrinsics& camera, const PipelineConfig& cfg,
                                   const PipelineWeights& w) {
    using Clock = std::chrono::steady_clock;
    camera.validate();
    cfg.validate(fm.pixel_count());
    auto schedule = cfg.resolved_schedule(fm.pixel_count());
    auto ms = [](Clock::time_point a, Clock::time_point b) { return std::chrono::duration<double, std::milli>(b - a).count(); };

    auto t0 = Clock::now();
    ScoreMap sd = depth_score(camera, fm.height(), fm.width());
    ScoreMap ss = semantic_score(fm, w.scorer);
    ScoreMap s = combine_scores(sd, ss, cfg.alpha);
    auto t1 = Clock::now();
    AttResult att = run_att(fm, s, cfg, w.heads, w.blocks);
    auto t2 = Clock::now();
    FeatureMap rec = reconstruct(att.final_tokens, att.traces, w.mlps);
    auto t3 = Clock::now();

    RunMetrics m = compute_run_metrics(fm.pixel_count(), schedule);
    m.phase_ms = {{"cce", ms(t0, t1)}, {"att", ms(t1, t2)}, {"mfr", ms(t2, t3)}};
    FocusStats focus = adaptive_focus(att.final_tokens, s);
    return {std::move(sd), std::move(ss), std::move(s), std::move(att), std::move(rec), std::move(m), focus};
}

inline Json metrics_to_json(const RunMetrics& m, const FocusStats& f) {
    return {{"stage_token_counts", m.stage_token_counts},
            {"pair_counts", m.pair_counts},
            {"adaptive_pairs", m.adaptive_pairs},
            {"grid_pairs", m.grid_pairs},
            {"reduction_factor", m.reduction_factor},
            {"focus", {{"decile_size", f.decile_size}, {"mean_area_top_decile", f.mean_area_top}, {"mean_area_bottom_decile", f.mean_area_bottom}}}};
}

inline Json report_to_json(const GradCheckReport& r) {
    return {{"operation", r.operation},
            {"max_relative_error", r.max_relative_error},
            {"element_count", r.element_count},
            {"epsilon", r.epsilon},
            {"pass", r.pass}};
}

/// Trace file: grid size, per-stage assignments/centers/scores and the pixel
/// score map. Skip features are not stored.
inline Json traces_to_json(std::size_t width, std::size_t height, const std::vector<StageTrace>& traces, const ScoreMap* scores) {
    Json stages = Json::array();
    for (const auto& t : traces)
        stages.push_back({{"stage_index", t.stage_index},
                          {"assignment", t.assignment},
                          {"center_token_indices", t.center_token_indices},
                          {"attention_scores", t.attention_scores}});
    Json j = {{"width", width}, {"height", height}, {"stages", stages}};
    if (scores) j["pixel_scores"] = scores->values();
    return j;
}

struct TraceFile {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::vector<std::uint32_t>> assignments;
    std::optional<ScoreMap> scores;
};

inline TraceFile read_trace_file(const std::string& path) {
    Json j;
    try {
        j = detail::read_json_file(path);
    } catch (const ConfigError& e) {
        throw IoError(e.what());
    }
    TraceFile tf;
    try {
        tf.width = j.at("width").get<std::size_t>();
        tf.height = j.at("height").get<std::size_t>();
        for (const auto& s : j.at("stages")) tf.assignments.push_back(s.at("assignment").get<std::vector<std::uint32_t>>());
        if (j.contains("pixel_scores"))
            tf.scores = ScoreMap(tf.width, tf.height, j.at("pixel_scores").get<std::vector<double>>());
    } catch (const Json::exception& e) {
        throw IoError(path + ": " + e.what());
    } catch (const Error& e) {
        throw IoError(path + ": " + e.what());
    }
    return tf;
}

/// Inputs of `atoken run`. Without a scene or input file a seeded 32x32x8
/// random scene is used.
struct RunRequest {
    std::string config_path;
    std::optional<std::string> scene_path;
    std::optional<std::string> input_path;
    std::string out_dir;
};

struct RunOutcome {
    PipelineResult result;
    std::vector<std::string> written;
};

/// Run the pipeline and write features.atfm, tokens.ppm, tokens.svg,
/// trace.json and metrics.json into out_dir.
inline RunOutcome run_pipeline_files(const RunRequest& req) {
    if (req.scene_path && req.input_path) throw ConfigError("--scene and --input are mutually exclusive");
    RunConfig rc = run_config_from_json(detail::read_json_file(req.config_path));

    std::optional<FeatureMap> fm;
    CameraIntrinsics camera;
    if (req.input_path) {
        fm = read_feature_map(*req.input_path);
        if (!rc.camera) throw ConfigError("a camera block is required in the config when using --input");
        camera = *rc.camera;
    } else {
        SceneSpec spec = req.scene_path ? scene_spec_from_json(detail::read_json_file(*req.scene_path))
                                        : random_scene_spec(rc.pipeline.rng_seed);
        Scene scene = generate_scene(spec, rc.pipeline.rng_seed);
        fm = std::move(scene.features);
        camera = rc.camera ? *rc.camera : spec.camera;
    }
    rc.pipeline.validate(fm->pixel_count());
    auto schedule = rc.pipeline.resolved_schedule(fm->pixel_count());
    PipelineWeights w = make_pipeline_weights(rc.pipeline, fm->channels(), schedule.size());
    if (rc.scorer_weights) w.scorer = SemanticScorer::load(*rc.scorer_weights);

    PipelineResult res = run_pipeline(*fm, camera, rc.pipeline, w);

    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(req.out_dir, ec);
    if (ec) throw IoError("cannot create " + req.out_dir + ": " + ec.message());
    auto path = [&](const char* name) { return (fs::path(req.out_dir) / name).string(); };
    RunOutcome out{std::move(res), {}};
    const auto& r = out.result;
    write_feature_map(path("features.atfm"), r.reconstructed);
    write_file_bytes(path("tokens.ppm"), encode_ppm(render_token_map(r.att.final_tokens, r.combined)));
    auto owners = r.att.final_tokens.pixel_owners();
    detail::write_text_file(path("tokens.svg"), render_token_svg(owners, fm->width(), fm->height()));
    detail::write_text_file(path("trace.json"), traces_to_json(fm->width(), fm->height(), r.att.traces, &r.combined).dump() + "\n");
    detail::write_text_file(path("metrics.json"), metrics_to_json(r.metrics, r.focus).dump(2) + "\n");
    out.written = {path("features.atfm"), path("tokens.ppm"), path("tokens.svg"), path("trace.json"), path("metrics.json")};
    return out;
}

}  // namespace atoken
