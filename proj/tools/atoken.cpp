// atoken: run the adaptive-token pipeline, verify gradients, render traces.
//
// Exit codes: 0 success, 2 configuration error, 3 I/O error,
// 4 verification failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "atoken/atoken.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kIoError = 3;
constexpr int kVerifyFailed = 4;

int cmd_run(const atoken::RunRequest& req) {
    auto out = atoken::run_pipeline_files(req);
    const auto& m = out.result.metrics;
    std::cerr << "tokens:";
    for (auto n : m.stage_token_counts) std::cerr << ' ' << n;
    std::cerr << "  pairs: " << m.adaptive_pairs << " (grid " << m.grid_pairs << ", x" << m.reduction_factor << ")\n";
    for (const auto& [phase, ms] : m.phase_ms) std::cerr << phase << ": " << ms << " ms\n";
    for (const auto& p : out.written) std::cout << p << '\n';
    return kOk;
}

int cmd_verify(std::uint64_t seed, std::size_t instances) {
    bool ok = true;
    for (const auto& r : atoken::gradcheck::run_all(seed, instances)) {
        std::cout << atoken::report_to_json(r).dump() << '\n';
        ok = ok && r.pass;
    }
    return ok ? kOk : kVerifyFailed;
}

int cmd_render(const std::string& trace_path, const std::string& out_path, std::optional<std::size_t> stage,
               std::size_t cell) {
    auto tf = atoken::read_trace_file(trace_path);
    std::size_t k = stage.value_or(tf.assignments.size());
    if (k > tf.assignments.size()) throw atoken::ConfigError("--stage beyond the recorded stages");
    auto owners = atoken::owners_from_assignments(tf.width * tf.height, tf.assignments, k);
    if (out_path.size() >= 4 && out_path.substr(out_path.size() - 4) == ".svg") {
        atoken::detail::write_text_file(out_path, atoken::render_token_svg(owners, tf.width, tf.height, cell));
    } else {
        atoken::RenderOptions opt;
        opt.cell = cell;
        auto img = atoken::render_token_map(owners, tf.width, tf.height, tf.scores, opt);
        atoken::write_file_bytes(out_path, atoken::encode_ppm(img));
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive token pipeline: cluster-center estimation, token merging, feature reconstruction"};
    app.require_subcommand(1);

    atoken::RunRequest req;
    std::string scene, input;
    auto* run = app.add_subcommand("run", "run the pipeline and write artifacts");
    run->add_option("--config", req.config_path, "JSON configuration")->required();
    auto* scene_opt = run->add_option("--scene", scene, "JSON scene description");
    run->add_option("--input", input, "ATFM feature map")->excludes(scene_opt);
    run->add_option("--out-dir", req.out_dir, "output directory")->required();

    std::uint64_t seed = 1;
    std::size_t instances = 20;
    auto* verify = app.add_subcommand("verify", "run the gradient checks, one JSON report per line");
    verify->add_option("--seed", seed, "instance seed");
    verify->add_option("--instances", instances, "instances per operation");

    std::string trace_path, out_path;
    std::optional<std::size_t> stage;
    std::size_t cell = 8;
    auto* render = app.add_subcommand("render", "render a token map from a trace file (.ppm or .svg)");
    render->add_option("--tokens", trace_path, "trace.json written by run")->required();
    render->add_option("--out", out_path, "output image")->required();
    render->add_option("--stage", stage, "number of merge stages to apply (default: all)");
    render->add_option("--cell", cell, "output pixels per grid pixel")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    try {
        if (*run) {
            if (!scene.empty()) req.scene_path = scene;
            if (!input.empty()) req.input_path = input;
            return cmd_run(req);
        }
        if (*verify) return cmd_verify(seed, instances);
        return cmd_render(trace_path, out_path, stage, cell);
    } catch (const atoken::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const atoken::IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIoError;
    } catch (const atoken::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfigError;
    }
}
