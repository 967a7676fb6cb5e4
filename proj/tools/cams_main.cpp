#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cams/errors.hpp"
#include "cams/pipeline.hpp"

namespace {

// One-line machine-readable error record on stderr; exit code stays nonzero.
int fail(const std::string& stage, const std::string& kind, const std::string& message) {
    nlohmann::json j{{"error", {{"stage", stage}, {"kind", kind}, {"message", message}}}};
    std::fprintf(stderr, "%s\n", j.dump().c_str());
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cams - agentic urban mobility simulation pipeline"};
    app.require_subcommand(0, 1);
    app.fallthrough();

    std::string config_path;
    std::string stage_flag;
    std::string out_override;
    long long seed_override = -1;
    app.add_option("--config", config_path, "run configuration (json)")->required();
    app.add_option("--stage", stage_flag, "stage to run (alternative to the subcommand)");
    app.add_option("--seed", seed_override, "override params.rng_seed");
    app.add_option("--out", out_override, "override out_dir");

    std::vector<std::string> stages = cams::pipeline::stage_list();
    stages.push_back("all");
    for (const auto& name : stages) app.add_subcommand(name, "run the '" + name + "' stage");

    CLI11_PARSE(app, argc, argv);

    std::string stage = stage_flag;
    for (auto* sub : app.get_subcommands()) stage = sub->get_name();
    if (stage.empty()) {
        std::fprintf(stderr, "no stage given; use a subcommand or --stage\n");
        return 2;
    }

    try {
        auto cfg = cams::pipeline::load_config(config_path);
        if (!out_override.empty()) cfg.out_dir = out_override;
        if (seed_override >= 0) cfg.rng_seed = static_cast<std::uint64_t>(seed_override);
        cams::pipeline::run_stage(cfg, stage);
    } catch (const cams::DependencyError& e) {
        return fail(stage, "dependency", e.what());
    } catch (const cams::ConfigError& e) {
        return fail(stage, "config", e.what());
    } catch (const cams::IngestError& e) {
        return fail(stage, "ingest", e.what());
    } catch (const cams::BackendError& e) {
        return fail(stage, "backend", e.what());
    } catch (const cams::Error& e) {
        return fail(stage, "error", e.what());
    } catch (const std::exception& e) {
        return fail(stage, "internal", e.what());
    }
    std::printf("stage '%s' completed\n", stage.c_str());
    return 0;
}
