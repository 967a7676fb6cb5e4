#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cams/geo_generator.hpp"
#include "cams/llm_gateway.hpp"
#include "cams/metrics.hpp"
#include "cams/mobility_data.hpp"
#include "cams/urban_space.hpp"

namespace cams::pipeline {

inline constexpr const char* kVersion = "0.1.0";

struct RunConfig {
    // Inputs (paths resolved relative to the config file).
    std::string poi_file;
    std::string region_file;
    std::string road_file;
    std::string profiles_file;
    std::string trajectories_file;
    std::string intent_map_file;
    std::string truth_anchors_file;
    std::string prompt_dir;
    std::string out_dir;

    std::vector<std::string> template_users;
    std::vector<std::string> test_users;

    llm::BackendConfig backend;
    std::map<std::string, llm::BackendConfig> stage_backends;
    std::vector<llm::BackendConfig> iterate_backends;
    int iterate_rounds = 0;  // 0 = one round per configured backend

    char mapper = 'E';  // E (llm), M (map tools), S (social graph)
    geogen::AddressStyle address_style = geogen::AddressStyle::hierarchical;

    int k_neighbors = 3;    // K similar template users
    int k_candidates = 10;  // candidates per mapper call
    double alpha = 1.0;
    double epsilon = 1e-6;
    double finetune_radius_km = 0.0;  // <= 0: mean jump distance of templates
    double map_radius_km = 3.0;
    int reflection_rounds = 3;
    double reflection_threshold = 0.05;
    std::uint64_t rng_seed = 7;
    int finetune_pairs = 50;
    std::vector<std::string> finetune_categories;  // empty: all ingested categories
    int embedding_dim = 256;
    int utc_offset_s = 8 * 3600;
    std::string retrieval = "embedding";  // or "llm"
    int workers = 1;

    double dpo_threshold = 5.0;
    std::set<std::string> dpo_stages = {"plan_day", "synthesize_traj"};

    std::map<std::string, std::string> compare_reports;  // model name -> report.json

    std::string config_hash;  // canonical fingerprint of the config document
    std::string config_dir;
};

// Parses, env-interpolates (${VAR}) and validates a JSON run configuration.
RunConfig load_config(const std::string& path);
std::string hash_config_json(const nlohmann::json& doc);

const std::vector<std::string>& stage_list();  // valid subcommands except "all"

// Runs one stage (or "all"), writing artifacts plus a manifest under
// <out_dir>/<stage>/. Throws cams::Error subtypes on failure; missing
// upstream artifacts raise DependencyError naming the artifact.
void run_stage(const RunConfig& cfg, const std::string& stage);

// Training -> deployment -> testing -> data collection loop; each round uses
// the next configured backend. Stops early (partial results) when a round's
// backend is missing. Returns per-round reports.
std::vector<metrics::MetricReport> iterate_enhancement(const RunConfig& cfg);

}  // namespace cams::pipeline
