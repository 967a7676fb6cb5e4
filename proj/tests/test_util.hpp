#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "cams/llm_gateway.hpp"
#include "cams/mobility_data.hpp"
#include "cams/urban_space.hpp"

namespace camstest {

inline std::string fixture_path(const std::string& rel) {
    return std::string(CAMS_FIXTURE_DIR) + "/" + rel;
}

// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        dir_ = std::filesystem::temp_directory_path() /
               ("cams_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
        std::filesystem::create_directories(dir_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(dir_, ec);
    }
    std::string path(const std::string& rel = "") const {
        return rel.empty() ? dir_.string() : (dir_ / rel).string();
    }

private:
    std::filesystem::path dir_;
};

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    out << content;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline cams::urban::SpatialIndex fixture_city() {
    return cams::urban::ingest_city(fixture_path("city/pois.csv"),
                                    fixture_path("city/regions.csv"),
                                    fixture_path("city/roads.csv"));
}

inline cams::mobility::IntentMap fixture_intents() {
    return cams::mobility::IntentMap::load(fixture_path("intent_map.csv"));
}

inline std::vector<cams::mobility::Trajectory> fixture_trajectories(
    const cams::urban::SpatialIndex& index, const cams::mobility::IntentMap& intents) {
    auto loaded =
        cams::mobility::load_trajectories(fixture_path("trajectories.csv"), index, intents, {});
    return loaded.trajectories;
}

// N POIs at uniform random coordinates inside a box; categories cycle through
// the given list.
inline std::string random_poi_csv(std::mt19937_64& rng, int n,
                                  const std::vector<std::string>& categories,
                                  double lat0 = 39.8, double lat1 = 40.1, double lon0 = 116.2,
                                  double lon1 = 116.6) {
    std::uniform_real_distribution<double> ulat(lat0, lat1), ulon(lon0, lon1);
    std::string csv = "id,name,category,lat,lon\n";
    for (int i = 0; i < n; ++i) {
        char row[160];
        std::snprintf(row, sizeof(row), "rp%03d,Random Place %d,%s,%.6f,%.6f\n", i, i,
                      categories[i % categories.size()].c_str(), ulat(rng), ulon(rng));
        csv += row;
    }
    return csv;
}

inline std::unique_ptr<cams::llm::Gateway> make_scripted_gateway(
    std::vector<cams::llm::ScriptedBackend::Entry> entries, int structured_attempts = 2,
    int max_concurrency = 1) {
    cams::llm::BackendConfig cfg;
    cfg.kind = cams::llm::BackendKind::scripted;
    cfg.max_concurrency = max_concurrency;
    cfg.structured_attempts = structured_attempts;
    return std::make_unique<cams::llm::Gateway>(
        cfg, cams::llm::PromptRegistry::builtin(),
        std::make_unique<cams::llm::ScriptedBackend>(std::move(entries)));
}

}  // namespace camstest
