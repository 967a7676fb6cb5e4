#pragma once

#include <map>
#include <string>
#include <vector>

#include "cams/llm_gateway.hpp"
#include "cams/mobility_data.hpp"
#include "cams/urban_space.hpp"

namespace cams::extractor {

// Natural-language pattern rules for one user: c1/c2 from the compression
// pass, r1/r2 from the reconstruction pass.
struct PatternRecord {
    std::string user_id;
    std::string c1;
    std::string c2;
    std::string r1;
    std::string r2;

    bool complete() const { return !c1.empty() && !c2.empty() && !r1.empty() && !r2.empty(); }
};

struct ProfileEmbedding {
    std::string user_id;
    std::vector<double> vec;  // L2-normalized
};

struct EmbeddingMatrix {
    std::vector<std::string> user_ids;
    std::vector<std::vector<double>> rows;

    std::size_t dim() const { return rows.empty() ? 0 : rows.front().size(); }
};

struct ScoredUser {
    std::string user_id;
    double score = 0.0;
};

struct FusedPattern {
    std::string target_user_id;
    std::string fused_c1;
    std::string description;
    std::string fused_c2;
    std::vector<ScoredUser> sources;  // the K neighbors, scores descending
};

inline constexpr int kDefaultEmbeddingDim = 256;
inline constexpr int kDefaultK = 3;

// Prompt-facing renderings shared by compress and its tests.
struct TrajectoryStats {
    std::map<std::string, long> visits_per_intent;
    double radius_of_gyration_km = 0.0;
    double mean_step_km = 0.0;
};

TrajectoryStats trajectory_stats(const std::vector<mobility::Trajectory>& trajectories,
                                 const urban::SpatialIndex& index);
std::string render_stats(const TrajectoryStats& stats);
std::string render_trajectories(const std::vector<mobility::Trajectory>& trajectories,
                                const urban::SpatialIndex& index, int utc_offset_s);

// Two gateway calls (c1_compress, c2_compress) over the rendered history.
PatternRecord compress(llm::Gateway& gateway, const mobility::UserProfile& profile,
                       const std::vector<mobility::Trajectory>& trajectories,
                       const urban::SpatialIndex& index, int utc_offset_s = 8 * 3600);

struct ReconstructResult {
    std::string description;
    mobility::Trajectory trajectory;
    std::string r1;
    std::string r2;
    long dropped_names = 0;    // off-candidate names dropped after the re-ask
    long resort_warnings = 0;  // non-increasing timestamps repaired
};

// r1_reconstruct then r2_reconstruct; every emitted POI is drawn from the
// candidate list (one corrective re-ask, then invalid names are dropped).
ReconstructResult reconstruct(llm::Gateway& gateway, const mobility::UserProfile& profile,
                              const PatternRecord& record,
                              const std::vector<const urban::Poi*>& candidates,
                              const CivilDate& day, int utc_offset_s = 8 * 3600);

// Signed feature hashing of "key=value" attribute tokens into a fixed number
// of buckets, L2-normalized. Deterministic across platforms (FNV-1a).
ProfileEmbedding embed_profile(const mobility::UserProfile& profile,
                               int dim = kDefaultEmbeddingDim);
EmbeddingMatrix embed_profiles(const std::vector<mobility::UserProfile>& profiles,
                               int dim = kDefaultEmbeddingDim);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Exact top-k by cosine, ties broken by ascending user id.
std::vector<ScoredUser> top_k_similar(const ProfileEmbedding& target,
                                      const EmbeddingMatrix& templates, int k);

// One retrieve_similar gateway call; ids outside the template set are
// dropped, with one re-ask when fewer than k remain.
std::vector<ScoredUser> top_k_similar_llm(llm::Gateway& gateway,
                                          const mobility::UserProfile& target,
                                          const std::vector<mobility::UserProfile>& templates,
                                          int k);

// fuse_c1 -> gen_description -> fuse_c2 over the neighbors' records.
FusedPattern fuse(llm::Gateway& gateway, const mobility::UserProfile& target,
                  const std::vector<std::pair<ScoredUser, PatternRecord>>& neighbors);

// JSONL pattern store and CSV embedding cache (d-column rows plus a sidecar
// id list).
void write_pattern_records(const std::string& path, const std::vector<PatternRecord>& records);
std::vector<PatternRecord> load_pattern_records(const std::string& path);
void write_embedding_matrix(const std::string& csv_path, const std::string& ids_path,
                            const EmbeddingMatrix& m);
EmbeddingMatrix load_embedding_matrix(const std::string& csv_path, const std::string& ids_path);

}  // namespace cams::extractor
