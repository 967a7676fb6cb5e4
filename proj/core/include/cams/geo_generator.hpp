#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cams/llm_gateway.hpp"
#include "cams/metrics.hpp"
#include "cams/mob_extractor.hpp"
#include "cams/mobility_data.hpp"
#include "cams/urban_space.hpp"

namespace cams::geogen {

// Ground-truth anchor of a template user, used to build summaries and the
// target distributions the reflection step compares against.
struct TruthAnchor {
    std::string user_id;
    std::string kind;  // "home" or "work"
    std::string poi_id;
};

struct RegionSummary {
    std::string region_id;
    urban::RegionLevel level = urban::RegionLevel::admin;
    // attribute key -> value -> count over users anchored in this region
    std::map<std::string, std::map<std::string, long>> histograms;
    std::string descriptive_text;
    std::vector<std::string> child_ids;  // one level finer (poi ids for street)
    long user_count = 0;
};

using SummarySet = std::array<std::map<std::string, RegionSummary>, 3>;  // per level, by id

struct AnchorAssignment {
    std::string user_id;
    std::string kind;
    std::array<std::string, 3> trail;  // admin, subdistrict, street ids
    std::string poi_id;
    int iteration = 0;
};

struct ReflectionAdvice {
    int iteration = 0;
    std::map<std::string, double> contributions;  // per-region jsd terms
    std::map<std::string, double> gaps;           // generated minus truth (normalized)
    double jsd_value = 0.0;
    std::string directive;
};

class TransitionGraph {
public:
    struct Edge {
        std::string a, b;  // a < b
        long n = 0;
        double d_km = 0.0;
        double w = 0.0;
    };

    TransitionGraph(double alpha, double epsilon) : alpha_(alpha), epsilon_(epsilon) {}

    double alpha() const { return alpha_; }
    double epsilon() const { return epsilon_; }
    long skipped_pairs() const { return skipped_; }
    bool has_node(const std::string& id) const { return nodes_.count(id) > 0; }
    double weight(const std::string& i, const std::string& j) const;
    std::vector<Edge> edges() const;  // sorted by (a, b)

    void save_csv(const std::string& path) const;
    static TransitionGraph load_csv(const std::string& path, double alpha, double epsilon);

private:
    friend TransitionGraph build_transition_graph(const std::vector<mobility::Trajectory>&,
                                                  const urban::SpatialIndex&, double, double);
    double alpha_;
    double epsilon_;
    long skipped_ = 0;
    std::map<std::pair<std::string, std::string>, Edge> edges_;
    std::map<std::string, std::vector<std::string>> nodes_;  // node -> neighbors
};

// Undirected visit-transition counts with w = n / (d^alpha + epsilon).
TransitionGraph build_transition_graph(const std::vector<mobility::Trajectory>& trajectories,
                                       const urban::SpatialIndex& index, double alpha = 1.0,
                                       double epsilon = 1e-6);

// Profile histograms per region at one level, over users with ground-truth
// anchors of the given kind.
std::vector<RegionSummary> summarize_regions(
    urban::RegionLevel level, const std::vector<TruthAnchor>& anchors,
    const std::map<std::string, mobility::UserProfile>& profiles,
    const urban::SpatialIndex& index);

SummarySet summarize_all_levels(const std::vector<TruthAnchor>& anchors,
                                const std::map<std::string, mobility::UserProfile>& profiles,
                                const urban::SpatialIndex& index);

struct CascadeConfig {
    int rounds = 3;
    double convergence_jsd = 0.05;
    urban::RegionLevel reflect_level = urban::RegionLevel::admin;
    bool llm_reflection = false;  // render the directive through region_reflect
    int max_backtracks = 2;
    mobility::IntentMap intents = mobility::IntentMap::builtin_defaults();
};

struct AssignStats {
    long re_asks = 0;
    long fallbacks = 0;
    long backtracks = 0;
};

// One reasoning/execution pass down admin -> subdistrict -> street -> POI.
AnchorAssignment assign_anchor(llm::Gateway& gateway, const mobility::UserProfile& user,
                               const std::string& kind, const SummarySet& summaries,
                               const urban::SpatialIndex& index,
                               const std::optional<ReflectionAdvice>& advice,
                               const CascadeConfig& cfg, AssignStats* stats = nullptr);

// Distribution-aware reflection at the given level against a truth
// distribution (region id -> mass).
ReflectionAdvice reflect(const std::vector<AnchorAssignment>& assignments,
                         const std::map<std::string, double>& truth_distribution,
                         urban::RegionLevel level, int iteration,
                         llm::Gateway* gateway = nullptr, bool llm_reflection = false);

struct CascadeResult {
    std::vector<AnchorAssignment> assignments;
    std::vector<ReflectionAdvice> advice;
    bool completed = true;
    std::string error;  // set when aborted with partial results
};

CascadeResult run_anchor_cascade(llm::Gateway& gateway,
                                 const std::vector<mobility::UserProfile>& users,
                                 const std::string& kind, const SummarySet& summaries,
                                 const std::map<std::string, double>& truth_distribution,
                                 const urban::SpatialIndex& index, const CascadeConfig& cfg);

void write_anchor_csv(const std::string& path, const std::vector<AnchorAssignment>& assignments);
std::vector<AnchorAssignment> load_anchor_csv(const std::string& path);

// --- UrbanMapper candidate strategies -------------------------------------

struct SocialCandidates {
    std::vector<const urban::Poi*> pois;
    bool frequency_fallback = false;  // current location missing from graph
};

SocialCandidates candidates_social(const std::string& current_loc,
                                   const std::vector<std::string>& neighbor_ids,
                                   const TransitionGraph& graph,
                                   const std::vector<mobility::Trajectory>& trajectories,
                                   int k, const urban::SpatialIndex& index);

std::vector<const urban::Poi*> candidates_map(const std::string& intent, const GeoPoint& center,
                                              const urban::SpatialIndex& index,
                                              const mobility::IntentMap& intents,
                                              double radius_km, int k);

struct LlmCandidates {
    std::vector<const urban::Poi*> pois;
    metrics::TvrCounts tvr;  // valid/total toponyms across this call's attempts
};

enum class AddressStyle { hierarchical, human };

LlmCandidates candidates_llm(llm::Gateway& gateway, const urban::Poi& current,
                             const std::string& profile_text, const std::string& pattern_text,
                             const std::string& intent, const urban::SpatialIndex& index, int k,
                             AddressStyle style = AddressStyle::hierarchical,
                             const llm::CallContext& ctx = {});

// --- POI-level fine-tuning QA dataset --------------------------------------

struct FinetuneQaPair {
    std::string question;
    std::string answer;
    std::string origin_poi;
    std::string dest_poi;
    std::string waypoint;
    double radius_km = 0.0;
    std::string category;

    nlohmann::json to_json() const;
};

// Population-weighted OD sampling; route by shortest road path (straight
// segment sampled every 200 m as fallback); QA pairs answer radius/category
// queries around every traversed waypoint. Deterministic under the seed.
std::vector<FinetuneQaPair> build_finetune_dataset(const urban::SpatialIndex& index, int n_pairs,
                                                   double radius_km,
                                                   const std::vector<std::string>& categories,
                                                   std::uint64_t rng_seed);

void write_finetune_jsonl(const std::string& path, const std::vector<FinetuneQaPair>& pairs);

// Mean consecutive-step distance across a dataset; the paper-style default
// for the fine-tune radius.
double mean_jump_distance_km(const std::vector<mobility::Trajectory>& trajectories,
                             const urban::SpatialIndex& index);

}  // namespace cams::geogen
