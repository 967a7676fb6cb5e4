#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cams/llm_gateway.hpp"
#include "cams/mob_extractor.hpp"
#include "cams/mobility_data.hpp"
#include "cams/urban_space.hpp"

namespace cams::enhancer {

struct PlanSlot {
    std::string intent;
    int start_min = 0;  // minutes since local midnight
    int end_min = 0;    // exclusive
    bool anchor = false;  // home/work binding
};

struct ActivityPlan {
    std::string user_id;
    CivilDate day;
    std::vector<PlanSlot> slots;  // time-ordered, non-overlapping
    bool home_inserted = false;   // no home slot came back; one was prepended
};

// One plan_day structured call, normalized: slots clipped to the day,
// overlaps resolved by truncating the earlier slot, intents folded into the
// taxonomy, and a home slot prepended when absent.
ActivityPlan plan_day(llm::Gateway& gateway, const mobility::UserProfile& profile,
                      const extractor::FusedPattern& pattern, const CivilDate& day,
                      const mobility::IntentMap& intents);

std::string render_pattern(const extractor::FusedPattern& pattern);

// Candidate source for non-anchor slots: (previous poi, intent) -> candidates.
using CandidateProvider = std::function<std::vector<const urban::Poi*>(
    const urban::Poi& previous, const std::string& intent, const llm::CallContext& ctx)>;

struct SynthesisResult {
    mobility::Trajectory trajectory;
    long empty_candidate_slots = 0;  // slots held at the previous location
};

// Emits one point per plan slot at the slot start time. Home/work slots bind
// to anchor POIs; other slots select among mapper candidates via one
// synthesize_traj call (fallback = first candidate).
SynthesisResult synthesize_trajectory(llm::Gateway& gateway, const ActivityPlan& plan,
                                      const std::map<std::string, std::string>& anchors,
                                      const CandidateProvider& mapper,
                                      const urban::SpatialIndex& index,
                                      const mobility::UserProfile& profile,
                                      const extractor::FusedPattern& pattern,
                                      int utc_offset_s = 8 * 3600);

// judge_quality structured call at temperature 0; score clamped to [0, 10].
double judge_quality(llm::Gateway& gateway, const std::string& output_text);

struct PreferencePair {
    std::string prompt;
    std::string chosen;    // serialized real trajectory
    std::string rejected;  // model output
    double judge_score = 0.0;
    std::string user_id;
    std::string day;
    std::string stage;

    nlohmann::json to_json() const;
};

struct DpoBuildResult {
    std::vector<PreferencePair> pairs;
    long judged = 0;
    long below_threshold = 0;
    long skipped_missing_join = 0;
    long judge_errors = 0;
};

inline const std::set<std::string>& default_dpo_stages() {
    static const std::set<std::string> stages = {"plan_day", "synthesize_traj"};
    return stages;
}

// Judges the tagged transcript outputs of the selected stages and pairs those
// scoring above the threshold with the matching user-day real trajectory.
DpoBuildResult build_dpo_dataset(llm::Gateway& judge, const std::vector<llm::TranscriptEntry>& transcripts,
                                 const std::vector<mobility::Trajectory>& real_trajectories,
                                 double threshold = 5.0,
                                 const std::set<std::string>& stages = default_dpo_stages(),
                                 int utc_offset_s = 8 * 3600);

void write_dpo_jsonl(const std::string& path, const std::vector<PreferencePair>& pairs);

// Canonical trajectory text used for DPO "chosen" sides; parses back into an
// equal Trajectory.
std::string serialize_trajectory_text(const mobility::Trajectory& t, int utc_offset_s = 8 * 3600);
mobility::Trajectory parse_trajectory_text(const std::string& text, int utc_offset_s = 8 * 3600);

}  // namespace cams::enhancer
