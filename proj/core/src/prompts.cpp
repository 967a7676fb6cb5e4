#include "cams/prompts.hpp"

namespace cams::llm {

namespace {

PromptTemplate make(Stage stage, OutputKind kind, double temperature, const char* text) {
    PromptTemplate t;
    t.stage = stage;
    t.text = text;
    t.placeholders = extract_placeholders(t.text);
    t.output = kind;
    t.default_temperature = temperature;
    return t;
}

std::vector<PromptTemplate> build_all() {
    std::vector<PromptTemplate> v;

    v.push_back(make(Stage::c1_compress, OutputKind::free_text, 0.7, R"(You are analyzing the mobility behavior of one city resident.

User profile:
{profile}

Observed daily trajectories (hierarchical addresses, times, intents):
{trajectories}

Summary statistics:
{stats}

Derive this user's behavioral habits and motivations from the statistical
patterns in their history. State the compression rules that map the raw
trajectory evidence to profile-level traits: which visit regularities,
timing habits and travel ranges characterize this person, and why. Write
the rules as concise numbered natural-language statements.)"));

    v.push_back(make(Stage::c2_compress, OutputKind::free_text, 0.7, R"(You are analyzing the mobility behavior of one city resident.

User profile:
{profile}

Observed daily trajectories:
{trajectories}

Summary statistics:
{stats}

Previously derived habit rules:
{c1}

Identify this user's trajectory-level mobility pattern from the raw
trajectories, the habits and motivations above, and the address
information. State rules covering the ordering of intents across a day,
typical transition distances and dwell times, and which profile features
influence each rule. Write concise numbered natural-language rules.)"));

    v.push_back(make(Stage::r1_reconstruct, OutputKind::structured, 0.7, R"(User profile:
{profile}

Compression rules linking trajectories to profiles:
{c1}

From the profile components that the rules mark as most predictive, write a
one-paragraph description of this user's typical day of movement. Reply
with a JSON object: {{"r1": "<the reconstruction rule you applied: how
profile components map to the description>", "description": "<the typical
day description>"}}.)"));

    v.push_back(make(Stage::r2_reconstruct, OutputKind::structured, 0.7, R"(Trajectory description:
{description}

Mobility-pattern rules:
{c2}

Candidate places (only these names may appear in the trajectory):
{candidates}

Target day: {day}
{correction}
Produce the user's day as a time-ordered visit list drawn from the
candidate places, following the description and the rules. Reply with a
JSON object: {{"r2": "<the reconstruction rule you applied>",
"trajectory": [{{"time": "HH:MM", "poi": "<candidate name>", "intent":
"<intent token>"}}, ...]}}.)"));

    v.push_back(make(Stage::retrieve_similar, OutputKind::structured, 0.7, R"(Target user profile:
{target_profile}

Template users:
{template_profiles}

Select the {k} template users whose semantic profile characteristics are
most similar to the target user. Reply with a JSON object:
{{"matches": [{{"user_id": "<id>", "score": <similarity in [0,1]>}}, ...]}}
listing exactly {k} entries, most similar first.)"));

    v.push_back(make(Stage::fuse_c1, OutputKind::free_text, 0.7, R"(Target user profile:
{target_profile}

Habit-compression rules of similar template users:
{neighbor_c1}

Integrate the key profile factors and high-order mobility characteristics
of these rules into one rule set tailored to the target user. Keep only
rules consistent with the target profile and merge duplicates. Write
concise numbered natural-language rules.)"));

    v.push_back(make(Stage::gen_description, OutputKind::free_text, 0.7, R"(Target user profile:
{target_profile}

Fused habit rules:
{fused_c1}

Reconstruction rules of similar template users (profile -> description):
{neighbor_r1}

Reconstruction rules of similar template users (description -> trajectory):
{neighbor_r2}

Using the fused rules and referencing the reconstruction rules, write a
one-paragraph description of the target user's typical day of movement:
when they leave home, where they spend working hours, which other intents
appear and in what order.)"));

    v.push_back(make(Stage::fuse_c2, OutputKind::free_text, 0.7, R"(Target user profile:
{target_profile}

Trajectory-pattern rules of similar template users:
{neighbor_c2}

Integrate both the movement patterns unique to users like the target and
the universal patterns shared across the templates into one rule set for
the target user. Write concise numbered natural-language rules.)"));

    v.push_back(make(Stage::region_reason, OutputKind::free_text, 0.7, R"(Task: choose the {level} region where this user's {kind} is most plausibly
located, inside {parent}.

User profile:
{profile}

Candidate child regions and their resident summaries:
{child_summaries}

Collective guidance from the previous round:
{advice}

Reason about which candidate region best matches the profile, considering
the resident summaries and the guidance. Do not decide yet; lay out the
comparison.)"));

    v.push_back(make(Stage::region_execute, OutputKind::structured, 0.7, R"(Task: select the {level} choice for this user's {kind} location.

User profile:
{profile}

Options (ids):
{options}

Reasoning so far:
{reasoning}
{correction}
Reply with a JSON object {{"choice": "<one id from the options>"}}.)"));

    v.push_back(make(Stage::region_reflect, OutputKind::free_text, 0.7, R"(Generated {level}-level location distribution:
{generated_distribution}

Ground-truth distribution:
{target_distribution}

Per-region gaps (generated minus truth):
{gaps}

Compare the generated distribution against the ground truth and write a
short directive for the next assignment round: list regions that are
over-represented and should be chosen less, and regions that are
under-represented and should be chosen more.)"));

    v.push_back(make(Stage::mapper_candidates, OutputKind::structured, 0.7, R"(Current location: {current_address}
User profile: {profile}
Mobility pattern: {pattern}
Next intent: {intent}
{correction}
Name up to {k} real places in this city that the user could visit next for
this intent, near the current location. Use exact place names only. Reply
with a JSON object {{"candidates": ["<place name>", ...]}}.)"));

    v.push_back(make(Stage::plan_day, OutputKind::structured, 0.7, R"(User profile:
{profile}

Mobility pattern:
{pattern}

Plan this user's activities for {day}. Allowed intents: {taxonomy}.
Produce non-overlapping time slots covering the active hours, starting and
ending at home. Reply with a JSON object:
{{"slots": [{{"intent": "<intent>", "start": "HH:MM", "end": "HH:MM"}}, ...]}}.)"));

    v.push_back(make(Stage::synthesize_traj, OutputKind::structured, 0.7, R"(User profile: {profile}
Mobility pattern: {pattern}
Previous location: {previous}
Slot: intent {intent} starting at {slot_start}.

Candidate places:
{candidates}
{correction}
Pick the single candidate the user visits for this slot, weighing the
pattern, travel distance from the previous location and the intent. Reply
with a JSON object {{"index": <1-based position in the candidate list>}} or
{{"poi": "<candidate name>"}}.)"));

    v.push_back(make(Stage::judge_quality, OutputKind::structured, 0.0, R"(You are grading the output of a mobility-simulation system.

Output under review:
{output}

Score the quality of the mobility-pattern content on a 0-10 integer scale:
0-2 incoherent or empty, 3-5 partially plausible with spatial or temporal
inconsistencies, 6-8 plausible daily structure with consistent places and
times, 9-10 indistinguishable from a real resident's day. Judge pattern
plausibility and spatial coherence only, not writing style. Reply with a
JSON object {{"score": <integer>}}.)"));

    return v;
}

}  // namespace

const std::vector<PromptTemplate>& builtin_prompt_templates() {
    static const std::vector<PromptTemplate> templates = build_all();
    return templates;
}

}  // namespace cams::llm
