#include "cams/traj_enhancer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cams/errors.hpp"
#include "cams/strings.hpp"
#include "cams/timeutil.hpp"

namespace cams::enhancer {

namespace {

std::string minutes_to_hhmm(int minutes) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%02d:%02d", minutes / 60, minutes % 60);
    return buf;
}

std::optional<int> parse_hhmm(const std::string& s) {
    int h = 0, m = 0;
    if (std::sscanf(s.c_str(), "%d:%d", &h, &m) != 2) return std::nullopt;
    if (m < 0 || m > 59) return std::nullopt;
    return h * 60 + m;
}

std::string hhmmss(std::int64_t ts, int utc_offset_s) {
    int sod = local_second_of_day(ts, utc_offset_s);
    char buf[12];
    std::snprintf(buf, sizeof(buf), "%02d:%02d:%02d", sod / 3600, (sod / 60) % 60, sod % 60);
    return buf;
}

}  // namespace

std::string render_pattern(const extractor::FusedPattern& pattern) {
    return "Habit rules:\n" + pattern.fused_c1 + "\nTypical day:\n" + pattern.description +
           "\nMovement rules:\n" + pattern.fused_c2;
}

ActivityPlan plan_day(llm::Gateway& gateway, const mobility::UserProfile& profile,
                      const extractor::FusedPattern& pattern, const CivilDate& day,
                      const mobility::IntentMap& intents) {
    auto taxonomy = intents.taxonomy();
    llm::CallContext ctx{profile.user_id, day.to_string()};
    auto result = gateway.complete_structured(llm::Stage::plan_day,
                                              {{"profile", profile.render()},
                                               {"pattern", render_pattern(pattern)},
                                               {"day", day.to_string()},
                                               {"taxonomy", join(taxonomy, ", ")}},
                                              {{"slots", llm::FieldKind::list}}, ctx);

    std::set<std::string> allowed(taxonomy.begin(), taxonomy.end());
    ActivityPlan plan;
    plan.user_id = profile.user_id;
    plan.day = day;
    for (const auto& item : result.record["slots"]) {
        if (!item.is_object()) continue;
        auto start = parse_hhmm(item.value("start", ""));
        auto end = parse_hhmm(item.value("end", ""));
        if (!start || !end) continue;
        PlanSlot slot;
        slot.intent = item.value("intent", "");
        if (!allowed.count(slot.intent)) slot.intent = intents.default_intent();
        slot.start_min = std::clamp(*start, 0, 1440);
        slot.end_min = std::clamp(*end, 0, 1440);
        if (slot.end_min <= slot.start_min) continue;
        plan.slots.push_back(slot);
    }

    std::stable_sort(plan.slots.begin(), plan.slots.end(),
                     [](const PlanSlot& a, const PlanSlot& b) { return a.start_min < b.start_min; });
    // Overlaps: truncate the earlier slot, then drop anything emptied.
    for (size_t i = 0; i + 1 < plan.slots.size(); ++i)
        if (plan.slots[i].end_min > plan.slots[i + 1].start_min)
            plan.slots[i].end_min = plan.slots[i + 1].start_min;
    std::erase_if(plan.slots, [](const PlanSlot& s) { return s.end_min <= s.start_min; });

    bool has_home = std::any_of(plan.slots.begin(), plan.slots.end(),
                                [](const PlanSlot& s) { return s.intent == "home"; });
    if (!has_home) {
        plan.home_inserted = true;
        PlanSlot home;
        home.intent = "home";
        home.start_min = 0;
        if (plan.slots.empty()) {
            home.end_min = 1440;
        } else if (plan.slots.front().start_min > 0) {
            home.end_min = plan.slots.front().start_min;
        } else {
            // Day starts with a non-home slot at 00:00; carve out one minute.
            home.end_min = 1;
            for (auto& s : plan.slots)
                if (s.start_min < 1) s.start_min = 1;
            std::erase_if(plan.slots, [](const PlanSlot& s) { return s.end_min <= s.start_min; });
        }
        plan.slots.insert(plan.slots.begin(), home);
    }
    for (auto& slot : plan.slots)
        slot.anchor = slot.intent == "home" || slot.intent == "work";
    return plan;
}

SynthesisResult synthesize_trajectory(llm::Gateway& gateway, const ActivityPlan& plan,
                                      const std::map<std::string, std::string>& anchors,
                                      const CandidateProvider& mapper,
                                      const urban::SpatialIndex& index,
                                      const mobility::UserProfile& profile,
                                      const extractor::FusedPattern& pattern,
                                      int utc_offset_s) {
    auto home_it = anchors.find("home");
    if (home_it == anchors.end())
        throw Error("synthesize_trajectory: no home anchor for user '" + plan.user_id + "'");
    const urban::Poi* home = &index.poi(home_it->second);
    const urban::Poi* work = nullptr;
    if (auto it = anchors.find("work"); it != anchors.end()) work = &index.poi(it->second);

    llm::CallContext ctx{plan.user_id, plan.day.to_string()};
    SynthesisResult result;
    result.trajectory.user_id = plan.user_id;
    result.trajectory.day = plan.day;
    std::int64_t base = day_start_epoch(plan.day, utc_offset_s);

    const urban::Poi* previous = home;
    for (const auto& slot : plan.slots) {
        const urban::Poi* selected = nullptr;
        if (slot.intent == "home") {
            selected = home;
        } else if (slot.intent == "work" && work) {
            selected = work;
        } else {
            auto candidates = mapper(*previous, slot.intent, ctx);
            if (candidates.empty()) {
                selected = previous;  // stay put
                ++result.empty_candidate_slots;
            } else {
                std::string names;
                for (size_t i = 0; i < candidates.size(); ++i)
                    names += std::to_string(i + 1) + ". " + candidates[i]->name + " (" +
                             candidates[i]->category + ")\n";
                auto reply = gateway.complete_structured(
                    llm::Stage::synthesize_traj,
                    {{"profile", profile.render()},
                     {"pattern", render_pattern(pattern)},
                     {"previous", previous->name},
                     {"intent", slot.intent},
                     {"slot_start", minutes_to_hhmm(slot.start_min)},
                     {"candidates", names},
                     {"correction", ""}},
                    {}, ctx);
                // Accept {"index": n} (1-based) or {"poi": name-or-id}; anything
                // else falls back to the first candidate.
                if (reply.record.contains("index") && reply.record["index"].is_number()) {
                    long idx = reply.record["index"].get<long>();
                    if (idx >= 1 && idx <= static_cast<long>(candidates.size()))
                        selected = candidates[static_cast<std::size_t>(idx - 1)];
                } else if (reply.record.contains("poi")) {
                    std::string wanted = reply.record["poi"].is_string()
                                             ? reply.record["poi"].get<std::string>()
                                             : reply.record["poi"].dump();
                    std::string norm = normalize_name(wanted);
                    for (const auto* c : candidates)
                        if (c->id == wanted || normalize_name(c->name) == norm) {
                            selected = c;
                            break;
                        }
                }
                if (!selected) selected = candidates.front();
            }
        }
        mobility::TrajectoryPoint pt;
        pt.timestamp = base + static_cast<std::int64_t>(slot.start_min) * 60;
        pt.poi_id = selected->id;
        pt.category = selected->category;
        pt.intent = slot.intent;
        result.trajectory.points.push_back(std::move(pt));
        previous = selected;
    }
    return result;
}

double judge_quality(llm::Gateway& gateway, const std::string& output_text) {
    auto result = gateway.complete_structured(llm::Stage::judge_quality, {{"output", output_text}},
                                              {{"score", llm::FieldKind::real}});
    return std::clamp(result.record["score"].get<double>(), 0.0, 10.0);
}

nlohmann::json PreferencePair::to_json() const {
    return nlohmann::json{{"prompt", prompt},   {"chosen", chosen}, {"rejected", rejected},
                          {"score", judge_score}, {"user_id", user_id}, {"day", day},
                          {"stage", stage}};
}

DpoBuildResult build_dpo_dataset(llm::Gateway& judge,
                                 const std::vector<llm::TranscriptEntry>& transcripts,
                                 const std::vector<mobility::Trajectory>& real_trajectories,
                                 double threshold, const std::set<std::string>& stages,
                                 int utc_offset_s) {
    std::map<std::pair<std::string, std::string>, const mobility::Trajectory*> real_by_key;
    for (const auto& t : real_trajectories)
        real_by_key[{t.user_id, t.day.to_string()}] = &t;

    // Keep the final successful attempt of each logical call.
    std::map<std::int64_t, const llm::TranscriptEntry*> final_attempt;
    for (const auto& e : transcripts) {
        if (!e.ok || e.user_id.empty() || e.day.empty()) continue;
        if (!stages.count(std::string(llm::stage_name(e.stage)))) continue;
        final_attempt[e.call_id] = &e;
    }

    DpoBuildResult result;
    for (const auto& [call_id, entry] : final_attempt) {
        auto rit = real_by_key.find({entry->user_id, entry->day});
        if (rit == real_by_key.end()) {
            ++result.skipped_missing_join;
            continue;
        }
        double score = 0.0;
        try {
            score = judge_quality(judge, entry->response);
        } catch (const StructuredOutputError&) {
            ++result.judge_errors;
            continue;
        }
        ++result.judged;
        if (!(score > threshold)) {
            ++result.below_threshold;
            continue;
        }
        PreferencePair pair;
        pair.prompt = entry->prompt;
        pair.chosen = serialize_trajectory_text(*rit->second, utc_offset_s);
        pair.rejected = entry->response;
        pair.judge_score = score;
        pair.user_id = entry->user_id;
        pair.day = entry->day;
        pair.stage = std::string(llm::stage_name(entry->stage));
        result.pairs.push_back(std::move(pair));
    }
    return result;
}

void write_dpo_jsonl(const std::string& path, const std::vector<PreferencePair>& pairs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write dpo dataset: " + path);
    for (const auto& p : pairs) out << p.to_json().dump() << '\n';
}

std::string serialize_trajectory_text(const mobility::Trajectory& t, int utc_offset_s) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& pt : t.points) {
        nlohmann::json j{{"t", hhmmss(pt.timestamp, utc_offset_s)},
                         {"poi", pt.poi_id},
                         {"intent", pt.intent},
                         {"category", pt.category}};
        if (pt.coord) {
            j["lat"] = pt.coord->lat;
            j["lon"] = pt.coord->lon;
        }
        points.push_back(std::move(j));
    }
    return nlohmann::json{{"user_id", t.user_id}, {"day", t.day.to_string()},
                          {"points", points}}
        .dump();
}

mobility::Trajectory parse_trajectory_text(const std::string& text, int utc_offset_s) {
    nlohmann::json j = nlohmann::json::parse(text);
    mobility::Trajectory t;
    t.user_id = j.at("user_id").get<std::string>();
    auto day = parse_civil(j.at("day").get<std::string>());
    if (!day) throw Error("parse_trajectory_text: bad day");
    t.day = *day;
    std::int64_t base = day_start_epoch(t.day, utc_offset_s);
    for (const auto& item : j.at("points")) {
        mobility::TrajectoryPoint pt;
        int h = 0, m = 0, s = 0;
        if (std::sscanf(item.at("t").get<std::string>().c_str(), "%d:%d:%d", &h, &m, &s) != 3)
            throw Error("parse_trajectory_text: bad time");
        pt.timestamp = base + h * 3600 + m * 60 + s;
        pt.poi_id = item.value("poi", "");
        pt.intent = item.value("intent", "unknown");
        pt.category = item.value("category", "");
        if (item.contains("lat") && item.contains("lon"))
            pt.coord = GeoPoint{item["lat"].get<double>(), item["lon"].get<double>()};
        t.points.push_back(std::move(pt));
    }
    return t;
}

}  // namespace cams::enhancer
