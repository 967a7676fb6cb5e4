#include "cams/mob_extractor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "cams/errors.hpp"
#include "cams/metrics.hpp"
#include "cams/strings.hpp"
#include "cams/timeutil.hpp"

namespace cams::extractor {

namespace {

std::string fmt_km(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

std::string hhmm(std::int64_t ts, int utc_offset_s) {
    int sod = local_second_of_day(ts, utc_offset_s);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%02d:%02d", sod / 3600, (sod / 60) % 60);
    return buf;
}

}  // namespace

TrajectoryStats trajectory_stats(const std::vector<mobility::Trajectory>& trajectories,
                                 const urban::SpatialIndex& index) {
    TrajectoryStats stats;
    std::vector<GeoPoint> all_points;
    double step_sum = 0.0;
    long step_count = 0;
    for (const auto& t : trajectories) {
        std::vector<GeoPoint> day_points;
        for (const auto& pt : t.points) {
            ++stats.visits_per_intent[pt.intent];
            day_points.push_back(pt.position(index));
        }
        for (size_t i = 1; i < day_points.size(); ++i) {
            step_sum += haversine_km(day_points[i - 1], day_points[i]);
            ++step_count;
        }
        all_points.insert(all_points.end(), day_points.begin(), day_points.end());
    }
    if (!all_points.empty())
        stats.radius_of_gyration_km = metrics::radius_of_gyration_km(all_points);
    if (step_count > 0) stats.mean_step_km = step_sum / static_cast<double>(step_count);
    return stats;
}

std::string render_stats(const TrajectoryStats& stats) {
    std::string out = "visits per intent: ";
    bool first = true;
    for (const auto& [intent, count] : stats.visits_per_intent) {
        if (!first) out += ", ";
        out += intent + "=" + std::to_string(count);
        first = false;
    }
    if (first) out += "none";
    out += "; radius of gyration: " + fmt_km(stats.radius_of_gyration_km) + " km";
    out += "; mean step distance: " + fmt_km(stats.mean_step_km) + " km";
    return out;
}

std::string render_trajectories(const std::vector<mobility::Trajectory>& trajectories,
                                const urban::SpatialIndex& index, int utc_offset_s) {
    std::string out;
    for (const auto& t : trajectories) {
        out += "Day " + t.day.to_string() + ":\n";
        for (const auto& pt : t.points) {
            out += "  " + hhmm(pt.timestamp, utc_offset_s) + "  ";
            if (!pt.poi_id.empty()) {
                out += index.hierarchical_address(pt.poi_id);
            } else if (pt.coord) {
                out += "(" + fmt_km(pt.coord->lat) + ", " + fmt_km(pt.coord->lon) + ")";
            }
            out += "  [" + pt.intent + "]\n";
        }
    }
    return out;
}

PatternRecord compress(llm::Gateway& gateway, const mobility::UserProfile& profile,
                       const std::vector<mobility::Trajectory>& trajectories,
                       const urban::SpatialIndex& index, int utc_offset_s) {
    if (trajectories.empty())
        throw Error("compress: user '" + profile.user_id + "' has no trajectories");
    std::string traj_text = render_trajectories(trajectories, index, utc_offset_s);
    std::string stats_text = render_stats(trajectory_stats(trajectories, index));
    llm::CallContext ctx{profile.user_id, {}};

    PatternRecord record;
    record.user_id = profile.user_id;
    record.c1 = gateway.complete(llm::Stage::c1_compress,
                                 {{"profile", profile.render()},
                                  {"trajectories", traj_text},
                                  {"stats", stats_text}},
                                 ctx);
    record.c2 = gateway.complete(llm::Stage::c2_compress,
                                 {{"profile", profile.render()},
                                  {"trajectories", traj_text},
                                  {"stats", stats_text},
                                  {"c1", record.c1}},
                                 ctx);
    return record;
}

namespace {

struct ParsedVisit {
    int second_of_day = 0;
    const urban::Poi* poi = nullptr;
    std::string intent;
};

// Extracts valid visits from an r2 reply; invalid names are returned for the
// corrective re-ask.
std::pair<std::vector<ParsedVisit>, std::vector<std::string>> parse_visits(
    const nlohmann::json& trajectory, const std::map<std::string, const urban::Poi*>& by_name) {
    std::vector<ParsedVisit> visits;
    std::vector<std::string> invalid;
    for (const auto& item : trajectory) {
        if (!item.is_object()) continue;
        std::string time = item.value("time", "");
        std::string poi_name = item.value("poi", "");
        int h = 0, m = 0, s = 0;
        if (std::sscanf(time.c_str(), "%d:%d:%d", &h, &m, &s) < 2) continue;
        if (h < 0 || h > 23 || m < 0 || m > 59 || s < 0 || s > 59) continue;
        auto it = by_name.find(normalize_name(poi_name));
        if (it == by_name.end()) {
            invalid.push_back(poi_name);
            continue;
        }
        ParsedVisit v;
        v.second_of_day = h * 3600 + m * 60 + s;
        v.poi = it->second;
        v.intent = item.value("intent", "unknown");
        if (v.intent.empty()) v.intent = "unknown";
        visits.push_back(std::move(v));
    }
    return {std::move(visits), std::move(invalid)};
}

}  // namespace

ReconstructResult reconstruct(llm::Gateway& gateway, const mobility::UserProfile& profile,
                              const PatternRecord& record,
                              const std::vector<const urban::Poi*>& candidates,
                              const CivilDate& day, int utc_offset_s) {
    if (record.c1.empty() || record.c2.empty())
        throw Error("reconstruct: pattern record lacks c1/c2");
    if (candidates.empty()) throw Error("reconstruct: empty candidate list");

    std::map<std::string, const urban::Poi*> by_name;
    std::string candidate_text;
    for (const auto* poi : candidates) {
        by_name.emplace(normalize_name(poi->name), poi);
        candidate_text += "- " + poi->name + " (" + poi->category + ")\n";
    }

    llm::CallContext ctx{profile.user_id, day.to_string()};
    ReconstructResult result;

    auto r1 = gateway.complete_structured(llm::Stage::r1_reconstruct,
                                          {{"profile", profile.render()}, {"c1", record.c1}},
                                          {{"r1", llm::FieldKind::text},
                                           {"description", llm::FieldKind::text}},
                                          ctx);
    result.r1 = r1.record["r1"].get<std::string>();
    result.description = r1.record["description"].get<std::string>();

    const std::vector<llm::FieldSpec> r2_schema = {{"r2", llm::FieldKind::text},
                                                   {"trajectory", llm::FieldKind::list}};
    std::map<std::string, std::string> vars = {{"description", result.description},
                                               {"c2", record.c2},
                                               {"candidates", candidate_text},
                                               {"day", day.to_string()},
                                               {"correction", ""}};
    auto r2 = gateway.complete_structured(llm::Stage::r2_reconstruct, vars, r2_schema, ctx);
    auto [visits, invalid] = parse_visits(r2.record["trajectory"], by_name);
    result.r2 = r2.record["r2"].get<std::string>();

    if (!invalid.empty()) {
        // One corrective re-ask naming the offending places, then drop.
        vars["correction"] = "These names are not in the candidate list and must not be used: " +
                             join(invalid, ", ") + ".\n";
        auto retry = gateway.complete_structured(llm::Stage::r2_reconstruct, vars, r2_schema, ctx);
        auto [retry_visits, retry_invalid] = parse_visits(retry.record["trajectory"], by_name);
        result.r2 = retry.record["r2"].get<std::string>();
        result.dropped_names = static_cast<long>(retry_invalid.size());
        visits = std::move(retry_visits);
    }
    if (visits.empty()) throw Error("reconstruct: no valid visits after retries");

    bool ordered = std::is_sorted(visits.begin(), visits.end(),
                                  [](const ParsedVisit& a, const ParsedVisit& b) {
                                      return a.second_of_day < b.second_of_day;
                                  });
    std::stable_sort(visits.begin(), visits.end(),
                     [](const ParsedVisit& a, const ParsedVisit& b) {
                         return a.second_of_day < b.second_of_day;
                     });

    result.trajectory.user_id = profile.user_id;
    result.trajectory.day = day;
    std::int64_t base = day_start_epoch(day, utc_offset_s);
    for (const auto& v : visits) {
        std::int64_t ts = base + v.second_of_day;
        if (!result.trajectory.points.empty() &&
            ts == result.trajectory.points.back().timestamp) {
            ordered = false;  // duplicate timestamp, keep first
            continue;
        }
        mobility::TrajectoryPoint pt;
        pt.timestamp = ts;
        pt.poi_id = v.poi->id;
        pt.category = v.poi->category;
        pt.intent = v.intent;
        result.trajectory.points.push_back(std::move(pt));
    }
    if (!ordered) result.resort_warnings = 1;
    if (result.trajectory.points.empty())
        throw Error("reconstruct: no valid visits after retries");
    return result;
}

ProfileEmbedding embed_profile(const mobility::UserProfile& profile, int dim) {
    if (dim < 1) throw Error("embed_profile: dimension must be positive");
    ProfileEmbedding e;
    e.user_id = profile.user_id;
    e.vec.assign(static_cast<std::size_t>(dim), 0.0);
    for (const auto& [key, value] : profile.attributes) {
        std::uint64_t h = fnv1a64(key + "=" + value);
        std::size_t bucket = static_cast<std::size_t>(h % static_cast<std::uint64_t>(dim));
        double sign = (h >> 63) ? -1.0 : 1.0;
        e.vec[bucket] += sign;
    }
    double norm = 0.0;
    for (double x : e.vec) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0)
        throw Error("embed_profile: degenerate profile for user '" + profile.user_id + "'");
    for (double& x : e.vec) x /= norm;
    return e;
}

EmbeddingMatrix embed_profiles(const std::vector<mobility::UserProfile>& profiles, int dim) {
    EmbeddingMatrix m;
    for (const auto& p : profiles) {
        auto e = embed_profile(p, dim);
        m.user_ids.push_back(e.user_id);
        m.rows.push_back(std::move(e.vec));
    }
    return m;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw Error("cosine: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw Error("cosine: zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<ScoredUser> top_k_similar(const ProfileEmbedding& target,
                                      const EmbeddingMatrix& templates, int k) {
    const int m = static_cast<int>(templates.rows.size());
    if (k < 1) throw Error("top_k_similar: k must be >= 1");
    if (k > m)
        throw Error("top_k_similar: k=" + std::to_string(k) + " exceeds template count " +
                    std::to_string(m));
    std::vector<ScoredUser> scored(templates.rows.size());
    for (size_t i = 0; i < templates.rows.size(); ++i)
        scored[i] = {templates.user_ids[i], cosine_similarity(target.vec, templates.rows[i])};
    std::sort(scored.begin(), scored.end(), [](const ScoredUser& a, const ScoredUser& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.user_id < b.user_id;
    });
    scored.resize(static_cast<std::size_t>(k));
    return scored;
}

std::vector<ScoredUser> top_k_similar_llm(llm::Gateway& gateway,
                                          const mobility::UserProfile& target,
                                          const std::vector<mobility::UserProfile>& templates,
                                          int k) {
    if (k > static_cast<int>(templates.size()))
        throw Error("top_k_similar_llm: k exceeds template count");
    std::set<std::string> valid_ids;
    std::string rendered;
    for (const auto& t : templates) {
        valid_ids.insert(t.user_id);
        rendered += t.user_id + ": " + t.render() + "\n";
    }
    std::map<std::string, std::string> vars = {{"target_profile", target.render()},
                                               {"template_profiles", rendered},
                                               {"k", std::to_string(k)}};
    const std::vector<llm::FieldSpec> schema = {{"matches", llm::FieldKind::list}};
    llm::CallContext ctx{target.user_id, {}};

    std::vector<ScoredUser> found;
    std::set<std::string> seen;
    auto absorb = [&](const nlohmann::json& matches) {
        for (const auto& item : matches) {
            if (!item.is_object() || !item.contains("user_id")) continue;
            std::string id = item["user_id"].is_string() ? item["user_id"].get<std::string>()
                                                         : item["user_id"].dump();
            if (!valid_ids.count(id) || seen.count(id)) continue;
            double score = 0.0;
            if (item.contains("score") && item["score"].is_number())
                score = item["score"].get<double>();
            score = std::clamp(score, 0.0, 1.0);
            seen.insert(id);
            found.push_back({id, score});
        }
    };

    auto first = gateway.complete_structured(llm::Stage::retrieve_similar, vars, schema, ctx);
    absorb(first.record["matches"]);
    if (static_cast<int>(found.size()) < k) {
        auto retry = gateway.complete_structured(llm::Stage::retrieve_similar, vars, schema, ctx);
        absorb(retry.record["matches"]);
    }
    if (static_cast<int>(found.size()) < k)
        throw Error("top_k_similar_llm: fewer than k valid user ids after retry");
    std::sort(found.begin(), found.end(), [](const ScoredUser& a, const ScoredUser& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.user_id < b.user_id;
    });
    found.resize(static_cast<std::size_t>(k));
    return found;
}

FusedPattern fuse(llm::Gateway& gateway, const mobility::UserProfile& target,
                  const std::vector<std::pair<ScoredUser, PatternRecord>>& neighbors) {
    if (neighbors.empty()) throw Error("fuse: no neighbor records");
    for (const auto& [scored, record] : neighbors)
        if (!record.complete())
            throw Error("fuse: incomplete pattern record for user '" + record.user_id + "'");

    auto section = [&](auto field) {
        std::string out;
        for (const auto& [scored, record] : neighbors)
            out += "user " + record.user_id + ":\n" + field(record) + "\n";
        return out;
    };

    FusedPattern fused;
    fused.target_user_id = target.user_id;
    for (const auto& [scored, record] : neighbors) fused.sources.push_back(scored);

    llm::CallContext ctx{target.user_id, {}};
    fused.fused_c1 = gateway.complete(
        llm::Stage::fuse_c1,
        {{"target_profile", target.render()},
         {"neighbor_c1", section([](const PatternRecord& r) { return r.c1; })}},
        ctx);
    fused.description = gateway.complete(
        llm::Stage::gen_description,
        {{"target_profile", target.render()},
         {"fused_c1", fused.fused_c1},
         {"neighbor_r1", section([](const PatternRecord& r) { return r.r1; })},
         {"neighbor_r2", section([](const PatternRecord& r) { return r.r2; })}},
        ctx);
    fused.fused_c2 = gateway.complete(
        llm::Stage::fuse_c2,
        {{"target_profile", target.render()},
         {"neighbor_c2", section([](const PatternRecord& r) { return r.c2; })}},
        ctx);
    return fused;
}

void write_pattern_records(const std::string& path, const std::vector<PatternRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write pattern store: " + path);
    for (const auto& r : records) {
        nlohmann::json j{{"user_id", r.user_id}, {"c1", r.c1}, {"c2", r.c2}, {"r1", r.r1},
                         {"r2", r.r2}};
        out << j.dump() << '\n';
    }
}

std::vector<PatternRecord> load_pattern_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open pattern store: " + path);
    std::vector<PatternRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        out.push_back(PatternRecord{j.at("user_id").get<std::string>(),
                                    j.value("c1", ""), j.value("c2", ""), j.value("r1", ""),
                                    j.value("r2", "")});
    }
    return out;
}

void write_embedding_matrix(const std::string& csv_path, const std::string& ids_path,
                            const EmbeddingMatrix& m) {
    std::ofstream csv(csv_path, std::ios::trunc);
    std::ofstream ids(ids_path, std::ios::trunc);
    if (!csv || !ids) throw Error("cannot write embedding cache");
    csv.precision(17);
    for (size_t i = 0; i < m.rows.size(); ++i) {
        ids << m.user_ids[i] << '\n';
        for (size_t j = 0; j < m.rows[i].size(); ++j) {
            if (j) csv << ',';
            csv << m.rows[i][j];
        }
        csv << '\n';
    }
}

EmbeddingMatrix load_embedding_matrix(const std::string& csv_path, const std::string& ids_path) {
    std::ifstream csv(csv_path);
    std::ifstream ids(ids_path);
    if (!csv || !ids) throw Error("cannot open embedding cache");
    EmbeddingMatrix m;
    std::string line;
    while (std::getline(ids, line)) {
        if (!trim(line).empty()) m.user_ids.push_back(trim(line));
    }
    while (std::getline(csv, line)) {
        if (trim(line).empty()) continue;
        std::vector<double> row;
        for (const auto& cell : split(line, ',')) row.push_back(std::stod(cell));
        m.rows.push_back(std::move(row));
    }
    if (m.user_ids.size() != m.rows.size())
        throw Error("embedding cache: id list and matrix row counts differ");
    return m;
}

}  // namespace cams::extractor
