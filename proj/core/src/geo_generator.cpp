#include "cams/geo_generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <queue>
#include <random>
#include <set>

#include "cams/csv.hpp"
#include "cams/errors.hpp"
#include "cams/strings.hpp"

namespace cams::geogen {

namespace {

std::string fmt(double v, const char* spec = "%.17g") {
    char buf[48];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Transition graph
// ---------------------------------------------------------------------------

double TransitionGraph::weight(const std::string& i, const std::string& j) const {
    auto key = i < j ? std::make_pair(i, j) : std::make_pair(j, i);
    auto it = edges_.find(key);
    return it == edges_.end() ? 0.0 : it->second.w;
}

std::vector<TransitionGraph::Edge> TransitionGraph::edges() const {
    std::vector<Edge> out;
    for (const auto& [key, e] : edges_) out.push_back(e);
    return out;
}

void TransitionGraph::save_csv(const std::string& path) const {
    std::vector<std::vector<std::string>> rows;
    for (const auto& [key, e] : edges_)
        rows.push_back({e.a, e.b, std::to_string(e.n), fmt(e.d_km), fmt(e.w)});
    write_csv(path, {"loc_i", "loc_j", "n", "d_km", "w"}, rows);
}

TransitionGraph TransitionGraph::load_csv(const std::string& path, double alpha, double epsilon) {
    CsvFile csv = read_csv(path);
    TransitionGraph g(alpha, epsilon);
    for (const auto& row : csv.rows) {
        Edge e;
        e.a = row[0];
        e.b = row[1];
        e.n = std::stol(row[2]);
        e.d_km = std::stod(row[3]);
        e.w = std::stod(row[4]);
        g.nodes_[e.a].push_back(e.b);
        g.nodes_[e.b].push_back(e.a);
        g.edges_[{e.a, e.b}] = std::move(e);
    }
    return g;
}

TransitionGraph build_transition_graph(const std::vector<mobility::Trajectory>& trajectories,
                                       const urban::SpatialIndex& index, double alpha,
                                       double epsilon) {
    if (alpha < 0.0) throw Error("build_transition_graph: alpha must be >= 0");
    if (!(epsilon > 0.0)) throw Error("build_transition_graph: epsilon must be > 0");
    TransitionGraph g(alpha, epsilon);
    for (const auto& t : trajectories) {
        for (size_t i = 1; i < t.points.size(); ++i) {
            const auto& prev = t.points[i - 1];
            const auto& cur = t.points[i];
            if (prev.poi_id.empty() || cur.poi_id.empty() || !index.find_poi(prev.poi_id) ||
                !index.find_poi(cur.poi_id)) {
                ++g.skipped_;
                continue;
            }
            if (prev.poi_id == cur.poi_id) continue;
            auto key = prev.poi_id < cur.poi_id ? std::make_pair(prev.poi_id, cur.poi_id)
                                                : std::make_pair(cur.poi_id, prev.poi_id);
            auto [it, inserted] = g.edges_.try_emplace(key);
            if (inserted) {
                it->second.a = key.first;
                it->second.b = key.second;
                it->second.d_km = haversine_km(index.poi(key.first).point(),
                                               index.poi(key.second).point());
                g.nodes_[key.first].push_back(key.second);
                g.nodes_[key.second].push_back(key.first);
            }
            ++it->second.n;
        }
    }
    for (auto& [key, e] : g.edges_)
        e.w = static_cast<double>(e.n) / (std::pow(e.d_km, alpha) + epsilon);
    return g;
}

// ---------------------------------------------------------------------------
// Region summaries
// ---------------------------------------------------------------------------

namespace {

std::string render_summary_text(const RegionSummary& s, const urban::Region& region) {
    std::string out = "Region " + region.name + " (" + std::string(to_string(s.level)) + "): " +
                      std::to_string(s.user_count) + " anchored users.";
    for (const auto& [key, values] : s.histograms) {
        out += " " + key + ":";
        bool first = true;
        for (const auto& [value, count] : values) {
            out += (first ? " " : ", ") + value + "=" + std::to_string(count);
            first = false;
        }
        out += ";";
    }
    return out;
}

}  // namespace

std::vector<RegionSummary> summarize_regions(
    urban::RegionLevel level, const std::vector<TruthAnchor>& anchors,
    const std::map<std::string, mobility::UserProfile>& profiles,
    const urban::SpatialIndex& index) {
    std::map<std::string, RegionSummary> by_region;
    for (const auto* region : index.regions_at(level)) {
        RegionSummary s;
        s.region_id = region->id;
        s.level = level;
        if (level == urban::RegionLevel::street) {
            for (const auto* poi : index.pois_in_region(level, region->id))
                s.child_ids.push_back(poi->id);
        } else {
            s.child_ids = index.child_region_ids(level, region->id);
        }
        by_region.emplace(region->id, std::move(s));
    }

    for (const auto& anchor : anchors) {
        const urban::Poi* poi = index.find_poi(anchor.poi_id);
        if (!poi) throw NotFoundError("truth anchor references unknown poi: " + anchor.poi_id);
        auto pit = profiles.find(anchor.user_id);
        if (pit == profiles.end()) continue;
        auto rit = by_region.find(poi->region_path[static_cast<int>(level)]);
        if (rit == by_region.end()) continue;
        RegionSummary& s = rit->second;
        ++s.user_count;
        for (const auto& [key, value] : pit->second.attributes) ++s.histograms[key][value];
    }

    std::vector<RegionSummary> out;
    for (auto& [id, s] : by_region) {
        s.descriptive_text = render_summary_text(s, index.region(level, id));
        out.push_back(std::move(s));
    }
    return out;
}

SummarySet summarize_all_levels(const std::vector<TruthAnchor>& anchors,
                                const std::map<std::string, mobility::UserProfile>& profiles,
                                const urban::SpatialIndex& index) {
    SummarySet set;
    for (int level = 0; level < 3; ++level) {
        for (auto& s : summarize_regions(static_cast<urban::RegionLevel>(level), anchors,
                                         profiles, index)) {
            std::string id = s.region_id;
            set[level].emplace(std::move(id), std::move(s));
        }
    }
    return set;
}

// ---------------------------------------------------------------------------
// Anchor cascade
// ---------------------------------------------------------------------------

namespace {

// Cosine between the user's one-hot attribute vector and the region's
// concatenated histogram; deterministic fallback when the backend refuses to
// produce a valid choice.
double affinity(const mobility::UserProfile& user, const RegionSummary& summary) {
    double dot = 0.0, hist_norm2 = 0.0;
    for (const auto& [key, values] : summary.histograms)
        for (const auto& [value, count] : values) hist_norm2 += double(count) * double(count);
    if (hist_norm2 == 0.0 || user.attributes.empty()) return 0.0;
    for (const auto& [key, value] : user.attributes) {
        auto kit = summary.histograms.find(key);
        if (kit == summary.histograms.end()) continue;
        auto vit = kit->second.find(value);
        if (vit != kit->second.end()) dot += static_cast<double>(vit->second);
    }
    return dot / (std::sqrt(static_cast<double>(user.attributes.size())) * std::sqrt(hist_norm2));
}

std::string best_by_affinity(const mobility::UserProfile& user,
                             const std::vector<std::string>& options, const SummarySet& summaries,
                             urban::RegionLevel level) {
    std::string best;
    double best_score = -1.0;
    for (const auto& id : options) {
        double score = 0.0;
        auto it = summaries[static_cast<int>(level)].find(id);
        if (it != summaries[static_cast<int>(level)].end()) score = affinity(user, it->second);
        if (score > best_score || (score == best_score && (best.empty() || id < best))) {
            best_score = score;
            best = id;
        }
    }
    return best;
}

std::string render_options(const std::vector<std::string>& ids) {
    std::string out;
    for (const auto& id : ids) out += "- " + id + "\n";
    return out;
}

std::string render_child_summaries(const std::vector<std::string>& ids,
                                   const SummarySet& summaries, urban::RegionLevel level) {
    std::string out;
    for (const auto& id : ids) {
        auto it = summaries[static_cast<int>(level)].find(id);
        out += "- " + id + ": ";
        out += it != summaries[static_cast<int>(level)].end() ? it->second.descriptive_text
                                                              : std::string("(no data)");
        out += "\n";
    }
    return out;
}

// One region_execute call validated against the option set, with a single
// corrective re-ask. Callers apply their own level-specific fallback when
// this returns nullopt.
std::optional<std::string> try_select(llm::Gateway& gateway, const mobility::UserProfile& user,
                                      const std::string& kind, const std::string& level_label,
                                      const std::vector<std::string>& options,
                                      const std::string& reasoning, AssignStats* stats,
                                      const llm::CallContext& ctx,
                                      const std::string& correction_seed = "") {
    std::set<std::string> valid(options.begin(), options.end());
    std::map<std::string, std::string> vars = {{"profile", user.render()},
                                               {"kind", kind},
                                               {"level", level_label},
                                               {"options", render_options(options)},
                                               {"reasoning", reasoning},
                                               {"correction", correction_seed}};
    const std::vector<llm::FieldSpec> schema = {{"choice", llm::FieldKind::text}};
    try {
        auto first = gateway.complete_structured(llm::Stage::region_execute, vars, schema, ctx);
        std::string choice = trim(first.record["choice"].get<std::string>());
        if (valid.count(choice)) return choice;
        if (stats) ++stats->re_asks;
        vars["correction"] =
            "'" + choice + "' is not one of the listed options; pick an id from the list.\n";
        auto retry = gateway.complete_structured(llm::Stage::region_execute, vars, schema, ctx);
        choice = trim(retry.record["choice"].get<std::string>());
        if (valid.count(choice)) return choice;
    } catch (const StructuredOutputError&) {
        // fall through to the caller's deterministic fallback
    }
    return std::nullopt;
}

std::string select_region(llm::Gateway& gateway, const mobility::UserProfile& user,
                          const std::string& kind, urban::RegionLevel level,
                          const std::vector<std::string>& options, const std::string& reasoning,
                          const SummarySet& summaries, AssignStats* stats,
                          const llm::CallContext& ctx, const std::string& correction_seed = "") {
    auto choice = try_select(gateway, user, kind, std::string(urban::to_string(level)), options,
                             reasoning, stats, ctx, correction_seed);
    if (choice) return *choice;
    if (stats) ++stats->fallbacks;
    return best_by_affinity(user, options, summaries, level);
}

const urban::Poi* fallback_poi(const std::vector<const urban::Poi*>& pois,
                               const std::string& kind, const mobility::IntentMap& intents) {
    // Prefer the first POI (ascending id) whose category maps to the anchor
    // intent, else the first POI outright.
    for (const auto* poi : pois)
        if (intents.intent_of(poi->category) == kind) return poi;
    return pois.front();
}

}  // namespace

AnchorAssignment assign_anchor(llm::Gateway& gateway, const mobility::UserProfile& user,
                               const std::string& kind, const SummarySet& summaries,
                               const urban::SpatialIndex& index,
                               const std::optional<ReflectionAdvice>& advice,
                               const CascadeConfig& cfg, AssignStats* stats) {
    llm::CallContext ctx{user.user_id, {}};
    const std::string advice_text = advice ? advice->directive : "(none)";

    auto reason_and_select = [&](urban::RegionLevel level, const std::string& parent_label,
                                 const std::vector<std::string>& options) {
        std::string reasoning =
            gateway.complete(llm::Stage::region_reason,
                             {{"profile", user.render()},
                              {"kind", kind},
                              {"level", std::string(urban::to_string(level))},
                              {"parent", parent_label},
                              {"child_summaries", render_child_summaries(options, summaries,
                                                                         level)},
                              {"advice", advice_text}},
                             ctx);
        return select_region(gateway, user, kind, level, options, reasoning, summaries, stats,
                             ctx);
    };

    AnchorAssignment out;
    out.user_id = user.user_id;
    out.kind = kind;

    // Admin level: options are all admin regions.
    std::vector<std::string> admin_options;
    for (const auto* r : index.regions_at(urban::RegionLevel::admin))
        admin_options.push_back(r->id);
    if (admin_options.empty()) throw Error("assign_anchor: city has no admin regions");
    out.trail[0] = reason_and_select(urban::RegionLevel::admin, "the city", admin_options);

    auto children_of = [&](urban::RegionLevel parent_level, const std::string& parent,
                           const std::set<std::string>& excluded) {
        std::vector<std::string> out_ids;
        for (auto& id : index.child_region_ids(parent_level, parent))
            if (!excluded.count(id)) out_ids.push_back(id);
        return out_ids;
    };

    std::set<std::string> excluded_subs, excluded_streets;
    auto subs = children_of(urban::RegionLevel::admin, out.trail[0], excluded_subs);
    if (subs.empty()) throw Error("assign_anchor: admin region without subdistricts");
    out.trail[1] = reason_and_select(urban::RegionLevel::subdistrict, out.trail[0], subs);

    auto streets = children_of(urban::RegionLevel::subdistrict, out.trail[1], excluded_streets);
    if (streets.empty()) throw Error("assign_anchor: subdistrict without streets");
    out.trail[2] = reason_and_select(urban::RegionLevel::street, out.trail[1], streets);

    // POI level, with bounded backtracking when a street holds no POIs.
    int backtracks = 0;
    for (;;) {
        auto pois = index.pois_in_region(urban::RegionLevel::street, out.trail[2]);
        if (!pois.empty()) {
            std::vector<std::string> poi_ids;
            for (const auto* p : pois) poi_ids.push_back(p->id);
            auto choice = try_select(gateway, user, kind, "poi", poi_ids,
                                     "Select the precise location inside street region " +
                                         out.trail[2] + ".",
                                     stats, ctx);
            const urban::Poi* selected = choice ? index.find_poi(*choice) : nullptr;
            if (!selected) {
                if (stats) ++stats->fallbacks;
                selected = fallback_poi(pois, kind, cfg.intents);
            }
            out.poi_id = selected->id;
            return out;
        }
        if (backtracks >= cfg.max_backtracks)
            throw Error("assign_anchor: no POI reachable for user '" + user.user_id +
                        "' after backtracking");
        ++backtracks;
        if (stats) ++stats->backtracks;
        excluded_streets.insert(out.trail[2]);
        auto remaining = children_of(urban::RegionLevel::subdistrict, out.trail[1],
                                     excluded_streets);
        if (!remaining.empty()) {
            out.trail[2] = select_region(
                gateway, user, kind, urban::RegionLevel::street, remaining, "", summaries, stats,
                ctx, "The previously selected street region has no POIs; choose another.\n");
            continue;
        }
        excluded_subs.insert(out.trail[1]);
        auto remaining_subs = children_of(urban::RegionLevel::admin, out.trail[0], excluded_subs);
        if (remaining_subs.empty())
            throw Error("assign_anchor: admin region exhausted for user '" + user.user_id + "'");
        out.trail[1] = select_region(
            gateway, user, kind, urban::RegionLevel::subdistrict, remaining_subs, "", summaries,
            stats, ctx,
            "The previously selected subdistrict has no usable streets; choose another.\n");
        auto new_streets = children_of(urban::RegionLevel::subdistrict, out.trail[1],
                                       excluded_streets);
        if (new_streets.empty())
            throw Error("assign_anchor: subdistrict exhausted for user '" + user.user_id + "'");
        out.trail[2] = select_region(gateway, user, kind, urban::RegionLevel::street, new_streets,
                                     "", summaries, stats, ctx);
    }
}

ReflectionAdvice reflect(const std::vector<AnchorAssignment>& assignments,
                         const std::map<std::string, double>& truth_distribution,
                         urban::RegionLevel level, int iteration, llm::Gateway* gateway,
                         bool llm_reflection) {
    if (assignments.empty()) throw Error("reflect: no assignments");
    std::map<std::string, double> generated;
    for (const auto& a : assignments) generated[a.trail[static_cast<int>(level)]] += 1.0;

    auto [hg, ht] = metrics::align_categorical(generated, truth_distribution);
    ReflectionAdvice advice;
    advice.iteration = iteration;
    advice.jsd_value = metrics::jsd(hg, ht);

    // Per-region jsd terms and signed gaps over the aligned support.
    auto p = hg.normalized();
    auto q = ht.normalized();
    for (size_t i = 0; i < hg.support().size(); ++i) {
        double m = 0.5 * (p[i] + q[i]);
        double term = 0.0;
        if (p[i] > 0.0) term += 0.5 * p[i] * std::log2(p[i] / m);
        if (q[i] > 0.0) term += 0.5 * q[i] * std::log2(q[i] / m);
        advice.contributions[hg.support()[i]] = term;
        advice.gaps[hg.support()[i]] = p[i] - q[i];
    }

    std::vector<std::pair<std::string, double>> over, under;
    for (const auto& [region, gap] : advice.gaps) {
        if (gap > 0.0) over.emplace_back(region, gap);
        if (gap < 0.0) under.emplace_back(region, gap);
    }
    auto by_magnitude = [](const auto& a, const auto& b) {
        if (std::abs(a.second) != std::abs(b.second)) return std::abs(a.second) > std::abs(b.second);
        return a.first < b.first;
    };
    std::sort(over.begin(), over.end(), by_magnitude);
    std::sort(under.begin(), under.end(), by_magnitude);
    if (over.size() > 5) over.resize(5);
    if (under.size() > 5) under.resize(5);

    auto render_list = [](const std::vector<std::pair<std::string, double>>& items) {
        if (items.empty()) return std::string("(none)");
        std::string out;
        for (size_t i = 0; i < items.size(); ++i) {
            if (i) out += ", ";
            out += items[i].first + " (" + fmt(items[i].second, "%+.4f") + ")";
        }
        return out;
    };
    advice.directive = "Round " + std::to_string(iteration) +
                       ": over-represented regions: " + render_list(over) +
                       "; under-represented regions: " + render_list(under) + ".";

    if (llm_reflection && gateway) {
        std::string gen_text, truth_text, gap_text;
        for (size_t i = 0; i < hg.support().size(); ++i) {
            gen_text += hg.support()[i] + "=" + fmt(p[i], "%.4f") + " ";
            truth_text += hg.support()[i] + "=" + fmt(q[i], "%.4f") + " ";
            gap_text += hg.support()[i] + "=" + fmt(p[i] - q[i], "%+.4f") + " ";
        }
        advice.directive =
            gateway->complete(llm::Stage::region_reflect,
                              {{"level", std::string(urban::to_string(level))},
                               {"generated_distribution", gen_text},
                               {"target_distribution", truth_text},
                               {"gaps", gap_text}});
    }
    return advice;
}

CascadeResult run_anchor_cascade(llm::Gateway& gateway,
                                 const std::vector<mobility::UserProfile>& users,
                                 const std::string& kind, const SummarySet& summaries,
                                 const std::map<std::string, double>& truth_distribution,
                                 const urban::SpatialIndex& index, const CascadeConfig& cfg) {
    if (cfg.rounds < 1) throw Error("run_anchor_cascade: rounds must be >= 1");
    CascadeResult result;
    std::optional<ReflectionAdvice> advice;
    for (int round = 0; round < cfg.rounds; ++round) {
        std::vector<AnchorAssignment> assignments;
        for (const auto& user : users) {
            try {
                AnchorAssignment a =
                    assign_anchor(gateway, user, kind, summaries, index, advice, cfg);
                a.iteration = round;
                assignments.push_back(std::move(a));
            } catch (const Error& e) {
                result.assignments = std::move(assignments);
                result.completed = false;
                result.error = e.what();
                return result;
            }
        }
        result.assignments = std::move(assignments);
        advice = reflect(result.assignments, truth_distribution, cfg.reflect_level, round,
                         &gateway, cfg.llm_reflection);
        result.advice.push_back(*advice);
        if (advice->jsd_value < cfg.convergence_jsd) break;
    }
    return result;
}

void write_anchor_csv(const std::string& path, const std::vector<AnchorAssignment>& assignments) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& a : assignments)
        rows.push_back({a.user_id, a.kind, a.trail[0], a.trail[1], a.trail[2], a.poi_id,
                        std::to_string(a.iteration)});
    write_csv(path, {"user_id", "kind", "admin", "subdistrict", "street", "poi_id", "iteration"},
              rows);
}

std::vector<AnchorAssignment> load_anchor_csv(const std::string& path) {
    CsvFile csv = read_csv(path);
    std::vector<AnchorAssignment> out;
    for (const auto& row : csv.rows) {
        AnchorAssignment a;
        a.user_id = row[0];
        a.kind = row[1];
        a.trail = {row[2], row[3], row[4]};
        a.poi_id = row[5];
        a.iteration = std::stoi(row[6]);
        out.push_back(std::move(a));
    }
    return out;
}

// ---------------------------------------------------------------------------
// UrbanMapper candidate strategies
// ---------------------------------------------------------------------------

SocialCandidates candidates_social(const std::string& current_loc,
                                   const std::vector<std::string>& neighbor_ids,
                                   const TransitionGraph& graph,
                                   const std::vector<mobility::Trajectory>& trajectories,
                                   int k, const urban::SpatialIndex& index) {
    if (k < 1) throw Error("candidates_social: k must be >= 1");
    std::set<std::string> neighbors(neighbor_ids.begin(), neighbor_ids.end());
    std::map<std::string, long> visit_freq;
    for (const auto& t : trajectories) {
        if (!neighbors.count(t.user_id)) continue;
        for (const auto& pt : t.points)
            if (!pt.poi_id.empty() && index.find_poi(pt.poi_id)) ++visit_freq[pt.poi_id];
    }

    SocialCandidates out;
    if (visit_freq.empty()) return out;

    std::vector<std::pair<std::string, double>> scored;
    out.frequency_fallback = !graph.has_node(current_loc);
    for (const auto& [loc, freq] : visit_freq) {
        double score = out.frequency_fallback ? static_cast<double>(freq)
                                              : graph.weight(current_loc, loc);
        scored.emplace_back(loc, score);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    for (const auto& [loc, score] : scored) {
        if (static_cast<int>(out.pois.size()) >= k) break;
        out.pois.push_back(&index.poi(loc));
    }
    return out;
}

std::vector<const urban::Poi*> candidates_map(const std::string& intent, const GeoPoint& center,
                                              const urban::SpatialIndex& index,
                                              const mobility::IntentMap& intents,
                                              double radius_km, int k) {
    auto categories = intents.categories_for(intent);
    if (categories.empty()) throw Error("candidates_map: no category mapped to intent '" +
                                        intent + "'");
    struct Hit {
        const urban::Poi* poi;
        double dist;
    };
    std::map<std::string, Hit> merged;
    for (const auto& category : categories) {
        for (const auto* poi : index.pois_within_radius(center, radius_km, category))
            merged.emplace(poi->id, Hit{poi, haversine_km(center, poi->point())});
    }
    std::vector<Hit> hits;
    for (const auto& [id, hit] : merged) hits.push_back(hit);
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        return a.poi->id < b.poi->id;
    });
    std::vector<const urban::Poi*> out;
    for (const auto& h : hits) {
        if (static_cast<int>(out.size()) >= k) break;
        out.push_back(h.poi);
    }
    return out;
}

LlmCandidates candidates_llm(llm::Gateway& gateway, const urban::Poi& current,
                             const std::string& profile_text, const std::string& pattern_text,
                             const std::string& intent, const urban::SpatialIndex& index, int k,
                             AddressStyle style, const llm::CallContext& ctx) {
    std::string address = style == AddressStyle::hierarchical
                              ? index.hierarchical_address(current.id)
                              : index.human_address(current.id);
    std::map<std::string, std::string> vars = {{"current_address", address},
                                               {"profile", profile_text},
                                               {"pattern", pattern_text},
                                               {"intent", intent},
                                               {"k", std::to_string(k)},
                                               {"correction", ""}};
    const std::vector<llm::FieldSpec> schema = {{"candidates", llm::FieldKind::list}};

    LlmCandidates out;
    std::set<std::string> seen;
    auto absorb = [&](const nlohmann::json& names) {
        long valid = 0;
        for (const auto& item : names) {
            std::string name = item.is_string() ? item.get<std::string>() : item.dump();
            ++out.tvr.total;
            if (!index.validate_toponym(name)) continue;
            ++out.tvr.valid;
            ++valid;
            const urban::Poi* poi = index.resolve_poi_name(name);
            if (poi && !seen.count(poi->id) && static_cast<int>(out.pois.size()) < k) {
                seen.insert(poi->id);
                out.pois.push_back(poi);
            }
        }
        return valid;
    };

    auto first = gateway.complete_structured(llm::Stage::mapper_candidates, vars, schema, ctx);
    long valid = absorb(first.record["candidates"]);
    if (valid == 0) {
        vars["correction"] =
            "None of the previously returned names exist in this city; answer with exact "
            "names of real places only.\n";
        auto retry = gateway.complete_structured(llm::Stage::mapper_candidates, vars, schema,
                                                 ctx);
        absorb(retry.record["candidates"]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fine-tuning QA dataset
// ---------------------------------------------------------------------------

namespace {

// Uniform double in [0,1) from the standardized mt19937_64 stream.
double next_double(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::size_t weighted_draw(std::mt19937_64& rng, const std::vector<double>& cumulative) {
    double u = next_double(rng) * cumulative.back();
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    std::size_t idx = static_cast<std::size_t>(it - cumulative.begin());
    return std::min(idx, cumulative.size() - 1);
}

int nearest_road_node(const urban::RoadGraph& roads, const GeoPoint& p) {
    int best = -1;
    double best_d = 0.0;
    for (size_t i = 0; i < roads.nodes.size(); ++i) {
        double d = haversine_km(p, roads.nodes[i]);
        if (best < 0 || d < best_d) {
            best = static_cast<int>(i);
            best_d = d;
        }
    }
    return best;
}

std::vector<GeoPoint> shortest_road_path(const urban::RoadGraph& roads, int src, int dst) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(roads.nodes.size(), inf);
    std::vector<int> prev(roads.nodes.size(), -1);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[src] = 0.0;
    heap.push({0.0, src});
    while (!heap.empty()) {
        auto [d, node] = heap.top();
        heap.pop();
        if (d > dist[node]) continue;
        if (node == dst) break;
        for (int ei : roads.incident[node]) {
            const auto& e = roads.edges[ei];
            int other = e.a == node ? e.b : e.a;
            double nd = d + e.length_km;
            if (nd < dist[other]) {
                dist[other] = nd;
                prev[other] = node;
                heap.push({nd, other});
            }
        }
    }
    if (dist[dst] == inf) return {};
    std::vector<GeoPoint> path;
    for (int node = dst; node != -1; node = prev[node]) path.push_back(roads.nodes[node]);
    std::reverse(path.begin(), path.end());
    return path;
}

std::vector<GeoPoint> straight_segment(const GeoPoint& a, const GeoPoint& b, double step_km) {
    std::vector<GeoPoint> out = {a};
    double total = haversine_km(a, b);
    int steps = static_cast<int>(std::floor(total / step_km));
    for (int i = 1; i <= steps; ++i) {
        double f = static_cast<double>(i) * step_km / total;
        out.push_back(GeoPoint{a.lat + (b.lat - a.lat) * f, a.lon + (b.lon - a.lon) * f});
    }
    out.push_back(b);
    return out;
}

}  // namespace

nlohmann::json FinetuneQaPair::to_json() const {
    return nlohmann::json{{"question", question},   {"answer", answer},
                          {"origin_poi", origin_poi}, {"dest_poi", dest_poi},
                          {"waypoint", waypoint},   {"radius_km", radius_km},
                          {"category", category}};
}

std::vector<FinetuneQaPair> build_finetune_dataset(const urban::SpatialIndex& index, int n_pairs,
                                                   double radius_km,
                                                   const std::vector<std::string>& categories,
                                                   std::uint64_t rng_seed) {
    if (n_pairs < 1) throw Error("build_finetune_dataset: n_pairs must be >= 1");
    if (index.poi_count() < 2) throw Error("build_finetune_dataset: need at least two POIs");

    const auto& pois = index.pois();
    std::vector<double> cumulative;
    cumulative.reserve(pois.size());
    double acc = 0.0;
    for (const auto& p : pois) {
        acc += p.population_weight;
        cumulative.push_back(acc);
    }
    if (!(acc > 0.0)) throw Error("build_finetune_dataset: all population weights are zero");

    constexpr double kRouteStepKm = 0.2;
    constexpr double kWaypointCaptureKm = 0.05;

    std::mt19937_64 rng(rng_seed);
    std::vector<FinetuneQaPair> out;
    for (int i = 0; i < n_pairs; ++i) {
        std::size_t o = weighted_draw(rng, cumulative);
        std::size_t d = o;
        for (int tries = 0; d == o && tries < 4096; ++tries) d = weighted_draw(rng, cumulative);
        if (d == o) {
            // Degenerate weights: walk to the next poi with positive weight.
            for (std::size_t j = 0; j < pois.size(); ++j) {
                if (j != o && pois[j].population_weight > 0.0) {
                    d = j;
                    break;
                }
            }
            if (d == o) throw Error("build_finetune_dataset: no second sampleable POI");
        }
        const urban::Poi& origin = pois[o];
        const urban::Poi& dest = pois[d];

        std::vector<GeoPoint> route;
        if (!index.roads().empty()) {
            int src = nearest_road_node(index.roads(), origin.point());
            int dst = nearest_road_node(index.roads(), dest.point());
            auto path = shortest_road_path(index.roads(), src, dst);
            if (!path.empty()) {
                route.push_back(origin.point());
                route.insert(route.end(), path.begin(), path.end());
                route.push_back(dest.point());
            }
        }
        if (route.empty()) route = straight_segment(origin.point(), dest.point(), kRouteStepKm);

        // Traversed POIs: first-seen order along the route.
        std::vector<const urban::Poi*> waypoints;
        std::set<std::string> seen;
        for (const auto& vertex : route) {
            for (const auto* poi : index.pois_within_radius(vertex, kWaypointCaptureKm)) {
                if (seen.insert(poi->id).second) waypoints.push_back(poi);
            }
        }

        for (const auto* waypoint : waypoints) {
            for (const auto& category : categories) {
                FinetuneQaPair pair;
                pair.origin_poi = origin.id;
                pair.dest_poi = dest.id;
                pair.waypoint = waypoint->id;
                pair.radius_km = radius_km;
                pair.category = category;
                pair.question = "Which " + category + " places are within " +
                                fmt(radius_km, "%g") + " km of " +
                                index.hierarchical_address(waypoint->id) + "?";
                auto result = index.pois_within_radius(waypoint->point(), radius_km, category);
                if (result.empty()) {
                    pair.answer = "none";
                } else {
                    std::vector<std::string> names;
                    for (const auto* poi : result) names.push_back(poi->name);
                    pair.answer = join(names, ", ");
                }
                out.push_back(std::move(pair));
            }
        }
    }
    return out;
}

void write_finetune_jsonl(const std::string& path, const std::vector<FinetuneQaPair>& pairs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write finetune dataset: " + path);
    for (const auto& p : pairs) out << p.to_json().dump() << '\n';
}

double mean_jump_distance_km(const std::vector<mobility::Trajectory>& trajectories,
                             const urban::SpatialIndex& index) {
    double sum = 0.0;
    long count = 0;
    for (const auto& t : trajectories) {
        for (size_t i = 1; i < t.points.size(); ++i) {
            sum += haversine_km(t.points[i - 1].position(index), t.points[i].position(index));
            ++count;
        }
    }
    return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace cams::geogen
