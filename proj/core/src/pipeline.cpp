#include "cams/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>

#include "cams/csv.hpp"
#include "cams/errors.hpp"
#include "cams/mob_extractor.hpp"
#include "cams/strings.hpp"
#include "cams/timeutil.hpp"
#include "cams/traj_enhancer.hpp"

namespace fs = std::filesystem;

namespace cams::pipeline {

namespace {

void interpolate_env_tree(nlohmann::json& node) {
    if (node.is_string()) {
        node = interpolate_env(node.get<std::string>());
    } else if (node.is_object() || node.is_array()) {
        for (auto& child : node) interpolate_env_tree(child);
    }
}

std::string resolve_path(const std::string& base_dir, const std::string& path) {
    if (path.empty()) return path;
    fs::path p(path);
    if (p.is_absolute()) return path;
    return (fs::path(base_dir) / p).lexically_normal().string();
}

llm::BackendConfig parse_backend(const nlohmann::json& j, const std::string& config_dir) {
    llm::BackendConfig cfg;
    std::string kind = j.value("kind", "scripted");
    if (kind == "scripted") {
        cfg.kind = llm::BackendKind::scripted;
    } else if (kind == "http_openai_compatible" || kind == "http") {
        cfg.kind = llm::BackendKind::http_openai_compatible;
    } else {
        throw ConfigError("unknown backend kind: " + kind);
    }
    cfg.endpoint = j.value("endpoint", "");
    cfg.model = j.value("model", "default");
    cfg.api_key_env = j.value("api_key_env", "");
    if (j.contains("temperature")) cfg.temperature = j["temperature"].get<double>();
    cfg.max_tokens = j.value("max_tokens", 1024);
    cfg.max_concurrency = j.value("max_concurrency", 4);
    if (j.contains("retry")) {
        cfg.retry.max_attempts = j["retry"].value("max_attempts", 3);
        cfg.retry.backoff_ms = j["retry"].value("backoff_ms", 100);
    }
    cfg.script_file = resolve_path(config_dir, j.value("script_file", ""));
    cfg.structured_attempts = j.value("structured_attempts", 2);
    return cfg;
}

void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw ConfigError("missing required path: " + what);
    if (!fs::exists(path)) throw ConfigError(what + " does not exist: " + path);
}

}  // namespace

std::string hash_config_json(const nlohmann::json& doc) {
    return to_hex(fnv1a64(doc.dump()));
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config is not valid json: ") + e.what());
    }

    RunConfig cfg;
    cfg.config_hash = hash_config_json(doc);
    interpolate_env_tree(doc);
    cfg.config_dir = fs::path(path).parent_path().string();
    if (cfg.config_dir.empty()) cfg.config_dir = ".";

    const auto& city = doc.at("city");
    cfg.poi_file = resolve_path(cfg.config_dir, city.at("pois").get<std::string>());
    cfg.region_file = resolve_path(cfg.config_dir, city.value("regions", ""));
    cfg.road_file = resolve_path(cfg.config_dir, city.value("roads", ""));
    cfg.profiles_file = resolve_path(cfg.config_dir, doc.at("profiles").get<std::string>());
    cfg.trajectories_file =
        resolve_path(cfg.config_dir, doc.at("trajectories").get<std::string>());
    cfg.intent_map_file = resolve_path(cfg.config_dir, doc.value("intent_map", ""));
    cfg.truth_anchors_file = resolve_path(cfg.config_dir, doc.value("truth_anchors", ""));
    cfg.prompt_dir = resolve_path(cfg.config_dir, doc.value("prompt_dir", ""));
    cfg.out_dir = resolve_path(cfg.config_dir, doc.value("out_dir", "out"));

    const auto& cohorts = doc.at("cohorts");
    cfg.template_users = cohorts.at("template_users").get<std::vector<std::string>>();
    cfg.test_users = cohorts.at("test_users").get<std::vector<std::string>>();

    cfg.backend = parse_backend(doc.at("backend"), cfg.config_dir);
    if (doc.contains("stage_backends")) {
        for (const auto& [stage, j] : doc["stage_backends"].items()) {
            if (!llm::stage_from_name(stage))
                throw ConfigError("stage_backends: unknown stage '" + stage + "'");
            cfg.stage_backends[stage] = parse_backend(j, cfg.config_dir);
        }
    }
    if (doc.contains("iterate")) {
        for (const auto& j : doc["iterate"].value("rounds", nlohmann::json::array()))
            cfg.iterate_backends.push_back(parse_backend(j, cfg.config_dir));
        cfg.iterate_rounds = doc["iterate"].value("count", 0);
    }

    std::string mapper = doc.value("mapper", "E");
    if (mapper != "E" && mapper != "M" && mapper != "S")
        throw ConfigError("mapper must be one of E, M, S");
    cfg.mapper = mapper[0];
    std::string style = doc.value("address_style", "hierarchical");
    if (style == "hierarchical") {
        cfg.address_style = geogen::AddressStyle::hierarchical;
    } else if (style == "human") {
        cfg.address_style = geogen::AddressStyle::human;
    } else {
        throw ConfigError("address_style must be 'hierarchical' or 'human'");
    }

    if (doc.contains("params")) {
        const auto& p = doc["params"];
        cfg.k_neighbors = p.value("K", cfg.k_neighbors);
        cfg.k_candidates = p.value("k", cfg.k_candidates);
        cfg.alpha = p.value("alpha", cfg.alpha);
        cfg.epsilon = p.value("epsilon", cfg.epsilon);
        cfg.finetune_radius_km = p.value("radius_km", cfg.finetune_radius_km);
        cfg.map_radius_km = p.value("map_radius_km", cfg.map_radius_km);
        cfg.reflection_rounds = p.value("reflection_rounds", cfg.reflection_rounds);
        cfg.reflection_threshold = p.value("reflection_threshold", cfg.reflection_threshold);
        cfg.rng_seed = p.value("rng_seed", cfg.rng_seed);
        cfg.finetune_pairs = p.value("finetune_pairs", cfg.finetune_pairs);
        if (p.contains("finetune_categories"))
            cfg.finetune_categories = p["finetune_categories"].get<std::vector<std::string>>();
        cfg.embedding_dim = p.value("embedding_dim", cfg.embedding_dim);
        cfg.utc_offset_s = p.value("utc_offset_hours", 8) * 3600;
        cfg.retrieval = p.value("retrieval", cfg.retrieval);
        cfg.workers = p.value("workers", cfg.workers);
    }
    if (doc.contains("dpo")) {
        cfg.dpo_threshold = doc["dpo"].value("threshold", cfg.dpo_threshold);
        if (doc["dpo"].contains("stages")) {
            cfg.dpo_stages.clear();
            for (const auto& s : doc["dpo"]["stages"])
                cfg.dpo_stages.insert(s.get<std::string>());
        }
    }
    if (doc.contains("evaluate") && doc["evaluate"].contains("compare_reports")) {
        for (const auto& [model, p] : doc["evaluate"]["compare_reports"].items())
            cfg.compare_reports[model] = resolve_path(cfg.config_dir, p.get<std::string>());
    }

    // Validation.
    require_file(cfg.poi_file, "city.pois");
    require_file(cfg.profiles_file, "profiles");
    require_file(cfg.trajectories_file, "trajectories");
    if (!cfg.region_file.empty()) require_file(cfg.region_file, "city.regions");
    if (!cfg.road_file.empty()) require_file(cfg.road_file, "city.roads");
    if (!cfg.intent_map_file.empty()) require_file(cfg.intent_map_file, "intent_map");
    if (!cfg.truth_anchors_file.empty()) require_file(cfg.truth_anchors_file, "truth_anchors");
    if (cfg.backend.kind == llm::BackendKind::scripted)
        require_file(cfg.backend.script_file, "backend.script_file");

    std::set<std::string> templates(cfg.template_users.begin(), cfg.template_users.end());
    std::vector<std::string> overlap;
    for (const auto& u : cfg.test_users)
        if (templates.count(u)) overlap.push_back(u);
    if (!overlap.empty())
        throw ConfigError("template and test cohorts overlap: " + join(overlap, ", "));
    if (cfg.retrieval != "embedding" && cfg.retrieval != "llm")
        throw ConfigError("params.retrieval must be 'embedding' or 'llm'");
    return cfg;
}

const std::vector<std::string>& stage_list() {
    static const std::vector<std::string> stages = {
        "ingest",   "extract",  "synthesize-patterns", "anchors",  "build-graph",
        "simulate", "evaluate", "finetune-data",       "dpo-data", "iterate"};
    return stages;
}

// ---------------------------------------------------------------------------
// Shared context
// ---------------------------------------------------------------------------

namespace {

struct Context {
    urban::SpatialIndex index;
    std::vector<mobility::UserProfile> profiles;
    std::map<std::string, mobility::UserProfile> profiles_by_id;
    std::vector<mobility::Trajectory> trajectories;
    std::map<std::string, std::vector<mobility::Trajectory>> trajs_by_user;
    mobility::IntentMap intents;
};

Context load_context(const RunConfig& cfg) {
    Context ctx;
    ctx.index = urban::ingest_city(cfg.poi_file, cfg.region_file, cfg.road_file);
    ctx.profiles = mobility::load_profiles(cfg.profiles_file);
    for (const auto& p : ctx.profiles) ctx.profiles_by_id[p.user_id] = p;
    ctx.intents = cfg.intent_map_file.empty() ? mobility::IntentMap::builtin_defaults()
                                              : mobility::IntentMap::load(cfg.intent_map_file);
    mobility::MobilityConfig mob_cfg{cfg.utc_offset_s};
    auto loaded = mobility::load_trajectories(cfg.trajectories_file, ctx.index, ctx.intents,
                                              mob_cfg);
    ctx.trajectories = std::move(loaded.trajectories);
    for (const auto& t : ctx.trajectories) ctx.trajs_by_user[t.user_id].push_back(t);
    return ctx;
}

const mobility::UserProfile& profile_of(const Context& ctx, const std::string& user_id) {
    auto it = ctx.profiles_by_id.find(user_id);
    if (it == ctx.profiles_by_id.end())
        throw ConfigError("cohort user '" + user_id + "' has no profile");
    return it->second;
}

std::unique_ptr<llm::Gateway> make_gateway(const RunConfig& cfg,
                                            const llm::BackendConfig& backend) {
    llm::PromptRegistry registry = llm::PromptRegistry::builtin();
    if (!cfg.prompt_dir.empty()) registry.load_overrides(cfg.prompt_dir);
    auto gw = std::make_unique<llm::Gateway>(backend, std::move(registry));
    for (const auto& [stage, stage_cfg] : cfg.stage_backends)
        gw->bind_stage_backend(*llm::stage_from_name(stage), stage_cfg);
    return gw;
}

fs::path stage_dir(const RunConfig& cfg, const std::string& stage) {
    fs::path dir = fs::path(cfg.out_dir) / stage;
    fs::create_directories(dir);
    return dir;
}

void write_manifest(const fs::path& dir, const RunConfig& cfg, const std::string& stage) {
    auto now = std::chrono::system_clock::now();
    std::int64_t epoch_s =
        std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
    nlohmann::json j{{"stage", stage},
                     {"config_hash", cfg.config_hash},
                     {"version", kVersion},
                     {"generated_at", format_iso8601(epoch_s, 0)},
                     {"seed", cfg.rng_seed}};
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << j.dump(2) << '\n';
}

void require_artifact(const RunConfig& cfg, const std::string& stage, const fs::path& artifact) {
    if (!fs::exists(artifact)) throw DependencyError(stage, artifact.string());
}

metrics::EvalConfig eval_config(const RunConfig& cfg) {
    metrics::EvalConfig e;
    e.utc_offset_s = cfg.utc_offset_s;
    e.workers = cfg.workers;
    return e;
}

std::vector<geogen::TruthAnchor> truth_anchors(const RunConfig& cfg, const Context& ctx) {
    std::vector<geogen::TruthAnchor> anchors;
    if (!cfg.truth_anchors_file.empty()) {
        CsvFile csv = read_csv(cfg.truth_anchors_file);
        for (const auto& row : csv.rows)
            anchors.push_back({trim(row[0]), trim(row[1]), trim(row[2])});
        return anchors;
    }
    // Infer from template trajectories: the most-visited POI per anchor intent.
    for (const auto& user : cfg.template_users) {
        auto it = ctx.trajs_by_user.find(user);
        if (it == ctx.trajs_by_user.end()) continue;
        for (const std::string kind : {"home", "work"}) {
            std::map<std::string, long> counts;
            for (const auto& t : it->second)
                for (const auto& pt : t.points)
                    if (pt.intent == kind && !pt.poi_id.empty()) ++counts[pt.poi_id];
            if (counts.empty()) continue;
            auto best = counts.begin();
            for (auto c = counts.begin(); c != counts.end(); ++c)
                if (c->second > best->second) best = c;
            anchors.push_back({user, kind, best->first});
        }
    }
    return anchors;
}

std::vector<mobility::Trajectory> user_trajectories(const Context& ctx,
                                                    const std::vector<std::string>& users) {
    std::vector<mobility::Trajectory> out;
    for (const auto& user : users) {
        auto it = ctx.trajs_by_user.find(user);
        if (it == ctx.trajs_by_user.end()) continue;
        out.insert(out.end(), it->second.begin(), it->second.end());
    }
    return out;
}

std::map<std::string, extractor::FusedPattern> load_fused(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open fused patterns: " + path.string());
    std::map<std::string, extractor::FusedPattern> out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        extractor::FusedPattern f;
        f.target_user_id = j.at("user_id").get<std::string>();
        f.fused_c1 = j.value("fused_c1", "");
        f.description = j.value("description", "");
        f.fused_c2 = j.value("fused_c2", "");
        for (const auto& s : j.value("sources", nlohmann::json::array()))
            f.sources.push_back({s.at("user_id").get<std::string>(), s.value("score", 0.0)});
        out[f.target_user_id] = std::move(f);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stage bodies
// ---------------------------------------------------------------------------

void run_ingest(const RunConfig& cfg) {
    Context ctx = load_context(cfg);
    auto dir = stage_dir(cfg, "ingest");
    nlohmann::json j{{"pois", ctx.index.poi_count()},
                     {"admin_regions", ctx.index.regions_at(urban::RegionLevel::admin).size()},
                     {"subdistricts",
                      ctx.index.regions_at(urban::RegionLevel::subdistrict).size()},
                     {"streets", ctx.index.regions_at(urban::RegionLevel::street).size()},
                     {"road_edges", ctx.index.roads().edges.size()},
                     {"profiles", ctx.profiles.size()},
                     {"trajectories", ctx.trajectories.size()},
                     {"pseudo_hierarchy", ctx.index.pseudo_hierarchy()}};
    std::ofstream out(dir / "city_summary.json", std::ios::trunc);
    out << j.dump(2) << '\n';
    write_manifest(dir, cfg, "ingest");
}

void run_extract(const RunConfig& cfg) {
    Context ctx = load_context(cfg);
    auto gw_ptr = make_gateway(cfg, cfg.backend);
    llm::Gateway& gw = *gw_ptr;
    auto dir = stage_dir(cfg, "extract");

    std::vector<extractor::PatternRecord> records;
    std::vector<mobility::Trajectory> recovered;
    for (const auto& user : cfg.template_users) {
        const auto& profile = profile_of(ctx, user);
        auto it = ctx.trajs_by_user.find(user);
        if (it == ctx.trajs_by_user.end() || it->second.empty())
            throw Error("extract: template user '" + user + "' has no trajectories");
        auto record = extractor::compress(gw, profile, it->second, ctx.index, cfg.utc_offset_s);

        // Recovery candidates: the user's own observed POIs.
        std::map<std::string, const urban::Poi*> unique_pois;
        for (const auto& t : it->second)
            for (const auto& pt : t.points)
                if (!pt.poi_id.empty()) unique_pois.emplace(pt.poi_id, &ctx.index.poi(pt.poi_id));
        std::vector<const urban::Poi*> candidates;
        for (const auto& [id, poi] : unique_pois) candidates.push_back(poi);
        if (candidates.empty())
            throw Error("extract: template user '" + user + "' has no resolvable POIs");

        auto recon = extractor::reconstruct(gw, profile, record, candidates,
                                            it->second.front().day, cfg.utc_offset_s);
        record.r1 = recon.r1;
        record.r2 = recon.r2;
        records.push_back(std::move(record));
        recovered.push_back(std::move(recon.trajectory));
    }

    extractor::write_pattern_records((dir / "patterns.jsonl").string(), records);
    mobility::write_trajectories((dir / "recovered.csv").string(), recovered,
                                 {cfg.utc_offset_s});
    gw.write_transcript_jsonl((dir / "transcripts.jsonl").string());
    write_manifest(dir, cfg, "extract");
}

void run_synthesize_patterns(const RunConfig& cfg) {
    Context ctx = load_context(cfg);
    auto extract_dir = fs::path(cfg.out_dir) / "extract";
    require_artifact(cfg, "synthesize-patterns", extract_dir / "patterns.jsonl");
    auto records = extractor::load_pattern_records((extract_dir / "patterns.jsonl").string());
    std::map<std::string, extractor::PatternRecord> record_by_user;
    for (const auto& r : records) record_by_user[r.user_id] = r;

    auto gw_ptr = make_gateway(cfg, cfg.backend);
    llm::Gateway& gw = *gw_ptr;
    auto dir = stage_dir(cfg, "synthesize-patterns");

    std::vector<mobility::UserProfile> template_profiles;
    for (const auto& user : cfg.template_users)
        template_profiles.push_back(profile_of(ctx, user));
    auto matrix = extractor::embed_profiles(template_profiles, cfg.embedding_dim);
    extractor::write_embedding_matrix((dir / "embeddings.csv").string(),
                                      (dir / "embedding_ids.txt").string(), matrix);

    std::ofstream fused_out(dir / "fused.jsonl", std::ios::trunc);
    for (const auto& user : cfg.test_users) {
        const auto& profile = profile_of(ctx, user);
        std::vector<extractor::ScoredUser> neighbors;
        if (cfg.retrieval == "llm") {
            neighbors = extractor::top_k_similar_llm(gw, profile, template_profiles,
                                                     cfg.k_neighbors);
        } else {
            auto embedding = extractor::embed_profile(profile, cfg.embedding_dim);
            neighbors = extractor::top_k_similar(embedding, matrix, cfg.k_neighbors);
        }
        std::vector<std::pair<extractor::ScoredUser, extractor::PatternRecord>> neighbor_records;
        for (const auto& n : neighbors) {
            auto it = record_by_user.find(n.user_id);
            if (it == record_by_user.end())
                throw Error("synthesize-patterns: no pattern record for template user '" +
                            n.user_id + "'");
            neighbor_records.emplace_back(n, it->second);
        }
        auto fused = extractor::fuse(gw, profile, neighbor_records);
        nlohmann::json sources = nlohmann::json::array();
        for (const auto& s : fused.sources)
            sources.push_back({{"user_id", s.user_id}, {"score", s.score}});
        fused_out << nlohmann::json{{"user_id", fused.target_user_id},
                                    {"fused_c1", fused.fused_c1},
                                    {"description", fused.description},
                                    {"fused_c2", fused.fused_c2},
                                    {"sources", sources}}
                         .dump()
                  << '\n';
    }
    fused_out.close();
    gw.write_transcript_jsonl((dir / "transcripts.jsonl").string());
    write_manifest(dir, cfg, "synthesize-patterns");
}

void run_anchors(const RunConfig& cfg) {
    Context ctx = load_context(cfg);
    auto gw_ptr = make_gateway(cfg, cfg.backend);
    llm::Gateway& gw = *gw_ptr;
    auto dir = stage_dir(cfg, "anchors");

    auto anchors = truth_anchors(cfg, ctx);
    if (anchors.empty()) throw Error("anchors: no ground-truth anchors available");

    std::vector<mobility::UserProfile> test_profiles;
    for (const auto& user : cfg.test_users) test_profiles.push_back(profile_of(ctx, user));

    geogen::CascadeConfig cascade_cfg;
    cascade_cfg.rounds = cfg.reflection_rounds;
    cascade_cfg.convergence_jsd = cfg.reflection_threshold;
    cascade_cfg.intents = ctx.intents;

    std::vector<geogen::AnchorAssignment> all_assignments;
    std::ofstream advice_out(dir / "advice.jsonl", std::ios::trunc);
    for (const std::string kind : {"home", "work"}) {
        std::vector<geogen::TruthAnchor> kind_anchors;
        for (const auto& a : anchors)
            if (a.kind == kind) kind_anchors.push_back(a);
        if (kind_anchors.empty()) continue;
        auto summaries = geogen::summarize_all_levels(kind_anchors, ctx.profiles_by_id,
                                                      ctx.index);
        std::map<std::string, double> truth;
        for (const auto& a : kind_anchors) {
            const auto& poi = ctx.index.poi(a.poi_id);
            truth[poi.region_path[static_cast<int>(cascade_cfg.reflect_level)]] += 1.0;
        }
        auto result = geogen::run_anchor_cascade(gw, test_profiles, kind, summaries, truth,
                                                 ctx.index, cascade_cfg);
        for (const auto& advice : result.advice) {
            nlohmann::json j{{"kind", kind},
                             {"iteration", advice.iteration},
                             {"jsd", advice.jsd_value},
                             {"directive", advice.directive},
                             {"gaps", advice.gaps}};
            advice_out << j.dump() << '\n';
        }
        all_assignments.insert(all_assignments.end(), result.assignments.begin(),
                               result.assignments.end());
        if (!result.completed) {
            geogen::write_anchor_csv((dir / "anchors.csv").string(), all_assignments);
            throw Error("anchors: cascade aborted with partial results: " + result.error);
        }
    }
    geogen::write_anchor_csv((dir / "anchors.csv").string(), all_assignments);
    gw.write_transcript_jsonl((dir / "transcripts.jsonl").string());
    write_manifest(dir, cfg, "anchors");
}

void run_build_graph(const RunConfig& cfg) {
    Context ctx = load_context(cfg);
    auto dir = stage_dir(cfg, "build-graph");
    auto training = user_trajectories(ctx, cfg.template_users);
    auto graph = geogen::build_transition_graph(training, ctx.index, cfg.alpha, cfg.epsilon);
    graph.save_csv((dir / "graph.csv").string());
    write_manifest(dir, cfg, "build-graph");
}

struct SimulationOutput {
    std::vector<mobility::Trajectory> trajectories;
    std::vector<enhancer::ActivityPlan> plans;
    metrics::TvrCounts tvr;
    bool has_tvr = false;
};

SimulationOutput simulate_cohort(const RunConfig& cfg, const Context& ctx, llm::Gateway& gw,
                                 const std::map<std::string, extractor::FusedPattern>& fused,
                                 const std::map<std::string, std::map<std::string, std::string>>&
                                     anchors_by_user,
                                 const geogen::TransitionGraph* graph) {
    SimulationOutput out;

    // Neighbor lists for the social mapper come from embedding retrieval.
    std::map<std::string, std::vector<std::string>> neighbors_by_user;
    std::vector<mobility::Trajectory> template_trajs;
    if (cfg.mapper == 'S') {
        std::vector<mobility::UserProfile> template_profiles;
        for (const auto& user : cfg.template_users)
            template_profiles.push_back(profile_of(ctx, user));
        auto matrix = extractor::embed_profiles(template_profiles, cfg.embedding_dim);
        for (const auto& user : cfg.test_users) {
            auto embedding = extractor::embed_profile(profile_of(ctx, user), cfg.embedding_dim);
            for (const auto& n : extractor::top_k_similar(embedding, matrix, cfg.k_neighbors))
                neighbors_by_user[user].push_back(n.user_id);
        }
        template_trajs = user_trajectories(ctx, cfg.template_users);
    }

    for (const auto& user : cfg.test_users) {
        const auto& profile = profile_of(ctx, user);
        auto fit = fused.find(user);
        if (fit == fused.end())
            throw Error("simulate: no fused pattern for test user '" + user + "'");
        const auto& pattern = fit->second;
        auto ait = anchors_by_user.find(user);
        if (ait == anchors_by_user.end())
            throw Error("simulate: no anchors for test user '" + user + "'");

        std::string profile_text = profile.render();
        std::string pattern_text = enhancer::render_pattern(pattern);
        enhancer::CandidateProvider provider;
        switch (cfg.mapper) {
            case 'E':
                out.has_tvr = true;
                provider = [&, profile_text, pattern_text](const urban::Poi& prev,
                                                           const std::string& intent,
                                                           const llm::CallContext& call_ctx) {
                    auto r = geogen::candidates_llm(gw, prev, profile_text, pattern_text, intent,
                                                    ctx.index, cfg.k_candidates,
                                                    cfg.address_style, call_ctx);
                    out.tvr.valid += r.tvr.valid;
                    out.tvr.total += r.tvr.total;
                    return r.pois;
                };
                break;
            case 'M':
                provider = [&](const urban::Poi& prev, const std::string& intent,
                               const llm::CallContext&) {
                    return geogen::candidates_map(intent, prev.point(), ctx.index, ctx.intents,
                                                  cfg.map_radius_km, cfg.k_candidates);
                };
                break;
            case 'S':
                provider = [&, user](const urban::Poi& prev, const std::string& intent,
                                     const llm::CallContext&) {
                    auto r = geogen::candidates_social(prev.id, neighbors_by_user[user], *graph,
                                                       template_trajs, cfg.k_candidates,
                                                       ctx.index);
                    return r.pois;
                };
                break;
        }

        // Simulate the user's observed days (falling back to one fixed day).
        std::vector<CivilDate> days;
        if (auto tit = ctx.trajs_by_user.find(user); tit != ctx.trajs_by_user.end())
            for (const auto& t : tit->second) days.push_back(t.day);
        if (days.empty()) days.push_back(CivilDate{2019, 10, 1});
        std::sort(days.begin(), days.end());
        days.erase(std::unique(days.begin(), days.end()), days.end());

        for (const auto& day : days) {
            auto plan = enhancer::plan_day(gw, profile, pattern, day, ctx.intents);
            auto synth = enhancer::synthesize_trajectory(gw, plan, ait->second, provider,
                                                         ctx.index, profile, pattern,
                                                         cfg.utc_offset_s);
            out.plans.push_back(std::move(plan));
            out.trajectories.push_back(std::move(synth.trajectory));
        }
    }
    return out;
}

void write_simulation(const fs::path& dir, const RunConfig& cfg, const SimulationOutput& sim,
                      llm::Gateway& gw) {
    mobility::write_trajectories((dir / "trajectories.csv").string(), sim.trajectories,
                                 {cfg.utc_offset_s});
    std::ofstream plans_out(dir / "plans.jsonl", std::ios::trunc);
    for (const auto& plan : sim.plans) {
        nlohmann::json slots = nlohmann::json::array();
        for (const auto& s : plan.slots) {
            char start[8], end[8];
            std::snprintf(start, sizeof(start), "%02d:%02d", s.start_min / 60, s.start_min % 60);
            std::snprintf(end, sizeof(end), "%02d:%02d", s.end_min / 60, s.end_min % 60);
            slots.push_back({{"intent", s.intent}, {"start", start}, {"end", end}});
        }
        plans_out << nlohmann::json{{"user_id", plan.user_id},
                                    {"day", plan.day.to_string()},
                                    {"home_inserted", plan.home_inserted},
                                    {"slots", slots}}
                         .dump()
                  << '\n';
    }
    plans_out.close();
    if (sim.has_tvr) {
        std::ofstream tvr_out(dir / "tvr.json", std::ios::trunc);
        tvr_out << nlohmann::json{{"valid", sim.tvr.valid}, {"total", sim.tvr.total}}.dump(2)
                << '\n';
    }
    gw.write_transcript_jsonl((dir / "transcripts.jsonl").string());
}

std::map<std::string, std::map<std::string, std::string>> load_anchor_map(const fs::path& path) {
    std::map<std::string, std::map<std::string, std::string>> out;
    for (const auto& a : geogen::load_anchor_csv(path.string())) out[a.user_id][a.kind] = a.poi_id;
    return out;
}

void run_simulate(const RunConfig& cfg) {
    Context ctx = load_context(cfg);
    auto anchors_path = fs::path(cfg.out_dir) / "anchors" / "anchors.csv";
    require_artifact(cfg, "simulate", anchors_path);
    auto fused_path = fs::path(cfg.out_dir) / "synthesize-patterns" / "fused.jsonl";
    require_artifact(cfg, "simulate", fused_path);

    geogen::TransitionGraph graph(cfg.alpha, cfg.epsilon);
    if (cfg.mapper == 'S') {
        auto graph_path = fs::path(cfg.out_dir) / "build-graph" / "graph.csv";
        require_artifact(cfg, "simulate", graph_path);
        graph = geogen::TransitionGraph::load_csv(graph_path.string(), cfg.alpha, cfg.epsilon);
    }

    auto gw_ptr = make_gateway(cfg, cfg.backend);
    llm::Gateway& gw = *gw_ptr;
    auto dir = stage_dir(cfg, "simulate");
    auto sim = simulate_cohort(cfg, ctx, gw, load_fused(fused_path),
                               load_anchor_map(anchors_path), &graph);
    write_simulation(dir, cfg, sim, gw);
    write_manifest(dir, cfg, "simulate");
}

metrics::MetricReport evaluate_files(const RunConfig& cfg, const Context& ctx,
                                     const fs::path& generated_csv,
                                     const fs::path& tvr_json) {
    mobility::MobilityConfig mob_cfg{cfg.utc_offset_s};
    auto generated =
        mobility::load_trajectories(generated_csv.string(), ctx.index, ctx.intents, mob_cfg);
    auto real = user_trajectories(ctx, cfg.test_users);
    std::optional<metrics::TvrCounts> tvr;
    if (fs::exists(tvr_json)) {
        std::ifstream in(tvr_json);
        nlohmann::json j;
        in >> j;
        tvr = metrics::TvrCounts{j.value("valid", 0L), j.value("total", 0L)};
    }
    return metrics::evaluate(generated.trajectories, real, ctx.index, eval_config(cfg), tvr);
}

void run_evaluate(const RunConfig& cfg) {
    Context ctx = load_context(cfg);
    auto generated_csv = fs::path(cfg.out_dir) / "simulate" / "trajectories.csv";
    require_artifact(cfg, "evaluate", generated_csv);
    auto dir = stage_dir(cfg, "evaluate");

    auto report = evaluate_files(cfg, ctx, generated_csv,
                                 fs::path(cfg.out_dir) / "simulate" / "tvr.json");
    {
        std::ofstream out(dir / "report.json", std::ios::trunc);
        out << report.to_json().dump(2) << '\n';
    }

    mobility::MobilityConfig mob_cfg{cfg.utc_offset_s};
    auto generated =
        mobility::load_trajectories(generated_csv.string(), ctx.index, ctx.intents, mob_cfg);
    metrics::write_plot_data((dir / "plots").string(), generated.trajectories,
                             user_trajectories(ctx, cfg.test_users), ctx.index,
                             eval_config(cfg));

    if (!cfg.compare_reports.empty()) {
        std::map<std::string, metrics::MetricReport> reports;
        reports["this_run"] = report;
        for (const auto& [model, path] : cfg.compare_reports) {
            std::ifstream in(path);
            if (!in) throw ConfigError("compare_reports: cannot open " + path);
            nlohmann::json j;
            in >> j;
            reports[model] = metrics::MetricReport::from_json(j);
        }
        bool all_tvr = true;
        for (const auto& [model, r] : reports) all_tvr = all_tvr && r.tvr.has_value();
        auto table = metrics::cmrr(reports, all_tvr);
        std::ofstream out(dir / "cmrr.csv", std::ios::trunc);
        out << table.to_csv();
    }
    write_manifest(dir, cfg, "evaluate");
}

void run_finetune_data(const RunConfig& cfg) {
    Context ctx = load_context(cfg);
    auto dir = stage_dir(cfg, "finetune-data");
    double radius = cfg.finetune_radius_km;
    if (radius <= 0.0) {
        radius = geogen::mean_jump_distance_km(user_trajectories(ctx, cfg.template_users),
                                               ctx.index);
        if (radius <= 0.0) radius = 1.0;
    }
    std::vector<std::string> categories = cfg.finetune_categories;
    if (categories.empty()) {
        std::set<std::string> all;
        for (const auto& poi : ctx.index.pois()) all.insert(poi.category);
        categories.assign(all.begin(), all.end());
    }
    auto pairs = geogen::build_finetune_dataset(ctx.index, cfg.finetune_pairs, radius, categories,
                                                cfg.rng_seed);
    geogen::write_finetune_jsonl((dir / "finetune.jsonl").string(), pairs);
    write_manifest(dir, cfg, "finetune-data");
}

std::vector<llm::TranscriptEntry> read_transcripts(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open transcripts: " + path.string());
    std::vector<llm::TranscriptEntry> out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        out.push_back(llm::TranscriptEntry::from_json(nlohmann::json::parse(line)));
    }
    return out;
}

void run_dpo_data(const RunConfig& cfg) {
    Context ctx = load_context(cfg);
    auto transcripts_path = fs::path(cfg.out_dir) / "simulate" / "transcripts.jsonl";
    require_artifact(cfg, "dpo-data", transcripts_path);
    auto dir = stage_dir(cfg, "dpo-data");

    auto gw_ptr = make_gateway(cfg, cfg.backend);
    llm::Gateway& gw = *gw_ptr;
    auto result = enhancer::build_dpo_dataset(gw, read_transcripts(transcripts_path),
                                              ctx.trajectories, cfg.dpo_threshold,
                                              cfg.dpo_stages, cfg.utc_offset_s);
    enhancer::write_dpo_jsonl((dir / "dpo.jsonl").string(), result.pairs);
    nlohmann::json stats{{"pairs", result.pairs.size()},
                         {"judged", result.judged},
                         {"below_threshold", result.below_threshold},
                         {"skipped_missing_join", result.skipped_missing_join},
                         {"judge_errors", result.judge_errors}};
    std::ofstream out(dir / "dpo_stats.json", std::ios::trunc);
    out << stats.dump(2) << '\n';
    write_manifest(dir, cfg, "dpo-data");
}

}  // namespace

std::vector<metrics::MetricReport> iterate_enhancement(const RunConfig& cfg) {
    Context ctx = load_context(cfg);
    auto anchors_path = fs::path(cfg.out_dir) / "anchors" / "anchors.csv";
    require_artifact(cfg, "iterate", anchors_path);
    auto fused_path = fs::path(cfg.out_dir) / "synthesize-patterns" / "fused.jsonl";
    require_artifact(cfg, "iterate", fused_path);
    auto fused = load_fused(fused_path);
    auto anchors = load_anchor_map(anchors_path);

    geogen::TransitionGraph graph(cfg.alpha, cfg.epsilon);
    if (cfg.mapper == 'S') {
        auto graph_path = fs::path(cfg.out_dir) / "build-graph" / "graph.csv";
        require_artifact(cfg, "iterate", graph_path);
        graph = geogen::TransitionGraph::load_csv(graph_path.string(), cfg.alpha, cfg.epsilon);
    }

    int requested = cfg.iterate_rounds > 0 ? cfg.iterate_rounds
                                           : static_cast<int>(cfg.iterate_backends.size());
    std::vector<metrics::MetricReport> reports;
    for (int round = 0; round < requested; ++round) {
        if (round >= static_cast<int>(cfg.iterate_backends.size())) break;  // partial run
        auto round_dir = fs::path(cfg.out_dir) / "iterate" / ("round_" + std::to_string(round));
        fs::create_directories(round_dir);

        auto gw_ptr = make_gateway(cfg, cfg.iterate_backends[round]);
        llm::Gateway& gw = *gw_ptr;
        auto sim = simulate_cohort(cfg, ctx, gw, fused, anchors, &graph);
        write_simulation(round_dir, cfg, sim, gw);

        std::optional<metrics::TvrCounts> tvr;
        if (sim.has_tvr) tvr = sim.tvr;
        auto report = metrics::evaluate(sim.trajectories, user_trajectories(ctx, cfg.test_users),
                                        ctx.index, eval_config(cfg), tvr);
        {
            std::ofstream out(round_dir / "report.json", std::ios::trunc);
            out << report.to_json().dump(2) << '\n';
        }
        auto dpo = enhancer::build_dpo_dataset(gw, gw.transcript(), ctx.trajectories,
                                               cfg.dpo_threshold, cfg.dpo_stages,
                                               cfg.utc_offset_s);
        enhancer::write_dpo_jsonl((round_dir / "dpo.jsonl").string(), dpo.pairs);
        reports.push_back(report);
    }
    return reports;
}

void run_stage(const RunConfig& cfg, const std::string& stage) {
    if (stage == "ingest") return run_ingest(cfg);
    if (stage == "extract") return run_extract(cfg);
    if (stage == "synthesize-patterns") return run_synthesize_patterns(cfg);
    if (stage == "anchors") return run_anchors(cfg);
    if (stage == "build-graph") return run_build_graph(cfg);
    if (stage == "simulate") return run_simulate(cfg);
    if (stage == "evaluate") return run_evaluate(cfg);
    if (stage == "finetune-data") return run_finetune_data(cfg);
    if (stage == "dpo-data") return run_dpo_data(cfg);
    if (stage == "iterate") {
        iterate_enhancement(cfg);
        auto dir = stage_dir(cfg, "iterate");
        write_manifest(dir, cfg, "iterate");
        return;
    }
    if (stage == "all") {
        for (const char* s : {"ingest", "extract", "synthesize-patterns", "anchors",
                              "build-graph", "simulate", "evaluate", "finetune-data",
                              "dpo-data"})
            run_stage(cfg, s);
        return;
    }
    throw ConfigError("unknown stage: " + stage);
}

}  // namespace cams::pipeline
