#include "cams/llm_gateway.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

// httplib pulls in OpenSSL when CPPHTTPLIB_OPENSSL_SUPPORT is defined (set by
// the build when OpenSSL is available).
#include <httplib.h>

#include "cams/errors.hpp"
#include "cams/prompts.hpp"
#include "cams/strings.hpp"

namespace cams::llm {

namespace {

const char* kStageNames[kStageCount] = {
    "c1_compress",    "c2_compress",     "r1_reconstruct", "r2_reconstruct",
    "retrieve_similar", "fuse_c1",       "gen_description", "fuse_c2",
    "region_reason",  "region_execute",  "region_reflect", "mapper_candidates",
    "plan_day",       "synthesize_traj", "judge_quality"};

}  // namespace

std::string_view stage_name(Stage s) {
    return kStageNames[static_cast<int>(s)];
}

std::optional<Stage> stage_from_name(std::string_view name) {
    for (int i = 0; i < kStageCount; ++i)
        if (name == kStageNames[i]) return static_cast<Stage>(i);
    return std::nullopt;
}

std::vector<std::string> extract_placeholders(const std::string& text) {
    std::vector<std::string> out;
    for (size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '{') continue;
        if (i + 1 < text.size() && text[i + 1] == '{') {
            ++i;
            continue;
        }
        size_t close = text.find('}', i + 1);
        if (close == std::string::npos) break;
        std::string name = text.substr(i + 1, close - i - 1);
        if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
        i = close;
    }
    return out;
}

PromptRegistry PromptRegistry::builtin() {
    PromptRegistry reg;
    for (const auto& t : builtin_prompt_templates()) reg.templates_[t.stage] = t;
    return reg;
}

void PromptRegistry::load_overrides(const std::string& dir) {
    for (auto& [stage, tmpl] : templates_) {
        std::string path = dir + "/" + std::string(stage_name(stage)) + ".txt";
        std::ifstream in(path);
        if (!in) continue;
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        auto found = extract_placeholders(text);
        auto declared = tmpl.placeholders;
        std::sort(found.begin(), found.end());
        std::sort(declared.begin(), declared.end());
        if (found != declared)
            throw TemplateError("override for stage '" + std::string(stage_name(stage)) +
                                "' changes the placeholder schema");
        tmpl.text = std::move(text);
    }
}

const PromptTemplate& PromptRegistry::at(Stage s) const {
    auto it = templates_.find(s);
    if (it == templates_.end())
        throw TemplateError("no template registered for stage '" +
                            std::string(stage_name(s)) + "'");
    return it->second;
}

std::string PromptRegistry::render(Stage s,
                                   const std::map<std::string, std::string>& variables) const {
    const PromptTemplate& tmpl = at(s);
    for (const auto& name : tmpl.placeholders)
        if (!variables.count(name))
            throw TemplateError("stage '" + std::string(stage_name(s)) +
                                "': missing variable '" + name + "'");
    std::string out;
    const std::string& text = tmpl.text;
    for (size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (c == '{' && i + 1 < text.size() && text[i + 1] == '{') {
            out.push_back('{');
            ++i;
        } else if (c == '}' && i + 1 < text.size() && text[i + 1] == '}') {
            out.push_back('}');
            ++i;
        } else if (c == '{') {
            size_t close = text.find('}', i + 1);
            std::string name = text.substr(i + 1, close - i - 1);
            out += variables.at(name);
            i = close;
        } else {
            out.push_back(c);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

ScriptedBackend::ScriptedBackend(std::vector<Entry> entries) {
    for (auto& e : entries) {
        if (e.ordinal < 0)
            defaults_[static_cast<int>(e.stage)] = std::move(e.response);
        else
            exact_[{static_cast<int>(e.stage), e.ordinal}] = std::move(e.response);
    }
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open script file: " + path);
    std::vector<Entry> entries;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": invalid json: " + e.what());
        }
        auto stage = stage_from_name(j.at("stage_id").get<std::string>());
        if (!stage)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown stage_id");
        Entry e;
        e.stage = *stage;
        e.ordinal = j.value("ordinal", -1);
        const auto& resp = j.at("response");
        e.response = resp.is_string() ? resp.get<std::string>() : resp.dump();
        entries.push_back(std::move(e));
    }
    return std::make_unique<ScriptedBackend>(std::move(entries));
}

std::string ScriptedBackend::complete(const BackendRequest& req) {
    std::lock_guard<std::mutex> lock(mu_);
    int stage = static_cast<int>(req.stage);
    int ordinal = counters_[stage]++;
    auto it = exact_.find({stage, ordinal});
    if (it != exact_.end()) return it->second;
    auto dit = defaults_.find(stage);
    if (dit != defaults_.end()) return dit->second;
    throw BackendError("script exhausted for stage '" + std::string(stage_name(req.stage)) +
                           "' at call ordinal " + std::to_string(ordinal),
                       -1, /*retryable=*/false);
}

int ScriptedBackend::calls_for(Stage s) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = counters_.find(static_cast<int>(s));
    return it == counters_.end() ? 0 : it->second;
}

HttpBackend::HttpBackend(const BackendConfig& cfg) {
    const std::string& url = cfg.endpoint;
    size_t scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint needs a scheme: " + url);
    size_t path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        scheme_host_ = url;
        path_ = "/v1/chat/completions";
    } else {
        scheme_host_ = url.substr(0, path_start);
        path_ = url.substr(path_start);
    }
    if (!cfg.api_key_env.empty()) {
        if (const char* key = std::getenv(cfg.api_key_env.c_str())) api_key_ = key;
    }
}

std::string HttpBackend::complete(const BackendRequest& req) {
    httplib::Client client(scheme_host_);
    client.set_read_timeout(timeout_s_, 0);
    client.set_connection_timeout(timeout_s_, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    nlohmann::json body{{"model", req.model},
                        {"messages", nlohmann::json::array({nlohmann::json{
                                         {"role", "user"}, {"content", req.prompt}}})},
                        {"temperature", req.temperature},
                        {"max_tokens", req.max_tokens}};
    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res) throw BackendError("http request failed: " + scheme_host_ + path_, -1);
    if (res->status != 200)
        throw BackendError("backend returned status " + std::to_string(res->status) + ": " +
                               res->body,
                           res->status);
    try {
        nlohmann::json j = nlohmann::json::parse(res->body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const std::exception& e) {
        throw BackendError(std::string("malformed completion response: ") + e.what(),
                           res->status);
    }
}

std::unique_ptr<Backend> make_backend(const BackendConfig& cfg) {
    switch (cfg.kind) {
        case BackendKind::scripted:
            if (cfg.script_file.empty())
                throw ConfigError("scripted backend requires a script_file");
            return ScriptedBackend::from_file(cfg.script_file);
        case BackendKind::http_openai_compatible:
            return std::make_unique<HttpBackend>(cfg);
    }
    throw ConfigError("unknown backend kind");
}

// ---------------------------------------------------------------------------
// Transcript
// ---------------------------------------------------------------------------

nlohmann::json TranscriptEntry::to_json() const {
    nlohmann::json j{{"call_id", call_id},
                     {"attempt", attempt},
                     {"stage_id", std::string(stage_name(stage))},
                     {"prompt", prompt},
                     {"response", response},
                     {"ok", ok},
                     {"latency_ms", latency_ms}};
    if (!user_id.empty()) j["user_id"] = user_id;
    if (!day.empty()) j["day"] = day;
    return j;
}

TranscriptEntry TranscriptEntry::from_json(const nlohmann::json& j) {
    TranscriptEntry e;
    e.call_id = j.value("call_id", 0L);
    e.attempt = j.value("attempt", 1);
    auto stage = stage_from_name(j.at("stage_id").get<std::string>());
    if (!stage) throw ConfigError("transcript entry with unknown stage_id");
    e.stage = *stage;
    e.prompt = j.value("prompt", "");
    e.response = j.value("response", "");
    e.ok = j.value("ok", true);
    e.latency_ms = j.value("latency_ms", 0.0);
    e.user_id = j.value("user_id", "");
    e.day = j.value("day", "");
    return e;
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

Gateway::Gateway(BackendConfig cfg, PromptRegistry registry)
    : Gateway(std::move(cfg), std::move(registry), nullptr) {
    backend_ = make_backend(cfg_);
}

Gateway::Gateway(BackendConfig cfg, PromptRegistry registry, std::unique_ptr<Backend> backend)
    : cfg_(std::move(cfg)), registry_(std::move(registry)), backend_(std::move(backend)) {
    if (cfg_.max_concurrency < 1) throw ConfigError("max_concurrency must be >= 1");
    if (cfg_.retry.max_attempts < 1) throw ConfigError("retry attempts must be >= 1");
}

void Gateway::bind_stage_backend(Stage stage, const BackendConfig& cfg) {
    stage_backends_[static_cast<int>(stage)] = {cfg, make_backend(cfg)};
}

std::string Gateway::invoke_once(Stage stage, const std::string& prompt, std::int64_t call_id,
                                 int attempt, const CallContext& ctx) {
    const BackendConfig* use_cfg = &cfg_;
    Backend* use_backend = backend_.get();
    if (auto it = stage_backends_.find(static_cast<int>(stage)); it != stage_backends_.end()) {
        use_cfg = &it->second.first;
        use_backend = it->second.second.get();
    }
    BackendRequest req;
    req.stage = stage;
    req.prompt = prompt;
    req.model = use_cfg->model;
    req.max_tokens = use_cfg->max_tokens;
    req.temperature =
        use_cfg->temperature ? *use_cfg->temperature : registry_.at(stage).default_temperature;

    {
        std::unique_lock<std::mutex> lock(sem_mu_);
        sem_cv_.wait(lock, [&] { return in_flight_ < cfg_.max_concurrency; });
        ++in_flight_;
    }
    auto t0 = std::chrono::steady_clock::now();
    std::string response;
    std::exception_ptr failure;
    try {
        response = use_backend->complete(req);
    } catch (...) {
        failure = std::current_exception();
    }
    double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
    {
        std::lock_guard<std::mutex> lock(sem_mu_);
        --in_flight_;
    }
    sem_cv_.notify_one();

    TranscriptEntry entry;
    entry.call_id = call_id;
    entry.attempt = attempt;
    entry.stage = stage;
    entry.prompt = prompt;
    entry.latency_ms = ms;
    entry.user_id = ctx.user_id;
    entry.day = ctx.day;
    if (failure) {
        entry.ok = false;
        try {
            std::rethrow_exception(failure);
        } catch (const std::exception& e) {
            entry.response = e.what();
        }
    } else {
        entry.response = response;
    }
    {
        std::lock_guard<std::mutex> lock(transcript_mu_);
        transcript_.push_back(std::move(entry));
    }
    if (failure) std::rethrow_exception(failure);
    return response;
}

std::string Gateway::call_with_retries(Stage stage, const std::string& prompt,
                                       std::int64_t call_id, int first_attempt,
                                       int* attempts_used, const CallContext& ctx) {
    int attempt = first_attempt;
    for (;;) {
        try {
            std::string out = invoke_once(stage, prompt, call_id, attempt, ctx);
            if (attempts_used) *attempts_used = attempt;
            return out;
        } catch (const BackendError& e) {
            bool more = e.retryable() && attempt - first_attempt + 1 < cfg_.retry.max_attempts;
            if (!more) {
                if (attempts_used) *attempts_used = attempt;
                throw;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.retry.backoff_ms));
            ++attempt;
        }
    }
}

std::string Gateway::complete(Stage stage, const std::map<std::string, std::string>& variables,
                              const CallContext& ctx) {
    std::string prompt = registry_.render(stage, variables);
    std::int64_t call_id;
    {
        std::lock_guard<std::mutex> lock(transcript_mu_);
        call_id = next_call_id_++;
    }
    return call_with_retries(stage, prompt, call_id, 1, nullptr, ctx);
}

StructuredResult Gateway::complete_structured(
    Stage stage, const std::map<std::string, std::string>& variables,
    const std::vector<FieldSpec>& schema, const CallContext& ctx) {
    std::string prompt = registry_.render(stage, variables);
    std::int64_t call_id;
    {
        std::lock_guard<std::mutex> lock(transcript_mu_);
        call_id = next_call_id_++;
    }

    std::vector<std::string> raw_replies;
    int attempt = 1;
    for (int ask = 0; ask < cfg_.structured_attempts; ++ask) {
        std::string ask_prompt = prompt;
        if (ask > 0) {
            ask_prompt += "\n\nYour previous reply could not be parsed. Respond with a single "
                          "JSON object containing the fields: ";
            for (size_t i = 0; i < schema.size(); ++i) {
                if (i) ask_prompt += ", ";
                ask_prompt += schema[i].name;
            }
            ask_prompt += ".";
        }
        int used = attempt;
        std::string text = call_with_retries(stage, ask_prompt, call_id, attempt, &used, ctx);
        attempt = used + 1;
        raw_replies.push_back(text);
        if (auto obj = extract_json_object(text)) {
            if (auto record = coerce_record(*obj, schema))
                return StructuredResult{std::move(*record), used};
        }
    }
    std::string msg = "stage '" + std::string(stage_name(stage)) + "': no parsable structured "
                      "output after " + std::to_string(cfg_.structured_attempts) + " attempts";
    for (const auto& raw : raw_replies) msg += "\n--- raw reply ---\n" + raw;
    throw StructuredOutputError(msg, raw_replies);
}

std::vector<TranscriptEntry> Gateway::transcript() const {
    std::lock_guard<std::mutex> lock(transcript_mu_);
    return transcript_;
}

void Gateway::clear_transcript() {
    std::lock_guard<std::mutex> lock(transcript_mu_);
    transcript_.clear();
}

void Gateway::write_transcript_jsonl(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write transcript: " + path);
    std::lock_guard<std::mutex> lock(transcript_mu_);
    for (const auto& e : transcript_) out << e.to_json().dump() << '\n';
}

// ---------------------------------------------------------------------------
// Structured-output parsing
// ---------------------------------------------------------------------------

std::optional<nlohmann::json> extract_json_object(const std::string& text) {
    for (size_t start = 0; start < text.size(); ++start) {
        if (text[start] != '{') continue;
        int depth = 0;
        bool in_string = false;
        for (size_t i = start; i < text.size(); ++i) {
            char c = text[i];
            if (in_string) {
                if (c == '\\') ++i;
                else if (c == '"') in_string = false;
            } else if (c == '"') {
                in_string = true;
            } else if (c == '{') {
                ++depth;
            } else if (c == '}') {
                if (--depth == 0) {
                    try {
                        return nlohmann::json::parse(text.substr(start, i - start + 1));
                    } catch (const std::exception&) {
                        break;  // resume scanning after this '{'
                    }
                }
            }
        }
    }
    return std::nullopt;
}

std::optional<nlohmann::json> coerce_record(const nlohmann::json& obj,
                                            const std::vector<FieldSpec>& schema) {
    if (!obj.is_object()) return std::nullopt;
    nlohmann::json out = nlohmann::json::object();
    for (const auto& field : schema) {
        if (!obj.contains(field.name)) return std::nullopt;
        const auto& v = obj[field.name];
        switch (field.kind) {
            case FieldKind::text:
                if (v.is_string()) out[field.name] = v;
                else out[field.name] = v.dump();
                break;
            case FieldKind::integer:
                if (v.is_number_integer()) {
                    out[field.name] = v;
                } else if (v.is_number_float()) {
                    out[field.name] = static_cast<long long>(std::llround(v.get<double>()));
                } else if (v.is_string()) {
                    try {
                        out[field.name] = std::stoll(v.get<std::string>());
                    } catch (const std::exception&) {
                        return std::nullopt;
                    }
                } else {
                    return std::nullopt;
                }
                break;
            case FieldKind::real:
                if (v.is_number()) {
                    out[field.name] = v.get<double>();
                } else if (v.is_string()) {
                    try {
                        out[field.name] = std::stod(v.get<std::string>());
                    } catch (const std::exception&) {
                        return std::nullopt;
                    }
                } else {
                    return std::nullopt;
                }
                break;
            case FieldKind::list:
                if (!v.is_array()) return std::nullopt;
                out[field.name] = v;
                break;
            case FieldKind::object:
                if (!v.is_object()) return std::nullopt;
                out[field.name] = v;
                break;
        }
    }
    return out;
}

}  // namespace cams::llm
