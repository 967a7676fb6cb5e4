#pragma once

#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cams::llm {

enum class Stage {
    c1_compress,
    c2_compress,
    r1_reconstruct,
    r2_reconstruct,
    retrieve_similar,
    fuse_c1,
    gen_description,
    fuse_c2,
    region_reason,
    region_execute,
    region_reflect,
    mapper_candidates,
    plan_day,
    synthesize_traj,
    judge_quality,
};

inline constexpr int kStageCount = 15;

std::string_view stage_name(Stage s);
std::optional<Stage> stage_from_name(std::string_view name);

enum class OutputKind { free_text, structured };

struct PromptTemplate {
    Stage stage;
    std::string text;                        // placeholders spelled {name}
    std::vector<std::string> placeholders;   // declared variable schema
    OutputKind output = OutputKind::free_text;
    double default_temperature = 0.7;
};

// Versioned prompt-stage registry. Built-in templates ship with the library;
// a directory of <stage>.txt files can override any subset.
class PromptRegistry {
public:
    static PromptRegistry builtin();
    // Overrides templates from dir (files named "<stage_name>.txt"); the
    // placeholder schema of an override must match the built-in schema.
    void load_overrides(const std::string& dir);

    const PromptTemplate& at(Stage s) const;
    std::string render(Stage s, const std::map<std::string, std::string>& variables) const;

private:
    std::map<Stage, PromptTemplate> templates_;
};

// Extracts {name} placeholders from a template body ({{ escapes a brace).
std::vector<std::string> extract_placeholders(const std::string& text);

struct RetryPolicy {
    int max_attempts = 3;
    int backoff_ms = 100;
};

enum class BackendKind { http_openai_compatible, scripted };

struct BackendConfig {
    BackendKind kind = BackendKind::scripted;
    std::string endpoint;           // full URL of the chat-completions route
    std::string model = "default";
    std::string api_key_env;        // name of the env var holding the key
    std::optional<double> temperature;  // overrides per-stage defaults when set
    int max_tokens = 1024;
    int max_concurrency = 4;
    RetryPolicy retry;
    std::string script_file;        // scripted backend only
    int structured_attempts = 2;    // parse re-asks per structured call
};

struct BackendRequest {
    Stage stage;
    std::string prompt;
    double temperature = 0.7;
    int max_tokens = 1024;
    std::string model;
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string complete(const BackendRequest& req) = 0;
};

// Deterministic offline backend: replies keyed by (stage, call ordinal).
// An entry with ordinal -1 is the stage's fallback for ordinals that have no
// exact entry; without a fallback, running past the script raises a
// non-retryable BackendError.
class ScriptedBackend : public Backend {
public:
    struct Entry {
        Stage stage;
        int ordinal = -1;  // -1 = default reply for the stage
        std::string response;
    };

    explicit ScriptedBackend(std::vector<Entry> entries);
    static std::unique_ptr<ScriptedBackend> from_file(const std::string& path);

    std::string complete(const BackendRequest& req) override;
    int calls_for(Stage s) const;

private:
    std::map<std::pair<int, int>, std::string> exact_;
    std::map<int, std::string> defaults_;
    mutable std::mutex mu_;
    std::map<int, int> counters_;
};

// OpenAI-compatible chat-completions client.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(const BackendConfig& cfg);
    std::string complete(const BackendRequest& req) override;

private:
    std::string scheme_host_;
    std::string path_;
    std::string api_key_;
    int timeout_s_ = 60;
};

std::unique_ptr<Backend> make_backend(const BackendConfig& cfg);

struct TranscriptEntry {
    std::int64_t call_id = 0;  // shared by all attempts of one logical call
    int attempt = 1;
    Stage stage = Stage::c1_compress;
    std::string prompt;
    std::string response;  // error text when ok == false
    bool ok = true;
    double latency_ms = 0.0;
    // Optional join keys for downstream preference-data construction.
    std::string user_id;
    std::string day;

    nlohmann::json to_json() const;
    static TranscriptEntry from_json(const nlohmann::json& j);
};

// Tags propagated into transcript entries.
struct CallContext {
    std::string user_id;
    std::string day;
};

enum class FieldKind { text, integer, real, list, object };

struct FieldSpec {
    std::string name;
    FieldKind kind = FieldKind::text;
};

struct StructuredResult {
    nlohmann::json record;
    int attempts = 1;
};

// Thread-safe front door to the configured backend: renders prompt-stage
// templates, enforces the concurrency cap, retries transport failures,
// re-asks on unparsable structured output and logs every attempt.
class Gateway {
public:
    Gateway(BackendConfig cfg, PromptRegistry registry);
    Gateway(BackendConfig cfg, PromptRegistry registry, std::unique_ptr<Backend> backend);

    // Routes one stage to a dedicated backend (e.g. a separate judge model);
    // other stages keep the default.
    void bind_stage_backend(Stage stage, const BackendConfig& cfg);

    std::string complete(Stage stage, const std::map<std::string, std::string>& variables,
                         const CallContext& ctx = {});
    StructuredResult complete_structured(Stage stage,
                                         const std::map<std::string, std::string>& variables,
                                         const std::vector<FieldSpec>& schema,
                                         const CallContext& ctx = {});

    std::vector<TranscriptEntry> transcript() const;
    void clear_transcript();
    void write_transcript_jsonl(const std::string& path) const;
    const BackendConfig& config() const { return cfg_; }
    const PromptRegistry& registry() const { return registry_; }

private:
    std::string invoke_once(Stage stage, const std::string& prompt, std::int64_t call_id,
                            int attempt, const CallContext& ctx);
    std::string call_with_retries(Stage stage, const std::string& prompt, std::int64_t call_id,
                                  int first_attempt, int* attempts_used, const CallContext& ctx);

    BackendConfig cfg_;
    PromptRegistry registry_;
    std::unique_ptr<Backend> backend_;
    std::map<int, std::pair<BackendConfig, std::unique_ptr<Backend>>> stage_backends_;

    mutable std::mutex transcript_mu_;
    std::vector<TranscriptEntry> transcript_;
    std::int64_t next_call_id_ = 1;

    // Counting semaphore over outstanding backend requests.
    std::mutex sem_mu_;
    std::condition_variable sem_cv_;
    int in_flight_ = 0;
};

// Finds the first balanced JSON object embedded in free text; nullopt when
// none parses.
std::optional<nlohmann::json> extract_json_object(const std::string& text);

// Validates (leniently coercing) a parsed object against the schema.
std::optional<nlohmann::json> coerce_record(const nlohmann::json& obj,
                                            const std::vector<FieldSpec>& schema);

}  // namespace cams::llm
