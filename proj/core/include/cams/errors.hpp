#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cams {

// Base class for all errors raised by the library. Subclasses carry the
// failing subsystem in the type and human-readable context in what().
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input file. Carries file, line (1-based, 0 = whole file) and the
// offending field so callers can point at the exact cell.
class IngestError : public Error {
public:
    IngestError(std::string file, long line, std::string field, const std::string& msg)
        : Error(file + ":" + std::to_string(line) + " field '" + field + "': " + msg),
          file_(std::move(file)), line_(line), field_(std::move(field)) {}

    const std::string& file() const { return file_; }
    long line() const { return line_; }
    const std::string& field() const { return field_; }

private:
    std::string file_;
    long line_;
    std::string field_;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

// A representation or operation the current data cannot support (e.g. a
// road-relative address with no road graph).
class UnsupportedError : public Error {
public:
    using Error::Error;
};

// Prompt template problems: unknown stage, missing placeholder value.
class TemplateError : public Error {
public:
    using Error::Error;
};

// Backend transport failure after all retries; carries the last status code
// (HTTP status, or -1 for non-HTTP failures such as an exhausted script).
class BackendError : public Error {
public:
    BackendError(const std::string& msg, int last_status = -1, bool retryable = true)
        : Error(msg), last_status_(last_status), retryable_(retryable) {}

    int last_status() const { return last_status_; }
    bool retryable() const { return retryable_; }

private:
    int last_status_;
    bool retryable_;
};

// Structured output could not be parsed after all re-asks. Keeps every raw
// reply so the caller can log or inspect them.
class StructuredOutputError : public Error {
public:
    StructuredOutputError(const std::string& msg, std::vector<std::string> raw_replies)
        : Error(msg), raw_replies_(std::move(raw_replies)) {}

    const std::vector<std::string>& raw_replies() const { return raw_replies_; }

private:
    std::vector<std::string> raw_replies_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// A pipeline stage was invoked before the stage it depends on; names the
// missing artifact path.
class DependencyError : public Error {
public:
    DependencyError(const std::string& stage, const std::string& missing_artifact)
        : Error("stage '" + stage + "' requires missing artifact: " + missing_artifact),
          missing_artifact_(missing_artifact) {}

    const std::string& missing_artifact() const { return missing_artifact_; }

private:
    std::string missing_artifact_;
};

}  // namespace cams
