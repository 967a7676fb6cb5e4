#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cams {

// Case-fold (ASCII) and collapse whitespace runs to a single space, trimming
// the ends. Non-ASCII bytes pass through unchanged. This is the matching rule
// behind every toponym/name comparison in the library.
std::string normalize_name(std::string_view s);

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
bool starts_with(std::string_view s, std::string_view prefix);

// 64-bit FNV-1a. Used wherever a platform-stable hash is required (feature
// hashing, config fingerprints); std::hash is not stable across libraries.
std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 14695981039346656037ULL);

std::string to_hex(std::uint64_t v);

// ${NAME} -> getenv(NAME), unknown variables left untouched.
std::string interpolate_env(const std::string& s);

}  // namespace cams
