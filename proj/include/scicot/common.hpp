#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace scicot {

using json = nlohmann::json;

// Error taxonomy maps onto CLI exit codes: config -> 1, data -> 2, backend -> 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BackendError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// SHA-256 hex digest (lowercase).
std::string sha256_hex(std::string_view data);
std::string sha256_file_hex(const std::filesystem::path& path);

// Whole-file helpers.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);
// Write via temp file + rename so readers never observe a partial file.
void write_text_file_atomic(const std::filesystem::path& path, std::string_view content);

std::vector<std::string> read_lines(const std::filesystem::path& path);

// Whitespace utilities shared by cleaning, tokenization and answer extraction.
std::string trim(std::string_view s);
std::string collapse_whitespace(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);
std::string to_lower(std::string_view s);

// Case-folded, punctuation-stripped, whitespace-collapsed form used for
// matching model output against choice texts.
std::string normalize_for_match(std::string_view s);

// Seconds since epoch as double; callers that need determinism must not
// persist this into content-addressed artifacts.
double unix_time_seconds();

std::string format_percent(double fraction, int decimals = 2);

// Rejects JSON objects carrying keys outside the allowed set, so config
// typos fail loudly instead of being silently ignored.
void json_require_known_keys(const json& j, std::initializer_list<const char*> allowed,
                             const std::string& context);

}  // namespace scicot
