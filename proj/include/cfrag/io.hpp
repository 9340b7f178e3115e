#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace cfrag {

using Json = nlohmann::json;

/// Calls `fn(record, line_number)` for every non-blank line of a line-delimited JSON file.
/// Malformed lines raise ParseError carrying the 1-based line number.
void read_jsonl(const std::filesystem::path& path,
                const std::function<void(const Json&, std::size_t)>& fn);

/// Writes records one per line. The file is written to a sibling temporary and renamed into place.
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& value);

/// 64-bit FNV-1a. Stable across platforms and releases; used for id-map hashes and seed derivation.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Lower-case hex rendering of a 64-bit value, zero padded to 16 characters.
std::string hex64(std::uint64_t value);

/// Fetches a required field of the given JSON type, raising ParseError on absence or mismatch.
std::string require_string(const Json& record, const char* field, const std::string& file,
                           std::size_t line);

}  // namespace cfrag
