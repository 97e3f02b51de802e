#pragma once

// Internal helpers; not installed. Public headers stay stdlib-only.

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

namespace kcare {

using json = nlohmann::json;

/// Reads one JSON object per line, skipping blank lines. Throws IoError on
/// open failure, InvalidInput on malformed JSON (message carries line number).
std::vector<json> read_jsonl(const std::filesystem::path& path);

/// Writes one compact JSON object per line, LF endings, UTF-8.
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& doc);

/// Compact, key-sorted dump — canonical bytes for hashing and JSONL rows.
std::string canonical_dump(const json& doc);

} // namespace kcare
