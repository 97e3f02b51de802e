#include "jsonl.hpp"

#include <sstream>

#include "kcare/errors.hpp"

namespace kcare {

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) {
    fail(Errc::io, "cannot open " + path.string());
  }
  std::vector<json> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    json parsed = json::parse(line, nullptr, false);
    if (parsed.is_discarded()) {
      fail(Errc::invalid_input,
           path.string() + ":" + std::to_string(line_no) + ": malformed JSON line");
    }
    records.push_back(std::move(parsed));
  }
  return records;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
  std::ostringstream out;
  for (const auto& record : records) {
    out << record.dump() << '\n';
  }
  write_text_file(path, out.str());
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out.good()) {
    fail(Errc::io, "cannot write " + path.string());
  }
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.flush();
  if (!out.good()) {
    fail(Errc::io, "write failed: " + path.string());
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) {
    fail(Errc::io, "cannot open " + path.string());
  }
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

json read_json_file(const std::filesystem::path& path) {
  json parsed = json::parse(read_text_file(path), nullptr, false);
  if (parsed.is_discarded()) {
    fail(Errc::invalid_input, path.string() + ": malformed JSON");
  }
  return parsed;
}

void write_json_file(const std::filesystem::path& path, const json& doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

std::string canonical_dump(const json& doc) {
  // nlohmann::json objects are key-sorted maps, so dump() is already canonical.
  return doc.dump();
}

} // namespace kcare
