#include "cfrag/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "cfrag/error.hpp"

namespace cfrag {

namespace fs = std::filesystem;

void read_jsonl(const fs::path& path, const std::function<void(const Json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json record;
    try {
      record = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(path.string(), line_no, std::string("malformed record: ") + e.what());
    }
    if (!record.is_object()) throw ParseError(path.string(), line_no, "record is not an object");
    fn(record, line_no);
  }
}

namespace {

void write_atomically(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

void write_jsonl(const fs::path& path, const std::vector<Json>& records) {
  std::string buffer;
  for (const auto& r : records) {
    buffer += r.dump();
    buffer += '\n';
  }
  write_atomically(path, buffer);
}

void write_text(const fs::path& path, std::string_view text) {
  write_atomically(path, std::string(text));
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw ParseError(path.string(), 0, e.what());
  }
}

void write_json(const fs::path& path, const Json& value) { write_atomically(path, value.dump(2) + "\n"); }

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string require_string(const Json& record, const char* field, const std::string& file,
                           std::size_t line) {
  auto it = record.find(field);
  if (it == record.end()) throw ParseError(file, line, std::string("missing field '") + field + "'");
  if (!it->is_string())
    throw ParseError(file, line, std::string("field '") + field + "' is not a string");
  return it->get<std::string>();
}

}  // namespace cfrag
