#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "echoflow/error.hpp"

namespace echoflow {

// Minimal comma-separated reader for the plain (unquoted) tables this project
// writes. Empty cells are preserved.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t begin = 0;
  while (true) {
    const auto comma = line.find(',', begin);
    cells.emplace_back(line.substr(begin, comma == std::string_view::npos ? std::string_view::npos : comma - begin));
    if (comma == std::string_view::npos) break;
    begin = comma + 1;
  }
  return cells;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    fail(ErrorCode::invalid_argument, "CSV is missing column '" + std::string(name) + "'");
  }
};

inline CsvTable parse_csv(std::istream& in, const std::string& what) {
  CsvTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (table.header.empty()) {
      table.header = std::move(cells);
      continue;
    }
    require(cells.size() == table.header.size(), ErrorCode::invalid_argument,
            what + " line " + std::to_string(lineno) + ": expected " + std::to_string(table.header.size()) +
                " cells, got " + std::to_string(cells.size()));
    table.rows.push_back(std::move(cells));
  }
  require(!table.header.empty(), ErrorCode::invalid_argument, what + " is empty");
  return table;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path);
  return parse_csv(in, path);
}

enum class Split { unassigned, train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: return "";
  }
  return "";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s.empty()) return Split::unassigned;
  fail(ErrorCode::invalid_argument, "unknown split '" + std::string(s) + "'");
}

struct ManifestRow {
  std::string scan_id;
  std::string patient_id;
  std::string video_path;
  std::string flow_path;
  int label = 0;
  Split split = Split::unassigned;
};

inline constexpr std::string_view kManifestHeader = "scan_id,patient_id,video_path,flow_path,label,split";

struct Manifest {
  std::vector<ManifestRow> rows;
  std::filesystem::path base_dir;  // relative paths resolve against this

  std::string resolve(const std::string& p) const {
    if (p.empty()) return p;
    const std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? p : (base_dir / path).string();
  }

  std::vector<const ManifestRow*> in_split(Split s) const {
    std::vector<const ManifestRow*> out;
    for (const auto& r : rows)
      if (r.split == s) out.push_back(&r);
    return out;
  }
};

// scan_id unique; each patient in exactly one split with one label.
inline void validate(const Manifest& m) {
  std::set<std::string> scans;
  std::map<std::string, std::pair<Split, int>> patients;
  for (const auto& r : m.rows) {
    require(!r.scan_id.empty(), ErrorCode::invalid_argument, "manifest row with empty scan_id");
    require(scans.insert(r.scan_id).second, ErrorCode::invalid_argument, "duplicate scan_id '" + r.scan_id + "'");
    require(r.label == 0 || r.label == 1, ErrorCode::invalid_argument, "label must be 0 or 1 for " + r.scan_id);
    auto [it, fresh] = patients.emplace(r.patient_id, std::make_pair(r.split, r.label));
    if (!fresh) {
      require(it->second.first == r.split, ErrorCode::invalid_argument,
              "patient '" + r.patient_id + "' appears in more than one split");
      require(it->second.second == r.label, ErrorCode::invalid_argument,
              "patient '" + r.patient_id + "' has conflicting labels");
    }
  }
}

inline Manifest parse_manifest(std::istream& in, const std::string& what = "manifest") {
  const auto table = parse_csv(in, what);
  std::ostringstream hdr;
  for (std::size_t i = 0; i < table.header.size(); ++i) hdr << (i ? "," : "") << table.header[i];
  require(hdr.str() == kManifestHeader, ErrorCode::invalid_argument,
          what + ": header must be '" + std::string(kManifestHeader) + "'");
  Manifest m;
  for (const auto& c : table.rows) {
    require(c[4] == "0" || c[4] == "1", ErrorCode::invalid_argument, what + ": bad label '" + c[4] + "'");
    m.rows.push_back({c[0], c[1], c[2], c[3], c[4] == "1" ? 1 : 0, parse_split(c[5])});
  }
  validate(m);
  return m;
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open manifest " + path);
  Manifest m = parse_manifest(in, path);
  m.base_dir = std::filesystem::path(path).parent_path();
  return m;
}

inline std::string format_manifest(const Manifest& m) {
  std::string out(kManifestHeader);
  out += '\n';
  for (const auto& r : m.rows) {
    out += r.scan_id + ',' + r.patient_id + ',' + r.video_path + ',' + r.flow_path + ',' + std::to_string(r.label) +
           ',' + std::string(to_string(r.split)) + '\n';
  }
  return out;
}

inline void write_manifest(const std::string& path, const Manifest& m) {
  validate(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write manifest " + path);
  out << format_manifest(m);
}

}  // namespace echoflow
