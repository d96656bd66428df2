#include "phasedeploy/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "phasedeploy/error.hpp"

namespace phasedeploy::csv {

std::string Provenance::comment() const {
  return "source_manifest=" + source_manifest + " tool_version=" + tool_version +
         " root_seed=" + std::to_string(root_seed);
}

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw UsageError("csv: missing column '" + std::string(name) + "'");
}

bool Table::has_column(std::string_view name) const {
  for (const auto& h : header) {
    if (h == name) return true;
  }
  return false;
}

std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (x == 0.0) return "0";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}
std::string fmt(std::int64_t x) { return std::to_string(x); }
std::string fmt(std::uint64_t x) { return std::to_string(x); }
std::string fmt(int x) { return std::to_string(x); }
std::string fmt(bool x) { return x ? "1" : "0"; }

namespace {

std::string quote(const std::string& f) {
  if (f.find_first_of(",\"\n\r") == std::string::npos) return f;
  std::string out = "\"";
  for (char c : f) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_quotes) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        in_quotes = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (in_quotes) throw ConfigError("csv: unterminated quote on line " + std::to_string(line_no));
  out.push_back(std::move(cur));
  return out;
}

}  // namespace

std::string to_string(const Table& table) {
  std::string out;
  for (const auto& c : table.comments) out += "# " + c + "\n";
  auto emit = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out += ',';
      out += quote(fields[i]);
    }
    out += '\n';
  };
  emit(table.header);
  for (const auto& r : table.rows) emit(r);
  return out;
}

Table parse(std::string_view text) {
  Table t;
  bool have_header = false;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!have_header && line.front() == '#') {
      line.remove_prefix(1);
      if (!line.empty() && line.front() == ' ') line.remove_prefix(1);
      t.comments.emplace_back(line);
      continue;
    }
    std::vector<std::string> fields = split_line(line, line_no);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw ConfigError("csv: line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                        " fields, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  if (!have_header) throw ConfigError("csv: no header row");
  return t;
}

void write_file(const std::string& path, const Table& table) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path);
  f << to_string(table);
  if (!f) throw ConfigError("write failed for " + path);
}

Table read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

Writer::Writer(Provenance provenance, std::vector<std::string> header, std::string status)
    : status_(std::move(status)) {
  table_.comments.push_back(provenance.comment());
  table_.header = std::move(header);
  table_.header.emplace_back("evidence_status");
}

Writer& Writer::row(std::vector<std::string> fields) { return row(std::move(fields), status_); }

Writer& Writer::row(std::vector<std::string> fields, const std::string& status) {
  if (fields.size() + 1 != table_.header.size()) {
    throw UsageError("csv row has " + std::to_string(fields.size()) + " fields, expected " +
                     std::to_string(table_.header.size() - 1));
  }
  fields.push_back(status);
  table_.rows.push_back(std::move(fields));
  return *this;
}

Writer& Writer::comment(std::string text) {
  table_.comments.push_back(std::move(text));
  return *this;
}

bool parse_provenance(const Table& table, Provenance& out) {
  for (const auto& c : table.comments) {
    std::istringstream in(c);
    std::string tok;
    Provenance p;
    int seen = 0;
    while (in >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
      if (key == "source_manifest") {
        p.source_manifest = value;
        seen |= 1;
      } else if (key == "tool_version") {
        p.tool_version = value;
        seen |= 2;
      } else if (key == "root_seed") {
        const auto r = std::from_chars(value.data(), value.data() + value.size(), p.root_seed);
        if (r.ec != std::errc{} || r.ptr != value.data() + value.size()) return false;
        seen |= 4;
      }
    }
    if (seen == 7 && !p.source_manifest.empty()) {
      out = p;
      return true;
    }
  }
  return false;
}

}  // namespace phasedeploy::csv
