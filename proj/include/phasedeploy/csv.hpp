#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace phasedeploy::csv {

// Stamped into every emitted file as a leading `# key=value ...` comment.
struct Provenance {
  std::string source_manifest;  // hex hash of the manifest that produced the file
  std::string tool_version;
  std::uint64_t root_seed = 0;

  std::string comment() const;
  bool operator==(const Provenance&) const = default;
};

struct Table {
  std::vector<std::string> comments;  // without the leading "# "
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index or UsageError naming the missing column.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
};

// Shortest round-trip decimal; "nan"/"inf" spelled out.
std::string fmt(double x);
std::string fmt(std::int64_t x);
std::string fmt(std::uint64_t x);
std::string fmt(int x);
std::string fmt(bool x);

// Fields holding commas, quotes, or newlines are quoted.
std::string to_string(const Table& table);
Table parse(std::string_view text);

void write_file(const std::string& path, const Table& table);
Table read_file(const std::string& path);

// Builds a table whose first comment is the provenance line and whose last
// column is evidence_status (filled with `status` on every row).
class Writer {
 public:
  Writer(Provenance provenance, std::vector<std::string> header, std::string status);
  Writer& row(std::vector<std::string> fields);
  // Row whose evidence_status differs from the table default (failed cells).
  Writer& row(std::vector<std::string> fields, const std::string& status);
  // Extra `# key=value` comment after the provenance line.
  Writer& comment(std::string text);
  const Table& table() const { return table_; }
  void save(const std::string& path) const { write_file(path, table_); }

 private:
  Table table_;
  std::string status_;
};

// Parses the `# source_manifest=... tool_version=... root_seed=...` comment;
// false when absent or malformed.
bool parse_provenance(const Table& table, Provenance& out);

}  // namespace phasedeploy::csv
