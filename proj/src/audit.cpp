#include "phasedeploy/audit.hpp"

#include <algorithm>
#include <filesystem>
#include <set>

#include "phasedeploy/csv.hpp"
#include "phasedeploy/error.hpp"

namespace phasedeploy::audit {

namespace fs = std::filesystem;

namespace {

// Value of `key=` in any comment token, or empty.
std::string comment_value(const csv::Table& t, const std::string& key) {
  const std::string prefix = key + "=";
  for (const auto& c : t.comments) {
    std::size_t pos = 0;
    while (pos < c.size()) {
      const auto end = c.find(' ', pos);
      const std::string tok = c.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
      if (tok.rfind(prefix, 0) == 0) return tok.substr(prefix.size());
      if (end == std::string::npos) break;
      pos = end + 1;
    }
  }
  return {};
}

}  // namespace

std::vector<Violation> check_artifact_discipline(const std::string& output_dir) {
  std::vector<Violation> out;
  if (!fs::is_directory(output_dir)) return out;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(output_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    const std::string rel = fs::relative(path, output_dir).generic_string();
    csv::Table t;
    try {
      t = csv::read_file(path.string());
    } catch (const Error& e) {
      out.push_back({rel, "unreadable", e.what()});
      continue;
    }
    csv::Provenance p;
    if (!csv::parse_provenance(t, p) || p.source_manifest.empty()) {
      out.push_back({rel, "missing_provenance", "no source_manifest/tool_version/root_seed comment"});
    }
    if (!t.has_column("evidence_status")) {
      out.push_back({rel, "missing_status", "no evidence_status column"});
    } else if (comment_value(t, "kind") == "aggregate") {
      const auto c = t.column("evidence_status");
      std::set<std::string> statuses;
      for (const auto& r : t.rows) statuses.insert(r[c]);
      if (statuses.size() > 1) {
        std::string list;
        for (const auto& s : statuses) list += (list.empty() ? "" : ",") + s;
        out.push_back({rel, "mixed_status", "aggregate mixes evidence statuses " + list});
      }
    }
    if (t.has_column("split")) {
      const auto c = t.column("split");
      const bool has_test = std::any_of(t.rows.begin(), t.rows.end(), [&](const auto& r) { return r[c] == "test"; });
      if (has_test) {
        const std::string ref = comment_value(t, "selection");
        const fs::path sel = path.parent_path() / kSelectionFile;
        std::string found;
        if (fs::exists(sel)) {
          try {
            found = comment_value(csv::read_file(sel.string()), "selection_fingerprint");
          } catch (const Error&) {
          }
        }
        if (ref.empty() || found.empty() || ref != found) {
          out.push_back({rel, "test_without_selection",
                         ref.empty() ? "test rows carry no selection reference"
                                     : "selection " + ref + " does not match " + std::string(kSelectionFile)});
        }
      }
    }
  }
  return out;
}

}  // namespace phasedeploy::audit
