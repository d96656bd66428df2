#pragma once

#include <string>
#include <vector>

namespace phasedeploy::audit {

// File name of the selection record that held-out test outputs point to.
inline constexpr const char* kSelectionFile = "selection_manifest.csv";

struct Violation {
  std::string file;  // relative to the audited directory
  std::string rule;  // missing_provenance | missing_status | mixed_status | test_without_selection | unreadable
  std::string detail;
  bool operator==(const Violation&) const = default;
};

// Report-only scan of every *.csv under `output_dir` (sorted by path).
//  - each file carries a provenance comment and an evidence_status column
//  - no aggregate table (comment kind=aggregate) mixes evidence statuses
//    across its rows; per-seed tables may, since each row is tagged
//  - rows with split=test need a `selection=<hex>` comment matching the
//    selection_fingerprint of a selection_manifest.csv in the same directory
std::vector<Violation> check_artifact_discipline(const std::string& output_dir);

}  // namespace phasedeploy::audit
