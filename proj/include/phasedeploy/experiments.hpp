#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "phasedeploy/csv.hpp"
#include "phasedeploy/deployment.hpp"
#include "phasedeploy/manifest.hpp"
#include "phasedeploy/metrics.hpp"
#include "phasedeploy/stats.hpp"
#include "phasedeploy/verification.hpp"

namespace phasedeploy::experiments {

inline constexpr const char* kToolVersion = "phasedeploy-0.1.0";

struct Context {
  std::string out_dir = ".";
  // XORed into every manifest seed (probe, run, dev, test). 0 keeps them as written.
  std::uint64_t root_seed = 0;
  int threads = 1;
};

csv::Provenance provenance(const manifest::ExperimentManifest& m, const Context& ctx);

// Method x seed set frozen before any cell runs. admit() rejects anything
// outside it with ProtocolViolation.
class LockedSet {
 public:
  LockedSet(std::vector<std::string> methods, std::vector<std::uint64_t> seeds);
  std::uint64_t hash() const { return hash_; }
  void admit(const std::string& method, std::uint64_t seed) const;
  const std::vector<std::string>& methods() const { return methods_; }
  const std::vector<std::uint64_t>& seeds() const { return seeds_; }

 private:
  std::vector<std::string> methods_;
  std::vector<std::uint64_t> seeds_;
  std::uint64_t hash_ = 0;
};

struct CellOutcome {
  std::string method;
  std::uint64_t seed = 0;  // as written in the manifest
  bool ok = true;
  std::string error;
  deployment::RunRecord record;
  metrics::MetricRow row;
};

struct LockedResult {
  std::uint64_t freeze_hash = 0;
  std::optional<deployment::DeploymentPlan> plan;
  std::vector<CellOutcome> cells;                  // method-major, manifest order
  std::vector<stats::MethodAggregate> final_aggregates;
  std::vector<stats::PairedTestResult> final_paired;  // every method pair i < j, a minus b
};

// Runs every (method, seed) cell. Profile methods first build the probe
// profile. Writes locked_per_seed.csv, locked_curves.csv, locked_matrix.csv,
// locked_aggregate.csv, locked_paired.csv.
LockedResult run_locked_comparison(const manifest::ExperimentManifest& m, const Context& ctx);

// One method over the manifest seeds; train_per_seed.csv and train_curves.csv.
std::vector<CellOutcome> run_train(const manifest::ExperimentManifest& m, const Context& ctx,
                                   const std::string& method);

struct GridResult {
  verification::ProfileRun run;
  deployment::DeploymentPlan plan;
};

// Probe training, checkpoints/probe_t<t>.ckpt, fork grid, verdicts.
// Writes verify_forks.csv, verify_verdicts.csv, first_reliable.csv.
GridResult run_verification_grid(const manifest::ExperimentManifest& m, const Context& ctx);

// Grid plus plan.csv and, for two-stage plans, switch_operators.csv over the
// manifest's operator list.
struct ProfileResult {
  GridResult grid;
  std::vector<CellOutcome> operator_cells;  // method = operator name
};
ProfileResult run_profile(const manifest::ExperimentManifest& m, const Context& ctx);

struct SelectorOutcome {
  CellOutcome cell;  // method = selector id
  deployment::FailureLabel label = deployment::FailureLabel::kNoFailure;
};
// selectors.csv and selectors_summary.csv. Needs probes (failure labels are
// judged against the probe profile and its plan).
std::vector<SelectorOutcome> run_selectors(const manifest::ExperimentManifest& m, const Context& ctx);

struct PoolRow {
  int K = 0;
  metrics::PoolMetrics metrics;
  std::int64_t overhead_steps = 0;
  std::string local_winner;
  std::string downstream_best;
  bool flagged = false;  // top1_hit rose with K
};
// pool_stress.csv. The pool must hold at least max(pool.k) candidates.
std::vector<PoolRow> run_pool_stress(const manifest::ExperimentManifest& m, const Context& ctx);

struct HeldoutResult {
  deployment::SelectionManifest selection;
  std::vector<CellOutcome> dev;
  std::vector<CellOutcome> test;
};
// Dev runs of every method, selection (selection_manifest.csv), then the
// selected rule on the test seeds (heldout_runs.csv).
HeldoutResult run_heldout(const manifest::ExperimentManifest& m, const Context& ctx);

// Test-seed runs of `rule` only. Reads selection_manifest.csv from out_dir
// and throws ProtocolViolation when it is missing, belongs to another
// manifest, or selected a different rule.
std::vector<CellOutcome> run_test_split(const manifest::ExperimentManifest& m, const Context& ctx,
                                        const std::string& rule);

struct StatCheck {
  std::string name;
  double expected = 0.0;
  double actual = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};
// Recomputes the embedded published statistics. Writes paper_aggregates.csv,
// paper_paired.csv, paper_checks.csv.
std::vector<StatCheck> reproduce_paper_stats(const Context& ctx);

// Aggregates and paired tests of one metric column of a per-seed CSV (ok rows
// only). Writes stats_aggregates.csv and stats_paired.csv.
struct StatsResult {
  std::vector<stats::MethodAggregate> aggregates;
  std::vector<stats::PairedTestResult> paired;
};
StatsResult run_stats(const std::string& per_seed_csv, const std::string& metric, const Context& ctx);

// SVGs for whichever of locked_curves.csv / train_curves.csv /
// verify_verdicts.csv exist in out_dir. UsageError when none do.
std::vector<std::string> emit_plots(const Context& ctx);

}  // namespace phasedeploy::experiments
