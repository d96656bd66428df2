#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "phasedeploy/deployment.hpp"
#include "phasedeploy/verification.hpp"

namespace phasedeploy::metrics {

struct LearningCurve {
  std::vector<std::int64_t> steps;
  std::vector<double> success;
  std::optional<std::vector<double>> consec;

  // Steps strictly increasing, success in [0, 1], matching lengths.
  void validate() const;
  static LearningCurve from_record(const deployment::RunRecord& record);
};

// Maximum of the normalized consecutive-success trace. UsageError without one.
double consec_max(const LearningCurve& curve);

// Trapezoidal area of `values` over [from, steps.back()] divided by that
// span; the curve is linearly interpolated at `from`. A single point (or a
// zero span) returns the last value.
double normalized_auc(std::span<const std::int64_t> steps, std::span<const double> values, double from);

struct TailMetrics {
  double recomputed_final = 0.0;
  double last5_mean = 0.0;
  double tail_auc = 0.0;
  double full_auc = 0.0;
};

// UsageError with fewer than five evaluation points or a fraction outside (0, 1].
TailMetrics tail_metrics(const LearningCurve& curve, double tail_fraction = 0.2);

// best >= tau_best and last5 <= tau_tail. UsageError unless both thresholds are in (0, 1).
bool collapse_indicator(double best, double last5, double tau_best, double tau_tail);

// Fraction of adjacent pairs whose winners differ. UsageError with < 2 winners.
double winner_flip_rate(std::span<const std::string> winners);
// Same over the profile's modal winners at horizon L.
double winner_flip_rate(const verification::PhaseProfile& profile, int L);

struct PoolMetrics {
  int top1_hit = 0;
  int hit_at_3 = 0;
  double spearman_rho = 0.0;
};

// Scores keyed by candidate id; higher is better, ties ranked by smaller id.
// UsageError on mismatched rosters or fewer than three candidates.
PoolMetrics pool_metrics(std::span<const verification::CandidateScore> local,
                         std::span<const verification::CandidateScore> downstream);

// Ids ordered best first (score descending, id ascending on ties).
std::vector<std::string> ranking(std::span<const verification::CandidateScore> scores);

struct MetricConfig {
  double tau_best = 0.3;
  double tau_tail = 0.05;
  double tail_fraction = 0.2;
};

struct MetricRow {
  std::string method;
  std::uint64_t seed = 0;
  double consec_max = 0.0;
  double consec_auc = 0.0;
  double full_auc = 0.0;
  double tail_auc = 0.0;
  double recomputed_final = 0.0;
  double last5_mean = 0.0;
  double best_checkpoint_success = 0.0;
  bool collapse = false;
  double critic_peak_abs = 0.0;
  double reward_shift = 0.0;  // largest |mean reward shift| over switch events
};

MetricRow metric_row(const std::string& method, const deployment::RunRecord& record, const MetricConfig& config);

}  // namespace phasedeploy::metrics
