#include "phasedeploy/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "phasedeploy/error.hpp"
#include "phasedeploy/stats.hpp"

namespace phasedeploy::metrics {

void LearningCurve::validate() const {
  if (steps.empty()) throw UsageError("learning curve is empty");
  if (success.size() != steps.size()) throw UsageError("learning curve steps and success differ in length");
  if (consec && consec->size() != steps.size()) throw UsageError("learning curve consec trace has the wrong length");
  for (std::size_t i = 1; i < steps.size(); ++i) {
    if (steps[i] <= steps[i - 1]) throw UsageError("learning curve steps must be strictly increasing");
  }
  for (double s : success) {
    if (!(s >= 0.0 && s <= 1.0)) throw UsageError("learning curve success must lie in [0, 1]");
  }
}

LearningCurve LearningCurve::from_record(const deployment::RunRecord& record) {
  LearningCurve c;
  std::vector<double> consec;
  for (const auto& p : record.curve) {
    c.steps.push_back(p.step);
    c.success.push_back(p.success);
    consec.push_back(p.consec);
  }
  c.consec = std::move(consec);
  c.validate();
  return c;
}

double consec_max(const LearningCurve& curve) {
  if (!curve.consec || curve.consec->empty()) throw UsageError("consec_max: curve has no consecutive-success trace");
  return *std::max_element(curve.consec->begin(), curve.consec->end());
}

double normalized_auc(std::span<const std::int64_t> steps, std::span<const double> values, double from) {
  if (steps.empty() || steps.size() != values.size()) throw UsageError("normalized_auc: bad curve");
  const double last = static_cast<double>(steps.back());
  if (steps.size() == 1 || from >= last) return values.back();
  from = std::max(from, static_cast<double>(steps.front()));
  double area = 0.0;
  for (std::size_t i = 1; i < steps.size(); ++i) {
    double x0 = static_cast<double>(steps[i - 1]);
    const double x1 = static_cast<double>(steps[i]);
    if (x1 <= from) continue;
    double y0 = values[i - 1];
    const double y1 = values[i];
    if (x0 < from) {
      y0 = y0 + (y1 - y0) * (from - x0) / (x1 - x0);
      x0 = from;
    }
    area += 0.5 * (y0 + y1) * (x1 - x0);
  }
  return area / (last - from);
}

TailMetrics tail_metrics(const LearningCurve& curve, double tail_fraction) {
  curve.validate();
  if (!(tail_fraction > 0.0 && tail_fraction <= 1.0)) throw UsageError("tail fraction must be in (0, 1]");
  const std::size_t n = curve.success.size();
  if (n < 5) throw UsageError("last5_mean needs at least five evaluation points, got " + std::to_string(n));
  TailMetrics m;
  m.recomputed_final = curve.success.back();
  m.last5_mean = stats::mean(std::span(curve.success).subspan(n - 5));
  const double first = static_cast<double>(curve.steps.front());
  const double last = static_cast<double>(curve.steps.back());
  m.full_auc = normalized_auc(curve.steps, curve.success, first);
  m.tail_auc = normalized_auc(curve.steps, curve.success, last - tail_fraction * (last - first));
  return m;
}

bool collapse_indicator(double best, double last5, double tau_best, double tau_tail) {
  if (!(tau_best > 0.0 && tau_best < 1.0) || !(tau_tail > 0.0 && tau_tail < 1.0)) {
    throw UsageError("collapse thresholds must lie in (0, 1)");
  }
  return best >= tau_best && last5 <= tau_tail;
}

double winner_flip_rate(std::span<const std::string> winners) {
  if (winners.size() < 2) throw UsageError("winner_flip_rate needs at least two verdicts");
  std::size_t flips = 0;
  for (std::size_t i = 1; i < winners.size(); ++i) flips += winners[i] != winners[i - 1];
  return static_cast<double>(flips) / static_cast<double>(winners.size() - 1);
}

double winner_flip_rate(const verification::PhaseProfile& profile, int L) {
  std::vector<std::string> winners;
  for (const auto* v : profile.at_horizon(L)) winners.push_back(v->modal_winner);
  return winner_flip_rate(winners);
}

std::vector<std::string> ranking(std::span<const verification::CandidateScore> scores) {
  std::vector<verification::CandidateScore> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.mean != b.mean) return a.mean > b.mean;
    return a.id < b.id;
  });
  std::vector<std::string> out;
  for (const auto& s : sorted) out.push_back(s.id);
  return out;
}

PoolMetrics pool_metrics(std::span<const verification::CandidateScore> local,
                         std::span<const verification::CandidateScore> downstream) {
  if (local.size() < 3) throw UsageError("pool_metrics needs at least three candidates");
  std::vector<verification::CandidateScore> a(local.begin(), local.end()), b(downstream.begin(), downstream.end());
  auto by_id = [](const auto& x, const auto& y) { return x.id < y.id; };
  std::sort(a.begin(), a.end(), by_id);
  std::sort(b.begin(), b.end(), by_id);
  if (a.size() != b.size()) throw UsageError("pool_metrics: rosters differ in size");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].id != b[i].id) throw UsageError("pool_metrics: rosters differ at '" + a[i].id + "'");
    if (i > 0 && a[i].id == a[i - 1].id) throw UsageError("pool_metrics: duplicate id '" + a[i].id + "'");
  }
  const std::vector<std::string> lr = ranking(a), dr = ranking(b);
  PoolMetrics m;
  m.top1_hit = lr.front() == dr.front() ? 1 : 0;
  m.hit_at_3 = std::find(lr.begin(), lr.begin() + 3, dr.front()) != lr.begin() + 3 ? 1 : 0;
  std::vector<double> sa, sb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa.push_back(a[i].mean);
    sb.push_back(b[i].mean);
  }
  m.spearman_rho = stats::spearman(sa, sb);
  return m;
}

MetricRow metric_row(const std::string& method, const deployment::RunRecord& record, const MetricConfig& config) {
  const LearningCurve curve = LearningCurve::from_record(record);
  MetricRow row;
  row.method = method;
  row.seed = record.seed;
  row.consec_max = consec_max(curve);
  row.consec_auc = normalized_auc(curve.steps, *curve.consec, static_cast<double>(curve.steps.front()));
  const TailMetrics tm = tail_metrics(curve, config.tail_fraction);
  row.full_auc = tm.full_auc;
  row.tail_auc = tm.tail_auc;
  row.recomputed_final = tm.recomputed_final;
  row.last5_mean = tm.last5_mean;
  row.best_checkpoint_success = *std::max_element(curve.success.begin(), curve.success.end());
  row.collapse = collapse_indicator(row.best_checkpoint_success, row.last5_mean, config.tau_best, config.tau_tail);
  for (const auto& p : record.curve) row.critic_peak_abs = std::max(row.critic_peak_abs, p.critic_peak_abs);
  for (const auto& e : record.switches) row.reward_shift = std::max(row.reward_shift, e.reward_shift);
  return row;
}

}  // namespace phasedeploy::metrics
