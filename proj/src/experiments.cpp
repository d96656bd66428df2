#include "phasedeploy/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "phasedeploy/audit.hpp"
#include "phasedeploy/checkpoint_io.hpp"
#include "phasedeploy/error.hpp"
#include "phasedeploy/hash.hpp"
#include "phasedeploy/parallel.hpp"
#include "phasedeploy/reference_data.hpp"
#include "phasedeploy/svg.hpp"

namespace phasedeploy::experiments {

namespace fs = std::filesystem;
using deployment::DeploymentPlan;
using deployment::RunRecord;
using manifest::ExperimentManifest;

namespace {

constexpr std::uint64_t kPaperBootstrapSeed = 0xC1;
constexpr std::uint64_t kPoolDownstreamTag = 0xD057;
constexpr const char* kFailedStatus = "failed_or_blocked";

std::string path_in(const Context& ctx, const std::string& name) {
  fs::create_directories(ctx.out_dir);
  return (fs::path(ctx.out_dir) / name).string();
}

std::uint64_t effective(const Context& ctx, std::uint64_t seed) { return seed ^ ctx.root_seed; }

rl::ActorCritic make_learner(const ExperimentManifest& m) { return rl::ActorCritic(env::Env(m.env), m.learner); }

const rewards::RewardHypothesis& find(std::span<const rewards::RewardHypothesis> roster, const std::string& id) {
  for (const auto& h : roster) {
    if (h.id() == id) return h;
  }
  throw ConfigError("unknown candidate '" + id + "'");
}

verification::ForkOptions fork_options(const Context& ctx) {
  verification::ForkOptions o;
  o.threads = ctx.threads;
  return o;
}

std::vector<std::string> metric_header() {
  return {"consec_max", "consec_auc",  "full_auc", "tail_auc",      "recomputed_final", "last5_mean",
          "best_checkpoint_success", "collapse", "critic_peak_abs", "reward_shift"};
}

std::vector<std::string> metric_fields(const CellOutcome& c) {
  if (!c.ok) return std::vector<std::string>(metric_header().size(), "nan");
  const auto& r = c.row;
  return {csv::fmt(r.consec_max),       csv::fmt(r.consec_auc), csv::fmt(r.full_auc),
          csv::fmt(r.tail_auc),         csv::fmt(r.recomputed_final), csv::fmt(r.last5_mean),
          csv::fmt(r.best_checkpoint_success), csv::fmt(r.collapse), csv::fmt(r.critic_peak_abs),
          csv::fmt(r.reward_shift)};
}

double metric_value(const metrics::MetricRow& r, const std::string& name) {
  if (name == "consec_max") return r.consec_max;
  if (name == "consec_auc") return r.consec_auc;
  if (name == "full_auc") return r.full_auc;
  if (name == "tail_auc") return r.tail_auc;
  if (name == "recomputed_final") return r.recomputed_final;
  if (name == "last5_mean") return r.last5_mean;
  if (name == "best_checkpoint_success") return r.best_checkpoint_success;
  if (name == "critic_peak_abs") return r.critic_peak_abs;
  if (name == "reward_shift") return r.reward_shift;
  throw UsageError("unknown metric '" + name + "'");
}

// Runs `schedules[i]` on `seeds[i]` for every i, in parallel, keeping order.
std::vector<CellOutcome> run_cells(const ExperimentManifest& m, const Context& ctx,
                                   const std::vector<deployment::Schedule>& schedules,
                                   const std::vector<std::uint64_t>& seeds, const LockedSet* locked = nullptr) {
  const rl::ActorCritic learner = make_learner(m);
  const auto exec = m.execution();
  std::vector<CellOutcome> out(schedules.size());
  parallel_for(schedules.size(), ctx.threads, [&](std::size_t i) {
    CellOutcome& c = out[i];
    c.method = schedules[i].label;
    c.seed = seeds[i];
    if (locked) locked->admit(c.method, c.seed);
    try {
      c.record = deployment::execute_schedule(learner, schedules[i], effective(ctx, seeds[i]), exec);
      c.row = metrics::metric_row(c.method, c.record, m.metric);
      c.row.seed = c.seed;
    } catch (const deployment::RunDiverged& e) {
      c.ok = false;
      c.error = e.what();
      c.record = e.partial();
    }
  });
  return out;
}

void write_cells(const ExperimentManifest& m, const Context& ctx, const std::vector<CellOutcome>& cells,
                 const std::string& prefix, const std::vector<std::string>& extra_comments = {},
                 const std::string& split = {}) {
  std::vector<std::string> header{"method", "seed"};
  if (!split.empty()) header.emplace_back("split");
  header.insert(header.end(), {"status", "switch_count", "first_switch", "final_reward", "train_steps"});
  for (auto& h : metric_header()) header.push_back(h);
  csv::Writer per(provenance(m, ctx), header, m.evidence_status);
  std::vector<std::string> cheader{"method", "seed"};
  if (!split.empty()) cheader.emplace_back("split");
  cheader.insert(cheader.end(), {"step", "success", "consec", "reward_mean", "critic_peak_abs_so_far"});
  csv::Writer curves(provenance(m, ctx), cheader, m.evidence_status);
  for (const auto& c : extra_comments) {
    per.comment(c);
    curves.comment(c);
  }
  for (const auto& c : cells) {
    std::vector<std::string> f{c.method, csv::fmt(c.seed)};
    if (!split.empty()) f.push_back(split);
    f.insert(f.end(), {c.ok ? "ok" : "failed", csv::fmt(c.record.switch_count),
                       c.record.switches.empty() ? "" : csv::fmt(c.record.switches.front().step),
                       c.record.final_reward, csv::fmt(c.record.train_steps)});
    for (auto& x : metric_fields(c)) f.push_back(std::move(x));
    per.row(std::move(f), c.ok ? m.evidence_status : kFailedStatus);
    for (const auto& p : c.record.curve) {
      std::vector<std::string> g{c.method, csv::fmt(c.seed)};
      if (!split.empty()) g.push_back(split);
      g.insert(g.end(), {csv::fmt(p.step), csv::fmt(p.success), csv::fmt(p.consec), csv::fmt(p.reward_mean),
                         csv::fmt(p.critic_peak_abs)});
      curves.row(std::move(g), c.ok ? m.evidence_status : kFailedStatus);
    }
  }
  per.save(path_in(ctx, prefix + "_per_seed.csv"));
  curves.save(path_in(ctx, prefix + "_curves.csv"));
}

std::vector<stats::MethodAggregate> aggregate_cells(const std::vector<CellOutcome>& cells,
                                                    const std::vector<std::string>& methods,
                                                    const std::string& metric) {
  std::vector<stats::MethodAggregate> out;
  for (const auto& method : methods) {
    std::vector<double> v;
    for (const auto& c : cells) {
      if (c.ok && c.method == method) v.push_back(metric_value(c.row, metric));
    }
    if (!v.empty()) out.push_back(stats::aggregate_method(method, v));
  }
  return out;
}

// Paired over seeds where both cells succeeded; skipped beyond the exact-enumeration limit.
std::vector<stats::PairedTestResult> paired_cells(const std::vector<CellOutcome>& cells,
                                                  const std::vector<std::string>& methods,
                                                  const std::string& metric) {
  std::map<std::pair<std::string, std::uint64_t>, double> value;
  std::vector<std::uint64_t> seeds;
  for (const auto& c : cells) {
    if (c.ok) value[{c.method, c.seed}] = metric_value(c.row, metric);
    if (std::find(seeds.begin(), seeds.end(), c.seed) == seeds.end()) seeds.push_back(c.seed);
  }
  std::vector<stats::PairedTestResult> out;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    for (std::size_t j = i + 1; j < methods.size(); ++j) {
      std::vector<double> d;
      for (auto s : seeds) {
        auto a = value.find({methods[i], s}), b = value.find({methods[j], s});
        if (a != value.end() && b != value.end()) d.push_back(a->second - b->second);
      }
      if (d.empty() || d.size() > 20) continue;
      out.push_back(stats::signflip_test(d, stats::TieMode::kSymmetryOnly, methods[i] + "_vs_" + methods[j]));
    }
  }
  return out;
}

void write_aggregates(const csv::Provenance& prov, const std::string& status, const std::string& path,
                      const std::vector<std::pair<std::string, std::vector<stats::MethodAggregate>>>& by_metric) {
  csv::Writer w(prov, {"method", "metric", "n", "mean", "std", "ci_lo", "ci_hi"}, status);
  w.comment("kind=aggregate");
  for (const auto& [metric, aggs] : by_metric) {
    for (const auto& a : aggs) {
      w.row({a.method, metric, csv::fmt(a.n), csv::fmt(a.mean), csv::fmt(a.std), csv::fmt(a.ci.lo), csv::fmt(a.ci.hi)});
    }
  }
  w.save(path);
}

void write_paired(const csv::Provenance& prov, const std::string& status, const std::string& path,
                  const std::vector<std::pair<std::string, std::vector<stats::PairedTestResult>>>& by_metric) {
  csv::Writer w(prov, {"comparison", "metric", "mean_diff", "p", "d_z", "n", "tie_mode"}, status);
  w.comment("kind=aggregate");
  for (const auto& [metric, tests] : by_metric) {
    for (const auto& t : tests) {
      w.row({t.label, metric, csv::fmt(t.mean_diff), csv::fmt(t.p_two_sided), csv::fmt(t.d_z), csv::fmt(t.n),
             stats::to_string(stats::TieMode::kSymmetryOnly)});
    }
  }
  w.save(path);
}

GridResult compute_grid(const ExperimentManifest& m, const Context& ctx, bool save_checkpoints) {
  if (m.probes.empty()) throw ConfigError("manifest.probes: the verification grid needs probe steps");
  const auto roster = manifest::resolve_candidates(m);
  const rl::ActorCritic learner = make_learner(m);
  const auto cks = verification::train_probe(learner, effective(ctx, m.probe_seed), find(roster, m.probe_reward),
                                             m.probes);
  if (save_checkpoints) {
    const fs::path dir = fs::path(ctx.out_dir) / "checkpoints";
    fs::create_directories(dir);
    for (const auto& [t, ck] : cks) {
      save_checkpoint_file(ck, (dir / ("probe_t" + std::to_string(t) + ".ckpt")).string());
    }
  }
  GridResult g;
  g.run = verification::build_phase_profile(learner, cks, m.probes, roster, m.verification, m.eval_spec(),
                                            fork_options(ctx));
  g.plan = deployment::decide_deployment(g.run.profile, m.rules);
  return g;
}

std::vector<deployment::Schedule> schedules_for(const ExperimentManifest& m,
                                                std::span<const rewards::RewardHypothesis> roster,
                                                const std::vector<std::string>& methods,
                                                const std::vector<std::uint64_t>& seeds,
                                                const DeploymentPlan* plan) {
  std::vector<deployment::Schedule> out;
  for (const auto& id : methods) {
    const auto s = manifest::schedule_for(m, m.method(id), roster, plan);
    for (std::size_t i = 0; i < seeds.size(); ++i) out.push_back(s);
  }
  return out;
}

std::vector<std::uint64_t> tile(const std::vector<std::uint64_t>& seeds, std::size_t times) {
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < times; ++i) out.insert(out.end(), seeds.begin(), seeds.end());
  return out;
}

std::vector<std::string> method_ids(const ExperimentManifest& m) {
  std::vector<std::string> ids;
  for (const auto& s : m.methods) ids.push_back(s.id);
  return ids;
}

std::optional<DeploymentPlan> plan_if_needed(const ExperimentManifest& m, const Context& ctx,
                                             const std::vector<std::string>& methods) {
  for (const auto& id : methods) {
    if (m.method(id).kind == "profile") return compute_grid(m, ctx, false).plan;
  }
  return std::nullopt;
}

std::string selection_fingerprint(const deployment::SelectionManifest& s) { return hex64(s.fingerprint()); }

}  // namespace

csv::Provenance provenance(const ExperimentManifest& m, const Context& ctx) {
  return {hex64(manifest::hash(m)), kToolVersion, ctx.root_seed};
}

LockedSet::LockedSet(std::vector<std::string> methods, std::vector<std::uint64_t> seeds)
    : methods_(std::move(methods)), seeds_(std::move(seeds)) {
  Fnv1a h;
  for (const auto& id : methods_) h.str(id).u64(0);
  for (auto s : seeds_) h.u64(s);
  hash_ = h.value();
}

void LockedSet::admit(const std::string& method, std::uint64_t seed) const {
  if (std::find(methods_.begin(), methods_.end(), method) == methods_.end() ||
      std::find(seeds_.begin(), seeds_.end(), seed) == seeds_.end()) {
    throw ProtocolViolation("cell (" + method + ", " + std::to_string(seed) + ") is not in locked set " +
                            hex64(hash_));
  }
}

LockedResult run_locked_comparison(const ExperimentManifest& m, const Context& ctx) {
  if (m.methods.empty()) throw ConfigError("manifest.methods: the locked comparison needs at least one method");
  const auto methods = method_ids(m);
  LockedResult res;
  const LockedSet locked(methods, m.seeds);
  res.freeze_hash = locked.hash();
  res.plan = plan_if_needed(m, ctx, methods);
  const auto roster = manifest::resolve_candidates(m);
  const auto schedules = schedules_for(m, roster, methods, m.seeds, res.plan ? &*res.plan : nullptr);
  res.cells = run_cells(m, ctx, schedules, tile(m.seeds, methods.size()), &locked);

  std::vector<std::string> comments{"locked=" + hex64(res.freeze_hash)};
  if (res.plan) comments.push_back("plan=" + res.plan->describe());
  for (auto& c : comments) std::replace(c.begin(), c.end(), ' ', '_');
  write_cells(m, ctx, res.cells, "locked", comments);

  const std::vector<std::string> agg_metrics{"recomputed_final", "best_checkpoint_success", "last5_mean",
                                             "consec_max", "tail_auc"};
  std::vector<std::pair<std::string, std::vector<stats::MethodAggregate>>> aggs;
  for (const auto& metric : agg_metrics) aggs.emplace_back(metric, aggregate_cells(res.cells, methods, metric));
  res.final_aggregates = aggs.front().second;
  write_aggregates(provenance(m, ctx), m.evidence_status, path_in(ctx, "locked_aggregate.csv"), aggs);

  std::vector<std::pair<std::string, std::vector<stats::PairedTestResult>>> paired;
  for (const auto& metric : {std::string("recomputed_final"), std::string("consec_max")}) {
    paired.emplace_back(metric, paired_cells(res.cells, methods, metric));
  }
  res.final_paired = paired.front().second;
  write_paired(provenance(m, ctx), m.evidence_status, path_in(ctx, "locked_paired.csv"), paired);

  std::vector<std::string> header{"method"};
  for (auto s : m.seeds) header.push_back(csv::fmt(s));
  csv::Writer matrix(provenance(m, ctx), header, m.evidence_status);
  matrix.comment("metric=recomputed_final");
  for (std::size_t k = 0; k < methods.size(); ++k) {
    std::vector<std::string> f{methods[k]};
    bool all_ok = true;
    for (std::size_t i = 0; i < m.seeds.size(); ++i) {
      const auto& c = res.cells[k * m.seeds.size() + i];
      all_ok = all_ok && c.ok;
      f.push_back(c.ok ? csv::fmt(c.row.recomputed_final) : "nan");
    }
    matrix.row(std::move(f), all_ok ? m.evidence_status : kFailedStatus);
  }
  matrix.save(path_in(ctx, "locked_matrix.csv"));
  return res;
}

std::vector<CellOutcome> run_train(const ExperimentManifest& m, const Context& ctx, const std::string& method) {
  const std::vector<std::string> methods{method};
  m.method(method);
  const auto plan = plan_if_needed(m, ctx, methods);
  const auto roster = manifest::resolve_candidates(m);
  auto cells = run_cells(m, ctx, schedules_for(m, roster, methods, m.seeds, plan ? &*plan : nullptr), m.seeds);
  write_cells(m, ctx, cells, "train");
  return cells;
}

GridResult run_verification_grid(const ExperimentManifest& m, const Context& ctx) {
  GridResult g = compute_grid(m, ctx, true);
  const auto prov = provenance(m, ctx);

  csv::Writer forks(prov, {"checkpoint", "fork_horizon", "candidate_id", "repeat", "J", "diverged", "wallclock_s", "executed_steps"},
                    m.evidence_status);
  for (const auto& f : g.run.forks) {
    forks.row({csv::fmt(f.t), csv::fmt(f.horizon), f.candidate_id, csv::fmt(f.repeat), csv::fmt(f.J),
               csv::fmt(f.diverged), csv::fmt(f.wallclock_s), csv::fmt(f.executed_steps)});
  }
  forks.save(path_in(ctx, "verify_forks.csv"));

  csv::Writer verdicts(prov,
                       {"checkpoint", "fork_horizon", "competence", "modal_winner", "top1_reliability", "margin_mean",
                        "margin_lcb95", "entropy", "informative", "scores", "repeat_winners"},
                       m.evidence_status);
  for (const auto& v : g.run.profile.verdicts) {
    std::string scores, winners;
    for (const auto& s : v.mean_scores) scores += (scores.empty() ? "" : ";") + s.id + ":" + csv::fmt(s.mean);
    for (const auto& w : v.repeat_winners) winners += (winners.empty() ? "" : ";") + w;
    verdicts.row({csv::fmt(v.t), csv::fmt(v.horizon), csv::fmt(v.competence), v.modal_winner, csv::fmt(v.rel),
                  csv::fmt(v.margin_mean), csv::fmt(v.margin_lcb95), csv::fmt(v.entropy), csv::fmt(v.informative),
                  scores, winners});
  }
  verdicts.save(path_in(ctx, "verify_verdicts.csv"));

  csv::Writer first(prov, {"fork_horizon", "first_informative", "flip_rate"}, m.evidence_status);
  for (int L : m.verification.horizons) {
    const auto t = verification::first_informative(g.run.profile, L);
    const double flips = g.run.profile.checkpoints.size() >= 2 ? metrics::winner_flip_rate(g.run.profile, L) : 0.0;
    first.row({csv::fmt(L), t ? csv::fmt(*t) : "none", csv::fmt(flips)});
  }
  first.save(path_in(ctx, "first_reliable.csv"));
  return g;
}

ProfileResult run_profile(const ExperimentManifest& m, const Context& ctx) {
  ProfileResult res;
  res.grid = run_verification_grid(m, ctx);
  const auto& plan = res.grid.plan;
  const auto prov = provenance(m, ctx);
  csv::Writer p(prov, {"kind", "first", "second", "t_s", "operator", "profile_fingerprint", "rule_version", "reason"},
                m.evidence_status);
  p.row({deployment::to_string(plan.kind), plan.first, plan.second, csv::fmt(plan.t_s), deployment::to_string(plan.op),
         hex64(plan.profile_fingerprint), plan.rule_version, plan.reason});
  p.save(path_in(ctx, "plan.csv"));

  csv::Writer ops(prov,
                  {"operator", "seed", "status", "recomputed_final", "best_checkpoint_success", "last5_mean",
                   "consec_max", "critic_peak_abs", "reward_shift"},
                  m.evidence_status);
  ops.comment("plan=" + [&] {
    auto d = plan.describe();
    std::replace(d.begin(), d.end(), ' ', '_');
    return d;
  }());
  if (plan.kind == deployment::PlanKind::kTwoStage && !m.operators.empty()) {
    const auto roster = manifest::resolve_candidates(m);
    std::vector<deployment::Schedule> schedules;
    std::vector<std::uint64_t> seeds;
    for (const auto& name : m.operators) {
      DeploymentPlan variant = plan;
      variant.op = deployment::parse_switch_operator(name);
      auto s = deployment::schedule_for(variant, roster, name);
      for (auto seed : m.seeds) {
        schedules.push_back(s);
        seeds.push_back(seed);
      }
    }
    res.operator_cells = run_cells(m, ctx, schedules, seeds);
    for (const auto& c : res.operator_cells) {
      const auto nan = std::string("nan");
      ops.row({c.method, csv::fmt(c.seed), c.ok ? "ok" : "failed", c.ok ? csv::fmt(c.row.recomputed_final) : nan,
               c.ok ? csv::fmt(c.row.best_checkpoint_success) : nan, c.ok ? csv::fmt(c.row.last5_mean) : nan,
               c.ok ? csv::fmt(c.row.consec_max) : nan, c.ok ? csv::fmt(c.row.critic_peak_abs) : nan,
               c.ok ? csv::fmt(c.row.reward_shift) : nan},
              c.ok ? m.evidence_status : kFailedStatus);
    }
  }
  ops.save(path_in(ctx, "switch_operators.csv"));
  return res;
}

std::vector<SelectorOutcome> run_selectors(const ExperimentManifest& m, const Context& ctx) {
  if (m.selectors.empty()) throw ConfigError("manifest.selectors: nothing to run");
  const GridResult g = compute_grid(m, ctx, false);
  const auto roster = manifest::resolve_candidates(m);
  const rl::ActorCritic learner = make_learner(m);
  const auto exec = m.execution();

  // Counterfactual: the profile plan executed on the same seed.
  const auto plan_schedule = deployment::schedule_for(g.plan, roster, "plan");
  const auto plan_cells =
      run_cells(m, ctx, std::vector<deployment::Schedule>(m.seeds.size(), plan_schedule), m.seeds);

  const std::size_t S = m.seeds.size();
  std::vector<SelectorOutcome> out(m.selectors.size() * S);
  parallel_for(out.size(), ctx.threads, [&](std::size_t i) {
    const auto& spec = m.selectors[i / S];
    const std::uint64_t seed = m.seeds[i % S];
    SelectorOutcome& o = out[i];
    o.cell.method = spec.id;
    o.cell.seed = seed;
    try {
      o.cell.record = deployment::run_selector(learner, spec.kind, roster, spec.config, effective(ctx, seed), exec);
      o.cell.row = metrics::metric_row(spec.id, o.cell.record, m.metric);
      o.cell.row.seed = seed;
      const auto& cf = plan_cells[i % S];
      o.label = deployment::classify_selector_failure(
          o.cell.record, g.run.profile, g.plan, cf.ok ? std::optional<double>(cf.row.recomputed_final) : std::nullopt,
          spec.config.probe_every);
    } catch (const deployment::RunDiverged& e) {
      o.cell.ok = false;
      o.cell.error = e.what();
      o.cell.record = e.partial();
    }
  });

  const auto prov = provenance(m, ctx);
  csv::Writer w(prov,
                {"selector", "kind", "seed", "status", "recomputed_final", "best_checkpoint_success", "consec_max",
                 "switch_count", "first_switch", "final_reward", "train_steps", "probe_steps", "failure",
                 "counterfactual_final"},
                m.evidence_status);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& o = out[i];
    const auto& c = o.cell;
    const auto& cf = plan_cells[i % S];
    w.row({c.method, deployment::to_string(m.selectors[i / S].kind), csv::fmt(c.seed), c.ok ? "ok" : "failed",
           c.ok ? csv::fmt(c.row.recomputed_final) : "nan", c.ok ? csv::fmt(c.row.best_checkpoint_success) : "nan",
           c.ok ? csv::fmt(c.row.consec_max) : "nan", csv::fmt(c.record.switch_count),
           c.record.switches.empty() ? "" : csv::fmt(c.record.switches.front().step), c.record.final_reward,
           csv::fmt(c.record.train_steps), csv::fmt(c.record.probe_steps),
           c.ok ? deployment::to_string(o.label) : "n/a", cf.ok ? csv::fmt(cf.row.recomputed_final) : "nan"},
          c.ok ? m.evidence_status : kFailedStatus);
  }
  w.save(path_in(ctx, "selectors.csv"));

  std::vector<CellOutcome> cells;
  std::vector<std::string> ids;
  for (const auto& o : out) cells.push_back(o.cell);
  for (const auto& s : m.selectors) ids.push_back(s.id);
  write_aggregates(prov, m.evidence_status, path_in(ctx, "selectors_summary.csv"),
                   {{"recomputed_final", aggregate_cells(cells, ids, "recomputed_final")},
                    {"best_checkpoint_success", aggregate_cells(cells, ids, "best_checkpoint_success")}});
  return out;
}

std::vector<PoolRow> run_pool_stress(const ExperimentManifest& m, const Context& ctx) {
  if (m.pool_k.empty()) throw ConfigError("manifest.pool.k: nothing to run");
  if (m.probes.empty()) throw ConfigError("manifest.probes: pool stress forks from the last probe checkpoint");
  const auto roster = manifest::resolve_candidates(m);
  const int kmax = *std::max_element(m.pool_k.begin(), m.pool_k.end());
  if (static_cast<int>(roster.size()) < kmax) {
    throw ConfigError("manifest.candidates: pool holds " + std::to_string(roster.size()) + " candidates, K=" +
                      std::to_string(kmax) + " requested");
  }
  for (int k : m.pool_k) {
    if (k < 3) throw ConfigError("manifest.pool.k: pool metrics need K >= 3");
  }
  const rl::ActorCritic learner = make_learner(m);
  const std::int64_t t = *std::max_element(m.probes.begin(), m.probes.end());
  const std::vector<std::int64_t> at{t};
  const auto ck = verification::train_probe(learner, effective(ctx, m.probe_seed), find(roster, m.probe_reward), at).at(t);
  const int L = *std::max_element(m.verification.horizons.begin(), m.verification.horizons.end());
  const auto eval = m.eval_spec();

  // Downstream score of each candidate: budgeted training from the same state.
  std::vector<verification::CandidateScore> downstream(static_cast<std::size_t>(kmax));
  parallel_for(downstream.size(), ctx.threads, [&](std::size_t i) {
    rewards::ScheduledReward r(roster[i]);
    double score = 0.0;
    try {
      const auto end = learner.train(clone_checkpoint(ck, kPoolDownstreamTag), r, m.pool_budget);
      score = learner.evaluate(end, eval).mean;
    } catch (const rl::TrainingDiverged& e) {
      score = learner.evaluate(e.last_finite(), eval).mean;
    }
    downstream[i] = {roster[i].id(), score};
  });

  std::vector<PoolRow> rows;
  for (int K : m.pool_k) {
    const std::span<const rewards::RewardHypothesis> cands(roster.data(), static_cast<std::size_t>(K));
    verification::ForkOptions opts = fork_options(ctx);
    const auto forks = verification::fork_verify(learner, ck, cands, L, m.verification.repeats, eval, opts);
    std::map<std::string, std::pair<double, int>> sums;
    std::int64_t steps = 0;
    for (const auto& f : forks) {
      sums[f.candidate_id].first += f.J;
      sums[f.candidate_id].second += 1;
      steps += f.executed_steps;
    }
    std::vector<verification::CandidateScore> local;
    for (const auto& [id, s] : sums) local.push_back({id, s.first / s.second});
    const std::vector<verification::CandidateScore> down(downstream.begin(), downstream.begin() + K);
    PoolRow row;
    row.K = K;
    row.metrics = metrics::pool_metrics(local, down);
    row.overhead_steps = steps;
    row.local_winner = metrics::ranking(local).front();
    row.downstream_best = metrics::ranking(down).front();
    row.flagged = !rows.empty() && row.metrics.top1_hit > rows.back().metrics.top1_hit;
    rows.push_back(row);
  }

  csv::Writer w(provenance(m, ctx),
                {"K", "top1_hit", "hit_at_3", "spearman_rho", "overhead_steps", "local_winner", "downstream_best",
                 "top1_trend", "checkpoint", "horizon", "repeats"},
                m.evidence_status);
  for (const auto& r : rows) {
    w.row({csv::fmt(r.K), csv::fmt(r.metrics.top1_hit), csv::fmt(r.metrics.hit_at_3), csv::fmt(r.metrics.spearman_rho),
           csv::fmt(r.overhead_steps), r.local_winner, r.downstream_best, r.flagged ? "flagged_increase" : "ok",
           csv::fmt(t), csv::fmt(L), csv::fmt(m.verification.repeats)});
  }
  w.save(path_in(ctx, "pool_stress.csv"));
  return rows;
}

HeldoutResult run_heldout(const ExperimentManifest& m, const Context& ctx) {
  if (m.dev_seeds.empty() || m.test_seeds.empty()) {
    throw ConfigError("manifest.dev_seeds/test_seeds: held-out selection needs both lists");
  }
  if (m.methods.empty()) throw ConfigError("manifest.methods: nothing to select from");
  const auto methods = method_ids(m);
  deployment::HeldoutProtocol protocol(methods, m.dev_seeds, m.test_seeds);
  const auto plan = plan_if_needed(m, ctx, methods);
  const auto roster = manifest::resolve_candidates(m);

  HeldoutResult res;
  res.dev = run_cells(m, ctx, schedules_for(m, roster, methods, m.dev_seeds, plan ? &*plan : nullptr),
                      tile(m.dev_seeds, methods.size()));
  for (const auto& c : res.dev) {
    protocol.record_dev(c.method, c.seed, c.ok ? c.row.best_checkpoint_success : 0.0);
  }
  res.selection = protocol.select();

  const auto prov = provenance(m, ctx);
  csv::Writer sel(prov, {"rule", "dev_mean_peak", "selected", "issued_at"}, m.evidence_status);
  sel.comment("selection_fingerprint=" + selection_fingerprint(res.selection));
  for (const auto& [rule, peak] : res.selection.dev_mean_peak) {
    sel.row({rule, csv::fmt(peak), csv::fmt(rule == res.selection.selected), csv::fmt(res.selection.issued_at)});
  }
  sel.save(path_in(ctx, audit::kSelectionFile));

  for (auto s : m.test_seeds) protocol.authorize_test(res.selection.selected, s);
  res.test = run_cells(m, ctx, schedules_for(m, roster, {res.selection.selected}, m.test_seeds, plan ? &*plan : nullptr),
                       m.test_seeds);
  // Separate files per split keep the split column constant within each.
  write_cells(m, ctx, res.dev, "heldout_dev", {}, "dev");
  write_cells(m, ctx, res.test, "heldout_test", {"selection=" + selection_fingerprint(res.selection)}, "test");
  return res;
}

std::vector<CellOutcome> run_test_split(const ExperimentManifest& m, const Context& ctx, const std::string& rule) {
  m.method(rule);
  const fs::path sel_path = fs::path(ctx.out_dir) / audit::kSelectionFile;
  if (!fs::exists(sel_path)) {
    throw ProtocolViolation("test-seed run of '" + rule + "' refused: no " + std::string(audit::kSelectionFile) +
                            " in " + ctx.out_dir);
  }
  const auto table = csv::read_file(sel_path.string());
  csv::Provenance p;
  if (!csv::parse_provenance(table, p) || p.source_manifest != provenance(m, ctx).source_manifest) {
    throw ProtocolViolation("selection manifest was issued for a different experiment manifest");
  }
  std::string selected, fingerprint;
  for (const auto& c : table.comments) {
    if (c.rfind("selection_fingerprint=", 0) == 0) fingerprint = c.substr(22);
  }
  const auto cr = table.column("rule"), cs = table.column("selected");
  for (const auto& r : table.rows) {
    if (r[cs] == "1") selected = r[cr];
  }
  if (selected != rule) {
    throw ProtocolViolation("test-seed run of '" + rule + "' refused: selection manifest selected '" + selected + "'");
  }
  const auto plan = plan_if_needed(m, ctx, {rule});
  const auto roster = manifest::resolve_candidates(m);
  auto cells = run_cells(m, ctx, schedules_for(m, roster, {rule}, m.test_seeds, plan ? &*plan : nullptr), m.test_seeds);
  write_cells(m, ctx, cells, "heldout_test", {"selection=" + fingerprint}, "test");
  return cells;
}

std::vector<StatCheck> reproduce_paper_stats(const Context& ctx) {
  const csv::Provenance prov{hex64(reference::checksum()), kToolVersion, ctx.root_seed};
  const std::string status = "locked_main_existing";
  std::vector<StatCheck> checks;
  auto check = [&](std::string name, double expected, double actual, double tol) {
    checks.push_back({std::move(name), expected, actual, tol, std::abs(actual - expected) <= tol});
  };
  check("embedded_checksum", 0.0, reference::checksum() == reference::kChecksum ? 0.0 : 1.0, 0.0);

  csv::Writer agg(prov, {"method", "n", "mean", "std", "ci_lo", "ci_hi"}, status);
  agg.comment("kind=aggregate");
  for (const auto& pub : reference::aggregates()) {
    const auto& v = reference::row(pub.method).values;
    const auto a = stats::aggregate_method(pub.method, v, 10000, 0.95, kPaperBootstrapSeed);
    agg.row({a.method, csv::fmt(a.n), csv::fmt(a.mean), csv::fmt(a.std), csv::fmt(a.ci.lo), csv::fmt(a.ci.hi)});
    check(pub.method + ".mean", pub.mean, a.mean, reference::kMeanStdTol);
    check(pub.method + ".std", pub.std, a.std, reference::kMeanStdTol);
    check(pub.method + ".ci_lo", pub.ci_lo, a.ci.lo, reference::kCiTol);
    check(pub.method + ".ci_hi", pub.ci_hi, a.ci.hi, reference::kCiTol);
  }
  agg.save(path_in(ctx, "paper_aggregates.csv"));

  csv::Writer paired(prov, {"comparison", "mean_diff", "p", "d_z", "n", "tie_mode"}, status);
  paired.comment("kind=aggregate");
  for (const auto& pub : reference::paired_tests()) {
    const auto& a = reference::row(pub.treatment).values;
    const auto& b = reference::row(pub.control).values;
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    const auto t = stats::signflip_test(d, stats::TieMode::kSymmetryOnly, pub.label);
    paired.row({t.label, csv::fmt(t.mean_diff), csv::fmt(t.p_two_sided), csv::fmt(t.d_z), csv::fmt(t.n),
                stats::to_string(stats::TieMode::kSymmetryOnly)});
    check(pub.label + ".mean_diff", pub.mean_diff, t.mean_diff, reference::kDiffTol);
    check(pub.label + ".p", pub.p, t.p_two_sided, reference::kPTol);
    check(pub.label + ".d_z", pub.d_z, t.d_z, reference::kDzTol);
  }
  paired.save(path_in(ctx, "paper_paired.csv"));

  csv::Writer report(prov, {"check", "expected", "actual", "tolerance", "pass"}, status);
  for (const auto& c : checks) {
    report.row({c.name, csv::fmt(c.expected), csv::fmt(c.actual), csv::fmt(c.tolerance), csv::fmt(c.pass)});
  }
  report.save(path_in(ctx, "paper_checks.csv"));
  return checks;
}

StatsResult run_stats(const std::string& per_seed_csv, const std::string& metric, const Context& ctx) {
  const auto table = csv::read_file(per_seed_csv);
  csv::Provenance prov;
  if (!csv::parse_provenance(table, prov)) throw UsageError(per_seed_csv + ": no provenance comment");
  const auto cm = table.column("method"), cs = table.column("seed"), cst = table.column("status"),
             cv = table.column(metric), ce = table.column("evidence_status");
  std::vector<std::string> methods;
  std::set<std::string> statuses;
  std::map<std::string, std::map<std::string, double>> values;
  std::vector<std::string> seeds;
  for (const auto& r : table.rows) {
    if (r[cst] != "ok") continue;
    statuses.insert(r[ce]);
    if (std::find(methods.begin(), methods.end(), r[cm]) == methods.end()) methods.push_back(r[cm]);
    if (std::find(seeds.begin(), seeds.end(), r[cs]) == seeds.end()) seeds.push_back(r[cs]);
    values[r[cm]][r[cs]] = std::stod(r[cv]);
  }
  if (statuses.size() > 1) throw ProtocolViolation(per_seed_csv + ": refusing to aggregate mixed evidence statuses");
  if (methods.empty()) throw UsageError(per_seed_csv + ": no ok rows");
  const std::string status = *statuses.begin();

  StatsResult res;
  for (const auto& method : methods) {
    std::vector<double> v;
    for (const auto& [s, x] : values[method]) v.push_back(x);
    res.aggregates.push_back(stats::aggregate_method(method, v));
  }
  for (std::size_t i = 0; i < methods.size(); ++i) {
    for (std::size_t j = i + 1; j < methods.size(); ++j) {
      std::vector<double> d;
      for (const auto& s : seeds) {
        auto a = values[methods[i]].find(s), b = values[methods[j]].find(s);
        if (a != values[methods[i]].end() && b != values[methods[j]].end()) d.push_back(a->second - b->second);
      }
      if (d.empty() || d.size() > 20) continue;
      res.paired.push_back(stats::signflip_test(d, stats::TieMode::kSymmetryOnly, methods[i] + "_vs_" + methods[j]));
    }
  }
  write_aggregates(prov, status, path_in(ctx, "stats_aggregates.csv"), {{metric, res.aggregates}});
  write_paired(prov, status, path_in(ctx, "stats_paired.csv"), {{metric, res.paired}});
  return res;
}

std::vector<std::string> emit_plots(const Context& ctx) {
  std::vector<std::string> written;
  auto emit = [&](const std::string& input, const std::string& output, auto render) {
    const fs::path in = fs::path(ctx.out_dir) / input;
    if (!fs::exists(in)) return;
    const std::string svg = render(csv::read_file(in.string()));
    const std::string out = path_in(ctx, output);
    std::ofstream f(out, std::ios::binary);
    f << svg;
    if (!f) throw Error("cannot write " + out);
    written.push_back(out);
  };
  emit("locked_curves.csv", "locked_curves.svg", svg::learning_curves);
  emit("train_curves.csv", "train_curves.svg", svg::learning_curves);
  emit("verify_verdicts.csv", "verdict_heatmap.svg", svg::verdict_heatmap);
  if (written.empty()) {
    throw UsageError("no plottable CSV (locked_curves.csv, train_curves.csv, verify_verdicts.csv) in " + ctx.out_dir);
  }
  return written;
}

}  // namespace phasedeploy::experiments
