#include "phasedeploy/cli.hpp"

#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "phasedeploy/audit.hpp"
#include "phasedeploy/error.hpp"
#include "phasedeploy/experiments.hpp"

namespace phasedeploy::cli {

namespace {

struct Options {
  std::string manifest;
  std::string out_dir = "out";
  std::uint64_t root_seed = 0;
  int threads = 1;
  std::string method;
  std::string split = "heldout";
  std::string rule;
  std::string input;
  std::string metric = "recomputed_final";
};

manifest::ExperimentManifest need_manifest(const Options& o) {
  if (o.manifest.empty()) throw UsageError("--manifest is required for this subcommand");
  return manifest::load(o.manifest);
}

int dispatch(const std::string& cmd, const Options& o, std::ostream& out) {
  experiments::Context ctx;
  ctx.out_dir = o.out_dir;
  ctx.root_seed = o.root_seed;
  ctx.threads = o.threads;

  if (cmd == "reproduce-paper-stats") {
    const auto checks = experiments::reproduce_paper_stats(ctx);
    int failed = 0;
    for (const auto& c : checks) {
      if (!c.pass) {
        ++failed;
        out << "FAIL " << c.name << " expected " << c.expected << " got " << c.actual << " tol " << c.tolerance << '\n';
      }
    }
    out << checks.size() - failed << '/' << checks.size() << " checks pass\n";
    return failed ? kFailure : kOk;
  }
  if (cmd == "audit") {
    const auto v = audit::check_artifact_discipline(o.out_dir);
    for (const auto& x : v) out << x.file << ": " << x.rule << ": " << x.detail << '\n';
    out << v.size() << " violation(s)\n";
    return kOk;
  }
  if (cmd == "plot") {
    for (const auto& f : experiments::emit_plots(ctx)) out << "wrote " << f << '\n';
    return kOk;
  }
  if (cmd == "stats") {
    const std::string input =
        o.input.empty() ? (std::filesystem::path(o.out_dir) / "locked_per_seed.csv").string() : o.input;
    const auto r = experiments::run_stats(input, o.metric, ctx);
    for (const auto& a : r.aggregates) out << a.method << " n=" << a.n << " mean=" << a.mean << " std=" << a.std << '\n';
    for (const auto& p : r.paired) out << p.label << " diff=" << p.mean_diff << " p=" << p.p_two_sided << '\n';
    return kOk;
  }

  const auto m = need_manifest(o);
  if (cmd == "train") {
    if (o.method.empty()) {
      const auto r = experiments::run_locked_comparison(m, ctx);
      if (r.plan) out << "plan " << r.plan->describe() << '\n';
      for (const auto& a : r.final_aggregates) out << a.method << " final_mean=" << a.mean << '\n';
    } else {
      const auto cells = experiments::run_train(m, ctx, o.method);
      for (const auto& c : cells) out << c.method << " seed " << c.seed << (c.ok ? " ok" : " failed") << '\n';
    }
  } else if (cmd == "verify-grid") {
    const auto g = experiments::run_verification_grid(m, ctx);
    out << g.run.forks.size() << " forks, " << g.run.profile.verdicts.size() << " verdicts\n";
  } else if (cmd == "profile") {
    const auto p = experiments::run_profile(m, ctx);
    out << "plan " << p.grid.plan.describe() << '\n';
  } else if (cmd == "deploy") {
    if (o.split == "heldout") {
      const auto r = experiments::run_heldout(m, ctx);
      out << "selected " << r.selection.selected << '\n';
    } else if (o.split == "test") {
      if (o.rule.empty()) throw UsageError("deploy --split test needs --rule");
      const auto cells = experiments::run_test_split(m, ctx, o.rule);
      out << cells.size() << " test runs of " << o.rule << '\n';
    } else {
      throw UsageError("--split must be heldout or test");
    }
  } else if (cmd == "selectors") {
    const auto r = experiments::run_selectors(m, ctx);
    out << r.size() << " selector runs\n";
  } else if (cmd == "pool-stress") {
    for (const auto& row : experiments::run_pool_stress(m, ctx)) {
      out << "K=" << row.K << " top1=" << row.metrics.top1_hit << " hit3=" << row.metrics.hit_at_3
          << " rho=" << row.metrics.spearman_rho << " overhead=" << row.overhead_steps << '\n';
    }
  }
  return kOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Phase-aware reward verification and deployment"};
  app.require_subcommand(1, 1);
  app.add_option("--manifest", o.manifest, "experiment manifest (JSON)");
  app.add_option("--out-dir", o.out_dir, "output directory")->capture_default_str();
  app.add_option("--root-seed", o.root_seed, "XORed into every manifest seed")->capture_default_str();
  app.add_option("--threads", o.threads, "worker threads")->check(CLI::Range(1, 256))->capture_default_str();

  auto* train = app.add_subcommand("train", "locked comparison of every method, or one --method");
  train->add_option("--method", o.method);
  app.add_subcommand("verify-grid", "probe training and the fork-verification grid");
  app.add_subcommand("profile", "grid, deployment plan, and switch-operator runs");
  auto* deploy = app.add_subcommand("deploy", "held-out selection on dev seeds, then test seeds");
  deploy->add_option("--split", o.split, "heldout | test")->capture_default_str();
  deploy->add_option("--rule", o.rule, "rule to run on test seeds (--split test)");
  app.add_subcommand("selectors", "reactive selector baselines and failure labels");
  app.add_subcommand("pool-stress", "candidate-pool scaling");
  auto* st = app.add_subcommand("stats", "aggregates and paired tests of a per-seed CSV");
  st->add_option("--input", o.input, "per-seed CSV (default <out-dir>/locked_per_seed.csv)");
  st->add_option("--metric", o.metric)->capture_default_str();
  app.add_subcommand("reproduce-paper-stats", "recompute the embedded published statistics");
  app.add_subcommand("audit", "artifact-discipline checks over <out-dir>");
  app.add_subcommand("plot", "SVG plots of the CSVs in <out-dir>");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kValidation;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    return dispatch(cmd, o, out);
  } catch (const ProtocolViolation& e) {
    err << "protocol violation: " << e.what() << '\n';
    return kProtocol;
  } catch (const deployment::RunDiverged& e) {
    err << "diverged: " << e.what() << '\n';
    return kDivergence;
  } catch (const rl::TrainingDiverged& e) {
    err << "diverged: " << e.what() << '\n';
    return kDivergence;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kValidation;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kValidation;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kValidation;
  } catch (const LoadError& e) {
    err << "load error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace phasedeploy::cli
