#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <string>

#include "poissonet/cli.hpp"

namespace {

extern "C" void on_interrupt(int) { poissonet::cli::cancel_flag().store(true); }

void add_common(CLI::App* sub, poissonet::cli::RunConfig& cfg, std::string& format) {
  sub->add_option("--out", cfg.out, "Output path (default: stdout)");
  sub->add_option("--format", format, "Output format")->check(CLI::IsMember({"tsv", "json"}));
}

void add_solver(CLI::App* sub, poissonet::cli::RunConfig& cfg, double& tol) {
  sub->add_option("--tol", tol, "Score sup-norm tolerance for both stages")->check(CLI::PositiveNumber);
  sub->add_option("--max-iter", cfg.solver.max_outer, "Outer (gamma) Newton iteration cap");
  sub->add_option("--max-inner", cfg.solver.max_inner, "Inner (theta) Newton iteration cap");
  sub->add_option("--divergence-bound", cfg.solver.divergence_bound, "|parameter| above which the MLE is declared absent");
  sub->add_flag("!--no-damping", cfg.solver.damping, "Disable step halving");
  sub->add_flag("!--lenient", cfg.solver.strict, "Let zero-degree nodes drift instead of stopping early");
  sub->add_option("--ci-level", cfg.ci_level, "Confidence level");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace poissonet::cli;
  RunConfig cfg;
  std::string format = "tsv";
  std::string normalization = "alphan-betan";
  double tol = 0.0;

  CLI::App app{"Maximum-likelihood fitting and simulation for the network Poisson model"};
  app.require_subcommand(1);

  auto* fit = app.add_subcommand("fit", "Fit a weighted directed graph");
  fit->add_option("--edges", cfg.edges, "Edge list TSV: src, dst, weight")->required();
  fit->add_option("--node-attrs", cfg.node_attrs, "Node attribute TSV: id, then one column per attribute");
  fit->add_option("--combinators", cfg.combinators, "Covariate rules, e.g. equal:dept,absdiff:age");
  fit->add_option("--covariates", cfg.covariates, "Pairwise covariate TSV: src, dst, z1..zp");
  fit->add_option("--nodes", cfg.nodes, "Node count when trailing nodes have no edges");
  fit->add_option("--normalization", normalization, "Identification convention")
      ->check(CLI::IsMember({"mu-beta", "alphan-betan", "ref-first"}));
  fit->add_flag("--one-based", cfg.one_based, "Node ids start at 1");
  fit->add_flag("--joint", cfg.joint, "Joint Newton on all parameters instead of the two-stage solver");
  add_solver(fit, cfg, tol);
  add_common(fit, cfg, format);

  auto* sim = app.add_subcommand("simulate", "Monte-Carlo coverage study");
  sim->add_option("--n", cfg.sim_n, "Base size(s); networks have n+1 nodes")->delimiter(',');
  sim->add_option("--c", cfg.sim_c, "Heterogeneity slope(s)")->delimiter(',');
  sim->add_option("--reps", cfg.reps, "Replications per cell");
  sim->add_option("--pairs", cfg.pairs, "Contrast pairs, e.g. 1:2,50:51");
  sim->add_option("--seed", cfg.seed, "Master seed");
  sim->add_option("--threads", cfg.threads, "Worker threads (default: POISSONET_THREADS or all cores)");
  sim->add_flag("--fix-covariates", cfg.fix_covariates, "Draw covariates once per cell");
  sim->add_option("--emit-raw", cfg.emit_raw, "Write per-replication estimates to this path");
  add_solver(sim, cfg, tol);
  add_common(sim, cfg, format);

  auto* rep = app.add_subcommand("report", "Render a saved JSON report");
  rep->add_option("--in", cfg.input, "JSON report written by fit or simulate")->required();
  add_common(rep, cfg, format);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInputError;
  }

  if (tol > 0.0) cfg.solver.tol_theta = cfg.solver.tol_gamma = tol;
  try {
    cfg.format = parse_format(format);
    cfg.normalization = poissonet::parse_normalization(normalization);
  } catch (const poissonet::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInputError;
  }
  if (*fit) cfg.subcommand = Subcommand::fit;
  else if (*sim) cfg.subcommand = Subcommand::simulate;
  else cfg.subcommand = Subcommand::report;

  std::signal(SIGINT, on_interrupt);
  return run(cfg);
}
