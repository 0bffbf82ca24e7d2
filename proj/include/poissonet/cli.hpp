#pragma once

#include <json.hpp>

#include <atomic>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "poissonet/errors.hpp"
#include "poissonet/graph.hpp"
#include "poissonet/inference.hpp"
#include "poissonet/io.hpp"
#include "poissonet/model.hpp"
#include "poissonet/simulator.hpp"
#include "poissonet/solver.hpp"

namespace poissonet::cli {

// Exit codes. Scripts may branch on these; keep them stable.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInputError = 1;
inline constexpr int kExitNonexistence = 2;
inline constexpr int kExitNotConverged = 3;
inline constexpr int kExitCancelled = 130;

enum class Subcommand { fit, simulate, report };
enum class Format { tsv, json };

inline Format parse_format(std::string_view s) {
  if (s == "tsv") return Format::tsv;
  if (s == "json") return Format::json;
  throw InputError("unknown format '" + std::string(s) + "' (expected tsv or json)");
}

struct RunConfig {
  Subcommand subcommand = Subcommand::fit;

  // fit
  std::string edges;
  std::string node_attrs;
  std::string combinators;  // e.g. "equal:dept,equal:gender"
  std::string covariates;   // pairwise file
  std::optional<std::size_t> nodes;
  bool one_based = false;
  bool joint = false;  // dense joint Newton instead of the two-stage solver
  Normalization normalization = Normalization::alpha_n_beta_n_zero_with_mu;
  SolverConfig solver;
  double ci_level = 0.95;

  // simulate
  std::vector<std::size_t> sim_n{100};
  std::vector<double> sim_c{0.0};
  std::size_t reps = 1000;
  std::string pairs;  // "1:2,50:51"; empty means the default five
  bool fix_covariates = false;
  std::string emit_raw;
  std::uint64_t seed = kDefaultSeed;
  unsigned threads = 0;  // 0: POISSONET_THREADS or hardware count

  // report
  std::string input;

  // all
  std::string out;  // empty: stdout
  Format format = Format::tsv;

  void validate() const {
    solver.validate();
    if (!(ci_level > 0.0 && ci_level < 1.0)) throw InputError("--ci-level must lie in (0, 1)");
    switch (subcommand) {
      case Subcommand::fit: {
        if (edges.empty()) throw InputError("fit needs --edges");
        const bool attrs = !node_attrs.empty(), combs = !combinators.empty(), pairwise = !covariates.empty();
        if (attrs != combs) throw InputError("--node-attrs and --combinators must be given together");
        if (attrs && pairwise) throw InputError("give either --node-attrs with --combinators or --covariates, not both");
        break;
      }
      case Subcommand::simulate:
        if (sim_n.empty() || sim_c.empty()) throw InputError("simulate needs at least one --n and one --c");
        for (auto n : sim_n)
          if (n < 2) throw InputError("--n must be at least 2");
        for (auto c : sim_c)
          if (!(c >= 0.0) || !std::isfinite(c)) throw InputError("--c values must be finite and >= 0");
        if (reps < 1) throw InputError("--reps must be at least 1");
        break;
      case Subcommand::report:
        if (input.empty()) throw InputError("report needs --in");
        break;
    }
  }
};

/// Set from a signal handler; simulations stop between replications.
inline std::atomic<bool>& cancel_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

namespace detail {

inline std::ifstream open_in(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open '" + path + "'");
  return f;
}

/// Writes `body` to cfg.out, or to `fallback` when no path is set.
template <class Body>
void emit(const std::string& path, std::ostream& fallback, Body&& body) {
  if (path.empty()) {
    body(fallback);
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write '" + path + "'");
  body(f);
}

inline std::vector<std::pair<std::size_t, std::size_t>> parse_pairs(std::string_view text, std::size_t n) {
  if (text.empty()) return default_contrast_pairs(n);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const auto piece = text.substr(0, comma);
    const auto colon = piece.find(':');
    const auto i = colon == std::string_view::npos ? std::nullopt : io::detail::parse_number<std::size_t>(piece.substr(0, colon));
    const auto j = colon == std::string_view::npos ? std::nullopt : io::detail::parse_number<std::size_t>(piece.substr(colon + 1));
    if (!i || !j) throw InputError("pair '" + std::string(piece) + "' must look like i:j");
    out.emplace_back(*i, *j);
    if (comma == std::string_view::npos) break;
    text = text.substr(comma + 1);
  }
  return out;
}

inline std::string join_ids(const std::vector<std::size_t>& ids, std::size_t shift) {
  std::string s;
  for (std::size_t k = 0; k < ids.size(); ++k) s += (k ? "," : "") + std::to_string(ids[k] + shift);
  return s;
}

}  // namespace detail

/// Reads inputs, fits, runs inference and writes the report.
/// Exit 0 on convergence, 2 when the MLE does not exist, 3 when the solver
/// did not converge, 1 on input errors (reported on `err`).
inline int cmd_fit(const RunConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    cfg.validate();
    auto edge_file = detail::open_in(cfg.edges);
    const io::EdgeList el = io::read_edge_list(edge_file, cfg.one_based, cfg.edges);

    std::optional<NodeAttributeTable> attrs;
    if (!cfg.node_attrs.empty()) {
      auto f = detail::open_in(cfg.node_attrs);
      attrs = io::read_node_attributes(f, cfg.one_based, cfg.node_attrs);
    }
    std::size_t n = cfg.nodes.value_or(attrs ? attrs->rows() : el.nodes);
    if (attrs && attrs->rows() != n)
      throw InputError("--nodes is " + std::to_string(n) + " but the attribute table lists " +
                       std::to_string(attrs->rows()) + " nodes");
    const WeightedDigraph g = io::to_graph(el, n);

    CovariateTensor z(n);
    std::vector<std::string> names;
    if (attrs) {
      const auto combs = parse_combinators(cfg.combinators);
      z = build_covariates(*attrs, combs);
      for (const auto& c : combs) names.push_back(c.label());
    } else if (!cfg.covariates.empty()) {
      auto f = detail::open_in(cfg.covariates);
      io::PairwiseCovariates pc = io::read_pairwise_covariates(f, n, cfg.one_based, cfg.covariates);
      z = std::move(pc.z);
      names = std::move(pc.names);
    }

    const FitResult fr = cfg.joint ? fit_joint(g, z, cfg.solver, cfg.normalization)
                                   : fit(g, z, cfg.solver, cfg.normalization);
    const std::size_t shift = cfg.one_based ? 1 : 0;

    std::optional<InferenceReport> inf;
    int code = kExitOk;
    if (!fr.exists) {
      code = kExitNonexistence;
      err << "MLE does not exist: " << fr.message << '\n';
      if (!fr.flagged_nodes.empty())
        err << "  zero-degree nodes: " << detail::join_ids(fr.flagged_nodes, shift) << '\n';
      if (!fr.escaped_nodes.empty())
        err << "  diverging nodes: " << detail::join_ids(fr.escaped_nodes, shift) << '\n';
    } else if (!fr.converged) {
      code = kExitNotConverged;
      err << "solver did not converge: " << fr.message << '\n';
    } else {
      try {
        inf = infer(fr.state, z, cfg.ci_level);
      } catch (const SingularMatrixError& e) {
        code = kExitNotConverged;
        err << "inference failed: " << e.what() << '\n';
      }
    }

    const io::FitReportInput rep{&g, &fr, inf ? &*inf : nullptr, names, cfg.one_based};
    detail::emit(cfg.out, out, [&](std::ostream& o) {
      if (cfg.format == Format::json) io::write_fit_json(o, rep);
      else io::write_fit_tsv(o, rep);
    });
    return code;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInputError;
  }
}

/// Runs one study per (n, c) cell and writes a combined report. Exit 0 when
/// every cell completed, 130 after cancellation (a partial report is still written).
inline int cmd_simulate(const RunConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    cfg.validate();
    StudyOptions opt;
    opt.threads = cfg.threads ? cfg.threads : threads_from_env();
    opt.cancel = &cancel_flag();

    std::vector<SimulationReport> reports;
    bool cancelled = false;
    for (std::size_t n : cfg.sim_n) {
      for (double c : cfg.sim_c) {
        SimDesign d;
        d.n = n;
        d.c = c;
        d.reps = cfg.reps;
        d.seed = cfg.seed;
        d.ci_level = cfg.ci_level;
        d.contrast_pairs = detail::parse_pairs(cfg.pairs, n);
        d.fix_covariates = cfg.fix_covariates;
        d.solver = cfg.solver;
        d.normalization = Normalization::alpha_n_beta_n_zero_with_mu;
        d.validate();
        reports.push_back(run_study(d, opt));
        const auto& r = reports.back();
        err << "cell n=" << n << " c=" << c << ": " << r.completed << "/" << d.reps << " replications, "
            << r.nonexistent << " without MLE, " << r.failed << " failed\n";
        for (auto s : r.nonexistent_seeds) err << "  nonexistent MLE at trial seed " << s << '\n';
        if (r.cancelled) {
          cancelled = true;
          break;
        }
      }
      if (cancelled) break;
    }

    detail::emit(cfg.out, out, [&](std::ostream& o) {
      if (cfg.format == Format::json) io::write_simulation_json(o, reports);
      else io::write_simulation_tsv(o, reports);
    });
    if (!cfg.emit_raw.empty()) {
      std::ofstream raw(cfg.emit_raw, std::ios::binary);
      if (!raw) throw InputError("cannot write '" + cfg.emit_raw + "'");
      io::write_raw_trials(raw, reports);
    }
    if (cancelled) {
      err << "cancelled; partial report written\n";
      return kExitCancelled;
    }
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInputError;
  }
}

namespace detail {

inline std::string num(const nlohmann::json& v, const char* spec) {
  if (!v.is_number()) return "NA";
  return io::detail::fmt(spec, v.get<double>());
}

inline void render_fit_tsv(const nlohmann::json& j, std::ostream& o) {
  o << "# schema_version=" << j.at("schema_version").get<int>() << '\n';
  o << "# normalization=" << j.at("normalization").get<std::string>() << '\n';
  o << "# converged=" << (j.at("converged").get<bool>() ? "true" : "false")
    << " exists=" << (j.at("exists").get<bool>() ? "true" : "false") << '\n';
  if (const auto msg = j.value("message", std::string()); !msg.empty()) o << "# message=" << msg << '\n';
  if (j.contains("mu")) {
    const auto& mu = j["mu"];
    o << "## mu\nestimate\tse\tp_value\n"
      << num(mu.at("estimate"), "%.6f") << '\t' << num(mu.value("se", nlohmann::json()), "%.6f") << '\t'
      << num(mu.value("p_value", nlohmann::json()), "%.3e") << '\n';
  }
  o << "## nodes\nnode\td\talpha\talpha_se\tb\tbeta\tbeta_se\n";
  for (const auto& r : j.at("nodes_table"))
    o << r.at("node").get<std::size_t>() << '\t' << r.at("out_degree").get<long long>() << '\t'
      << num(r.at("alpha"), "%.6f") << '\t' << num(r.value("alpha_se", nlohmann::json()), "%.6f") << '\t'
      << r.at("in_degree").get<long long>() << '\t' << num(r.at("beta"), "%.6f") << '\t'
      << num(r.value("beta_se", nlohmann::json()), "%.6f") << '\n';
  if (j.contains("gamma")) {
    o << "## gamma\ncovariate\tgamma\tgamma_bc\tse\tp_value\tp_value_bc\n";
    for (const auto& g : j["gamma"]) {
      o << g.at("name").get<std::string>() << '\t';
      if (g.contains("uncorrected")) {
        const auto& raw = g["uncorrected"];
        const auto& bc = g["corrected"];
        o << num(raw.at("estimate"), "%.6f") << '\t' << num(bc.at("estimate"), "%.6f") << '\t'
          << num(raw.at("se"), "%.6e") << '\t' << num(raw.at("p_value"), "%.3e") << '\t'
          << num(bc.at("p_value"), "%.3e") << '\n';
      } else {
        o << num(g.at("estimate"), "%.6f") << "\tNA\tNA\tNA\tNA\n";
      }
    }
  }
}

inline void render_simulation_tsv(const nlohmann::json& j, std::ostream& o) {
  o << "# schema_version=" << j.at("schema_version").get<int>() << '\n';
  o << "## alpha_contrasts\nn\tc\tpair\tcoverage\tlength\tused\n";
  for (const auto& c : j.at("cells")) {
    auto row = [&](const std::string& label, const nlohmann::json& cell) {
      o << c.at("n").get<std::size_t>() << '\t' << num(c.at("c"), "%g") << '\t' << label << '\t'
        << num(cell.at("coverage"), "%.2f") << '\t' << num(cell.at("length"), "%.4f") << '\t'
        << cell.at("used").get<std::size_t>() << '\n';
    };
    for (const auto& cell : c.at("alpha_contrasts")) row(cell.at("pair").get<std::string>(), cell);
    if (c.contains("mu")) row("(0,0)", c["mu"]);
  }
  o << "## gamma\nn\tc\tcovariate\tcoverage_bc\tcoverage\tlength\tmean_gamma\tmean_gamma_bc\tnonexistence_pct\n";
  for (const auto& c : j.at("cells"))
    for (const auto& g : c.at("gamma"))
      o << c.at("n").get<std::size_t>() << '\t' << num(c.at("c"), "%g") << "\tgamma" << g.at("index").get<int>()
        << '\t' << num(g.at("coverage_bc"), "%.2f") << '\t' << num(g.at("coverage"), "%.2f") << '\t'
        << num(g.at("length"), "%.4f") << '\t' << num(g.at("mean_gamma"), "%.6f") << '\t'
        << num(g.at("mean_gamma_bc"), "%.6f") << '\t' << num(c.at("nonexistence_pct"), "%.2f") << '\n';
  o << "## status\nn\tc\treps\tcompleted\tnonexistent\tfailed\tcancelled\n";
  for (const auto& c : j.at("cells"))
    o << c.at("n").get<std::size_t>() << '\t' << num(c.at("c"), "%g") << '\t' << c.at("reps").get<std::size_t>()
      << '\t' << c.at("completed").get<std::size_t>() << '\t' << c.at("nonexistent").get<std::size_t>() << '\t'
      << c.at("failed").get<std::size_t>() << '\t' << (c.at("cancelled").get<bool>() ? "true" : "false") << '\n';
}

}  // namespace detail

/// Re-renders a saved JSON report (fit or simulation) as TSV or normalized JSON.
inline int cmd_report(const RunConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    cfg.validate();
    auto f = detail::open_in(cfg.input);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(cfg.input + ": not a JSON report (" + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("schema_version") || !j.contains("kind"))
      throw InputError(cfg.input + ": missing schema_version or kind");
    if (j["schema_version"] != io::kSchemaVersion)
      throw InputError(cfg.input + ": unsupported schema_version " + j["schema_version"].dump());
    const std::string kind = j["kind"].get<std::string>();
    if (kind != "fit" && kind != "simulation") throw InputError(cfg.input + ": unknown report kind '" + kind + "'");
    try {
      std::ostringstream body;
      if (cfg.format == Format::json) body << j.dump(2) << '\n';
      else if (kind == "fit") detail::render_fit_tsv(j, body);
      else detail::render_simulation_tsv(j, body);
      detail::emit(cfg.out, out, [&](std::ostream& o) { o << body.str(); });
    } catch (const nlohmann::json::exception& e) {
      throw InputError(cfg.input + ": malformed report (" + e.what() + ")");
    }
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInputError;
  }
}

inline int run(const RunConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  switch (cfg.subcommand) {
    case Subcommand::fit: return cmd_fit(cfg, out, err);
    case Subcommand::simulate: return cmd_simulate(cfg, out, err);
    case Subcommand::report: return cmd_report(cfg, out, err);
  }
  return kExitInputError;
}

}  // namespace poissonet::cli
