#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "poissonet/errors.hpp"
#include "poissonet/graph.hpp"
#include "poissonet/inference.hpp"
#include "poissonet/model.hpp"
#include "poissonet/simulator.hpp"
#include "poissonet/solver.hpp"

namespace poissonet::io {

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// TSV scanning

namespace detail {

/// Splits on tabs. Leading/trailing spaces around fields are trimmed, so
/// files aligned with spaces after the tab still parse.
inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  while (true) {
    const auto tab = line.find('\t');
    std::string_view f = line.substr(0, tab);
    while (!f.empty() && (f.front() == ' ' || f.front() == '\r')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\r')) f.remove_suffix(1);
    out.push_back(f);
    if (tab == std::string_view::npos) break;
    line.remove_prefix(tab + 1);
  }
  return out;
}

inline bool blank_or_comment(std::string_view line) {
  for (char ch : line) {
    if (ch == '#') return true;
    if (ch != ' ' && ch != '\t' && ch != '\r') return false;
  }
  return true;
}

template <class T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

[[noreturn]] inline void fail(std::string_view source, std::size_t line, const std::string& what) {
  throw InputError(std::string(source) + ":" + std::to_string(line) + ": " + what);
}

/// Reads a node id and shifts it to 0-based.
inline std::size_t node_id(std::string_view field, bool one_based, std::string_view source, std::size_t line) {
  const auto v = parse_number<long long>(field);
  if (!v) fail(source, line, "node id '" + std::string(field) + "' is not an integer");
  const long long shifted = *v - (one_based ? 1 : 0);
  if (shifted < 0) fail(source, line, "node id " + std::to_string(*v) + (one_based ? " is below 1" : " is negative"));
  return static_cast<std::size_t>(shifted);
}

struct Row {
  std::size_t line = 0;
  std::vector<std::string_view> fields;
};

/// Non-blank, non-comment lines with their line numbers. Backed by `storage`.
inline std::vector<Row> read_rows(std::istream& in, std::vector<std::string>& storage) {
  storage.clear();
  std::vector<std::size_t> numbers;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (blank_or_comment(line)) continue;
    storage.push_back(std::move(line));
    numbers.push_back(no);
  }
  std::vector<Row> rows;
  rows.reserve(storage.size());
  for (std::size_t k = 0; k < storage.size(); ++k) rows.push_back({numbers[k], split_tabs(storage[k])});
  return rows;
}

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Edge lists

struct EdgeList {
  std::size_t nodes = 0;  // 1 + largest id seen
  std::vector<Edge> edges;
};

/// Tab-separated `src dst [weight]`, one edge per line. An optional header
/// row (first field not an integer) is skipped; '#' starts a comment line.
/// A missing weight counts as 1. Duplicate pairs are summed later.
inline EdgeList read_edge_list(std::istream& in, bool one_based = false, std::string_view source = "edges") {
  std::vector<std::string> storage;
  const auto rows = detail::read_rows(in, storage);
  EdgeList out;
  bool first = true;
  for (const auto& r : rows) {
    const bool header = first && !detail::parse_number<long long>(r.fields[0]);
    first = false;
    if (header) continue;
    if (r.fields.size() < 2 || r.fields.size() > 3) detail::fail(source, r.line, "expected 2 or 3 tab-separated fields");
    Edge e;
    e.src = detail::node_id(r.fields[0], one_based, source, r.line);
    e.dst = detail::node_id(r.fields[1], one_based, source, r.line);
    if (e.src == e.dst) detail::fail(source, r.line, "self-loop on node " + std::string(r.fields[0]));
    e.weight = 1;
    if (r.fields.size() == 3) {
      const auto w = detail::parse_number<std::int64_t>(r.fields[2]);
      if (!w) detail::fail(source, r.line, "weight '" + std::string(r.fields[2]) + "' is not an integer");
      if (*w < 0) detail::fail(source, r.line, "negative weight");
      e.weight = *w;
    }
    out.nodes = std::max({out.nodes, e.src + 1, e.dst + 1});
    out.edges.push_back(e);
  }
  return out;
}

/// Builds the graph on `nodes` nodes (at least the largest id + 1).
inline WeightedDigraph to_graph(const EdgeList& el, std::optional<std::size_t> nodes = std::nullopt) {
  const std::size_t n = nodes.value_or(el.nodes);
  if (n < el.nodes)
    throw InputError("edge list mentions node " + std::to_string(el.nodes - 1) + " but only " + std::to_string(n) +
                     " nodes are declared");
  return WeightedDigraph::from_edges(n, el.edges);
}

inline void write_edge_list(std::ostream& out, const WeightedDigraph& g, bool one_based = false) {
  const std::size_t shift = one_based ? 1 : 0;
  out << "src\tdst\tweight\n";
  for (const auto& e : g.edges()) out << e.src + shift << '\t' << e.dst + shift << '\t' << e.weight << '\n';
}

// ---------------------------------------------------------------------------
// Node attributes

/// Header row `id name1 name2 ...`, then one row per node. Ids must cover
/// every node exactly once. A column is continuous when every value parses
/// as a number, categorical otherwise. Empty or "NA" cells are rejected.
inline NodeAttributeTable read_node_attributes(std::istream& in, bool one_based = false,
                                               std::string_view source = "node-attrs") {
  std::vector<std::string> storage;
  const auto rows = detail::read_rows(in, storage);
  if (rows.empty()) throw InputError(std::string(source) + ": empty file");
  const auto& head = rows.front();
  if (head.fields.size() < 2) detail::fail(source, head.line, "header needs an id column and at least one attribute");
  const std::size_t cols = head.fields.size() - 1;
  const std::size_t n = rows.size() - 1;

  std::vector<std::vector<std::string>> cells(cols, std::vector<std::string>(n));
  std::vector<bool> seen(n, false);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.fields.size() != cols + 1)
      detail::fail(source, row.line, "expected " + std::to_string(cols + 1) + " fields, found " +
                                         std::to_string(row.fields.size()));
    const std::size_t id = detail::node_id(row.fields[0], one_based, source, row.line);
    if (id >= n) detail::fail(source, row.line, "node id " + std::string(row.fields[0]) + " outside the " +
                                                    std::to_string(n) + " listed nodes");
    if (seen[id]) detail::fail(source, row.line, "duplicate node id " + std::string(row.fields[0]));
    seen[id] = true;
    for (std::size_t c = 0; c < cols; ++c) {
      const auto v = row.fields[c + 1];
      if (v.empty() || v == "NA" || v == "NaN" || v == "nan")
        detail::fail(source, row.line, "missing value for '" + std::string(head.fields[c + 1]) + "'");
      cells[c][id] = std::string(v);
    }
  }

  NodeAttributeTable table(n);
  for (std::size_t c = 0; c < cols; ++c) {
    std::vector<double> numeric;
    numeric.reserve(n);
    for (const auto& v : cells[c]) {
      const auto x = detail::parse_number<double>(v);
      if (!x || !std::isfinite(*x)) break;
      numeric.push_back(*x);
    }
    std::string name(head.fields[c + 1]);
    if (numeric.size() == n) table.add_continuous(std::move(name), std::move(numeric));
    else table.add_categorical(std::move(name), std::move(cells[c]));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Pairwise covariates

struct PairwiseCovariates {
  std::vector<std::string> names;
  CovariateTensor z;
};

/// Header `src dst name1 ... namep`, then one row per ordered pair i != j.
/// Every pair must appear exactly once; there is no imputation.
inline PairwiseCovariates read_pairwise_covariates(std::istream& in, std::size_t n, bool one_based = false,
                                                   std::string_view source = "covariates") {
  std::vector<std::string> storage;
  const auto rows = detail::read_rows(in, storage);
  if (rows.empty()) throw InputError(std::string(source) + ": empty file");
  const auto& head = rows.front();
  if (head.fields.size() < 3) detail::fail(source, head.line, "header needs src, dst and at least one covariate");
  const std::size_t p = head.fields.size() - 2;
  const auto N = static_cast<Eigen::Index>(n);

  PairwiseCovariates out{{}, CovariateTensor(n)};
  for (std::size_t k = 0; k < p; ++k) out.names.emplace_back(head.fields[k + 2]);
  std::vector<Eigen::MatrixXd> layers(p, Eigen::MatrixXd::Zero(N, N));
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> seen = decltype(seen)::Constant(N, N, false);

  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.fields.size() != p + 2)
      detail::fail(source, row.line, "expected " + std::to_string(p + 2) + " fields, found " +
                                         std::to_string(row.fields.size()));
    const std::size_t i = detail::node_id(row.fields[0], one_based, source, row.line);
    const std::size_t j = detail::node_id(row.fields[1], one_based, source, row.line);
    if (i >= n || j >= n) detail::fail(source, row.line, "node id outside the graph's " + std::to_string(n) + " nodes");
    if (i == j) detail::fail(source, row.line, "diagonal pair");
    const auto I = static_cast<Eigen::Index>(i), J = static_cast<Eigen::Index>(j);
    if (seen(I, J)) detail::fail(source, row.line, "duplicate pair");
    seen(I, J) = true;
    for (std::size_t k = 0; k < p; ++k) {
      const auto x = detail::parse_number<double>(row.fields[k + 2]);
      if (!x || !std::isfinite(*x))
        detail::fail(source, row.line, "covariate '" + out.names[k] + "' has a missing or non-numeric value");
      layers[k](I, J) = *x;
    }
  }
  const std::size_t present = static_cast<std::size_t>(seen.count());
  if (present != n * (n - 1))
    throw InputError(std::string(source) + ": " + std::to_string(n * (n - 1) - present) +
                     " ordered pairs have no covariates");
  out.z = CovariateTensor(n, std::move(layers));
  return out;
}

// ---------------------------------------------------------------------------
// Fit reports

struct FitReportInput {
  const WeightedDigraph* graph = nullptr;
  const FitResult* fit = nullptr;
  const InferenceReport* inference = nullptr;  // null when the fit did not produce a usable estimate
  std::vector<std::string> covariate_names;
  bool one_based = false;
};

inline nlohmann::ordered_json wald_json(const WaldSummary& w) {
  return {{"estimate", w.estimate}, {"se", w.se}, {"z", w.z}, {"p_value", w.p_value}, {"ci", {w.lower, w.upper}}};
}

inline nlohmann::ordered_json fit_report_json(const FitReportInput& in) {
  using nlohmann::ordered_json;
  const auto& fr = *in.fit;
  const auto& s = fr.state;
  const std::size_t shift = in.one_based ? 1 : 0;
  ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "fit";
  j["nodes"] = s.nodes();
  j["covariates"] = s.dim();
  j["normalization"] = std::string(to_string(s.normalization));
  j["converged"] = fr.converged;
  j["exists"] = fr.exists;
  j["inner_iterations"] = fr.inner_iters;
  j["outer_iterations"] = fr.outer_iters;
  j["score_norm_theta"] = fr.score_norm_theta;
  j["score_norm_gamma"] = fr.score_norm_gamma;
  auto ids = [&](const std::vector<std::size_t>& v) {
    ordered_json a = ordered_json::array();
    for (auto x : v) a.push_back(x + shift);
    return a;
  };
  j["flagged_nodes"] = ids(fr.flagged_nodes);
  j["escaped_nodes"] = ids(fr.escaped_nodes);
  j["message"] = fr.message;

  const DegreeSequences deg = degrees(*in.graph);
  ordered_json nodes = ordered_json::array();
  for (std::size_t i = 0; i < s.nodes(); ++i) {
    const auto I = static_cast<Eigen::Index>(i);
    ordered_json row{{"node", i + shift}, {"out_degree", deg.out[i]}, {"alpha", s.alpha(I)}};
    if (in.inference) row["alpha_se"] = in.inference->alpha_se(I);
    row["in_degree"] = deg.in[i];
    row["beta"] = s.beta(I);
    if (in.inference) row["beta_se"] = in.inference->beta_se(I);
    nodes.push_back(std::move(row));
  }
  j["nodes_table"] = std::move(nodes);

  if (carries_mu(s.normalization)) {
    if (in.inference && in.inference->mu) j["mu"] = wald_json(*in.inference->mu);
    else j["mu"] = {{"estimate", s.mu}};
  }
  if (s.dim() > 0) {
    j["ci_level"] = in.inference ? in.inference->ci_level : 0.95;
    ordered_json g = ordered_json::array();
    for (Eigen::Index k = 0; k < s.gamma.size(); ++k) {
      const auto uk = static_cast<std::size_t>(k);
      ordered_json row;
      row["name"] = uk < in.covariate_names.size() ? in.covariate_names[uk] : "z" + std::to_string(k + 1);
      if (in.inference) {
        row["uncorrected"] = wald_json(in.inference->gamma[uk]);
        row["corrected"] = wald_json(in.inference->gamma_corrected[uk]);
        row["bias_term"] = in.inference->bias_hat(k);
      } else {
        row["estimate"] = s.gamma(k);
      }
      g.push_back(std::move(row));
    }
    j["gamma"] = std::move(g);
  }
  return j;
}

inline void write_fit_json(std::ostream& out, const FitReportInput& in) { out << fit_report_json(in).dump(2) << '\n'; }

/// Two tab-separated tables, per-node propensities then covariate effects,
/// with a short key=value preamble.
inline void write_fit_tsv(std::ostream& out, const FitReportInput& in) {
  using detail::fmt;
  const auto& fr = *in.fit;
  const auto& s = fr.state;
  const std::size_t shift = in.one_based ? 1 : 0;
  out << "# schema_version=" << kSchemaVersion << '\n';
  out << "# normalization=" << to_string(s.normalization) << '\n';
  out << "# converged=" << (fr.converged ? "true" : "false") << " exists=" << (fr.exists ? "true" : "false") << '\n';
  if (!fr.message.empty()) out << "# message=" << fr.message << '\n';
  if (carries_mu(s.normalization)) {
    out << "## mu\nestimate\tse\tp_value\n" << fmt("%.6f", s.mu);
    if (in.inference && in.inference->mu)
      out << '\t' << fmt("%.6f", in.inference->mu->se) << '\t' << fmt("%.3e", in.inference->mu->p_value);
    else
      out << "\tNA\tNA";
    out << '\n';
  }
  const DegreeSequences deg = degrees(*in.graph);
  out << "## nodes\nnode\td\talpha\talpha_se\tb\tbeta\tbeta_se\n";
  for (std::size_t i = 0; i < s.nodes(); ++i) {
    const auto I = static_cast<Eigen::Index>(i);
    out << i + shift << '\t' << deg.out[i] << '\t' << fmt("%.6f", s.alpha(I)) << '\t'
        << (in.inference ? fmt("%.6f", in.inference->alpha_se(I)) : "NA") << '\t' << deg.in[i] << '\t'
        << fmt("%.6f", s.beta(I)) << '\t' << (in.inference ? fmt("%.6f", in.inference->beta_se(I)) : "NA") << '\n';
  }
  if (s.dim() > 0) {
    out << "## gamma\ncovariate\tgamma\tgamma_bc\tse\tp_value\tp_value_bc\n";
    for (Eigen::Index k = 0; k < s.gamma.size(); ++k) {
      const auto uk = static_cast<std::size_t>(k);
      out << (uk < in.covariate_names.size() ? in.covariate_names[uk] : "z" + std::to_string(k + 1)) << '\t'
          << fmt("%.6f", s.gamma(k)) << '\t';
      if (in.inference) {
        const auto& raw = in.inference->gamma[uk];
        const auto& bc = in.inference->gamma_corrected[uk];
        out << fmt("%.6f", bc.estimate) << '\t' << fmt("%.6e", raw.se) << '\t' << fmt("%.3e", raw.p_value) << '\t'
            << fmt("%.3e", bc.p_value) << '\n';
      } else {
        out << "NA\tNA\tNA\tNA\n";
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Simulation reports

/// Long-format TSV for one or more design cells. Numbers use
/// fixed formatting so equal reports are byte-identical.
inline void write_simulation_tsv(std::ostream& out, const std::vector<SimulationReport>& reps) {
  using detail::fmt;
  out << "# schema_version=" << kSchemaVersion << '\n';
  out << "## alpha_contrasts\nn\tc\tpair\tcoverage\tlength\tused\n";
  for (const auto& r : reps) {
    auto row = [&](const CellSummary& cell) {
      out << r.design.n << '\t' << fmt("%g", r.design.c) << '\t' << cell.label << '\t' << fmt("%.2f", cell.coverage)
          << '\t' << fmt("%.4f", cell.mean_length) << '\t' << cell.used << '\n';
    };
    for (const auto& cell : r.contrasts) row(cell);
    if (r.mu) row(*r.mu);
  }
  out << "## gamma\nn\tc\tcovariate\tcoverage_bc\tcoverage\tlength\tmean_gamma\tmean_gamma_bc\tnonexistence_pct\n";
  for (const auto& r : reps)
    for (const auto& g : r.gamma)
      out << r.design.n << '\t' << fmt("%g", r.design.c) << "\tgamma" << g.index + 1 << '\t'
          << fmt("%.2f", g.coverage_corrected) << '\t' << fmt("%.2f", g.coverage_uncorrected) << '\t'
          << fmt("%.4f", g.mean_length) << '\t' << fmt("%.6f", g.mean_estimate) << '\t'
          << fmt("%.6f", g.mean_corrected) << '\t' << fmt("%.2f", r.nonexistence_pct) << '\n';
  out << "## status\nn\tc\treps\tcompleted\tnonexistent\tfailed\tcancelled\n";
  for (const auto& r : reps)
    out << r.design.n << '\t' << fmt("%g", r.design.c) << '\t' << r.design.reps << '\t' << r.completed << '\t'
        << r.nonexistent << '\t' << r.failed << '\t' << (r.cancelled ? "true" : "false") << '\n';
}

inline nlohmann::ordered_json simulation_json(const std::vector<SimulationReport>& reps) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "simulation";
  ordered_json cells = ordered_json::array();
  for (const auto& r : reps) {
    ordered_json c;
    c["n"] = r.design.n;
    c["c"] = r.design.c;
    c["reps"] = r.design.reps;
    c["seed"] = r.design.seed;
    c["ci_level"] = r.design.ci_level;
    c["fix_covariates"] = r.design.fix_covariates;
    c["normalization"] = std::string(to_string(r.design.normalization));
    ordered_json contrasts = ordered_json::array();
    for (const auto& cell : r.contrasts)
      contrasts.push_back({{"pair", cell.label}, {"truth", cell.truth}, {"coverage", cell.coverage},
                           {"length", cell.mean_length}, {"used", cell.used}});
    c["alpha_contrasts"] = std::move(contrasts);
    if (r.mu)
      c["mu"] = {{"truth", r.mu->truth}, {"coverage", r.mu->coverage}, {"length", r.mu->mean_length},
                 {"used", r.mu->used}};
    ordered_json gamma = ordered_json::array();
    for (const auto& g : r.gamma)
      gamma.push_back({{"index", g.index + 1}, {"truth", g.truth}, {"coverage_bc", g.coverage_corrected},
                       {"coverage", g.coverage_uncorrected}, {"length", g.mean_length},
                       {"mean_gamma", g.mean_estimate}, {"mean_gamma_bc", g.mean_corrected}, {"used", g.used}});
    c["gamma"] = std::move(gamma);
    c["completed"] = r.completed;
    c["nonexistent"] = r.nonexistent;
    c["nonexistence_pct"] = r.nonexistence_pct;
    c["nonexistent_seeds"] = r.nonexistent_seeds;
    c["failed"] = r.failed;
    c["cancelled"] = r.cancelled;
    cells.push_back(std::move(c));
  }
  j["cells"] = std::move(cells);
  return j;
}

inline void write_simulation_json(std::ostream& out, const std::vector<SimulationReport>& reps) {
  out << simulation_json(reps).dump(2) << '\n';
}

/// One line per replication: seed, status, contrast estimates and SEs, mu,
/// and gamma (raw, corrected, SE). Whitespace-separated so gnuplot can read it.
inline void write_raw_trials(std::ostream& out, const std::vector<SimulationReport>& reps) {
  using detail::fmt;
  out << "n\tc\ttrial\tseed\tstatus";
  if (!reps.empty()) {
    const auto& d = reps.front().design;
    for (const auto& [i, j] : d.contrast_pairs) {
      const std::string tag = std::to_string(i) + "_" + std::to_string(j);
      out << "\txi_" << tag << "\tse_" << tag;
    }
    if (d.include_mu) out << "\tmu\tmu_se";
    for (Eigen::Index k = 1; k <= d.gamma_true.size(); ++k)
      out << "\tgamma" << k << "\tgamma" << k << "_bc\tgamma" << k << "_se";
  }
  out << '\n';
  for (const auto& r : reps)
    for (const auto& t : r.trials) {
      if (!t.ran) continue;
      const char* status = t.usable() ? "ok" : (!t.error.empty() ? "error" : (!t.exists ? "nonexistent" : "unconverged"));
      out << r.design.n << '\t' << fmt("%g", r.design.c) << '\t' << t.index << '\t' << t.seed << '\t' << status;
      if (t.usable()) {
        for (std::size_t c = 0; c < t.contrast_estimate.size(); ++c)
          out << '\t' << fmt("%.9g", t.contrast_estimate[c]) << '\t' << fmt("%.9g", t.contrast_se[c]);
        if (r.design.include_mu) out << '\t' << fmt("%.9g", t.mu_estimate) << '\t' << fmt("%.9g", t.mu_se);
        for (Eigen::Index k = 0; k < t.gamma_hat.size(); ++k)
          out << '\t' << fmt("%.9g", t.gamma_hat(k)) << '\t' << fmt("%.9g", t.gamma_bc(k)) << '\t'
              << fmt("%.9g", t.gamma_se(k));
      }
      out << '\n';
    }
}

}  // namespace poissonet::io
