#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "poissonet/errors.hpp"
#include "poissonet/graph.hpp"
#include "poissonet/inference.hpp"
#include "poissonet/model.hpp"
#include "poissonet/solver.hpp"

namespace poissonet {

inline constexpr std::uint64_t kDefaultSeed = 20220101;

// ---------------------------------------------------------------------------
// Random streams
//
// Trial t of a study with master seed s draws from std::mt19937_64 seeded
// with the (t+1)-th output of a SplitMix64 generator started at s, i.e.
// splitmix64_mix(s + (t+1) * 0x9E3779B97F4A7C15). Trials therefore depend
// only on (s, t) and can run in any order on any number of threads.

inline std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t trial_seed(std::uint64_t master, std::uint64_t trial) {
  return splitmix64_mix(master + (trial + 1) * 0x9E3779B97F4A7C15ULL);
}

// Stream reserved for covariates that stay fixed across replications.
inline std::uint64_t fixed_covariate_seed(std::uint64_t master) {
  return splitmix64_mix(master ^ 0xC0FFEE1234567890ULL);
}

// ---------------------------------------------------------------------------
// Design

/// Default contrast pairs for base size n: (1,2), (n/2, n/2+1),
/// (n-1, n), (1, n), (1, n/2).
inline std::vector<std::pair<std::size_t, std::size_t>> default_contrast_pairs(std::size_t n) {
  const std::size_t h = n / 2;
  return {{1, 2}, {h, h + 1}, {n - 1, n}, {1, n}, {1, h}};
}

struct SimDesign {
  std::size_t n = 100;  // base size; the network has n + 1 nodes labelled 0..n
  double c = 0.0;
  Eigen::VectorXd gamma_true = Eigen::Vector3d(1.0, 1.0, 1.0);
  std::optional<double> mu_true;  // defaults to -log(n)/4
  std::size_t reps = 1000;
  std::uint64_t seed = kDefaultSeed;
  double ci_level = 0.95;
  std::vector<std::pair<std::size_t, std::size_t>> contrast_pairs = default_contrast_pairs(100);
  bool include_mu = true;
  bool fix_covariates = false;
  Normalization normalization = Normalization::alpha_n_beta_n_zero_with_mu;
  SolverConfig solver;

  void validate() const {
    if (n < 2) throw InputError("simulation size n must be at least 2");
    if (!(c >= 0.0) || !std::isfinite(c)) throw InputError("heterogeneity slope c must be a finite value >= 0");
    if (reps < 1) throw InputError("reps must be at least 1");
    if (!(ci_level > 0.0 && ci_level < 1.0)) throw InputError("ci_level must lie in (0, 1)");
    if (gamma_true.size() != 3) throw InputError("the simulation design uses exactly three covariates");
    for (const auto& [i, j] : contrast_pairs)
      if (i > n || j > n || i == j) throw InputError("invalid contrast pair (" + std::to_string(i) + "," + std::to_string(j) + ")");
    if (include_mu && !carries_mu(normalization)) throw InputError("the mu cell needs a normalization that keeps mu");
    solver.validate();
  }
};

/// True parameters on n+1 nodes: alpha_i = beta_i = i c log(n) / n for
/// i = 0..n and mu = -log(n)/4. Node 0 has alpha = beta = 0, so the state is
/// already normalized under ref_node_first.
inline ParamState gen_parameters(std::size_t n, double c,
                                 const Eigen::VectorXd& gamma = Eigen::Vector3d(1.0, 1.0, 1.0)) {
  if (n < 2) throw InputError("n must be at least 2");
  if (!(c >= 0.0)) throw InputError("c must be nonnegative");
  const auto nodes = static_cast<Eigen::Index>(n + 1);
  const double ln = std::log(static_cast<double>(n));
  ParamState s;
  s.alpha = Eigen::VectorXd::LinSpaced(nodes, 0.0, static_cast<double>(n)) * (c * ln / static_cast<double>(n));
  s.beta = s.alpha;
  s.gamma = gamma;
  s.mu = -ln / 4.0;
  s.normalization = Normalization::ref_node_first;
  return s;
}

/// Three covariates on `nodes` nodes:
///   Z1 ~ N(0,1) i.i.d. per ordered pair,
///   Z2 = |X_i1 - X_j1| with X_i1 ~ Beta(2,2),
///   Z3 = X_i2 * X_j2 with X_i2 = 1 w.p. 0.3 and -1 w.p. 0.7.
inline CovariateTensor gen_covariates(std::size_t nodes, std::mt19937_64& rng) {
  const auto N = static_cast<Eigen::Index>(nodes);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::gamma_distribution<double> gamma2(2.0, 1.0);
  std::bernoulli_distribution plus_one(0.3);

  Eigen::MatrixXd z1 = Eigen::MatrixXd::Zero(N, N);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < N; ++j)
      if (i != j) z1(i, j) = normal(rng);

  Eigen::VectorXd x1(N), x2(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const double g1 = gamma2(rng);
    const double g2 = gamma2(rng);
    x1(i) = g1 / (g1 + g2);
  }
  for (Eigen::Index i = 0; i < N; ++i) x2(i) = plus_one(rng) ? 1.0 : -1.0;

  Eigen::MatrixXd z2(N, N), z3(N, N);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < N; ++j) {
      z2(i, j) = std::abs(x1(i) - x1(j));
      z3(i, j) = x2(i) * x2(j);
    }
  return CovariateTensor(nodes, {std::move(z1), std::move(z2), std::move(z3)});
}

inline CovariateTensor gen_covariates(std::size_t nodes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return gen_covariates(nodes, rng);
}

/// Independent Poisson draws a_ij ~ Poisson(lambda_ij), row-major order.
inline WeightedDigraph sample_network(const ParamState& truth, const CovariateTensor& z, std::mt19937_64& rng) {
  const Eigen::MatrixXd lambda = rate_matrix(truth, z);
  const auto N = lambda.rows();
  WeightMatrix a = WeightMatrix::Zero(N, N);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < N; ++j) {
      if (i == j || !(lambda(i, j) > 0.0)) continue;
      std::poisson_distribution<std::int64_t> draw(lambda(i, j));
      a(i, j) = draw(rng);
    }
  return WeightedDigraph(std::move(a));
}

inline WeightedDigraph sample_network(const ParamState& truth, const CovariateTensor& z, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_network(truth, z, rng);
}

// ---------------------------------------------------------------------------
// Replications

struct TrialRecord {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  bool ran = false;
  bool exists = false;
  bool converged = false;
  std::string error;
  int inner_iters = 0;
  int outer_iters = 0;
  std::vector<double> contrast_estimate;
  std::vector<double> contrast_se;
  double mu_estimate = 0.0;
  double mu_se = 0.0;
  Eigen::VectorXd gamma_hat;
  Eigen::VectorXd gamma_bc;
  Eigen::VectorXd gamma_se;

  bool usable() const { return ran && exists && converged && error.empty(); }
};

struct CellSummary {
  std::string label;
  std::size_t i = 0, j = 0;
  double truth = 0.0;
  double coverage = 0.0;     // percent
  double mean_length = 0.0;  // mean CI length
  std::size_t used = 0;
};

struct GammaSummary {
  std::size_t index = 0;
  double truth = 0.0;
  double coverage_corrected = 0.0;    // percent
  double coverage_uncorrected = 0.0;  // percent
  double mean_length = 0.0;
  double mean_estimate = 0.0;
  double mean_corrected = 0.0;
  std::size_t used = 0;
};

struct SimulationReport {
  SimDesign design;
  std::vector<CellSummary> contrasts;
  std::optional<CellSummary> mu;
  std::vector<GammaSummary> gamma;
  double nonexistence_pct = 0.0;
  std::size_t nonexistent = 0;
  std::size_t failed = 0;  // ran, MLE exists, but no convergence or a numerical error
  std::size_t completed = 0;
  bool cancelled = false;
  std::vector<std::uint64_t> nonexistent_seeds;
  std::vector<TrialRecord> trials;
};

struct StudyOptions {
  unsigned threads = 1;
  const std::atomic<bool>* cancel = nullptr;
};

/// POISSONET_THREADS if set to a positive integer, else the hardware count.
inline unsigned threads_from_env() {
  if (const char* v = std::getenv("POISSONET_THREADS")) {
    char* end = nullptr;
    const long t = std::strtol(v, &end, 10);
    if (end != v && *end == '\0' && t > 0) return static_cast<unsigned>(t);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace detail {

struct StudyContext {
  const SimDesign* design = nullptr;
  ParamState truth;  // in design.normalization
  std::optional<CovariateTensor> fixed_z;
};

inline StudyContext make_context(const SimDesign& d) {
  d.validate();
  StudyContext ctx;
  ctx.design = &d;
  ParamState raw = gen_parameters(d.n, d.c, d.gamma_true);
  if (d.mu_true) raw.mu = *d.mu_true;
  ctx.truth = renormalize(raw, d.normalization);
  if (d.fix_covariates) ctx.fixed_z = gen_covariates(d.n + 1, fixed_covariate_seed(d.seed));
  return ctx;
}

}  // namespace detail

/// One replication: draw covariates (unless fixed), sample, fit, infer.
inline TrialRecord run_trial(const SimDesign& d, const ParamState& truth, const CovariateTensor* fixed_z,
                             std::size_t index, std::uint64_t seed) {
  TrialRecord rec;
  rec.index = index;
  rec.seed = seed;
  rec.ran = true;
  try {
    std::mt19937_64 rng(seed);
    std::optional<CovariateTensor> drawn;
    if (!fixed_z) drawn = gen_covariates(d.n + 1, rng);
    const CovariateTensor& z = fixed_z ? *fixed_z : *drawn;
    const WeightedDigraph g = sample_network(truth, z, rng);

    const FitResult fr = fit(g, z, d.solver, d.normalization);
    rec.exists = fr.exists;
    rec.converged = fr.converged;
    rec.inner_iters = fr.inner_iters;
    rec.outer_iters = fr.outer_iters;
    if (!rec.exists || !rec.converged) return rec;

    const FisherBlocks fb = fisher_blocks(fr.state, z);
    for (const auto& [i, j] : d.contrast_pairs) {
      rec.contrast_estimate.push_back(contrast_value(fr.state, ContrastKind::xi, i, j));
      rec.contrast_se.push_back(contrast_se(fb, ContrastKind::xi, i, j));
    }
    const InferenceReport inf = infer(fr.state, z, d.ci_level);
    if (d.include_mu) {
      rec.mu_estimate = fr.state.mu;
      rec.mu_se = inf.mu->se;
    }
    rec.gamma_hat = fr.state.gamma;
    rec.gamma_bc = inf.gamma_bc;
    rec.gamma_se = inf.gamma_se;
  } catch (const Error& e) {
    rec.error = e.what();
  }
  return rec;
}

inline SimulationReport summarize(const SimDesign& d, const ParamState& truth, std::vector<TrialRecord> trials) {
  SimulationReport rep;
  rep.design = d;
  const double crit = normal_critical_value(d.ci_level);

  std::vector<const TrialRecord*> ok;
  for (const auto& t : trials) {
    if (!t.ran) {
      rep.cancelled = true;
      continue;
    }
    ++rep.completed;
    if (t.error.empty() && !t.exists) {
      ++rep.nonexistent;
      rep.nonexistent_seeds.push_back(t.seed);
    } else if (!t.usable()) {
      ++rep.failed;
    } else {
      ok.push_back(&t);
    }
  }
  rep.nonexistence_pct = rep.completed ? 100.0 * static_cast<double>(rep.nonexistent) / static_cast<double>(rep.completed) : 0.0;
  const double used = static_cast<double>(ok.size());
  auto pct = [&](std::size_t hits) { return ok.empty() ? 0.0 : 100.0 * static_cast<double>(hits) / used; };
  auto mean = [&](double sum) { return ok.empty() ? 0.0 : sum / used; };

  for (std::size_t c = 0; c < d.contrast_pairs.size(); ++c) {
    const auto [i, j] = d.contrast_pairs[c];
    CellSummary cell;
    cell.label = "(" + std::to_string(i) + "," + std::to_string(j) + ")";
    cell.i = i;
    cell.j = j;
    cell.truth = contrast_value(truth, ContrastKind::xi, i, j);
    std::size_t hits = 0;
    double len = 0.0;
    for (const auto* t : ok) {
      if (std::abs(t->contrast_estimate[c] - cell.truth) <= crit * t->contrast_se[c]) ++hits;
      len += 2.0 * crit * t->contrast_se[c];
    }
    cell.coverage = pct(hits);
    cell.mean_length = mean(len);
    cell.used = ok.size();
    rep.contrasts.push_back(cell);
  }

  if (d.include_mu) {
    CellSummary cell;
    cell.label = "(0,0)";
    cell.truth = truth.mu;
    std::size_t hits = 0;
    double len = 0.0;
    for (const auto* t : ok) {
      if (std::abs(t->mu_estimate - cell.truth) <= crit * t->mu_se) ++hits;
      len += 2.0 * crit * t->mu_se;
    }
    cell.coverage = pct(hits);
    cell.mean_length = mean(len);
    cell.used = ok.size();
    rep.mu = cell;
  }

  for (Eigen::Index k = 0; k < d.gamma_true.size(); ++k) {
    GammaSummary gs;
    gs.index = static_cast<std::size_t>(k);
    gs.truth = d.gamma_true(k);
    std::size_t hit_bc = 0, hit_raw = 0;
    double len = 0.0, est = 0.0, est_bc = 0.0;
    for (const auto* t : ok) {
      const double half = crit * t->gamma_se(k);
      if (std::abs(t->gamma_bc(k) - gs.truth) <= half) ++hit_bc;
      if (std::abs(t->gamma_hat(k) - gs.truth) <= half) ++hit_raw;
      len += 2.0 * half;
      est += t->gamma_hat(k);
      est_bc += t->gamma_bc(k);
    }
    gs.coverage_corrected = pct(hit_bc);
    gs.coverage_uncorrected = pct(hit_raw);
    gs.mean_length = mean(len);
    gs.mean_estimate = mean(est);
    gs.mean_corrected = mean(est_bc);
    gs.used = ok.size();
    rep.gamma.push_back(gs);
  }
  rep.trials = std::move(trials);
  return rep;
}

/// Replicates the design `reps` times. Results are reduced in trial order,
/// so the report does not depend on the thread count.
inline SimulationReport run_study(const SimDesign& d, const StudyOptions& opt = {}) {
  const detail::StudyContext ctx = detail::make_context(d);
  const CovariateTensor* fixed = ctx.fixed_z ? &*ctx.fixed_z : nullptr;
  std::vector<TrialRecord> trials(d.reps);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    while (true) {
      if (opt.cancel && opt.cancel->load()) return;
      const std::size_t t = next.fetch_add(1);
      if (t >= d.reps) return;
      trials[t] = run_trial(d, ctx.truth, fixed, t, trial_seed(d.seed, t));
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(d.reps)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned k = 0; k < threads; ++k) pool.emplace_back(worker);
  }
  return summarize(d, ctx.truth, std::move(trials));
}

}  // namespace poissonet
