#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "poissonet/errors.hpp"
#include "poissonet/graph.hpp"
#include "poissonet/model.hpp"
#include "poissonet/structured_fisher.hpp"

namespace poissonet {

struct SolverConfig {
  double tol_theta = 1e-8;         // sup-norm tolerance on F
  double tol_gamma = 1e-8;         // sup-norm tolerance on Q_c
  int max_inner = 100;             // Newton steps per inner solve
  int max_outer = 50;              // Newton steps on gamma
  double divergence_bound = 30.0;  // |parameter| above this means the MLE does not exist
  bool damping = true;             // step halving on the score sup-norm
  int max_halvings = 20;
  // Strict: stop as soon as any coordinate crosses the divergence bound.
  // Lenient: coordinates of zero-degree nodes may drift past it, so the fit
  // terminates at the finite-tolerance point (exists is still false).
  bool strict = true;

  void validate() const {
    if (!(tol_theta > 0.0) || !(tol_gamma > 0.0)) throw InputError("solver tolerances must be positive");
    if (max_inner < 1 || max_outer < 1) throw InputError("iteration caps must be at least 1");
    if (!(divergence_bound > 0.0)) throw InputError("divergence bound must be positive");
    if (max_halvings < 0) throw InputError("max_halvings must be nonnegative");
  }
};

struct FitResult {
  ParamState state;
  bool converged = false;
  bool exists = true;
  int inner_iters = 0;
  int outer_iters = 0;
  double score_norm_theta = std::numeric_limits<double>::infinity();  // |F|_inf
  double score_norm_gamma = 0.0;                                      // |Q_c|_inf
  std::vector<std::size_t> flagged_nodes;   // zero out- or in-degree
  std::vector<std::size_t> escaped_nodes;   // nodes whose parameters crossed the bound
  std::string message;
};

/// Result of the inner Newton solve for theta at fixed gamma.
struct ThetaFit {
  Eigen::VectorXd theta;
  int iterations = 0;
  double score_norm = std::numeric_limits<double>::infinity();
  bool converged = false;
  bool diverged = false;
  bool stalled = false;
  std::vector<std::size_t> escaped_nodes;
  std::vector<double> accepted_norms;  // |F|_inf after every accepted step, starting value first
  Eigen::MatrixXd rates;               // lambda at the returned theta
};

/// Largest change of Z'gamma allowed in one outer Newton step.
inline constexpr double kMaxPredictorShift = 2.0;

namespace detail {

struct Problem {
  const CovariateTensor* z = nullptr;
  Eigen::MatrixXd weights;
  DegreeSequences deg;
  std::vector<std::size_t> flagged;
  std::vector<bool> flagged_node;

  Problem(const WeightedDigraph& g, const CovariateTensor& cov) : z(&cov), weights(g.weights_as_double()), deg(degrees(g)) {
    if (cov.nodes() != g.size()) throw InputError("covariate tensor and graph disagree on the node count");
    flagged = zero_degree_nodes(deg);
    flagged_node.assign(g.size(), false);
    for (auto i : flagged) flagged_node[i] = true;
  }
  Eigen::Index n() const { return weights.rows(); }
};

inline Eigen::MatrixXd covariate_offset(const CovariateTensor& z, const Eigen::VectorXd& gamma) {
  const auto n = static_cast<Eigen::Index>(z.nodes());
  Eigen::MatrixXd off = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t k = 0; k < z.dim(); ++k) off.noalias() += gamma(static_cast<Eigen::Index>(k)) * z.layer(k);
  return off;
}

/// Rates at canonical theta with a precomputed Z'gamma; nullopt on overflow.
inline std::optional<Eigen::MatrixXd> try_rates(const Eigen::VectorXd& theta, const Eigen::MatrixXd& offset) {
  const auto n = offset.rows();
  Eigen::MatrixXd pi = offset;
  pi.colwise() += theta.head(n);
  pi.leftCols(n - 1).rowwise() += theta.tail(n - 1).transpose();
  pi.diagonal().setConstant(-std::numeric_limits<double>::infinity());
  const double top = pi.maxCoeff();
  if (!(top <= kMaxLogRate) || pi.hasNaN()) return std::nullopt;
  Eigen::MatrixXd u = pi.array().exp().matrix();
  u.diagonal().setZero();  // vectorized exp(-inf) is a denormal, not 0
  return u;
}

/// Log-likelihood without the constant -sum log(a_ij!) term, plus the sum of
/// absolute term sizes: the two halves nearly cancel, so roundoff in the
/// value scales with `magnitude`, not with the value itself.
struct LoglikKernel {
  double value = 0.0;
  double magnitude = 0.0;
};

inline LoglikKernel loglik_kernel(const Eigen::MatrixXd& rates, const Eigen::MatrixXd& weights) {
  LoglikKernel k;
  k.value = -rates.sum();
  k.magnitude = -k.value;
  for (Eigen::Index j = 0; j < rates.cols(); ++j)
    for (Eigen::Index i = 0; i < rates.rows(); ++i)
      if (weights(i, j) > 0.0) {
        const double term = weights(i, j) * std::log(rates(i, j));
        k.value += term;
        k.magnitude += std::abs(term);
      }
  return k;
}

inline double sup_norm(const Eigen::VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

/// Nodes (0-based) with a canonical-theta coordinate outside the bound.
/// Lenient mode ignores coordinates that belong to zero-degree nodes.
inline std::vector<std::size_t> escaped_theta(const Eigen::VectorXd& theta, const Problem& pb, const SolverConfig& cfg) {
  const auto n = pb.n();
  std::vector<std::size_t> out;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    const auto node = static_cast<std::size_t>(k < n ? k : k - n);
    if (!cfg.strict && pb.flagged_node[node]) continue;
    if (!(std::abs(theta(k)) <= cfg.divergence_bound)) out.push_back(node);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline ThetaFit solve_theta(const Problem& pb, const Eigen::VectorXd& gamma, Eigen::VectorXd theta,
                            const SolverConfig& cfg) {
  const Eigen::MatrixXd offset = covariate_offset(*pb.z, gamma);
  ThetaFit out;
  auto rates = try_rates(theta, offset);
  if (!rates) {
    out.theta = std::move(theta);
    out.diverged = true;
    return out;
  }
  Eigen::VectorXd f = margin_residuals(*rates, pb.deg);
  double norm = sup_norm(f);
  const double start_norm = norm;
  out.accepted_norms.push_back(norm);

  // Past tol_theta, keep taking Newton steps while they still reduce the
  // residual: Q_c inherits an O(n * |F|) error from an unpolished theta.
  const double polish_target = 1e-3 * cfg.tol_theta;
  int polish_left = 3;
  // Strict mode drives zero-degree nodes all the way to the bound; their
  // residual alone would otherwise pass the tolerance long before that.
  const bool chase = cfg.strict && !pb.flagged.empty();
  while (true) {
    if (norm < cfg.tol_theta && !chase) {
      out.converged = true;
      if (norm < polish_target || polish_left-- == 0) break;
    }
    if (out.iterations >= cfg.max_inner) break;

    Eigen::VectorXd step;
    try {
      step = StructuredFisher(*rates).solve(f);
    } catch (const SingularMatrixError&) {
      // Rates underflowed somewhere; let the caller back off.
      if (!out.converged) out.stalled = true;
      break;
    }
    bool accepted = false;
    double t = 1.0;
    Eigen::VectorXd trial;
    std::optional<Eigen::MatrixXd> trial_rates;
    Eigen::VectorXd trial_f;
    double trial_norm = 0.0;
    for (int h = 0; h <= (cfg.damping ? cfg.max_halvings : 0); ++h, t *= 0.5) {
      trial = theta - t * step;
      trial_rates = try_rates(trial, offset);
      if (!trial_rates) continue;
      trial_f = margin_residuals(*trial_rates, pb.deg);
      trial_norm = sup_norm(trial_f);
      if (!cfg.damping || trial_norm < norm) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // Undamped overflow is divergence; a damped line search that cannot
      // reduce the residual is a stall unless we were only polishing.
      if (out.converged) break;
      if (chase) {
        out.diverged = true;
        out.escaped_nodes = pb.flagged;
      } else if (cfg.damping) out.stalled = true;
      else out.diverged = true;
      break;
    }
    theta = std::move(trial);
    rates = std::move(trial_rates);
    f = std::move(trial_f);
    norm = trial_norm;
    ++out.iterations;
    out.accepted_norms.push_back(norm);

    out.escaped_nodes = escaped_theta(theta, pb, cfg);
    if (!out.escaped_nodes.empty()) {
      out.diverged = true;
      break;
    }
  }
  if (!out.converged && out.iterations >= cfg.max_inner && norm > start_norm) out.diverged = true;
  if (chase && !out.diverged) {
    out.diverged = true;
    out.escaped_nodes = pb.flagged;
  }
  out.theta = std::move(theta);
  out.score_norm = norm;
  out.rates = std::move(*rates);
  return out;
}

/// Profiled Jacobian H from the structured operator; V^{-1} V_theta_gamma
/// is obtained by p structured solves.
inline Eigen::MatrixXd structured_H(const Eigen::MatrixXd& rates, const CovariateTensor& z) {
  const auto n = rates.rows();
  const auto p = static_cast<Eigen::Index>(z.dim());
  Eigen::MatrixXd vtg(2 * n - 1, p);
  Eigen::MatrixXd vgg(p, p);
  std::vector<Eigen::MatrixXd> weighted;
  for (Eigen::Index k = 0; k < p; ++k) {
    weighted.push_back(rates.cwiseProduct(z.layer(static_cast<std::size_t>(k))));
    vtg.col(k).head(n) = weighted.back().rowwise().sum();
    vtg.col(k).tail(n - 1) = weighted.back().colwise().sum().transpose().head(n - 1);
  }
  for (Eigen::Index k = 0; k < p; ++k)
    for (Eigen::Index l = 0; l <= k; ++l)
      vgg(k, l) = vgg(l, k) = weighted[static_cast<std::size_t>(k)].cwiseProduct(z.layer(static_cast<std::size_t>(l))).sum();
  const Eigen::MatrixXd x = StructuredFisher(rates).solve(vtg);
  Eigen::MatrixXd h = vgg - vtg.transpose() * x;
  return 0.5 * (h + h.transpose());
}

/// Throws when a covariate direction is (numerically) spanned by the node
/// effects. That is structural, so checking at any positive rates suffices.
inline void check_identified(const Eigen::MatrixXd& rates, const CovariateTensor& z) {
  const auto p = static_cast<Eigen::Index>(z.dim());
  if (p == 0) return;
  Eigen::VectorXd scale(p);
  for (Eigen::Index k = 0; k < p; ++k)
    scale(k) = rates.cwiseProduct(z.layer(static_cast<std::size_t>(k)).cwiseAbs2()).sum();
  if (!(scale.minCoeff() > 0.0)) throw SingularMatrixError("a covariate is identically zero off the diagonal");
  const Eigen::VectorXd inv = scale.array().rsqrt();
  const Eigen::MatrixXd h = inv.asDiagonal() * structured_H(rates, z) * inv.asDiagonal();
  if (Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h, Eigen::EigenvaluesOnly).eigenvalues().minCoeff() < 1e-10)
    throw SingularMatrixError("profiled Hessian H is singular; a covariate is collinear with the node effects");
}

inline void finish(FitResult& res, const Eigen::VectorXd& theta, const Eigen::VectorXd& gamma, Normalization norm) {
  res.state = renormalize(state_from_theta(theta, gamma), norm);
}

}  // namespace detail

/// Newton iteration on theta for fixed gamma, starting from `init_theta`
/// (canonical layout, length 2n-1).
inline ThetaFit fit_theta_given_gamma(const WeightedDigraph& g, const CovariateTensor& z, const Eigen::VectorXd& gamma,
                                      const Eigen::VectorXd& init_theta, const SolverConfig& cfg = {}) {
  cfg.validate();
  if (init_theta.size() != static_cast<Eigen::Index>(2 * g.size() - 1)) throw InputError("theta must have length 2n-1");
  if (gamma.size() != static_cast<Eigen::Index>(z.dim())) throw InputError("gamma length does not match covariates");
  const detail::Problem pb(g, z);
  return detail::solve_theta(pb, gamma, init_theta, cfg);
}

/// Two-stage maximum likelihood fit: an inner Newton solve for theta at the
/// current gamma, then one Newton step on gamma against the profiled score
/// Q_c with Jacobian H(theta_hat_gamma, gamma). The returned state uses the
/// normalization of `init`.
inline FitResult fit(const WeightedDigraph& g, const CovariateTensor& z, const SolverConfig& cfg, const ParamState& init) {
  cfg.validate();
  detail::check_dims(init, g, z);
  const detail::Problem pb(g, z);

  FitResult res;
  res.flagged_nodes = pb.flagged;
  const Normalization norm = init.normalization;
  Eigen::VectorXd gamma = init.gamma;

  ThetaFit inner = detail::solve_theta(pb, gamma, canonical_theta(init), cfg);
  res.inner_iters += inner.iterations;
  if (pb.flagged.empty() && !inner.diverged) detail::check_identified(inner.rates, z);

  while (true) {
    res.score_norm_theta = inner.score_norm;
    if (inner.diverged) {
      res.exists = false;
      res.escaped_nodes = inner.escaped_nodes;
      res.message = "degree parameters diverged; the MLE does not exist";
      break;
    }
    if (!inner.converged) {
      res.message = inner.stalled ? "inner Newton stalled" : "inner Newton hit its iteration cap";
      break;
    }
    const Eigen::VectorXd q = detail::covariate_residuals(inner.rates, pb.weights, z);
    const double qn = detail::sup_norm(q);
    res.score_norm_gamma = qn;
    const detail::LoglikKernel ll = detail::loglik_kernel(inner.rates, pb.weights);
    if (qn < cfg.tol_gamma) {
      res.converged = true;
      break;
    }
    if (res.outer_iters >= cfg.max_outer) {
      res.message = "outer Newton hit its iteration cap";
      break;
    }

    const Eigen::MatrixXd h = detail::structured_H(inner.rates, z);
    Eigen::LLT<Eigen::MatrixXd> llt(h);
    if (llt.info() != Eigen::Success)
      throw SingularMatrixError("profiled Hessian H is singular; a covariate is collinear with the node effects");
    Eigen::VectorXd step = llt.solve(q);
    // Cap the change of the linear predictor so no rate moves by more than
    // e^2 in one step; far from the optimum the profiled curvature can be
    // nearly flat and the raw step lands in a region the inner solve cannot reach.
    const double shift = detail::covariate_offset(z, step).cwiseAbs().maxCoeff();
    if (shift > kMaxPredictorShift) step *= kMaxPredictorShift / shift;

    bool accepted = false;
    double t = 1.0;
    Eigen::VectorXd trial_gamma;
    ThetaFit trial;
    for (int hv = 0; hv <= (cfg.damping ? cfg.max_halvings : 0); ++hv, t *= 0.5) {
      trial_gamma = gamma - t * step;
      trial = detail::solve_theta(pb, trial_gamma, inner.theta, cfg);
      res.inner_iters += trial.iterations;
      if (!cfg.damping) {
        accepted = true;
        break;
      }
      if (!trial.converged) continue;
      // The profile log-likelihood is concave in gamma, so demand ascent; at
      // roundoff level a smaller score still counts as progress.
      const double trial_ll = detail::loglik_kernel(trial.rates, pb.weights).value;
      const double slack = 1e-11 * (1.0 + ll.magnitude);
      if (trial_ll > ll.value + slack ||
          (trial_ll >= ll.value - slack && detail::sup_norm(detail::covariate_residuals(trial.rates, pb.weights, z)) < qn)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      res.message = "outer Newton stalled";
      break;
    }
    gamma = std::move(trial_gamma);
    inner = std::move(trial);
    ++res.outer_iters;
    if (!(detail::sup_norm(gamma) <= cfg.divergence_bound)) {
      res.exists = false;
      res.score_norm_theta = inner.score_norm;
      res.message = "covariate coefficients diverged; the MLE does not exist";
      break;
    }
  }
  if (!pb.flagged.empty() && res.exists) {
    res.exists = false;
    if (res.message.empty()) res.message = "zero-degree nodes; the MLE does not exist";
  }
  detail::finish(res, inner.theta, gamma, norm);
  return res;
}

inline FitResult fit(const WeightedDigraph& g, const CovariateTensor& z, const SolverConfig& cfg = {},
                     Normalization norm = Normalization::mu_zero_beta_n_zero) {
  return fit(g, z, cfg, ParamState::zeros(g.size(), z.dim(), norm));
}

namespace detail {

// Coordinates of the over-complete vector [mu, alpha(n), beta(n), gamma(p)]
// that are free under a normalization.
inline std::vector<Eigen::Index> free_coordinates(Normalization norm, Eigen::Index n, Eigen::Index p) {
  std::vector<Eigen::Index> idx;
  const Eigen::Index a0 = 1, b0 = 1 + n, g0 = 1 + 2 * n;
  switch (norm) {
    case Normalization::mu_zero_beta_n_zero:
      for (Eigen::Index i = 0; i < n; ++i) idx.push_back(a0 + i);
      for (Eigen::Index j = 0; j < n - 1; ++j) idx.push_back(b0 + j);
      break;
    case Normalization::alpha_n_beta_n_zero_with_mu:
      idx.push_back(0);
      for (Eigen::Index i = 0; i < n - 1; ++i) idx.push_back(a0 + i);
      for (Eigen::Index j = 0; j < n - 1; ++j) idx.push_back(b0 + j);
      break;
    case Normalization::ref_node_first:
      idx.push_back(0);
      for (Eigen::Index i = 1; i < n; ++i) idx.push_back(a0 + i);
      for (Eigen::Index j = 1; j < n; ++j) idx.push_back(b0 + j);
      break;
  }
  for (Eigen::Index k = 0; k < p; ++k) idx.push_back(g0 + k);
  return idx;
}

inline Eigen::VectorXd pack(const ParamState& s) {
  const auto n = s.alpha.size();
  Eigen::VectorXd x(1 + 2 * n + s.gamma.size());
  x << s.mu, s.alpha, s.beta, s.gamma;
  return x;
}

inline ParamState unpack(const Eigen::VectorXd& x, Eigen::Index n, Normalization norm) {
  ParamState s;
  s.mu = x(0);
  s.alpha = x.segment(1, n);
  s.beta = x.segment(1 + n, n);
  s.gamma = x.tail(x.size() - 1 - 2 * n);
  s.normalization = norm;
  return s;
}

}  // namespace detail

/// Full Newton-Raphson on all 2n-1+p free coordinates of the requested
/// normalization with a dense Hessian. Reaches the same fixed point as fit();
/// kept as an independent cross-check.
inline FitResult fit_joint(const WeightedDigraph& g, const CovariateTensor& z, const SolverConfig& cfg,
                           const ParamState& init) {
  cfg.validate();
  detail::check_dims(init, g, z);
  const detail::Problem pb(g, z);
  const auto n = pb.n();
  const auto p = static_cast<Eigen::Index>(z.dim());
  const Normalization norm = init.normalization;
  const auto free = detail::free_coordinates(norm, n, p);
  const auto m = static_cast<Eigen::Index>(free.size());
  const Eigen::VectorXd d = pb.deg.out_as_double();
  const Eigen::VectorXd b = pb.deg.in_as_double();

  FitResult res;
  res.flagged_nodes = pb.flagged;
  Eigen::VectorXd x = detail::pack(renormalize(init, norm));

  struct Eval {
    Eigen::MatrixXd rates;
    Eigen::VectorXd f, q;
    double fn = 0.0, qn = 0.0;
  };
  auto evaluate = [&](const Eigen::VectorXd& v) -> std::optional<Eval> {
    try {
      Eval e;
      e.rates = rate_matrix(detail::unpack(v, n, norm), z);
      e.f = detail::margin_residuals(e.rates, pb.deg);
      e.q = detail::covariate_residuals(e.rates, pb.weights, z);
      e.fn = detail::sup_norm(e.f);
      e.qn = detail::sup_norm(e.q);
      return e;
    } catch (const DivergenceError&) {
      return std::nullopt;
    }
  };
  auto merit = [](const Eval& e) { return std::max(e.fn, e.qn); };

  auto cur = evaluate(x);
  if (!cur) {
    res.exists = false;
    res.message = "initial point overflows";
    res.state = detail::unpack(x, n, norm);
    return res;
  }
  if (pb.flagged.empty()) detail::check_identified(cur->rates, z);

  const bool chase = cfg.strict && !pb.flagged.empty();
  auto give_up_on_flagged = [&] {
    res.exists = false;
    res.escaped_nodes = pb.flagged;
    res.message = "parameters diverged; the MLE does not exist";
  };
  int iters = 0;
  while (true) {
    res.score_norm_theta = cur->fn;
    res.score_norm_gamma = cur->qn;
    if (cur->fn < cfg.tol_theta && cur->qn < cfg.tol_gamma && !chase) {
      res.converged = true;
      break;
    }
    if (iters >= cfg.max_inner) {
      if (chase) give_up_on_flagged();
      else res.message = "joint Newton hit its iteration cap";
      break;
    }

    // Over-complete gradient of -loglik and its Hessian.
    const Eigen::MatrixXd& u = cur->rates;
    const Eigen::VectorXd rs = u.rowwise().sum();
    const Eigen::VectorXd cs = u.colwise().sum().transpose();
    const Eigen::Index full = 1 + 2 * n + p;
    Eigen::VectorXd grad(full);
    grad(0) = rs.sum() - d.sum();
    grad.segment(1, n) = rs - d;
    grad.segment(1 + n, n) = cs - b;
    grad.tail(p) = cur->q;

    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(full, full);
    hess(0, 0) = rs.sum();
    hess.block(0, 1, 1, n) = rs.transpose();
    hess.block(0, 1 + n, 1, n) = cs.transpose();
    hess.diagonal().segment(1, n) = rs;
    hess.diagonal().segment(1 + n, n) = cs;
    hess.block(1, 1 + n, n, n) = u;
    for (Eigen::Index k = 0; k < p; ++k) {
      const Eigen::MatrixXd w = u.cwiseProduct(z.layer(static_cast<std::size_t>(k)));
      hess(0, 1 + 2 * n + k) = w.sum();
      hess.block(1, 1 + 2 * n + k, n, 1) = w.rowwise().sum();
      hess.block(1 + n, 1 + 2 * n + k, n, 1) = w.colwise().sum().transpose();
      for (Eigen::Index l = 0; l <= k; ++l)
        hess(1 + 2 * n + l, 1 + 2 * n + k) = w.cwiseProduct(z.layer(static_cast<std::size_t>(l))).sum();
    }
    hess.triangularView<Eigen::StrictlyLower>() = hess.transpose().triangularView<Eigen::StrictlyLower>();

    Eigen::MatrixXd hf(m, m);
    Eigen::VectorXd gf(m);
    for (Eigen::Index r = 0; r < m; ++r) {
      gf(r) = grad(free[static_cast<std::size_t>(r)]);
      for (Eigen::Index c = 0; c < m; ++c) hf(r, c) = hess(free[static_cast<std::size_t>(r)], free[static_cast<std::size_t>(c)]);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(hf);
    if (llt.info() != Eigen::Success) throw SingularMatrixError("joint Hessian is singular");
    const Eigen::VectorXd step = llt.solve(gf);

    bool accepted = false;
    double t = 1.0;
    Eigen::VectorXd trial;
    std::optional<Eval> next;
    for (int h = 0; h <= (cfg.damping ? cfg.max_halvings : 0); ++h, t *= 0.5) {
      trial = x;
      for (Eigen::Index r = 0; r < m; ++r) trial(free[static_cast<std::size_t>(r)]) -= t * step(r);
      next = evaluate(trial);
      if (!next) continue;
      if (!cfg.damping || merit(*next) < merit(*cur)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (chase) {
        give_up_on_flagged();
      } else if (cfg.damping) {
        res.message = "joint Newton stalled";
      } else {
        res.exists = false;
        res.message = "joint Newton overflowed";
      }
      break;
    }
    x = std::move(trial);
    cur = std::move(next);
    ++iters;

    // Divergence: same test as the two-stage path, on canonical theta and gamma.
    const ParamState s = detail::unpack(x, n, norm);
    res.escaped_nodes = detail::escaped_theta(canonical_theta(s), pb, cfg);
    if (!res.escaped_nodes.empty() || !(detail::sup_norm(s.gamma) <= cfg.divergence_bound)) {
      res.exists = false;
      res.score_norm_theta = cur->fn;
      res.score_norm_gamma = cur->qn;
      res.message = "parameters diverged; the MLE does not exist";
      break;
    }
  }
  if (!pb.flagged.empty() && res.exists) {
    res.exists = false;
    if (res.message.empty()) res.message = "zero-degree nodes; the MLE does not exist";
  }
  res.inner_iters = iters;
  res.outer_iters = iters;
  res.state = detail::unpack(x, n, norm);
  return res;
}

inline FitResult fit_joint(const WeightedDigraph& g, const CovariateTensor& z, const SolverConfig& cfg = {},
                           Normalization norm = Normalization::mu_zero_beta_n_zero) {
  return fit_joint(g, z, cfg, ParamState::zeros(g.size(), z.dim(), norm));
}

}  // namespace poissonet
