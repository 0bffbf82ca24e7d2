#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <string_view>

#include "poissonet/errors.hpp"
#include "poissonet/graph.hpp"

namespace poissonet {

/// Identifiability conventions. The model is invariant under
/// (mu, alpha, beta) -> (mu + 2c1, alpha - c1 + c2, beta - c1 - c2), so two
/// scalar constraints pin the parameterization down.
enum class Normalization {
  mu_zero_beta_n_zero,          // mu = 0, beta_n = 0 (canonical; theta has 2n-1 free entries)
  alpha_n_beta_n_zero_with_mu,  // alpha_n = beta_n = 0, mu free
  ref_node_first,               // alpha_1 = beta_1 = 0, mu free
};

inline std::string_view to_string(Normalization norm) {
  switch (norm) {
    case Normalization::mu_zero_beta_n_zero: return "mu-beta";
    case Normalization::alpha_n_beta_n_zero_with_mu: return "alphan-betan";
    case Normalization::ref_node_first: return "ref-first";
  }
  return "?";
}

inline Normalization parse_normalization(std::string_view text) {
  if (text == "mu-beta" || text == "mu_zero_beta_n_zero") return Normalization::mu_zero_beta_n_zero;
  if (text == "alphan-betan" || text == "alpha_n_beta_n_zero_with_mu") return Normalization::alpha_n_beta_n_zero_with_mu;
  if (text == "ref-first" || text == "ref_node_first") return Normalization::ref_node_first;
  throw InputError("unknown normalization '" + std::string(text) + "'");
}

inline bool carries_mu(Normalization norm) { return norm != Normalization::mu_zero_beta_n_zero; }

struct ParamState {
  Eigen::VectorXd alpha;
  Eigen::VectorXd beta;
  Eigen::VectorXd gamma;
  double mu = 0.0;
  Normalization normalization = Normalization::mu_zero_beta_n_zero;

  static ParamState zeros(std::size_t n, std::size_t p,
                          Normalization norm = Normalization::mu_zero_beta_n_zero) {
    const auto N = static_cast<Eigen::Index>(n);
    return {Eigen::VectorXd::Zero(N), Eigen::VectorXd::Zero(N), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p)),
            0.0, norm};
  }

  std::size_t nodes() const { return static_cast<std::size_t>(alpha.size()); }
  std::size_t dim() const { return static_cast<std::size_t>(gamma.size()); }

  /// True when the constrained coordinates hold their pinned values.
  bool normalized(double tol = 0.0) const {
    const auto last = alpha.size() - 1;
    switch (normalization) {
      case Normalization::mu_zero_beta_n_zero: return std::abs(mu) <= tol && std::abs(beta(last)) <= tol;
      case Normalization::alpha_n_beta_n_zero_with_mu: return std::abs(alpha(last)) <= tol && std::abs(beta(last)) <= tol;
      case Normalization::ref_node_first: return std::abs(alpha(0)) <= tol && std::abs(beta(0)) <= tol;
    }
    return false;
  }
};

/// Re-expresses a parameter vector under another convention without changing
/// any rate. Works for unnormalized input too.
inline ParamState renormalize(const ParamState& s, Normalization target) {
  const auto n = s.alpha.size();
  // canonical: mu = 0, beta_n = 0
  Eigen::VectorXd a = s.alpha.array() + s.mu + s.beta(n - 1);
  Eigen::VectorXd b = s.beta.array() - s.beta(n - 1);

  ParamState out{a, b, s.gamma, 0.0, target};
  switch (target) {
    case Normalization::mu_zero_beta_n_zero: break;
    case Normalization::alpha_n_beta_n_zero_with_mu:
      out.mu = a(n - 1);
      out.alpha.array() -= a(n - 1);
      break;
    case Normalization::ref_node_first:
      out.mu = a(0) + b(0);
      out.alpha.array() -= a(0);
      out.beta.array() -= b(0);
      break;
  }
  return out;
}

/// theta = (alpha_1..alpha_n, beta_1..beta_{n-1}) under the canonical convention.
inline Eigen::VectorXd canonical_theta(const ParamState& s) {
  const ParamState c = renormalize(s, Normalization::mu_zero_beta_n_zero);
  const auto n = c.alpha.size();
  Eigen::VectorXd theta(2 * n - 1);
  theta << c.alpha, c.beta.head(n - 1);
  return theta;
}

inline ParamState state_from_theta(const Eigen::VectorXd& theta, const Eigen::VectorXd& gamma) {
  const auto n = (theta.size() + 1) / 2;
  ParamState s;
  s.alpha = theta.head(n);
  s.beta = Eigen::VectorXd::Zero(n);
  s.beta.head(n - 1) = theta.tail(n - 1);
  s.gamma = gamma;
  return s;
}

// Exponents above this bound are reported as divergence instead of overflowing.
inline constexpr double kMaxLogRate = 700.0;

namespace detail {

inline void check_dims(const ParamState& s, const CovariateTensor& z) {
  if (s.alpha.size() != s.beta.size()) throw InputError("alpha and beta lengths differ");
  if (s.nodes() < 2) throw InputError("need at least two nodes");
  if (z.nodes() != s.nodes()) throw InputError("covariate tensor has wrong node count");
  if (z.dim() != s.dim()) throw InputError("gamma length does not match covariate dimension");
}

inline void check_dims(const ParamState& s, const WeightedDigraph& g, const CovariateTensor& z) {
  check_dims(s, z);
  if (g.size() != s.nodes()) throw InputError("graph has wrong node count");
}

}  // namespace detail

/// pi_ij = mu + alpha_i + beta_j + Z_ij' gamma for every ordered pair; the
/// diagonal is set to -infinity so exp() maps it to a zero rate.
inline Eigen::MatrixXd log_rate_matrix(const ParamState& s, const CovariateTensor& z) {
  detail::check_dims(s, z);
  const auto n = s.alpha.size();
  Eigen::MatrixXd pi = s.alpha.replicate(1, n);
  pi.rowwise() += s.beta.transpose();
  pi.array() += s.mu;
  for (std::size_t k = 0; k < z.dim(); ++k) pi.noalias() += s.gamma(static_cast<Eigen::Index>(k)) * z.layer(k);
  pi.diagonal().setConstant(-std::numeric_limits<double>::infinity());
  return pi;
}

/// lambda_ij = exp(pi_ij) with zero diagonal. Throws DivergenceError when an
/// exponent exceeds kMaxLogRate or is not a number.
inline Eigen::MatrixXd rate_matrix(const ParamState& s, const CovariateTensor& z) {
  Eigen::MatrixXd pi = log_rate_matrix(s, z);
  const double top = pi.maxCoeff();
  if (!(top <= kMaxLogRate) || pi.hasNaN())
    throw DivergenceError("log-rate " + std::to_string(top) + " exceeds the representable range");
  Eigen::MatrixXd u = pi.array().exp().matrix();
  u.diagonal().setZero();  // vectorized exp(-inf) is a denormal, not 0
  return u;
}

inline double rate(const ParamState& s, const CovariateTensor& z, std::size_t i, std::size_t j) {
  detail::check_dims(s, z);
  if (i == j) throw InputError("rate is undefined on the diagonal");
  if (i >= s.nodes() || j >= s.nodes()) throw InputError("node index out of range");
  double pi = s.mu + s.alpha(static_cast<Eigen::Index>(i)) + s.beta(static_cast<Eigen::Index>(j));
  for (std::size_t k = 0; k < z.dim(); ++k) pi += z(i, j, k) * s.gamma(static_cast<Eigen::Index>(k));
  if (!(pi <= kMaxLogRate)) throw DivergenceError("log-rate exceeds the representable range");
  return std::exp(pi);
}

inline double log_likelihood(const ParamState& s, const WeightedDigraph& g, const CovariateTensor& z) {
  detail::check_dims(s, g, z);
  const Eigen::MatrixXd pi = log_rate_matrix(s, z);
  const std::size_t n = g.size();
  double ll = 0.0;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i) {
      if (i == j) continue;
      const double p = pi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      const auto a = static_cast<double>(g.weight(i, j));
      ll += a * p - std::exp(p) - std::lgamma(a + 1.0);
    }
  return ll;
}

namespace detail {

inline Eigen::VectorXd margin_residuals(const Eigen::MatrixXd& rates, const DegreeSequences& deg) {
  const auto n = rates.rows();
  Eigen::VectorXd f(2 * n - 1);
  f.head(n) = rates.rowwise().sum() - deg.out_as_double();
  f.tail(n - 1) = (rates.colwise().sum().transpose() - deg.in_as_double()).head(n - 1);
  return f;
}

inline Eigen::VectorXd covariate_residuals(const Eigen::MatrixXd& rates, const Eigen::MatrixXd& weights,
                                           const CovariateTensor& z) {
  Eigen::VectorXd q(static_cast<Eigen::Index>(z.dim()));
  const Eigen::MatrixXd resid = rates - weights;
  for (std::size_t k = 0; k < z.dim(); ++k)
    q(static_cast<Eigen::Index>(k)) = z.layer(k).cwiseProduct(resid).sum();
  return q;
}

}  // namespace detail

/// Degree-score system F(theta, gamma): expected minus observed out-degrees
/// for every node followed by in-degrees for nodes 1..n-1. F = -dl/dtheta.
inline Eigen::VectorXd score_F(const ParamState& s, const WeightedDigraph& g, const CovariateTensor& z) {
  detail::check_dims(s, g, z);
  return detail::margin_residuals(rate_matrix(s, z), degrees(g));
}

/// Q(theta, gamma) = sum_{i != j} Z_ij (lambda_ij - a_ij) = -dl/dgamma.
inline Eigen::VectorXd score_Q(const ParamState& s, const WeightedDigraph& g, const CovariateTensor& z) {
  detail::check_dims(s, g, z);
  return detail::covariate_residuals(rate_matrix(s, z), g.weights_as_double(), z);
}

/// Jacobian blocks of (F, Q). Because the link is exp, every derivative of
/// the rate equals the rate itself and the blocks are plain rate sums.
struct FisherBlocks {
  Eigen::MatrixXd V;                // dF/dtheta', (2n-1) x (2n-1)
  Eigen::MatrixXd V_theta_gamma;    // dF/dgamma', (2n-1) x p
  Eigen::MatrixXd V_gamma_gamma;    // dQ/dgamma', p x p
  Eigen::VectorXd out_rate_sums;    // u_i. for all n nodes
  Eigen::VectorXd in_rate_sums;     // u_.j for all n nodes

  std::size_t nodes() const { return static_cast<std::size_t>(out_rate_sums.size()); }
  std::size_t dim() const { return static_cast<std::size_t>(V_gamma_gamma.rows()); }
};

namespace detail {

inline FisherBlocks fisher_from_rates(const Eigen::MatrixXd& u, const CovariateTensor& z) {
  const auto n = u.rows();
  const auto p = static_cast<Eigen::Index>(z.dim());
  FisherBlocks fb;
  fb.out_rate_sums = u.rowwise().sum();
  fb.in_rate_sums = u.colwise().sum().transpose();

  fb.V = Eigen::MatrixXd::Zero(2 * n - 1, 2 * n - 1);
  fb.V.diagonal().head(n) = fb.out_rate_sums;
  fb.V.diagonal().tail(n - 1) = fb.in_rate_sums.head(n - 1);
  fb.V.topRightCorner(n, n - 1) = u.leftCols(n - 1);
  fb.V.bottomLeftCorner(n - 1, n) = u.leftCols(n - 1).transpose();

  fb.V_theta_gamma.resize(2 * n - 1, p);
  fb.V_gamma_gamma.resize(p, p);
  std::vector<Eigen::MatrixXd> weighted(static_cast<std::size_t>(p));
  for (Eigen::Index k = 0; k < p; ++k) {
    weighted[static_cast<std::size_t>(k)] = u.cwiseProduct(z.layer(static_cast<std::size_t>(k)));
    const auto& w = weighted[static_cast<std::size_t>(k)];
    fb.V_theta_gamma.col(k).head(n) = w.rowwise().sum();
    fb.V_theta_gamma.col(k).tail(n - 1) = w.colwise().sum().transpose().head(n - 1);
  }
  for (Eigen::Index k = 0; k < p; ++k)
    for (Eigen::Index l = 0; l <= k; ++l) {
      const double v = weighted[static_cast<std::size_t>(k)].cwiseProduct(z.layer(static_cast<std::size_t>(l))).sum();
      fb.V_gamma_gamma(k, l) = v;
      fb.V_gamma_gamma(l, k) = v;
    }
  return fb;
}

/// V_gamma_gamma - V_theta_gamma' V^{-1} V_theta_gamma via a dense Cholesky solve.
inline Eigen::MatrixXd schur_complement(const FisherBlocks& fb) {
  if (fb.dim() == 0) return Eigen::MatrixXd(0, 0);
  Eigen::LLT<Eigen::MatrixXd> llt(fb.V);
  if (llt.info() != Eigen::Success) throw SingularMatrixError("Fisher matrix V is singular");
  const Eigen::MatrixXd x = llt.solve(fb.V_theta_gamma);
  Eigen::MatrixXd h = fb.V_gamma_gamma - fb.V_theta_gamma.transpose() * x;
  return 0.5 * (h + h.transpose());
}

}  // namespace detail

inline FisherBlocks fisher_blocks(const ParamState& s, const CovariateTensor& z) {
  return detail::fisher_from_rates(rate_matrix(s, z), z);
}

/// H(theta, gamma) = dQ/dgamma' - dQ/dtheta' [dF/dtheta']^{-1} dF/dgamma',
/// the Jacobian of the profiled covariate score. Uses an exact solve against V.
inline Eigen::MatrixXd profile_hessian_H(const ParamState& s, const CovariateTensor& z) {
  return detail::schur_complement(fisher_blocks(s, z));
}

}  // namespace poissonet
