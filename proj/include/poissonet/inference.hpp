#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "poissonet/errors.hpp"
#include "poissonet/model.hpp"
#include "poissonet/solver.hpp"

namespace poissonet {

/// Two-sided normal critical value for a confidence level, e.g. 1.96 for 0.95.
inline double normal_critical_value(double level) {
  if (!(level > 0.0 && level < 1.0)) throw InputError("confidence level must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + 0.5 * level);
}

/// Wald summary for a scalar estimate against a null value.
struct WaldSummary {
  double estimate = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p_value = 1.0;
  double lower = 0.0;
  double upper = 0.0;
};

inline WaldSummary wald(double estimate, double se, double level, double null_value = 0.0) {
  WaldSummary w;
  w.estimate = estimate;
  w.se = se;
  w.z = (estimate - null_value) / se;
  w.p_value = std::erfc(std::abs(w.z) / std::sqrt(2.0));
  const double half = normal_critical_value(level) * se;
  w.lower = estimate - half;
  w.upper = estimate + half;
  return w;
}

/// Closed-form approximation S of V^{-1}, built from the marginal rate sums:
///   alpha block   delta_ij / u_i. + 1 / u_.n
///   cross blocks  -1 / u_.n
///   beta block    delta_ij / u_.j + 1 / u_.n
inline Eigen::MatrixXd approx_inverse_S(const FisherBlocks& fb) {
  const auto n = static_cast<Eigen::Index>(fb.nodes());
  if (fb.out_rate_sums.minCoeff() <= 0.0 || fb.in_rate_sums.minCoeff() <= 0.0)
    throw SingularMatrixError("a node has zero marginal rate; S is undefined");
  const double corner = 1.0 / fb.in_rate_sums(n - 1);
  Eigen::MatrixXd s = Eigen::MatrixXd::Constant(2 * n - 1, 2 * n - 1, corner);
  s.topRightCorner(n, n - 1).setConstant(-corner);
  s.bottomLeftCorner(n - 1, n).setConstant(-corner);
  s.diagonal().head(n).array() += fb.out_rate_sums.array().inverse();
  s.diagonal().tail(n - 1).array() += fb.in_rate_sums.head(n - 1).array().inverse();
  return s;
}

/// 1 / sqrt(v_ii) for each canonical theta coordinate.
inline Eigen::VectorXd theta_standard_errors(const FisherBlocks& fb) {
  const Eigen::VectorXd diag = fb.V.diagonal();
  if (!(diag.minCoeff() > 0.0)) throw SingularMatrixError("zero diagonal entry in V");
  return diag.array().rsqrt();
}

enum class ContrastKind {
  xi,    // alpha_i - alpha_j
  zeta,  // alpha_i + beta_j
  eta,   // beta_i - beta_j
};

namespace detail {

inline void check_node(std::size_t i, std::size_t n) {
  if (i >= n) throw InputError("node index " + std::to_string(i) + " out of range");
}

}  // namespace detail

inline double contrast_value(const ParamState& s, ContrastKind kind, std::size_t i, std::size_t j) {
  detail::check_node(i, s.nodes());
  detail::check_node(j, s.nodes());
  const auto I = static_cast<Eigen::Index>(i), J = static_cast<Eigen::Index>(j);
  switch (kind) {
    case ContrastKind::xi: return s.alpha(I) - s.alpha(J);
    case ContrastKind::zeta: return s.alpha(I) + s.beta(J);
    case ContrastKind::eta: return s.beta(I) - s.beta(J);
  }
  return 0.0;
}

/// Standard error of a contrast using the independent-coordinate variance
/// 1/v_ii + 1/v_jj, where v is u_i. for an alpha and u_.j for a beta.
inline double contrast_se(const FisherBlocks& fb, ContrastKind kind, std::size_t i, std::size_t j) {
  detail::check_node(i, fb.nodes());
  detail::check_node(j, fb.nodes());
  const auto I = static_cast<Eigen::Index>(i), J = static_cast<Eigen::Index>(j);
  double vi = 0.0, vj = 0.0;
  switch (kind) {
    case ContrastKind::xi: vi = fb.out_rate_sums(I); vj = fb.out_rate_sums(J); break;
    case ContrastKind::zeta: vi = fb.out_rate_sums(I); vj = fb.in_rate_sums(J); break;
    case ContrastKind::eta: vi = fb.in_rate_sums(I); vj = fb.in_rate_sums(J); break;
  }
  if (!(vi > 0.0 && vj > 0.0)) throw SingularMatrixError("zero marginal rate in contrast");
  return std::sqrt(1.0 / vi + 1.0 / vj);
}

/// Studentized contrast (estimate - truth) / se. `truth` must use the same
/// normalization as `estimate` (zeta is not invariant across conventions).
inline double contrast_z(const ParamState& estimate, const FisherBlocks& fb, ContrastKind kind, std::size_t i,
                         std::size_t j, const ParamState& truth) {
  if (truth.normalization != estimate.normalization && kind == ContrastKind::zeta)
    throw InputError("zeta contrast needs truth and estimate under the same normalization");
  return (contrast_value(estimate, kind, i, j) - contrast_value(truth, kind, i, j)) / contrast_se(fb, kind, i, j);
}

/// I_n = (V_gamma_gamma - V_theta_gamma' V^{-1} V_theta_gamma) / (n(n-1)).
inline Eigen::MatrixXd gamma_information(const FisherBlocks& fb) {
  if (fb.dim() == 0) throw InputError("no covariates: gamma information is undefined");
  const double n = static_cast<double>(fb.nodes());
  return detail::schur_complement(fb) / (n * (n - 1.0));
}

/// Covariance of gamma_hat: I_n^{-1} / N with N = n(n-1).
inline Eigen::MatrixXd gamma_covariance(const FisherBlocks& fb) {
  const Eigen::MatrixXd info = gamma_information(fb);
  Eigen::LLT<Eigen::MatrixXd> llt(info);
  if (llt.info() != Eigen::Success) throw SingularMatrixError("gamma information matrix is singular");
  const double n = static_cast<double>(fb.nodes());
  const auto p = info.rows();
  return llt.solve(Eigen::MatrixXd::Identity(p, p)) / (n * (n - 1.0));
}

/// Plug-in bias term. With the exponential link lambda'' = lambda', so each
/// ratio is the rate-weighted mean of Z over a node's row or column:
///   B = (1 / (2 sqrt(N))) [ sum_i mean_j(Z_ij; lambda) + sum_j mean_i(Z_ij; lambda) ]
inline Eigen::VectorXd bias_term_Bhat(const ParamState& s, const CovariateTensor& z) {
  const Eigen::MatrixXd u = rate_matrix(s, z);
  const Eigen::VectorXd rs = u.rowwise().sum();
  const Eigen::VectorXd cs = u.colwise().sum().transpose();
  if (!(rs.minCoeff() > 0.0 && cs.minCoeff() > 0.0)) throw SingularMatrixError("zero marginal rate in bias term");
  const double n = static_cast<double>(s.nodes());
  const double scale = 1.0 / (2.0 * std::sqrt(n * (n - 1.0)));
  Eigen::VectorXd b(static_cast<Eigen::Index>(z.dim()));
  for (std::size_t k = 0; k < z.dim(); ++k) {
    const Eigen::MatrixXd w = u.cwiseProduct(z.layer(k));
    const double rows = (w.rowwise().sum().array() / rs.array()).sum();
    const double cols = (w.colwise().sum().transpose().array() / cs.array()).sum();
    b(static_cast<Eigen::Index>(k)) = scale * (rows + cols);
  }
  return b;
}

/// gamma_bc = gamma_hat - I^{-1} B / sqrt(n(n-1)).
inline Eigen::VectorXd bias_correct_gamma(const Eigen::VectorXd& gamma_hat, const Eigen::MatrixXd& info,
                                          const Eigen::VectorXd& b_hat, std::size_t n) {
  if (gamma_hat.size() != b_hat.size() || info.rows() != gamma_hat.size() || info.cols() != gamma_hat.size())
    throw InputError("bias correction dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(info);
  if (llt.info() != Eigen::Success) throw SingularMatrixError("gamma information matrix is singular");
  const double nn = static_cast<double>(n);
  return gamma_hat - llt.solve(b_hat) / std::sqrt(nn * (nn - 1.0));
}

/// Node whose pinned propensities define mu under a normalization that
/// carries mu: the last node for alpha_n = beta_n = 0, the first for ref-first.
inline std::size_t mu_anchor_node(Normalization norm, std::size_t n) {
  switch (norm) {
    case Normalization::alpha_n_beta_n_zero_with_mu: return n - 1;
    case Normalization::ref_node_first: return 0;
    case Normalization::mu_zero_beta_n_zero: break;
  }
  throw InputError("normalization mu-beta fixes mu = 0; it has no standard error");
}

/// Closed-form standard error of mu_hat, sqrt(1/u_a. + 1/u_.a) for the anchor
/// node a. mu_hat absorbs the anchor's out- and in-propensity, so its variance
/// is the matching diagonal entry of S rather than 1/(u_a. + u_.a).
inline double mu_standard_error(const FisherBlocks& fb, Normalization norm) {
  const auto a = static_cast<Eigen::Index>(mu_anchor_node(norm, fb.nodes()));
  const double out = fb.out_rate_sums(a), in = fb.in_rate_sums(a);
  if (!(out > 0.0 && in > 0.0)) throw SingularMatrixError("anchor node has zero marginal rate");
  return std::sqrt(1.0 / out + 1.0 / in);
}

struct InferenceReport {
  double ci_level = 0.95;
  Eigen::VectorXd theta_se;  // canonical layout, 2n-1
  Eigen::VectorXd alpha_se;  // per node: 1/sqrt(u_i.)
  Eigen::VectorXd beta_se;   // per node: 1/sqrt(u_.j)
  Eigen::MatrixXd gamma_information;
  Eigen::MatrixXd gamma_cov;
  Eigen::VectorXd gamma_se;
  Eigen::VectorXd bias_hat;
  Eigen::VectorXd gamma_bc;
  std::vector<WaldSummary> gamma;            // uncorrected estimates
  std::vector<WaldSummary> gamma_corrected;  // bias-corrected estimates, same SE
  std::optional<WaldSummary> mu;
};

/// Post-fit inference, evaluated at the uncorrected MLE.
inline InferenceReport infer(const ParamState& state, const CovariateTensor& z, double ci_level = 0.95) {
  normal_critical_value(ci_level);
  InferenceReport rep;
  rep.ci_level = ci_level;
  const FisherBlocks fb = fisher_blocks(state, z);
  rep.theta_se = theta_standard_errors(fb);
  rep.alpha_se = fb.out_rate_sums.array().rsqrt();
  rep.beta_se = fb.in_rate_sums.array().rsqrt();

  if (z.dim() > 0) {
    rep.gamma_information = gamma_information(fb);
    rep.gamma_cov = gamma_covariance(fb);
    rep.gamma_se = rep.gamma_cov.diagonal().array().sqrt();
    rep.bias_hat = bias_term_Bhat(state, z);
    rep.gamma_bc = bias_correct_gamma(state.gamma, rep.gamma_information, rep.bias_hat, state.nodes());
    for (Eigen::Index k = 0; k < state.gamma.size(); ++k) {
      rep.gamma.push_back(wald(state.gamma(k), rep.gamma_se(k), ci_level));
      rep.gamma_corrected.push_back(wald(rep.gamma_bc(k), rep.gamma_se(k), ci_level));
    }
  }
  if (carries_mu(state.normalization))
    rep.mu = wald(state.mu, mu_standard_error(fb, state.normalization), ci_level);
  return rep;
}

inline InferenceReport infer(const FitResult& fit, const CovariateTensor& z, double ci_level = 0.95) {
  return infer(fit.state, z, ci_level);
}

}  // namespace poissonet
