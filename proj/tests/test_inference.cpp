#include <catch_amalgamated.hpp>

#include "poissonet/inference.hpp"
#include "poissonet/simulator.hpp"
#include "support.hpp"

using namespace poissonet;
using Catch::Approx;

namespace {

FisherBlocks unit_blocks(std::size_t n) { return fisher_blocks(ParamState::zeros(n, 0), CovariateTensor(n)); }

}  // namespace

TEST_CASE("approximate inverse closed form", "[inference]") {
  const Eigen::MatrixXd s = approx_inverse_S(unit_blocks(3));
  REQUIRE(s.rows() == 5);
  CHECK(s(0, 0) == Approx(1.0));
  CHECK(s(0, 3) == Approx(-0.5));
  CHECK(s(3, 3) == Approx(1.0));
  CHECK(s(0, 1) == Approx(0.5));
  CHECK(s.isApprox(s.transpose()));

  FisherBlocks fb = unit_blocks(4);
  fb.out_rate_sums(1) = 0.0;
  CHECK_THROWS_AS(approx_inverse_S(fb), SingularMatrixError);
}

TEST_CASE("structured operator applies the same S", "[inference]") {
  const auto inst = testsupport::random_instance(9, 1, 3);
  const Eigen::MatrixXd u = rate_matrix(inst.truth, inst.z);
  const Eigen::MatrixXd s = approx_inverse_S(fisher_blocks(inst.truth, inst.z));
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(17, -2.0, 3.0);
  CHECK((StructuredFisher(u).apply_approx_inverse(x) - s * x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("S approaches the inverse as n grows", "[inference]") {
  auto errors = [](std::size_t n) {
    const auto inst = testsupport::random_instance(n, 0, 900 + n, 0.0, 0.5);
    const FisherBlocks fb = fisher_blocks(inst.truth, inst.z);
    const Eigen::MatrixXd exact = fb.V.inverse();
    const Eigen::MatrixXd s = approx_inverse_S(fb);
    const double id = (s * fb.V - Eigen::MatrixXd::Identity(fb.V.rows(), fb.V.cols())).cwiseAbs().maxCoeff();
    return std::pair{(exact - s).cwiseAbs().maxCoeff() / exact.cwiseAbs().maxCoeff(), id};
  };
  const auto [e20, i20] = errors(20);
  const auto [e30, i30] = errors(30);
  const auto [e80, i80] = errors(80);
  CHECK(e30 <= 0.05);
  CHECK(e80 < e20);
  CHECK(i80 < i20);
}

TEST_CASE("theta standard errors", "[inference]") {
  const FisherBlocks fb = unit_blocks(101);
  const Eigen::VectorXd se = theta_standard_errors(fb);
  CHECK(se.size() == 201);
  CHECK((se.array() - 0.1).abs().maxCoeff() < 1e-12);

  FisherBlocks broken = unit_blocks(3);
  broken.V(1, 1) = 0.0;
  CHECK_THROWS_AS(theta_standard_errors(broken), SingularMatrixError);
}

TEST_CASE("contrasts", "[inference]") {
  const auto inst = testsupport::random_instance(10, 2, 6);
  const FisherBlocks fb = fisher_blocks(inst.truth, inst.z);
  SECTION("zero at the truth") {
    for (auto kind : {ContrastKind::xi, ContrastKind::zeta, ContrastKind::eta})
      CHECK(contrast_z(inst.truth, fb, kind, 1, 2, inst.truth) == 0.0);
  }
  SECTION("zeta uses the out-sum of i and the in-sum of j") {
    const Eigen::MatrixXd u = rate_matrix(inst.truth, inst.z);
    const double hand = std::sqrt(1.0 / u.row(2).sum() + 1.0 / u.col(5).sum());
    CHECK(contrast_se(fb, ContrastKind::zeta, 2, 5) == Approx(hand).epsilon(1e-14));
    const double xi = std::sqrt(1.0 / fb.V(1, 1) + 1.0 / fb.V(2, 2));
    CHECK(contrast_se(fb, ContrastKind::xi, 1, 2) == Approx(xi).epsilon(1e-14));
  }
  SECTION("contrast SE matches a simulated CI half-width") {
    const double crit = normal_critical_value(0.95);
    CHECK(crit == Approx(1.959964).epsilon(1e-6));
    const auto w = wald(contrast_value(inst.truth, ContrastKind::xi, 1, 2), contrast_se(fb, ContrastKind::xi, 1, 2), 0.95);
    CHECK((w.upper - w.lower) / 2.0 / crit == Approx(contrast_se(fb, ContrastKind::xi, 1, 2)));
  }
  SECTION("errors") {
    CHECK_THROWS_AS(contrast_value(inst.truth, ContrastKind::xi, 0, 10), InputError);
    CHECK_THROWS_AS(contrast_se(fb, ContrastKind::eta, 11, 1), InputError);
    ParamState other = renormalize(inst.truth, Normalization::ref_node_first);
    CHECK_THROWS_AS(contrast_z(inst.truth, fb, ContrastKind::zeta, 1, 2, other), InputError);
    CHECK(contrast_z(inst.truth, fb, ContrastKind::xi, 1, 2, other) == Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("gamma information and covariance", "[inference]") {
  CHECK_THROWS_AS(gamma_information(unit_blocks(4)), InputError);

  const auto inst = testsupport::random_instance(12, 3, 8);
  const FitResult fr = fit(inst.graph, inst.z);
  REQUIRE(fr.converged);
  const FisherBlocks fb = fisher_blocks(fr.state, inst.z);
  const double N = 12.0 * 11.0;
  const Eigen::MatrixXd info = gamma_information(fb);
  CHECK((info * N - profile_hessian_H(fr.state, inst.z)).cwiseAbs().maxCoeff() < 1e-10 * N);
  const Eigen::MatrixXd cov = gamma_covariance(fb);
  CHECK(cov.isApprox(cov.transpose()));
  CHECK((cov * info * N - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cov).eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("bias term", "[inference]") {
  SECTION("constant covariate") {
    const std::size_t n = 9;
    const auto N = static_cast<Eigen::Index>(n);
    const double zc = 0.7;
    const CovariateTensor z(n, {Eigen::MatrixXd::Constant(N, N, zc)});
    const auto inst = testsupport::random_instance(n, 1, 4);
    const Eigen::VectorXd b = bias_term_Bhat(inst.truth, z);
    CHECK(b(0) == Approx(n * zc / std::sqrt(static_cast<double>(n * (n - 1)))).epsilon(1e-12));
  }
  SECTION("centered covariate at unit rates") {
    // Z_ij = x_i - x_j with x summing to zero: every row and column mean vanishes.
    const Eigen::Index n = 6;
    Eigen::VectorXd x(n);
    x << -2.5, -1.5, -0.5, 0.5, 1.5, 2.5;
    Eigen::MatrixXd layer(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) layer(i, j) = x(i) - x(j);
    const CovariateTensor z(6, {layer});
    CHECK(std::abs(bias_term_Bhat(ParamState::zeros(6, 1), z)(0)) < 1e-12);
  }
  SECTION("zero bias leaves gamma unchanged") {
    const Eigen::Vector2d g(0.3, -0.4);
    const Eigen::Matrix2d info = Eigen::Matrix2d::Identity() * 2.0;
    CHECK(bias_correct_gamma(g, info, Eigen::Vector2d::Zero(), 10) == g);
  }
  SECTION("correction equals I^{-1} B / sqrt(N) from a second path") {
    const auto inst = testsupport::random_instance(11, 2, 14);
    const FitResult fr = fit(inst.graph, inst.z);
    REQUIRE(fr.converged);
    const FisherBlocks fb = fisher_blocks(fr.state, inst.z);
    const Eigen::MatrixXd info = gamma_information(fb);
    const Eigen::VectorXd b = bias_term_Bhat(fr.state, inst.z);
    const Eigen::VectorXd bc = bias_correct_gamma(fr.state.gamma, info, b, 11);
    const Eigen::VectorXd shift = info.inverse() * b / std::sqrt(110.0);
    CHECK((fr.state.gamma - bc - shift).cwiseAbs().maxCoeff() < 1e-12);
  }
  SECTION("errors") {
    CHECK_THROWS_AS(bias_correct_gamma(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity(), Eigen::Vector3d::Zero(), 5),
                    InputError);
    CHECK_THROWS_AS(bias_correct_gamma(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Zero(), Eigen::Vector2d::Zero(), 5),
                    SingularMatrixError);
  }
}

TEST_CASE("mu standard error", "[inference]") {
  const FisherBlocks fb = unit_blocks(101);
  CHECK(mu_standard_error(fb, Normalization::alpha_n_beta_n_zero_with_mu) == Approx(std::sqrt(0.02)));
  CHECK(mu_anchor_node(Normalization::ref_node_first, 101) == 0);
  CHECK_THROWS_AS(mu_standard_error(fb, Normalization::mu_zero_beta_n_zero), InputError);

  // Equals the S-based standard error of alpha_n under the mu = 0 convention.
  const auto inst = testsupport::random_instance(15, 1, 3);
  const FisherBlocks r = fisher_blocks(inst.truth, inst.z);
  const double via_contrast = std::sqrt(1.0 / r.out_rate_sums(14) + 1.0 / r.in_rate_sums(14));
  CHECK(mu_standard_error(r, Normalization::alpha_n_beta_n_zero_with_mu) == Approx(via_contrast));
  const Eigen::MatrixXd s = approx_inverse_S(r);
  CHECK(std::sqrt(s(14, 14)) == Approx(via_contrast));
}

TEST_CASE("infer assembles a complete report", "[inference]") {
  const auto inst = testsupport::random_instance(14, 2, 31);
  const FitResult fr = fit(inst.graph, inst.z, {}, Normalization::alpha_n_beta_n_zero_with_mu);
  REQUIRE(fr.converged);
  const InferenceReport rep = infer(fr, inst.z, 0.9);
  CHECK(rep.ci_level == 0.9);
  CHECK(rep.theta_se.size() == 27);
  CHECK((rep.alpha_se.array() > 0.0).all());
  CHECK((rep.beta_se.array() > 0.0).all());
  REQUIRE(rep.gamma.size() == 2);
  REQUIRE(rep.mu);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(rep.gamma[k].estimate == fr.state.gamma(static_cast<Eigen::Index>(k)));
    CHECK(rep.gamma_corrected[k].estimate == rep.gamma_bc(static_cast<Eigen::Index>(k)));
    CHECK(rep.gamma[k].se == rep.gamma_corrected[k].se);
    CHECK(rep.gamma[k].p_value >= 0.0);
    CHECK(rep.gamma[k].p_value <= 1.0);
    CHECK(rep.gamma[k].lower < rep.gamma[k].estimate);
  }
  const InferenceReport none = infer(fit(inst.graph, CovariateTensor(14), {}, Normalization::mu_zero_beta_n_zero),
                                     CovariateTensor(14));
  CHECK(none.gamma.empty());
  CHECK_FALSE(none.mu);
  CHECK_THROWS_AS(infer(fr, inst.z, 1.5), InputError);
}

TEST_CASE("Wald summaries", "[inference]") {
  const WaldSummary w = wald(1.96, 1.0, 0.95);
  CHECK(w.p_value == Approx(0.05).epsilon(1e-3));
  CHECK(w.lower == Approx(1.96 - 1.959964).margin(1e-6));
  CHECK(wald(0.0, 1.0, 0.95).p_value == 1.0);
  CHECK_THROWS_AS(normal_critical_value(0.0), InputError);
}
