#pragma once

// Random test instances. Kept away from the simulator module so that the
// tests exercising it do not also feed its own output back into themselves.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <vector>

#include "poissonet/graph.hpp"
#include "poissonet/model.hpp"

namespace testsupport {

struct Instance {
  poissonet::WeightedDigraph graph;
  poissonet::CovariateTensor z;
  poissonet::ParamState truth;
};

/// n nodes, p covariates, moderate rates (exp around `level`) so every node
/// has positive in- and out-degree with overwhelming probability.
inline Instance random_instance(std::size_t n, std::size_t p, std::uint64_t seed, double level = 1.0,
                                double spread = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(-spread, spread);
  const auto N = static_cast<Eigen::Index>(n);

  std::vector<Eigen::MatrixXd> layers;
  for (std::size_t k = 0; k < p; ++k) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(N, N);
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index j = 0; j < N; ++j)
        if (i != j) m(i, j) = (k % 2 == 0) ? normal(rng) : (normal(rng) > 0 ? 1.0 : -1.0);
    layers.push_back(std::move(m));
  }
  poissonet::CovariateTensor z(n, std::move(layers));

  poissonet::ParamState s = poissonet::ParamState::zeros(n, p);
  for (Eigen::Index i = 0; i < N; ++i) {
    s.alpha(i) = level + unif(rng);
    s.beta(i) = unif(rng);
  }
  s.beta(N - 1) = 0.0;
  for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(p); ++k) s.gamma(k) = 0.2 * unif(rng) / spread;

  const Eigen::MatrixXd lambda = poissonet::rate_matrix(s, z);
  poissonet::WeightMatrix a = poissonet::WeightMatrix::Zero(N, N);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < N; ++j)
      if (i != j) a(i, j) = std::poisson_distribution<std::int64_t>(lambda(i, j))(rng);
  return {poissonet::WeightedDigraph(std::move(a)), std::move(z), s};
}

}  // namespace testsupport
