#include <catch_amalgamated.hpp>

#include <algorithm>
#include <atomic>

#include "poissonet/simulator.hpp"

using namespace poissonet;
using Catch::Approx;

namespace {

SimDesign small_design(std::size_t reps = 6) {
  SimDesign d;
  d.n = 20;
  d.reps = reps;
  d.seed = 4242;
  d.contrast_pairs = default_contrast_pairs(20);
  return d;
}

}  // namespace

TEST_CASE("true parameters", "[simulator]") {
  const ParamState flat = gen_parameters(100, 0.0);
  CHECK(flat.nodes() == 101);
  CHECK(flat.alpha.cwiseAbs().maxCoeff() == 0.0);
  CHECK(flat.beta.cwiseAbs().maxCoeff() == 0.0);
  CHECK(flat.mu == Approx(-1.1513).epsilon(1e-4));

  const ParamState ramp = gen_parameters(100, 0.2);
  CHECK(ramp.alpha(100) == Approx(0.9210).epsilon(1e-4));
  CHECK(ramp.beta == ramp.alpha);
  CHECK(ramp.normalized());
  CHECK_THROWS_AS(gen_parameters(1, 0.0), InputError);
  CHECK_THROWS_AS(gen_parameters(10, -0.1), InputError);
}

TEST_CASE("covariate recipes", "[simulator]") {
  const CovariateTensor z = gen_covariates(60, std::uint64_t{3});
  REQUIRE(z.dim() == 3);
  CHECK(z.layer(1) == z.layer(1).transpose());
  CHECK(z.layer(1).minCoeff() >= 0.0);
  CHECK(z.layer(1).maxCoeff() <= 1.0);
  for (Eigen::Index i = 0; i < 60; ++i)
    for (Eigen::Index j = 0; j < 60; ++j)
      if (i != j) CHECK(std::abs(z.layer(2)(i, j)) == 1.0);
  CHECK(z.layer(0) != z.layer(0).transpose());

  // E[X_i2] = -0.4, so E[Z_ij3] = 0.16 for independent nodes.
  std::mt19937_64 rng(99);
  double sum = 0.0;
  const int draws = 100000;
  for (int k = 0; k < draws; ++k) sum += gen_covariates(2, rng)(0, 1, 2);
  CHECK(sum / draws == Approx(0.16).margin(0.01));

  const CovariateTensor again = gen_covariates(60, std::uint64_t{3});
  for (std::size_t k = 0; k < 3; ++k) CHECK(again.layer(k) == z.layer(k));
}

TEST_CASE("network sampling", "[simulator]") {
  SECTION("vanishing rates give an empty graph") {
    ParamState s = ParamState::zeros(30, 0);
    s.mu = -50.0;
    const WeightedDigraph g = sample_network(s, CovariateTensor(30), std::uint64_t{1});
    CHECK(g.weights().sum() == 0);
  }
  SECTION("Poisson moments") {
    ParamState s = ParamState::zeros(2, 0);
    s.mu = std::log(2.0);
    std::mt19937_64 rng(8);
    const int draws = 100000;
    double sum = 0.0, sq = 0.0;
    for (int k = 0; k < draws; ++k) {
      const double a = static_cast<double>(sample_network(s, CovariateTensor(2), rng).weight(0, 1));
      sum += a;
      sq += a * a;
    }
    const double mean = sum / draws;
    const double var = sq / draws - mean * mean;
    CHECK(mean == Approx(2.0).margin(0.02));
    CHECK(var / mean == Approx(1.0).margin(0.03));
  }
  SECTION("overflowing rates are reported") {
    ParamState s = ParamState::zeros(3, 0);
    s.mu = 800.0;
    CHECK_THROWS_AS(sample_network(s, CovariateTensor(3), std::uint64_t{1}), DivergenceError);
  }
}

TEST_CASE("trial seeds", "[simulator]") {
  CHECK(trial_seed(1, 0) != trial_seed(1, 1));
  CHECK(trial_seed(1, 0) != trial_seed(2, 0));
  CHECK(trial_seed(7, 5) == trial_seed(7, 5));
  CHECK(splitmix64_mix(0) == 0);
}

TEST_CASE("design validation", "[simulator]") {
  SimDesign d = small_design();
  d.reps = 0;
  CHECK_THROWS_AS(d.validate(), InputError);
  d = small_design();
  d.ci_level = 1.0;
  CHECK_THROWS_AS(d.validate(), InputError);
  d = small_design();
  d.contrast_pairs = {{3, 3}};
  CHECK_THROWS_AS(d.validate(), InputError);
  d = small_design();
  d.contrast_pairs = {{1, 21}};
  CHECK_THROWS_AS(d.validate(), InputError);
  d = small_design();
  d.normalization = Normalization::mu_zero_beta_n_zero;
  CHECK_THROWS_AS(d.validate(), InputError);
  d = small_design();
  d.gamma_true = Eigen::Vector2d(1.0, 1.0);
  CHECK_THROWS_AS(run_study(d), InputError);
}

TEST_CASE("study reports", "[simulator]") {
  const SimDesign d = small_design(8);
  const SimulationReport r = run_study(d, {1, nullptr});
  CHECK(r.completed == 8);
  CHECK_FALSE(r.cancelled);
  REQUIRE(r.contrasts.size() == 5);
  REQUIRE(r.mu);
  REQUIRE(r.gamma.size() == 3);
  for (const auto& c : r.contrasts) {
    CHECK(c.coverage >= 0.0);
    CHECK(c.coverage <= 100.0);
    CHECK(c.mean_length > 0.0);
  }
  CHECK(r.contrasts[0].label == "(1,2)");
  CHECK(r.mu->label == "(0,0)");
  CHECK(r.mu->truth == Approx(-std::log(20.0) / 4.0));
  CHECK(r.nonexistence_pct >= 0.0);

  SECTION("the mean length matches twice the critical value times the contrast SE") {
    double len = 0.0;
    std::size_t used = 0;
    for (const auto& t : r.trials)
      if (t.usable()) {
        len += 2.0 * normal_critical_value(0.95) * t.contrast_se[0];
        ++used;
      }
    CHECK(r.contrasts[0].mean_length == Approx(len / static_cast<double>(used)));
  }
}

TEST_CASE("a single replication yields 0 or 100 percent", "[simulator]") {
  const SimulationReport r = run_study(small_design(1));
  for (const auto& c : r.contrasts) CHECK((c.coverage == 0.0 || c.coverage == 100.0));
  for (const auto& g : r.gamma) CHECK((g.coverage_uncorrected == 0.0 || g.coverage_uncorrected == 100.0));
}

TEST_CASE("studies are reproducible and thread-count independent", "[simulator]") {
  const SimDesign d = small_design(10);
  const SimulationReport a = run_study(d, {1, nullptr});
  const SimulationReport b = run_study(d, {4, nullptr});
  for (std::size_t t = 0; t < 10; ++t) {
    CHECK(a.trials[t].seed == b.trials[t].seed);
    CHECK(a.trials[t].gamma_hat == b.trials[t].gamma_hat);
    CHECK(a.trials[t].contrast_estimate == b.trials[t].contrast_estimate);
  }
  CHECK(a.contrasts[0].coverage == b.contrasts[0].coverage);
  CHECK(a.gamma[1].mean_estimate == b.gamma[1].mean_estimate);
}

TEST_CASE("trials are exchangeable", "[simulator]") {
  // Running trials in reverse order gives the same multiset of outcomes.
  const SimDesign d = small_design(6);
  const auto ctx = detail::make_context(d);
  std::vector<double> forward, backward;
  for (std::size_t t = 0; t < d.reps; ++t)
    forward.push_back(run_trial(d, ctx.truth, nullptr, t, trial_seed(d.seed, t)).gamma_hat(0));
  for (std::size_t t = d.reps; t-- > 0;)
    backward.push_back(run_trial(d, ctx.truth, nullptr, t, trial_seed(d.seed, t)).gamma_hat(0));
  std::sort(forward.begin(), forward.end());
  std::sort(backward.begin(), backward.end());
  CHECK(forward == backward);
}

TEST_CASE("fixed covariates stay fixed", "[simulator]") {
  SimDesign d = small_design(3);
  d.fix_covariates = true;
  const SimulationReport r = run_study(d);
  CHECK(r.completed == 3);
  CHECK(r.trials[0].gamma_hat != r.trials[1].gamma_hat);
}

TEST_CASE("cancellation stops between replications", "[simulator]") {
  std::atomic<bool> stop{true};
  const SimulationReport r = run_study(small_design(5), {1, &stop});
  CHECK(r.cancelled);
  CHECK(r.completed == 0);
}

TEST_CASE("CI length shrinks with heterogeneity for the high-index pair", "[simulator][slow]") {
  SimDesign d;
  d.n = 100;
  d.reps = 20;
  d.seed = 5;
  d.contrast_pairs = {{99, 100}};
  d.include_mu = false;
  double last = 1e9;
  for (double c : {0.0, 0.3, 0.6}) {
    d.c = c;
    const SimulationReport r = run_study(d, {threads_from_env(), nullptr});
    CHECK(r.contrasts[0].mean_length < last);
    last = r.contrasts[0].mean_length;
    if (c == 0.6) CHECK(last == Approx(0.058).epsilon(0.10));
  }
}
