#include <catch_amalgamated.hpp>

#include <numeric>
#include <random>

#include "poissonet/graph.hpp"

using namespace poissonet;

namespace {

WeightedDigraph from_rows(std::initializer_list<std::initializer_list<std::int64_t>> rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  WeightMatrix w(n, n);
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (auto v : r) w(i, j++) = v;
    ++i;
  }
  return WeightedDigraph(w);
}

NodeAttributeTable staff() {
  NodeAttributeTable t(3);
  t.add_categorical("dept", {"legal", "legal", "trading"});
  t.add_continuous("x1", {0.4, 0.1, 0.7});
  t.add_continuous("x2", {-1.0, -1.0, 1.0});
  return t;
}

}  // namespace

TEST_CASE("degrees of small graphs", "[graph]") {
  SECTION("two nodes") {
    const auto d = degrees(from_rows({{0, 3}, {0, 0}}));
    CHECK(d.out == std::vector<std::int64_t>{3, 0});
    CHECK(d.in == std::vector<std::int64_t>{0, 3});
  }
  SECTION("empty graph") {
    const auto d = degrees(WeightedDigraph(WeightMatrix::Zero(4, 4)));
    CHECK(d.out == std::vector<std::int64_t>(4, 0));
    CHECK(d.in == std::vector<std::int64_t>(4, 0));
  }
  SECTION("3x3 hand example") {
    const auto g = from_rows({{0, 1, 2}, {4, 0, 0}, {0, 5, 0}});
    const auto d = degrees(g);
    CHECK(d.out == std::vector<std::int64_t>{3, 4, 5});
    CHECK(d.in == std::vector<std::int64_t>{4, 6, 2});
    std::vector<std::int64_t> out(3, 0), in(3, 0);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        out[i] += g.weight(i, j);
        in[j] += g.weight(i, j);
      }
    CHECK(d.out == out);
    CHECK(d.in == in);
  }
}

TEST_CASE("total out-degree equals total in-degree", "[graph]") {
  std::mt19937_64 rng(11);
  std::poisson_distribution<std::int64_t> draw(2.5);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::Index n = 2 + rep;
    WeightMatrix w(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) w(i, j) = i == j ? 0 : draw(rng);
    const auto d = degrees(WeightedDigraph(w));
    CHECK(std::accumulate(d.out.begin(), d.out.end(), std::int64_t{0}) ==
          std::accumulate(d.in.begin(), d.in.end(), std::int64_t{0}));
  }
}

TEST_CASE("graph construction rejects invalid weights", "[graph]") {
  CHECK_THROWS_AS(WeightedDigraph(WeightMatrix::Zero(1, 1)), InputError);
  CHECK_THROWS_AS(WeightedDigraph(WeightMatrix::Zero(2, 3)), InputError);
  CHECK_THROWS_AS(from_rows({{1, 0}, {0, 0}}), InputError);
  CHECK_THROWS_AS(from_rows({{0, -1}, {0, 0}}), InputError);
  const std::vector<Edge> loop{{1, 1, 2}};
  CHECK_THROWS_AS(WeightedDigraph::from_edges(3, loop), InputError);
  const std::vector<Edge> far{{0, 5, 1}};
  CHECK_THROWS_AS(WeightedDigraph::from_edges(3, far), InputError);
}

TEST_CASE("from_edges sums duplicate pairs", "[graph]") {
  const std::vector<Edge> e{{0, 1, 2}, {0, 1, 3}, {2, 0, 1}};
  const auto g = WeightedDigraph::from_edges(3, e);
  CHECK(g.weight(0, 1) == 5);
  CHECK(g.weight(2, 0) == 1);
  CHECK(g.edges().size() == 2);
}

TEST_CASE("zero-degree nodes are listed", "[graph]") {
  const auto g = from_rows({{0, 1, 0}, {1, 0, 0}, {1, 0, 0}});
  CHECK(zero_degree_nodes(degrees(g)) == std::vector<std::size_t>{2});
}

TEST_CASE("covariate tensor bookkeeping", "[graph]") {
  Eigen::MatrixXd layer = Eigen::MatrixXd::Constant(3, 3, -2.5);
  CovariateTensor z(3, {layer});
  CHECK(z.dim() == 1);
  CHECK(z(0, 0, 0) == 0.0);  // diagonal cleared
  CHECK(z(0, 1, 0) == -2.5);
  CHECK(z.bound() == 2.5);
  CHECK(CovariateTensor(5).dim() == 0);

  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(3, 3);
  bad(0, 1) = std::nan("");
  CHECK_THROWS_AS(CovariateTensor(3, {bad}), InputError);
  CHECK_THROWS_AS(CovariateTensor(3, {Eigen::MatrixXd::Zero(2, 3)}), InputError);
}

TEST_CASE("build_covariates rules", "[graph]") {
  const auto attrs = staff();
  SECTION("equal_match on categorical departments") {
    const auto specs = parse_combinators("equal:dept");
    const auto z = build_covariates(attrs, specs);
    CHECK(z(0, 1, 0) == 1.0);
    CHECK(z(0, 2, 0) == -1.0);
    CHECK(z(0, 0, 0) == 0.0);
  }
  SECTION("abs_diff") {
    const auto specs = parse_combinators("absdiff:x1");
    CHECK(build_covariates(attrs, specs)(0, 1, 0) == Catch::Approx(0.3));
  }
  SECTION("product of signs") {
    const auto specs = parse_combinators("product:x2");
    const auto z = build_covariates(attrs, specs);
    CHECK(z(0, 1, 0) == 1.0);
    CHECK(z(0, 2, 0) == -1.0);
  }
  SECTION("l1 over several columns") {
    const auto specs = parse_combinators("l1:x1+x2");
    CHECK(build_covariates(attrs, specs)(0, 2, 0) == Catch::Approx(0.3 + 2.0));
  }
  SECTION("equal_match is symmetric and the build is deterministic") {
    const auto specs = parse_combinators("equal:dept,equal:x2");
    const auto a = build_covariates(attrs, specs);
    const auto b = build_covariates(attrs, specs);
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(a.layer(k) == a.layer(k).transpose());
      CHECK(a.layer(k) == b.layer(k));
    }
  }
}

TEST_CASE("build_covariates errors", "[graph]") {
  const auto attrs = staff();
  CHECK_THROWS_AS(build_covariates(attrs, parse_combinators("equal:salary")), InputError);
  CHECK_THROWS_AS(build_covariates(attrs, parse_combinators("absdiff:dept")), InputError);
  CHECK_THROWS_AS(parse_combinators("cosine:x1"), InputError);
  CHECK_THROWS_AS(parse_combinators("x1"), InputError);
  CHECK_THROWS_AS(parse_combinators("absdiff:x1+x2"), InputError);
  CHECK(parse_combinators("").empty());
}

TEST_CASE("attribute table validation", "[graph]") {
  NodeAttributeTable t(2);
  CHECK_THROWS_AS(t.add_continuous("a", {1.0}), InputError);
  CHECK_THROWS_AS(t.add_continuous("a", {1.0, std::nan("")}), InputError);
  t.add_categorical("a", {"x", "y"});
  CHECK_THROWS_AS(t.add_categorical("a", {"x", "y"}), InputError);
  CHECK(t.column("a").categorical());
}
