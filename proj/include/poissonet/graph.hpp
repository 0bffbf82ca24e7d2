#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "poissonet/errors.hpp"

namespace poissonet {

using WeightMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  std::int64_t weight = 0;
};

/// Directed multigraph on n nodes stored as a dense matrix of nonnegative
/// integer edge counts. The diagonal is always zero.
class WeightedDigraph {
 public:
  WeightedDigraph() = default;

  explicit WeightedDigraph(WeightMatrix weights) : weights_(std::move(weights)) {
    if (weights_.rows() != weights_.cols()) throw InputError("weight matrix must be square");
    if (weights_.rows() < 2) throw InputError("a graph needs at least two nodes");
    for (Eigen::Index i = 0; i < weights_.rows(); ++i) {
      if (weights_(i, i) != 0) throw InputError("self-loop at node " + std::to_string(i));
      for (Eigen::Index j = 0; j < weights_.cols(); ++j)
        if (weights_(i, j) < 0) throw InputError("negative edge weight");
    }
  }

  /// Duplicate (src, dst) entries are summed.
  static WeightedDigraph from_edges(std::size_t n, std::span<const Edge> edges) {
    if (n < 2) throw InputError("a graph needs at least two nodes");
    WeightMatrix w = WeightMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (const auto& e : edges) {
      if (e.src >= n || e.dst >= n) throw InputError("edge endpoint out of range");
      if (e.src == e.dst) throw InputError("self-loop at node " + std::to_string(e.src));
      if (e.weight < 0) throw InputError("negative edge weight");
      w(static_cast<Eigen::Index>(e.src), static_cast<Eigen::Index>(e.dst)) += e.weight;
    }
    return WeightedDigraph(std::move(w));
  }

  std::size_t size() const { return static_cast<std::size_t>(weights_.rows()); }
  std::int64_t weight(std::size_t i, std::size_t j) const {
    return weights_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  const WeightMatrix& weights() const { return weights_; }
  Eigen::MatrixXd weights_as_double() const { return weights_.cast<double>(); }

  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    for (Eigen::Index i = 0; i < weights_.rows(); ++i)
      for (Eigen::Index j = 0; j < weights_.cols(); ++j)
        if (weights_(i, j) > 0)
          out.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), weights_(i, j)});
    return out;
  }

 private:
  WeightMatrix weights_;
};

struct DegreeSequences {
  std::vector<std::int64_t> out;  // d_i
  std::vector<std::int64_t> in;   // b_j

  Eigen::VectorXd out_as_double() const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(out.size()));
    for (std::size_t i = 0; i < out.size(); ++i) v(static_cast<Eigen::Index>(i)) = static_cast<double>(out[i]);
    return v;
  }
  Eigen::VectorXd in_as_double() const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(in.size()));
    for (std::size_t i = 0; i < in.size(); ++i) v(static_cast<Eigen::Index>(i)) = static_cast<double>(in[i]);
    return v;
  }
};

inline DegreeSequences degrees(const WeightedDigraph& g) {
  const std::size_t n = g.size();
  DegreeSequences deg{std::vector<std::int64_t>(n, 0), std::vector<std::int64_t>(n, 0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      deg.out[i] += g.weight(i, j);
      deg.in[j] += g.weight(i, j);
    }
  return deg;
}

/// Nodes whose out- or in-degree is zero. Their propensities have no finite
/// maximum-likelihood estimate.
inline std::vector<std::size_t> zero_degree_nodes(const DegreeSequences& deg) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < deg.out.size(); ++i)
    if (deg.out[i] == 0 || deg.in[i] == 0) out.push_back(i);
  return out;
}

/// Pairwise covariates Z_ij in R^p, one dense n x n layer per dimension.
/// Diagonal entries are stored as zero and never read.
class CovariateTensor {
 public:
  CovariateTensor() = default;
  explicit CovariateTensor(std::size_t n) : n_(n) {}

  CovariateTensor(std::size_t n, std::vector<Eigen::MatrixXd> layers) : n_(n), layers_(std::move(layers)) {
    for (auto& layer : layers_) {
      if (static_cast<std::size_t>(layer.rows()) != n_ || static_cast<std::size_t>(layer.cols()) != n_)
        throw InputError("covariate layer has wrong dimensions");
      layer.diagonal().setZero();
      if (!layer.allFinite()) throw InputError("covariate values must be finite (missing values are rejected)");
      bound_ = std::max(bound_, layer.cwiseAbs().maxCoeff());
    }
  }

  std::size_t nodes() const { return n_; }
  std::size_t dim() const { return layers_.size(); }
  /// Largest |Z_ijk| over all entries.
  double bound() const { return bound_; }

  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return layers_[k](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  Eigen::VectorXd at(std::size_t i, std::size_t j) const {
    Eigen::VectorXd z(static_cast<Eigen::Index>(dim()));
    for (std::size_t k = 0; k < dim(); ++k) z(static_cast<Eigen::Index>(k)) = (*this)(i, j, k);
    return z;
  }
  const Eigen::MatrixXd& layer(std::size_t k) const { return layers_[k]; }
  const std::vector<Eigen::MatrixXd>& layers() const { return layers_; }

 private:
  std::size_t n_ = 0;
  std::vector<Eigen::MatrixXd> layers_;
  double bound_ = 0.0;
};

// ---------------------------------------------------------------------------
// Node attributes and covariate construction

struct AttributeColumn {
  std::string name;
  std::variant<std::vector<double>, std::vector<std::string>> values;

  bool categorical() const { return std::holds_alternative<std::vector<std::string>>(values); }
  std::size_t size() const {
    return std::visit([](const auto& v) { return v.size(); }, values);
  }
};

/// One row per node; columns are either continuous or categorical.
class NodeAttributeTable {
 public:
  NodeAttributeTable() = default;
  explicit NodeAttributeTable(std::size_t rows) : rows_(rows) {}

  void add_continuous(std::string name, std::vector<double> values) {
    add({std::move(name), std::move(values)});
  }
  void add_categorical(std::string name, std::vector<std::string> values) {
    add({std::move(name), std::move(values)});
  }

  std::size_t rows() const { return rows_; }
  const std::vector<AttributeColumn>& columns() const { return columns_; }

  const AttributeColumn& column(std::string_view name) const {
    for (const auto& c : columns_)
      if (c.name == name) return c;
    throw InputError("unknown attribute '" + std::string(name) + "'");
  }

 private:
  void add(AttributeColumn col) {
    if (col.size() != rows_)
      throw InputError("attribute '" + col.name + "' must have exactly one value per node");
    for (const auto& c : columns_)
      if (c.name == col.name) throw InputError("duplicate attribute '" + col.name + "'");
    if (!col.categorical()) {
      for (double v : std::get<std::vector<double>>(col.values))
        if (!std::isfinite(v)) throw InputError("attribute '" + col.name + "' has a missing or non-finite value");
    }
    columns_.push_back(std::move(col));
  }

  std::size_t rows_ = 0;
  std::vector<AttributeColumn> columns_;
};

enum class CombineRule {
  equal_match,  // +1 if equal, -1 otherwise
  abs_diff,     // |x_i - x_j|
  product,      // x_i * x_j
  l1_distance,  // sum over listed columns of |x_i - x_j|
};

struct Combinator {
  CombineRule rule = CombineRule::equal_match;
  std::vector<std::string> columns;

  std::string label() const {
    std::string name;
    for (std::size_t k = 0; k < columns.size(); ++k) name += (k ? "+" : "") + columns[k];
    switch (rule) {
      case CombineRule::equal_match: return name;
      case CombineRule::abs_diff: return "absdiff(" + name + ")";
      case CombineRule::product: return "product(" + name + ")";
      case CombineRule::l1_distance: return "l1(" + name + ")";
    }
    return name;
  }
};

/// Parses "rule:column" where rule is one of equal, absdiff, product, l1.
/// l1 accepts several columns joined by '+'.
inline Combinator parse_combinator(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == text.size())
    throw InputError("combinator '" + std::string(text) + "' must look like rule:column");
  const std::string_view rule = text.substr(0, colon);
  std::string_view rest = text.substr(colon + 1);

  Combinator c;
  if (rule == "equal" || rule == "equal_match") c.rule = CombineRule::equal_match;
  else if (rule == "absdiff" || rule == "abs_diff") c.rule = CombineRule::abs_diff;
  else if (rule == "product") c.rule = CombineRule::product;
  else if (rule == "l1" || rule == "l1_distance") c.rule = CombineRule::l1_distance;
  else throw InputError("unknown combinator rule '" + std::string(rule) + "'");

  while (!rest.empty()) {
    const auto plus = rest.find('+');
    const auto piece = rest.substr(0, plus);
    if (piece.empty()) throw InputError("empty column name in combinator '" + std::string(text) + "'");
    c.columns.emplace_back(piece);
    if (plus == std::string_view::npos) break;
    rest = rest.substr(plus + 1);
  }
  if (c.rule != CombineRule::l1_distance && c.columns.size() != 1)
    throw InputError("combinator '" + std::string(text) + "' takes exactly one column");
  return c;
}

/// Comma-separated list; an empty string yields no combinators.
inline std::vector<Combinator> parse_combinators(std::string_view text) {
  std::vector<Combinator> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const auto piece = text.substr(0, comma);
    if (!piece.empty()) out.push_back(parse_combinator(piece));
    if (comma == std::string_view::npos) break;
    text = text.substr(comma + 1);
  }
  return out;
}

inline CovariateTensor build_covariates(const NodeAttributeTable& attrs, std::span<const Combinator> spec) {
  const std::size_t n = attrs.rows();
  const auto N = static_cast<Eigen::Index>(n);
  std::vector<Eigen::MatrixXd> layers;
  layers.reserve(spec.size());

  for (const auto& comb : spec) {
    Eigen::MatrixXd layer = Eigen::MatrixXd::Zero(N, N);
    if (comb.rule == CombineRule::equal_match) {
      const auto& col = attrs.column(comb.columns.front());
      std::visit(
          [&](const auto& v) {
            for (Eigen::Index i = 0; i < N; ++i)
              for (Eigen::Index j = 0; j < N; ++j)
                if (i != j)
                  layer(i, j) = v[static_cast<std::size_t>(i)] == v[static_cast<std::size_t>(j)] ? 1.0 : -1.0;
          },
          col.values);
    } else {
      for (const auto& name : comb.columns) {
        const auto& col = attrs.column(name);
        if (col.categorical())
          throw InputError("combinator " + comb.label() + " needs a continuous attribute, '" + name +
                           "' is categorical");
        const auto& x = std::get<std::vector<double>>(col.values);
        for (Eigen::Index i = 0; i < N; ++i)
          for (Eigen::Index j = 0; j < N; ++j) {
            if (i == j) continue;
            const double xi = x[static_cast<std::size_t>(i)];
            const double xj = x[static_cast<std::size_t>(j)];
            layer(i, j) += comb.rule == CombineRule::product ? xi * xj : std::abs(xi - xj);
          }
      }
    }
    layers.push_back(std::move(layer));
  }
  return CovariateTensor(n, std::move(layers));
}

}  // namespace poissonet
