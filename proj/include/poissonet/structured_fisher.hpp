#pragma once

#include <Eigen/Dense>

#include <optional>

#include "poissonet/errors.hpp"

namespace poissonet {

/// Matrix-free view of the (2n-1) x (2n-1) Fisher matrix V built from a rate
/// matrix u (n x n, zero diagonal):
///
///   [ diag(u_i.)          u(:, 1..n-1)      ]
///   [ u(:, 1..n-1)'       diag(u_.j), j<n   ]
///
/// Products cost O(n^2). Solves run conjugate gradients preconditioned by the
/// closed-form approximate inverse, which is applied in O(n); a dense
/// Cholesky factorization takes over if CG does not reach the tolerance.
class StructuredFisher {
 public:
  explicit StructuredFisher(const Eigen::MatrixXd& rates)
      : u_(rates.leftCols(rates.cols() - 1)),
        row_sums_(rates.rowwise().sum()),
        col_sums_(rates.colwise().sum().transpose()) {}

  Eigen::Index nodes() const { return row_sums_.size(); }
  Eigen::Index dim() const { return 2 * nodes() - 1; }
  const Eigen::VectorXd& row_sums() const { return row_sums_; }
  const Eigen::VectorXd& col_sums() const { return col_sums_; }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    const auto n = nodes();
    Eigen::VectorXd y(dim());
    y.head(n).noalias() = row_sums_.cwiseProduct(x.head(n)) + u_ * x.tail(n - 1);
    y.tail(n - 1).noalias() = col_sums_.head(n - 1).cwiseProduct(x.tail(n - 1)) + u_.transpose() * x.head(n);
    return y;
  }

  /// S x with S the closed-form approximate inverse of V.
  Eigen::VectorXd apply_approx_inverse(const Eigen::VectorXd& x) const {
    const auto n = nodes();
    const double shared = (x.head(n).sum() - x.tail(n - 1).sum()) / col_sums_(n - 1);
    Eigen::VectorXd y(dim());
    y.head(n) = x.head(n).cwiseQuotient(row_sums_).array() + shared;
    y.tail(n - 1) = x.tail(n - 1).cwiseQuotient(col_sums_.head(n - 1)).array() - shared;
    return y;
  }

  Eigen::MatrixXd dense() const {
    const auto n = nodes();
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(dim(), dim());
    v.diagonal().head(n) = row_sums_;
    v.diagonal().tail(n - 1) = col_sums_.head(n - 1);
    v.topRightCorner(n, n - 1) = u_;
    v.bottomLeftCorner(n - 1, n) = u_.transpose();
    return v;
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    if (auto x = solve_cg(rhs)) return *std::move(x);
    return solve_dense(rhs);
  }

  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const {
    Eigen::MatrixXd out(rhs.rows(), rhs.cols());
    for (Eigen::Index k = 0; k < rhs.cols(); ++k) out.col(k) = solve(Eigen::VectorXd(rhs.col(k)));
    return out;
  }

  /// Preconditioned CG; nullopt when the relative residual does not drop
  /// below `rel_tol` within `max_iter` steps.
  std::optional<Eigen::VectorXd> solve_cg(const Eigen::VectorXd& rhs, double rel_tol = 1e-13,
                                          int max_iter = 200) const {
    if (row_sums_.minCoeff() <= 0.0 || col_sums_.minCoeff() <= 0.0) return std::nullopt;
    const double target = rel_tol * rhs.norm();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(dim());
    if (target == 0.0) return x;
    Eigen::VectorXd r = rhs;
    Eigen::VectorXd z = apply_approx_inverse(r);
    Eigen::VectorXd p = z;
    double rz = r.dot(z);
    for (int it = 0; it < max_iter; ++it) {
      const Eigen::VectorXd vp = apply(p);
      const double curvature = p.dot(vp);
      if (!(curvature > 0.0)) return std::nullopt;
      const double step = rz / curvature;
      x.noalias() += step * p;
      r.noalias() -= step * vp;
      if (r.norm() <= target) return x;
      z = apply_approx_inverse(r);
      const double rz_next = r.dot(z);
      p = z + (rz_next / rz) * p;
      rz = rz_next;
    }
    return std::nullopt;
  }

  Eigen::VectorXd solve_dense(const Eigen::VectorXd& rhs) const {
    Eigen::LLT<Eigen::MatrixXd> llt(dense());
    if (llt.info() != Eigen::Success) throw SingularMatrixError("Fisher matrix V is singular");
    Eigen::VectorXd x = llt.solve(rhs);
    if (!x.allFinite()) throw SingularMatrixError("Fisher matrix V is numerically singular");
    return x;
  }

 private:
  Eigen::MatrixXd u_;  // n x (n-1): rates into nodes 1..n-1
  Eigen::VectorXd row_sums_;
  Eigen::VectorXd col_sums_;
};

}  // namespace poissonet
