#pragma once

#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/SVD>

#include "cast/common.hpp"
#include "cast/error.hpp"

namespace cast {

/// Singular values in descending order, optionally with the thin singular
/// vectors (columns of left_vectors / right_vectors pair with each value).
struct Spectrum {
  Vector singular_values;
  std::optional<Matrix> left_vectors;
  std::optional<Matrix> right_vectors;

  Index size() const { return singular_values.size(); }
  bool empty() const { return singular_values.size() == 0; }
  double largest() const { return empty() ? 0.0 : singular_values(0); }
};

inline bool all_finite(const Eigen::Ref<const Matrix>& a) { return a.allFinite(); }

inline void require_finite(const Eigen::Ref<const Matrix>& a, const char* what) {
  if (!a.allFinite()) throw Error(ErrorCode::NonFiniteInput, std::string(what) + " contains NaN or Inf");
}

/// Standard numerical-rank cutoff, relative to the largest singular value.
inline double default_rcond(Index rows, Index cols) {
  return static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon();
}

inline Spectrum svd(const Eigen::Ref<const Matrix>& a, bool want_vectors) {
  require_finite(a, "svd input");
  Spectrum out;
  const Index p = std::min(a.rows(), a.cols());
  if (p == 0) {
    out.singular_values = Vector(0);
    if (want_vectors) {
      out.left_vectors = Matrix(a.rows(), 0);
      out.right_vectors = Matrix(a.cols(), 0);
    }
    return out;
  }

  const unsigned options = want_vectors ? (Eigen::ComputeThinU | Eigen::ComputeThinV) : 0u;
  Eigen::BDCSVD<Matrix> solver(a, options);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::ConvergenceFailure, "SVD did not converge");
  }
  const Vector& s = solver.singularValues();

  // Descending, with ties kept in the solver's column order.
  std::vector<Index> order(static_cast<std::size_t>(p));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) { return s(i) > s(j); });

  out.singular_values.resize(p);
  for (Index k = 0; k < p; ++k) out.singular_values(k) = std::max(0.0, s(order[static_cast<std::size_t>(k)]));

  if (want_vectors) {
    const Matrix& u = solver.matrixU();
    const Matrix& v = solver.matrixV();
    Matrix uo(u.rows(), p), vo(v.rows(), p);
    for (Index k = 0; k < p; ++k) {
      uo.col(k) = u.col(order[static_cast<std::size_t>(k)]);
      vo.col(k) = v.col(order[static_cast<std::size_t>(k)]);
    }
    out.left_vectors = std::move(uo);
    out.right_vectors = std::move(vo);
  }
  if (!out.singular_values.allFinite()) {
    throw Error(ErrorCode::ConvergenceFailure, "SVD produced non-finite singular values");
  }
  return out;
}

namespace detail {

/// Reciprocal singular values with everything at or below the cutoff zeroed,
/// and at most `keep` leading values retained.
inline Vector inverted_values(const Vector& s, double rcond, Index keep) {
  Vector inv = Vector::Zero(s.size());
  if (s.size() == 0) return inv;
  const double cutoff = rcond * s(0);
  for (Index k = 0; k < std::min(keep, s.size()); ++k) {
    if (s(k) > cutoff && s(k) > 0.0) inv(k) = 1.0 / s(k);
  }
  return inv;
}

/// V * diag(inv) * U^T * rhs, computed right to left.
inline Matrix apply_pinv(const Spectrum& sp, const Vector& inv, const Eigen::Ref<const Matrix>& rhs) {
  Matrix projected = sp.left_vectors->transpose() * rhs;
  projected = inv.asDiagonal() * projected;
  return (*sp.right_vectors) * projected;
}

}  // namespace detail

/// Moore-Penrose pseudoinverse via SVD. Singular values with
/// sigma_j <= rcond * sigma_1 are treated as zero. rcond is relative; when
/// omitted the standard max(rows, cols) * eps cutoff is used.
inline Matrix pinv(const Eigen::Ref<const Matrix>& a, std::optional<double> rcond = std::nullopt) {
  const double rc = rcond.value_or(default_rcond(a.rows(), a.cols()));
  if (!(rc >= 0.0)) throw Error(ErrorCode::InvalidArgument, "rcond must be nonnegative");
  const Spectrum sp = svd(a, true);
  const Vector inv = detail::inverted_values(sp.singular_values, rc, sp.size());
  return (*sp.right_vectors) * inv.asDiagonal() * sp.left_vectors->transpose();
}

/// Minimum-norm least-squares solution X = pinv(A) * B.
inline Matrix lstsq(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b,
                    std::optional<double> rcond = std::nullopt) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "lstsq: A has " + std::to_string(a.rows()) + " rows, B has " +
                                              std::to_string(b.rows()));
  }
  require_finite(b, "lstsq right-hand side");
  const double rc = rcond.value_or(default_rcond(a.rows(), a.cols()));
  if (!(rc >= 0.0)) throw Error(ErrorCode::InvalidArgument, "rcond must be nonnegative");
  const Spectrum sp = svd(a, true);
  return detail::apply_pinv(sp, detail::inverted_values(sp.singular_values, rc, sp.size()), b);
}

/// Least squares restricted to the top-k singular triplets of A.
inline Matrix lstsq_truncated(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b, Index k,
                              std::optional<double> rcond = std::nullopt) {
  if (a.rows() != b.rows()) throw Error(ErrorCode::ShapeMismatch, "lstsq_truncated: row counts differ");
  const double rc = rcond.value_or(default_rcond(a.rows(), a.cols()));
  const Spectrum sp = svd(a, true);
  return detail::apply_pinv(sp, detail::inverted_values(sp.singular_values, rc, k), b);
}

}  // namespace cast
