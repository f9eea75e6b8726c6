#pragma once

// Dense linear algebra used throughout the library: minimum-norm least
// squares, the Moore-Penrose pseudoinverse, projections onto a column space
// and its orthogonal complement, and penalized normal-equation solves.
//
// Every function here is a pure function of its arguments.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <sstream>
#include <string>

#include "ssn/errors.hpp"

namespace ssn {

using Index = Eigen::Index;
using DenseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using DenseVector = Eigen::VectorXd;

/// Relative singular-value cutoff used for rank decisions in SVD-based routines.
inline constexpr double kSvdRelativeCutoff = 1e-10;
/// Relative pivot cutoff used by the checked solvers.
inline constexpr double kSolveRelativeCutoff = 1e-12;

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const std::string& what) {
  if (!m.derived().allFinite()) throw DataError(what + " contains non-finite values");
}

namespace detail {

inline std::string shape(Index r, Index c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}

inline void require_rows(Index expected, Index got, const char* op) {
  if (expected != got) {
    std::ostringstream os;
    os << op << ": row mismatch (" << expected << " vs " << got << ")";
    throw DimensionError(os.str());
  }
}

// Thin SVD truncated to the numerical rank. Only the leading `rank`
// columns of U and V are meaningful for the routines below.
struct RankRevealingSvd {
  Eigen::MatrixXd U;
  Eigen::VectorXd s;
  Eigen::MatrixXd V;
  Index rank = 0;

  explicit RankRevealingSvd(const DenseMatrix& X) {
    if (X.rows() == 0 || X.cols() == 0) {
      U.resize(X.rows(), 0);
      V.resize(X.cols(), 0);
      return;
    }
    Eigen::BDCSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    U = svd.matrixU();
    s = svd.singularValues();
    V = svd.matrixV();
    const double cutoff = s.size() > 0 ? kSvdRelativeCutoff * s(0) : 0.0;
    while (rank < s.size() && s(rank) > cutoff && s(rank) > 0.0) ++rank;
  }

  auto Ur() const { return U.leftCols(rank); }
  auto Vr() const { return V.leftCols(rank); }
  Eigen::VectorXd inv_s() const { return s.head(rank).cwiseInverse(); }
};

inline DenseVector solve_checked(const Eigen::MatrixXd& A, const Eigen::VectorXd& rhs,
                                 const char* op) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A.rows(), A.cols());
  qr.setThreshold(kSolveRelativeCutoff);
  qr.compute(A);
  if (qr.rank() < A.cols()) {
    std::ostringstream os;
    os << op << ": singular system (rank " << qr.rank() << " of " << A.cols() << ")";
    throw SingularSystemError(os.str(), static_cast<long>(qr.rank()));
  }
  return qr.solve(rhs);
}

}  // namespace detail

/// Numerical rank of X using the library-wide relative SVD cutoff.
inline Index numerical_rank(const DenseMatrix& X) { return detail::RankRevealingSvd(X).rank; }

/// Minimum-norm solution of min ||X b - v||.
inline DenseVector least_squares_solve(const DenseMatrix& X, const DenseVector& v) {
  detail::require_rows(X.rows(), v.size(), "least_squares_solve");
  if (X.rows() == 0 || X.cols() == 0)
    throw DimensionError("least_squares_solve: empty design " + detail::shape(X.rows(), X.cols()));
  const detail::RankRevealingSvd svd(X);
  DenseVector coef = svd.Vr() * (svd.inv_s().asDiagonal() * (svd.Ur().transpose() * v));
  return coef;
}

/// Moore-Penrose pseudoinverse X^+ (p x n).
inline DenseMatrix pseudoinverse(const DenseMatrix& X) {
  const detail::RankRevealingSvd svd(X);
  DenseMatrix out = DenseMatrix::Zero(X.cols(), X.rows());
  if (svd.rank > 0) out = svd.Vr() * svd.inv_s().asDiagonal() * svd.Ur().transpose();
  return out;
}

/// P_X V, the projection of the columns of V onto col(X).
inline DenseMatrix project_onto(const DenseMatrix& X, const DenseMatrix& V) {
  detail::require_rows(X.rows(), V.rows(), "project_onto");
  const detail::RankRevealingSvd svd(X);
  if (svd.rank == 0) return DenseMatrix::Zero(V.rows(), V.cols());
  const Eigen::MatrixXd coords = svd.Ur().transpose() * V;
  return svd.Ur() * coords;
}

/// (I - P_X) V. Returns exact zeros when X has full row rank.
inline DenseMatrix project_orthogonal(const DenseMatrix& X, const DenseMatrix& V) {
  detail::require_rows(X.rows(), V.rows(), "project_orthogonal");
  const detail::RankRevealingSvd svd(X);
  if (svd.rank == X.rows()) return DenseMatrix::Zero(V.rows(), V.cols());
  if (svd.rank == 0) return V;
  const Eigen::MatrixXd coords = svd.Ur().transpose() * V;
  DenseMatrix out = V;
  out.noalias() -= svd.Ur() * coords;
  return out;
}

inline DenseVector project_orthogonal(const DenseMatrix& X, const DenseVector& v) {
  DenseMatrix V = v;
  DenseMatrix out = project_orthogonal(X, V);
  return out.col(0);
}

/// Solves (X'X + lambda K) b = X'v.
inline DenseVector penalized_coefficients(const DenseMatrix& X, const DenseMatrix& K,
                                          double lambda, const DenseVector& v) {
  detail::require_rows(X.rows(), v.size(), "penalized_coefficients");
  if (K.rows() != X.cols() || K.cols() != X.cols())
    throw DimensionError("penalized_coefficients: penalty is " + detail::shape(K.rows(), K.cols()) +
                         ", design has " + std::to_string(X.cols()) + " columns");
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw PreconditionError("penalized_coefficients: lambda must be finite and non-negative");
  Eigen::MatrixXd A = X.transpose() * X;
  if (lambda > 0.0) A += lambda * K;
  const Eigen::VectorXd rhs = X.transpose() * v;
  return detail::solve_checked(A, rhs, "penalized_coefficients");
}

/// Solves H a = s for a symmetric accumulated Gram matrix H.
inline DenseVector solve_normal_equations(const Eigen::MatrixXd& H, const Eigen::VectorXd& s) {
  if (H.rows() != H.cols() || H.rows() != s.size())
    throw DimensionError("solve_normal_equations: shape mismatch");
  return detail::solve_checked(H, s, "solve_normal_equations");
}

/// ||X' v||_inf / (||X||_F ||v||_2); zero when either factor vanishes.
inline double orthogonality_residual(const DenseMatrix& X, const DenseVector& v) {
  detail::require_rows(X.rows(), v.size(), "orthogonality_residual");
  const double scale = X.norm() * v.norm();
  if (scale == 0.0) return 0.0;
  return (X.transpose() * v).cwiseAbs().maxCoeff() / scale;
}

}  // namespace ssn
