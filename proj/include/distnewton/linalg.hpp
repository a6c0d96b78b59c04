#pragma once

// Dense linear algebra used by the server: products, the Gram matrix of a
// tall n x m block, a cyclic Jacobi eigensolver for the small m x m Gram
// matrix, and the thin SVD obtained from it. Nothing here ever forms an
// n x n object.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace distnewton {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using VectorXd = Vector<double>;
using MatrixXd = Matrix<double>;
using Index = Eigen::Index;

class DimensionError : public std::invalid_argument {
 public:
  DimensionError(const std::string& what, Index expected, Index actual)
      : std::invalid_argument(what + ": expected " + std::to_string(expected) + ", got " +
                              std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}

  Index expected() const { return expected_; }
  Index actual() const { return actual_; }

 private:
  Index expected_;
  Index actual_;
};

class AsymmetricMatrixError : public std::invalid_argument {
 public:
  AsymmetricMatrixError(Index row, Index col, double gap)
      : std::invalid_argument("matrix is not symmetric at (" + std::to_string(row) + ", " +
                              std::to_string(col) + "), |a_ij - a_ji| = " + std::to_string(gap)),
        row_(row),
        col_(col) {}

  Index row() const { return row_; }
  Index col() const { return col_; }

 private:
  Index row_;
  Index col_;
};

template <typename Scalar>
struct SymEigResult {
  Vector<Scalar> eigenvalues;   // descending
  Matrix<Scalar> eigenvectors;  // column k pairs with eigenvalues(k)
};

template <typename Scalar>
struct ThinSvd {
  Vector<Scalar> sigma;          // all m singular values, descending, >= 0
  Matrix<Scalar> right_vectors;  // m x m, column k is v_k
  Matrix<Scalar> left_vectors;   // n x r, column k is u_k for the r retained indices

  Index retained() const { return left_vectors.cols(); }
};

template <typename Scalar>
Vector<Scalar> matvec(const Matrix<Scalar>& m, const Vector<Scalar>& x) {
  if (m.cols() != x.size()) throw DimensionError("matvec: vector length", m.cols(), x.size());
  return m * x;
}

// result(i, j) = column_i . column_j
template <typename Scalar>
Matrix<Scalar> gram(const Matrix<Scalar>& m) {
  Matrix<Scalar> g(m.cols(), m.cols());
  for (Index j = 0; j < m.cols(); ++j) {
    for (Index i = 0; i <= j; ++i) {
      g(i, j) = m.col(i).dot(m.col(j));
      g(j, i) = g(i, j);
    }
  }
  return g;
}

struct JacobiOptions {
  double relative_tolerance = 1e-14;  // on off-diagonal Frobenius norm relative to ||S||_F
  int max_sweeps = 100;
  double symmetry_tolerance = 1e-12;
};

namespace detail {

template <typename Scalar>
Scalar off_diagonal_norm(const Matrix<Scalar>& a) {
  Scalar sum(0);
  for (Index j = 0; j < a.cols(); ++j)
    for (Index i = 0; i < a.rows(); ++i)
      if (i != j) sum += a(i, j) * a(i, j);
  return std::sqrt(sum);
}

// Zeroes a(p, q) by a two-sided rotation and accumulates it into v.
template <typename Scalar>
void jacobi_rotate(Matrix<Scalar>& a, Matrix<Scalar>& v, Index p, Index q) {
  const Scalar apq = a(p, q);
  if (apq == Scalar(0)) return;
  const Scalar theta = (a(q, q) - a(p, p)) / (Scalar(2) * apq);
  const Scalar t = (theta >= Scalar(0) ? Scalar(1) : Scalar(-1)) /
                   (std::abs(theta) + std::sqrt(Scalar(1) + theta * theta));
  const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
  const Scalar s = t * c;

  const Index n = a.rows();
  for (Index k = 0; k < n; ++k) {
    const Scalar akp = a(k, p);
    const Scalar akq = a(k, q);
    a(k, p) = c * akp - s * akq;
    a(k, q) = s * akp + c * akq;
  }
  for (Index k = 0; k < n; ++k) {
    const Scalar apk = a(p, k);
    const Scalar aqk = a(q, k);
    a(p, k) = c * apk - s * aqk;
    a(q, k) = s * apk + c * aqk;
  }
  a(p, q) = Scalar(0);
  a(q, p) = Scalar(0);
  for (Index k = 0; k < n; ++k) {
    const Scalar vkp = v(k, p);
    const Scalar vkq = v(k, q);
    v(k, p) = c * vkp - s * vkq;
    v(k, q) = s * vkp + c * vkq;
  }
}

}  // namespace detail

// Cyclic Jacobi eigensolver for a small symmetric matrix. Eigenpairs come
// back sorted by eigenvalue, descending; equal eigenvalues keep the order
// of the diagonal position they converged in.
template <typename Scalar>
SymEigResult<Scalar> sym_eig(const Matrix<Scalar>& s, const JacobiOptions& options = {}) {
  if (s.rows() != s.cols()) throw DimensionError("sym_eig: square matrix columns", s.rows(), s.cols());
  const Index m = s.rows();
  const Scalar scale = s.norm();
  for (Index j = 0; j < m; ++j) {
    for (Index i = 0; i < j; ++i) {
      const Scalar gap = std::abs(s(i, j) - s(j, i));
      if (gap > Scalar(options.symmetry_tolerance) * scale) throw AsymmetricMatrixError(i, j, gap);
    }
  }

  Matrix<Scalar> a = (s + s.transpose()) / Scalar(2);
  Matrix<Scalar> v = Matrix<Scalar>::Identity(m, m);
  const Scalar stop = Scalar(options.relative_tolerance) * scale;
  for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
    if (detail::off_diagonal_norm(a) <= stop) break;
    for (Index p = 0; p + 1 < m; ++p)
      for (Index q = p + 1; q < m; ++q) detail::jacobi_rotate(a, v, p, q);
  }

  std::vector<Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Index(0));
  std::stable_sort(order.begin(), order.end(), [&](Index x, Index y) { return a(x, x) > a(y, y); });

  SymEigResult<Scalar> result{Vector<Scalar>(m), Matrix<Scalar>(m, m)};
  for (Index k = 0; k < m; ++k) {
    const Index src = order[static_cast<std::size_t>(k)];
    result.eigenvalues(k) = a(src, src);
    result.eigenvectors.col(k) = v.col(src);
  }
  return result;
}

inline constexpr double kDefaultRankTolerance = 1e-12;

// Thin SVD of a tall n x m matrix from the eigendecomposition of its Gram
// matrix. sigma_k = sqrt(eig_k), with eigenvalues at or below the solver's
// noise floor set to zero; u_k = G v_k / ||G v_k|| is formed only while
// sigma_k > rank_tolerance * sigma_1, so the retained left vectors are
// always a prefix of the spectrum.
template <typename Scalar>
ThinSvd<Scalar> thin_svd_via_gram(const Matrix<Scalar>& g, Scalar rank_tolerance = Scalar(kDefaultRankTolerance)) {
  if (!(rank_tolerance >= Scalar(0))) throw std::invalid_argument("thin_svd_via_gram: rank_tolerance must be >= 0");
  const Index m = g.cols();
  const SymEigResult<Scalar> eig = sym_eig(gram(g));

  // Jacobi resolves eigenvalues only to about eps * lambda_1; anything below
  // that floor (including negative noise) is an exact zero of G^T G.
  const Scalar lambda1 = m > 0 ? eig.eigenvalues(0) : Scalar(0);
  const Scalar floor = Scalar(8) * Scalar(m) * std::numeric_limits<Scalar>::epsilon() * lambda1;
  ThinSvd<Scalar> svd;
  svd.sigma = eig.eigenvalues.unaryExpr([floor](Scalar x) { return x > floor ? std::sqrt(x) : Scalar(0); });
  svd.right_vectors = eig.eigenvectors;

  const Scalar sigma1 = m > 0 ? svd.sigma(0) : Scalar(0);
  Index retained = 0;
  std::vector<Vector<Scalar>> columns;
  if (sigma1 > Scalar(0)) {
    for (Index k = 0; k < m && svd.sigma(k) > rank_tolerance * sigma1; ++k) {
      Vector<Scalar> w = g * svd.right_vectors.col(k);
      const Scalar norm = w.norm();
      if (!(norm > rank_tolerance * sigma1) || !(norm > Scalar(0))) break;
      columns.push_back(w / norm);
      ++retained;
    }
  }
  svd.left_vectors.resize(g.rows(), retained);
  for (Index k = 0; k < retained; ++k) svd.left_vectors.col(k) = columns[static_cast<std::size_t>(k)];
  return svd;
}

}  // namespace distnewton
