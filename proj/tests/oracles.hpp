#pragma once

// Reference computations used only by tests. None of them goes through the
// Jacobi / Gram-matrix code they are checking.

#include "distnewton/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace distnewton::testing {

inline MatrixXd random_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

inline VectorXd random_vector(Index n, std::mt19937_64& rng) { return random_matrix(n, 1, rng).col(0); }

// Singular values of g, descending, by power iteration on x -> g^T (g x)
// with Hotelling deflation of each converged direction.
inline std::vector<double> power_iteration_singular_values(const MatrixXd& g, int max_iterations = 200000) {
  const Index m = g.cols();
  std::vector<VectorXd> found;
  std::vector<double> eigenvalues;
  std::mt19937_64 rng(12345);
  for (Index k = 0; k < m; ++k) {
    VectorXd x = random_vector(m, rng);
    x.normalize();
    double rayleigh = 0.0;
    for (int it = 0; it < max_iterations; ++it) {
      VectorXd y(m);
      const VectorXd gx = g * x;
      for (Index i = 0; i < m; ++i) y(i) = g.col(i).dot(gx);
      for (std::size_t d = 0; d < found.size(); ++d) y -= eigenvalues[d] * found[d].dot(x) * found[d];
      const double next = x.dot(y);
      const double norm = y.norm();
      if (norm == 0.0) {
        rayleigh = 0.0;
        break;
      }
      x = y / norm;
      if (it > 10 && std::abs(next - rayleigh) <= 1e-17 * std::max(std::abs(next), 1e-300)) {
        rayleigh = next;
        break;
      }
      rayleigh = next;
    }
    found.push_back(x);
    eigenvalues.push_back(std::max(rayleigh, 0.0));
  }
  std::vector<double> sigma;
  for (double e : eigenvalues) sigma.push_back(std::sqrt(e));
  std::sort(sigma.begin(), sigma.end(), std::greater<>());
  return sigma;
}

// Centered theta columns of a regular simplex in R^n (n + 1 points), scaled by `radius`.
inline std::vector<VectorXd> simplex_points(Index n, double radius) {
  MatrixXd p = MatrixXd::Identity(n + 1, n + 1);
  p.rowwise() -= p.colwise().mean();
  // Orthonormal basis of the zero-sum subspace, then coordinates in it.
  Eigen::HouseholderQR<MatrixXd> qr(p.leftCols(n));
  const MatrixXd basis = MatrixXd(qr.householderQ()).leftCols(n);
  std::vector<VectorXd> points;
  for (Index k = 0; k <= n; ++k) points.push_back(radius * basis.transpose() * p.col(k));
  return points;
}

}  // namespace distnewton::testing
