#pragma once

// Low-rank inverse Hessian assembled from m worker reports.
//
// With centered gradient and parameter blocks G, Theta (n x m) and the thin
// SVD G = U diag(sigma) V^T, the operator acts as
//
//   Hinv z = z - sum_k (u_k . z) u_k + sum_k (u_k . z) / sigma_k * y_k,   y_k = Theta v_k,
//
// over the j leading directions with sigma_k >= lambda * sigma_1, and as the
// identity on their orthogonal complement. Storage is two n x j blocks plus
// the m singular values.

#include "distnewton/linalg.hpp"

#include <algorithm>
#include <cassert>
#include <span>
#include <stdexcept>

namespace distnewton {

template <typename Scalar>
struct WorkerReport {
  Vector<Scalar> theta;  // parameters after the worker's local steps
  Vector<Scalar> grad;   // gradient evaluated at theta
};

template <typename Scalar>
struct CenteredBatch {
  Matrix<Scalar> big_theta;  // columns theta_k - theta_bar
  Matrix<Scalar> big_g;      // columns grad_k - g_bar
  Vector<Scalar> theta_bar;
  Vector<Scalar> g_bar;

  Index m() const { return big_theta.cols(); }
  Index n() const { return big_theta.rows(); }
};

inline constexpr double kDefaultLambda = 0.1;

template <typename Scalar>
class InverseHessianOperator {
 public:
  InverseHessianOperator() = default;

  // Identity operator on R^n (j = 0).
  explicit InverseHessianOperator(Index n) : u_(n, 0), y_(n, 0) {}

  InverseHessianOperator(Matrix<Scalar> u, Matrix<Scalar> y, Vector<Scalar> sigma_retained,
                         Vector<Scalar> sigma_full, Scalar lambda)
      : u_(std::move(u)),
        y_(std::move(y)),
        sigma_(std::move(sigma_retained)),
        sigma_full_(std::move(sigma_full)),
        lambda_(lambda) {
    if (u_.rows() != y_.rows()) throw DimensionError("InverseHessianOperator: y rows", u_.rows(), y_.rows());
    if (u_.cols() != y_.cols() || u_.cols() != sigma_.size())
      throw DimensionError("InverseHessianOperator: retained count", u_.cols(), y_.cols());
  }

  Index dim() const { return u_.rows(); }
  Index retained() const { return u_.cols(); }
  Scalar lambda() const { return lambda_; }

  const Matrix<Scalar>& left_vectors() const { return u_; }
  const Matrix<Scalar>& secant_images() const { return y_; }
  const Vector<Scalar>& sigma_retained() const { return sigma_; }
  const Vector<Scalar>& sigma_full() const { return sigma_full_; }

  Scalar sigma_max() const { return sigma_full_.size() > 0 ? sigma_full_(0) : Scalar(0); }

  // Scalars held by the operator; bounded by 2 n j + m.
  Index storage_scalars() const { return u_.size() + y_.size() + sigma_.size() + sigma_full_.size(); }

  Vector<Scalar> apply(const Vector<Scalar>& z) const {
    if (z.size() != dim()) throw DimensionError("apply: vector length", dim(), z.size());
    if (retained() == 0) return z;
    const Vector<Scalar> alpha = u_.transpose() * z;
    Vector<Scalar> out = z - u_ * alpha;
    out.noalias() += y_ * alpha.cwiseQuotient(sigma_);
    return out;
  }

 private:
  Matrix<Scalar> u_;
  Matrix<Scalar> y_;
  Vector<Scalar> sigma_;
  Vector<Scalar> sigma_full_;
  Scalar lambda_ = Scalar(kDefaultLambda);
};

template <typename Scalar>
CenteredBatch<Scalar> center_reports(std::span<const WorkerReport<Scalar>> reports) {
  if (reports.empty()) throw std::invalid_argument("center_reports: no worker reports");
  const Index n = reports.front().theta.size();
  const Index m = static_cast<Index>(reports.size());
  for (const auto& r : reports) {
    if (r.theta.size() != n) throw DimensionError("center_reports: theta length", n, r.theta.size());
    if (r.grad.size() != n) throw DimensionError("center_reports: gradient length", n, r.grad.size());
  }

  CenteredBatch<Scalar> batch;
  batch.theta_bar = Vector<Scalar>::Zero(n);
  batch.g_bar = Vector<Scalar>::Zero(n);
  for (const auto& r : reports) {
    batch.theta_bar += r.theta;
    batch.g_bar += r.grad;
  }
  batch.theta_bar /= Scalar(m);
  batch.g_bar /= Scalar(m);

  batch.big_theta.resize(n, m);
  batch.big_g.resize(n, m);
  for (Index k = 0; k < m; ++k) {
    const auto& r = reports[static_cast<std::size_t>(k)];
    batch.big_theta.col(k) = r.theta - batch.theta_bar;
    batch.big_g.col(k) = r.grad - batch.g_bar;
  }
  return batch;
}

template <typename Scalar>
CenteredBatch<Scalar> center_reports(const std::vector<WorkerReport<Scalar>>& reports) {
  return center_reports(std::span<const WorkerReport<Scalar>>(reports));
}

// Retains the leading directions with sigma_k >= lambda * sigma_1. Any
// lambda > 1 yields j = 0, which turns the update into an averaged SGD step.
template <typename Scalar>
InverseHessianOperator<Scalar> build_operator(const CenteredBatch<Scalar>& batch, Scalar lambda = Scalar(kDefaultLambda)) {
  if (!(lambda > Scalar(0))) throw std::invalid_argument("build_operator: lambda must be positive");
  const ThinSvd<Scalar> svd = thin_svd_via_gram(batch.big_g, Scalar(0));
  const Scalar sigma1 = svd.sigma.size() > 0 ? svd.sigma(0) : Scalar(0);

  Index j = 0;
  if (sigma1 > Scalar(0)) {
    while (j < svd.retained() && svd.sigma(j) >= lambda * sigma1) ++j;
  }

  Vector<Scalar> sigma_retained = svd.sigma.head(j);
  assert((sigma_retained.array() > Scalar(0)).all());
  Matrix<Scalar> u = svd.left_vectors.leftCols(j);
  Matrix<Scalar> y = batch.big_theta * svd.right_vectors.leftCols(j);
  return InverseHessianOperator<Scalar>(std::move(u), std::move(y), std::move(sigma_retained), svd.sigma, lambda);
}

template <typename Scalar>
Vector<Scalar> apply(const InverseHessianOperator<Scalar>& op, const Vector<Scalar>& z) {
  return op.apply(z);
}

// theta_new = theta_bar - tau * Hinv g_bar
template <typename Scalar>
Vector<Scalar> newton_update(const InverseHessianOperator<Scalar>& op, const Vector<Scalar>& theta_bar,
                             const Vector<Scalar>& g_bar, Scalar tau) {
  if (theta_bar.size() != g_bar.size())
    throw DimensionError("newton_update: gradient length", theta_bar.size(), g_bar.size());
  return theta_bar - tau * op.apply(g_bar);
}

// min(tau, 1 / sigma_max); tau unchanged when the spectrum is zero.
template <typename Scalar>
Scalar lr_cap(Scalar tau, const InverseHessianOperator<Scalar>& op) {
  const Scalar sigma_max = op.sigma_max();
  if (!(sigma_max > Scalar(0))) return tau;
  return std::min(tau, Scalar(1) / sigma_max);
}

}  // namespace distnewton
