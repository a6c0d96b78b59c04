#pragma once

#include "distnewton/linalg.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace distnewton {

// A minibatch: one sample per column. Data-free objectives take an empty batch.
struct Batch {
  MatrixXd inputs;
  std::vector<int> labels;

  Index size() const { return inputs.cols(); }
  bool empty() const { return inputs.cols() == 0; }
};

struct ValueGrad {
  double value = 0.0;
  VectorXd grad;
};

class Objective {
 public:
  virtual ~Objective() = default;

  virtual Index dim() const = 0;
  virtual bool is_stochastic() const = 0;
  virtual std::string name() const = 0;

  virtual double value(const VectorXd& theta, const Batch& batch) const = 0;
  virtual ValueGrad value_grad(const VectorXd& theta, const Batch& batch) const = 0;

 protected:
  void check_dim(const VectorXd& theta) const;
};

// J(theta) = 1/2 (theta - theta*)^T A (theta - theta*)
struct QuadraticSpec {
  MatrixXd a;
  VectorXd theta_star;
};

// Seeded random orthogonal basis with eigenvalues geometrically spaced in
// [1, condition], so cond(A) == condition exactly.
QuadraticSpec make_quadratic_spec(Index n, double condition, std::uint64_t seed);

ValueGrad quadratic_value_grad(const QuadraticSpec& spec, const VectorXd& theta);

// Sum over consecutive pairs of 100 (x_{2i} - x_{2i-1}^2)^2 + (1 - x_{2i-1})^2.
ValueGrad rosenbrock_value_grad(const VectorXd& theta);

class QuadraticObjective final : public Objective {
 public:
  explicit QuadraticObjective(QuadraticSpec spec);

  Index dim() const override { return spec_.theta_star.size(); }
  bool is_stochastic() const override { return false; }
  std::string name() const override { return "quadratic"; }
  double value(const VectorXd& theta, const Batch& batch) const override;
  ValueGrad value_grad(const VectorXd& theta, const Batch& batch) const override;

  const QuadraticSpec& spec() const { return spec_; }

 private:
  QuadraticSpec spec_;
};

class RosenbrockObjective final : public Objective {
 public:
  explicit RosenbrockObjective(Index n);

  Index dim() const override { return n_; }
  bool is_stochastic() const override { return false; }
  std::string name() const override { return "rosenbrock"; }
  double value(const VectorXd& theta, const Batch& batch) const override;
  ValueGrad value_grad(const VectorXd& theta, const Batch& batch) const override;

 private:
  Index n_;
};

enum class Activation { tanh, relu };

Activation parse_activation(const std::string& name);
std::string to_string(Activation activation);

struct MlpSpec {
  std::vector<Index> layer_sizes{784, 32, 10};
  Activation activation = Activation::tanh;

  Index input_size() const { return layer_sizes.front(); }
  Index class_count() const { return layer_sizes.back(); }
  // sum over layers of (fan_in + 1) * fan_out
  Index parameter_count() const;
};

// Parameters are laid out layer by layer: W (fan_out x fan_in, column-major)
// followed by the bias b (fan_out).
ValueGrad mlp_value_grad(const MlpSpec& spec, const VectorXd& theta, const Batch& batch);
double mlp_value(const MlpSpec& spec, const VectorXd& theta, const Batch& batch);

// Class probabilities, one column per sample.
MatrixXd mlp_predict(const MlpSpec& spec, const VectorXd& theta, const MatrixXd& inputs);

// Glorot-uniform weights, zero biases.
VectorXd mlp_initial_parameters(const MlpSpec& spec, std::uint64_t seed);

class MlpObjective final : public Objective {
 public:
  explicit MlpObjective(MlpSpec spec);

  Index dim() const override { return spec_.parameter_count(); }
  bool is_stochastic() const override { return true; }
  std::string name() const override { return "mlp-" + to_string(spec_.activation); }
  double value(const VectorXd& theta, const Batch& batch) const override;
  ValueGrad value_grad(const VectorXd& theta, const Batch& batch) const override;

  const MlpSpec& spec() const { return spec_; }

 private:
  MlpSpec spec_;
};

// Central differences (J(theta + h e_i) - J(theta - h e_i)) / 2h. With an
// explicit coordinate list only those entries are filled; the rest stay 0.
VectorXd finite_diff_grad(const Objective& objective, const VectorXd& theta, const Batch& batch, double h);
VectorXd finite_diff_grad(const Objective& objective, const VectorXd& theta, const Batch& batch, double h,
                          std::span<const Index> coordinates);

struct GradCheckOptions {
  double h = 1e-5;
  // Drop coordinates whose difference quotient changes between h and h/2,
  // i.e. where the probe straddles a ReLU kink.
  bool screen_kinks = false;
};

struct GradCheckResult {
  // ||analytic - fd|| / max(||analytic||, ||fd||) over the checked coordinates.
  double relative_error = 0.0;
  Index worst_coordinate = -1;  // largest |analytic - fd|
  double worst_abs_error = 0.0;
  Index checked = 0;
  Index skipped = 0;
};

// Compares `analytic` against central differences on the given coordinates.
GradCheckResult check_gradient(const Objective& objective, const VectorXd& theta, const Batch& batch,
                               const VectorXd& analytic, std::span<const Index> coordinates,
                               const GradCheckOptions& options = {});

}  // namespace distnewton
