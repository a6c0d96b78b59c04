#include "distnewton/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace distnewton {

void Objective::check_dim(const VectorXd& theta) const {
  if (theta.size() != dim()) throw DimensionError(name() + ": parameter length", dim(), theta.size());
}

QuadraticSpec make_quadratic_spec(Index n, double condition, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("make_quadratic_spec: n must be positive");
  if (!(condition >= 1.0)) throw std::invalid_argument("make_quadratic_spec: condition must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  MatrixXd gaussian(n, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) gaussian(i, j) = normal(rng);
  const MatrixXd q = Eigen::HouseholderQR<MatrixXd>(gaussian).householderQ();

  VectorXd eigenvalues(n);
  for (Index i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    eigenvalues(i) = std::pow(condition, t);
  }

  QuadraticSpec spec;
  spec.a = q * eigenvalues.asDiagonal() * q.transpose();
  spec.a = (spec.a + spec.a.transpose()) / 2.0;
  spec.theta_star.resize(n);
  for (Index i = 0; i < n; ++i) spec.theta_star(i) = normal(rng);
  return spec;
}

ValueGrad quadratic_value_grad(const QuadraticSpec& spec, const VectorXd& theta) {
  if (theta.size() != spec.theta_star.size())
    throw DimensionError("quadratic: parameter length", spec.theta_star.size(), theta.size());
  const VectorXd d = theta - spec.theta_star;
  ValueGrad out;
  out.grad = spec.a * d;
  out.value = 0.5 * d.dot(out.grad);
  return out;
}

ValueGrad rosenbrock_value_grad(const VectorXd& theta) {
  const Index n = theta.size();
  if (n < 2) throw std::invalid_argument("rosenbrock: need at least 2 parameters");
  if (n % 2 != 0) throw std::invalid_argument("rosenbrock: parameter count must be even");
  ValueGrad out{0.0, VectorXd::Zero(n)};
  for (Index i = 0; i < n; i += 2) {
    const double x = theta(i);
    const double y = theta(i + 1);
    const double r = y - x * x;
    const double s = 1.0 - x;
    out.value += 100.0 * r * r + s * s;
    out.grad(i) = -400.0 * x * r - 2.0 * s;
    out.grad(i + 1) = 200.0 * r;
  }
  return out;
}

QuadraticObjective::QuadraticObjective(QuadraticSpec spec) : spec_(std::move(spec)) {
  if (spec_.a.rows() != spec_.a.cols() || spec_.a.rows() != spec_.theta_star.size())
    throw DimensionError("quadratic: A size", spec_.theta_star.size(), spec_.a.rows());
}

double QuadraticObjective::value(const VectorXd& theta, const Batch&) const {
  check_dim(theta);
  const VectorXd d = theta - spec_.theta_star;
  return 0.5 * d.dot(spec_.a * d);
}

ValueGrad QuadraticObjective::value_grad(const VectorXd& theta, const Batch&) const {
  check_dim(theta);
  return quadratic_value_grad(spec_, theta);
}

RosenbrockObjective::RosenbrockObjective(Index n) : n_(n) {
  if (n < 2 || n % 2 != 0) throw std::invalid_argument("rosenbrock: dimension must be even and >= 2");
}

double RosenbrockObjective::value(const VectorXd& theta, const Batch&) const {
  check_dim(theta);
  return rosenbrock_value_grad(theta).value;
}

ValueGrad RosenbrockObjective::value_grad(const VectorXd& theta, const Batch&) const {
  check_dim(theta);
  return rosenbrock_value_grad(theta);
}

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string to_string(Activation activation) { return activation == Activation::tanh ? "tanh" : "relu"; }

Index MlpSpec::parameter_count() const {
  Index count = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) count += (layer_sizes[l] + 1) * layer_sizes[l + 1];
  return count;
}

namespace {

void validate(const MlpSpec& spec) {
  if (spec.layer_sizes.size() < 2) throw std::invalid_argument("mlp: need at least input and output layers");
  for (Index size : spec.layer_sizes)
    if (size < 1) throw std::invalid_argument("mlp: layer sizes must be positive");
}

void validate(const MlpSpec& spec, const VectorXd& theta, const Batch& batch) {
  validate(spec);
  if (theta.size() != spec.parameter_count())
    throw DimensionError("mlp: parameter length", spec.parameter_count(), theta.size());
  if (batch.inputs.rows() != spec.input_size())
    throw DimensionError("mlp: input features", spec.input_size(), batch.inputs.rows());
  if (static_cast<Index>(batch.labels.size()) != batch.inputs.cols())
    throw DimensionError("mlp: label count", batch.inputs.cols(), static_cast<Index>(batch.labels.size()));
  for (int label : batch.labels)
    if (label < 0 || label >= spec.class_count())
      throw std::out_of_range("mlp: label " + std::to_string(label) + " outside [0, " +
                              std::to_string(spec.class_count()) + ")");
}

struct LayerView {
  Eigen::Map<const MatrixXd> w;
  Eigen::Map<const VectorXd> b;
};

std::vector<LayerView> layer_views(const MlpSpec& spec, const VectorXd& theta) {
  std::vector<LayerView> layers;
  Index offset = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
    const Index fan_in = spec.layer_sizes[l];
    const Index fan_out = spec.layer_sizes[l + 1];
    Eigen::Map<const MatrixXd> w(theta.data() + offset, fan_out, fan_in);
    offset += fan_in * fan_out;
    Eigen::Map<const VectorXd> b(theta.data() + offset, fan_out);
    offset += fan_out;
    layers.push_back({w, b});
  }
  return layers;
}

void activate(Activation activation, MatrixXd& z) {
  if (activation == Activation::tanh)
    z = z.array().tanh();
  else
    z = z.cwiseMax(0.0);
}

// Column-wise log-softmax, shifted by the column max.
MatrixXd log_softmax(const MatrixXd& logits) {
  MatrixXd out(logits.rows(), logits.cols());
  for (Index c = 0; c < logits.cols(); ++c) {
    const double shift = logits.col(c).maxCoeff();
    const double lse = shift + std::log((logits.col(c).array() - shift).exp().sum());
    out.col(c) = logits.col(c).array() - lse;
  }
  return out;
}

double mean_nll(const MatrixXd& log_probs, const std::vector<int>& labels) {
  double total = 0.0;
  for (Index c = 0; c < log_probs.cols(); ++c) total -= log_probs(labels[static_cast<std::size_t>(c)], c);
  return total / static_cast<double>(log_probs.cols());
}

}  // namespace

MatrixXd mlp_predict(const MlpSpec& spec, const VectorXd& theta, const MatrixXd& inputs) {
  validate(spec);
  const auto layers = layer_views(spec, theta);
  MatrixXd a = inputs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    MatrixXd z = layers[l].w * a;
    z.colwise() += layers[l].b;
    if (l + 1 < layers.size()) activate(spec.activation, z);
    a = std::move(z);
  }
  return log_softmax(a).array().exp();
}

double mlp_value(const MlpSpec& spec, const VectorXd& theta, const Batch& batch) {
  validate(spec, theta, batch);
  if (batch.empty()) return 0.0;
  const auto layers = layer_views(spec, theta);
  MatrixXd a = batch.inputs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    MatrixXd z = layers[l].w * a;
    z.colwise() += layers[l].b;
    if (l + 1 < layers.size()) activate(spec.activation, z);
    a = std::move(z);
  }
  return mean_nll(log_softmax(a), batch.labels);
}

ValueGrad mlp_value_grad(const MlpSpec& spec, const VectorXd& theta, const Batch& batch) {
  validate(spec, theta, batch);
  ValueGrad out{0.0, VectorXd::Zero(theta.size())};
  if (batch.empty()) return out;

  const auto layers = layer_views(spec, theta);
  const std::size_t depth = layers.size();
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  // activations[l] is the input to layer l; activations[depth] holds the logits.
  std::vector<MatrixXd> activations;
  activations.reserve(depth + 1);
  activations.push_back(batch.inputs);
  for (std::size_t l = 0; l < depth; ++l) {
    MatrixXd z = layers[l].w * activations.back();
    z.colwise() += layers[l].b;
    if (l + 1 < depth) activate(spec.activation, z);
    activations.push_back(std::move(z));
  }

  const MatrixXd log_probs = log_softmax(activations[depth]);
  out.value = mean_nll(log_probs, batch.labels);

  // d(mean NLL)/d(logits) = (softmax - onehot) / batch
  MatrixXd delta = log_probs.array().exp();
  for (Index c = 0; c < delta.cols(); ++c) delta(batch.labels[static_cast<std::size_t>(c)], c) -= 1.0;
  delta *= inv_batch;

  std::vector<Index> offsets(depth);
  Index offset = 0;
  for (std::size_t l = 0; l < depth; ++l) {
    offsets[l] = offset;
    offset += layers[l].w.size() + layers[l].b.size();
  }

  for (std::size_t l = depth; l-- > 0;) {
    const MatrixXd& input = activations[l];
    Eigen::Map<MatrixXd> grad_w(out.grad.data() + offsets[l], layers[l].w.rows(), layers[l].w.cols());
    Eigen::Map<VectorXd> grad_b(out.grad.data() + offsets[l] + layers[l].w.size(), layers[l].b.size());
    grad_w.noalias() = delta * input.transpose();
    grad_b = delta.rowwise().sum();
    if (l == 0) break;

    MatrixXd back = layers[l].w.transpose() * delta;
    if (spec.activation == Activation::tanh)
      back.array() *= 1.0 - input.array().square();
    else
      back.array() *= (input.array() > 0.0).cast<double>();
    delta = std::move(back);
  }
  return out;
}

VectorXd mlp_initial_parameters(const MlpSpec& spec, std::uint64_t seed) {
  validate(spec);
  std::mt19937_64 rng(seed);
  VectorXd theta = VectorXd::Zero(spec.parameter_count());
  Index offset = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
    const Index fan_in = spec.layer_sizes[l];
    const Index fan_out = spec.layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    for (Index i = 0; i < fan_in * fan_out; ++i) theta(offset + i) = uniform(rng);
    offset += fan_in * fan_out + fan_out;
  }
  return theta;
}

MlpObjective::MlpObjective(MlpSpec spec) : spec_(std::move(spec)) { validate(spec_); }

double MlpObjective::value(const VectorXd& theta, const Batch& batch) const {
  return mlp_value(spec_, theta, batch);
}

ValueGrad MlpObjective::value_grad(const VectorXd& theta, const Batch& batch) const {
  return mlp_value_grad(spec_, theta, batch);
}

VectorXd finite_diff_grad(const Objective& objective, const VectorXd& theta, const Batch& batch, double h,
                          std::span<const Index> coordinates) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  VectorXd grad = VectorXd::Zero(theta.size());
  VectorXd probe = theta;
  for (Index i : coordinates) {
    if (i < 0 || i >= theta.size()) throw std::out_of_range("finite_diff_grad: coordinate out of range");
    probe(i) = theta(i) + h;
    const double plus = objective.value(probe, batch);
    probe(i) = theta(i) - h;
    const double minus = objective.value(probe, batch);
    probe(i) = theta(i);
    grad(i) = (plus - minus) / (2.0 * h);
  }
  return grad;
}

VectorXd finite_diff_grad(const Objective& objective, const VectorXd& theta, const Batch& batch, double h) {
  std::vector<Index> all(static_cast<std::size_t>(theta.size()));
  std::iota(all.begin(), all.end(), Index(0));
  return finite_diff_grad(objective, theta, batch, h, all);
}

GradCheckResult check_gradient(const Objective& objective, const VectorXd& theta, const Batch& batch,
                               const VectorXd& analytic, std::span<const Index> coordinates,
                               const GradCheckOptions& options) {
  if (analytic.size() != theta.size()) throw DimensionError("check_gradient: gradient length", theta.size(), analytic.size());
  std::vector<Index> kept;
  kept.reserve(coordinates.size());
  GradCheckResult result;
  const VectorXd fd = finite_diff_grad(objective, theta, batch, options.h, coordinates);
  if (options.screen_kinks) {
    const VectorXd fd_half = finite_diff_grad(objective, theta, batch, options.h / 2.0, coordinates);
    for (Index i : coordinates) {
      if (std::abs(fd(i) - fd_half(i)) > 1e-7 * std::max(1.0, std::abs(fd(i))))
        ++result.skipped;
      else
        kept.push_back(i);
    }
  } else {
    kept.assign(coordinates.begin(), coordinates.end());
  }

  double diff_sq = 0.0;
  double analytic_sq = 0.0;
  double fd_sq = 0.0;
  for (Index i : kept) {
    const double diff = std::abs(analytic(i) - fd(i));
    diff_sq += diff * diff;
    analytic_sq += analytic(i) * analytic(i);
    fd_sq += fd(i) * fd(i);
    if (result.worst_coordinate < 0 || diff > result.worst_abs_error) {
      result.worst_coordinate = i;
      result.worst_abs_error = diff;
    }
  }
  const double scale = std::sqrt(std::max(analytic_sq, fd_sq));
  result.relative_error = scale > 0.0 ? std::sqrt(diff_sq) / scale : std::sqrt(diff_sq);
  result.checked = static_cast<Index>(kept.size());
  return result;
}

}  // namespace distnewton
