#pragma once

// Synchronous parameter-server simulation. Each round, every worker reads
// the same parameter snapshot, takes local SGD steps on its own minibatches
// and reports (theta_k, grad J(theta_k)); the server combines the m reports
// once all of them are in.

#include "distnewton/data.hpp"
#include "distnewton/hessian.hpp"
#include "distnewton/objectives.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace distnewton {

enum class Aggregator { distnewton, sgd_average };

Aggregator parse_aggregator(const std::string& name);
std::string to_string(Aggregator aggregator);

// Invalid configuration, naming the offending field.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct TrainingParams {
  int m = 1;
  int local_steps = 1;
  double local_lr = 0.01;
  double server_tau = 0.01;
  double lambda = kDefaultLambda;
  bool use_lr_cap = false;
  Index global_batch = 256;
  int epochs = 20;
  std::uint64_t seed = 1;
  Aggregator aggregator = Aggregator::distnewton;
  // 0 derives the count from the dataset: ceil(N / ((local_steps + 1) * global_batch)).
  // Data-free objectives fall back to one round per epoch.
  int rounds_per_epoch = 0;
  // Std. dev. of a Gaussian offset each worker adds to the snapshot before stepping.
  double worker_spread = 0.0;
  // Std. dev. of Gaussian noise added to every worker gradient evaluation.
  double grad_noise = 0.0;
  int threads = 1;
};

// Throws ConfigError for the first invalid field.
void validate(const TrainingParams& params);

struct ExperimentConfig {
  TrainingParams params;
  std::shared_ptr<const Objective> objective;
  std::shared_ptr<const Dataset> dataset;  // null for data-free objectives
  VectorXd initial_theta;
};

struct EpochRecord {
  int epoch = 0;
  double train_nll = 0.0;
  double sigma_max = 0.0;   // mean over the epoch's rounds of sigma_1
  double retained_j = 0.0;  // mean over the epoch's rounds
  double wall_time_s = 0.0;
};

enum class RunStatus { completed, diverged };

std::string to_string(RunStatus status);

struct RunHistory {
  TrainingParams config;
  std::vector<EpochRecord> epochs;
  RunStatus status = RunStatus::completed;
  VectorXd final_theta;
};

struct WorkerPerturbation {
  double spread = 0.0;
  double grad_noise = 0.0;
};

struct WorkerOutcome {
  WorkerReport<double> report;
  bool diverged = false;
};

// theta <- theta_read (+ spread offset); s times theta <- theta - lr * grad(theta; batches[i]);
// then grad <- grad(theta; batches[s]). An empty batch list means every
// evaluation uses an empty batch (data-free objectives).
WorkerOutcome worker_round(const VectorXd& theta_read, const Objective& objective, std::span<const Batch> batches,
                           int local_steps, double local_lr, std::mt19937_64& worker_rng,
                           const WorkerPerturbation& perturbation = {});

struct RoundStats {
  VectorXd sigma;  // singular values of the centered gradient block (distnewton only)
  Index retained_j = 0;
  double tau_used = 0.0;

  double sigma_max() const { return sigma.size() > 0 ? sigma(0) : 0.0; }
};

struct ServerResult {
  VectorXd theta_new;
  RoundStats stats;
};

ServerResult server_round(std::span<const WorkerReport<double>> reports, double lambda, double tau, bool use_lr_cap,
                          Aggregator aggregator);

// Emitted once per round after the server update.
struct RoundEvent {
  int epoch = 0;
  int round = 0;                            // within the epoch
  std::uint64_t global_round = 0;
  std::vector<std::uint64_t> snapshot_ids;  // round each report's read snapshot came from
  std::span<const WorkerReport<double>> reports;
  const VectorXd* theta_read = nullptr;
  const ServerResult* result = nullptr;
};

using RoundObserver = std::function<void(const RoundEvent&)>;

// Independent stream per (seed, worker, round).
std::mt19937_64 worker_rng(std::uint64_t seed, int worker, std::uint64_t global_round);

// Rounds in one epoch for the given setup.
int rounds_per_epoch(const TrainingParams& params, const Dataset* dataset);

RunHistory run_experiment(const ExperimentConfig& config, const RoundObserver& observer = {});

}  // namespace distnewton
