#include "distnewton/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <thread>

namespace distnewton {

Aggregator parse_aggregator(const std::string& name) {
  if (name == "distnewton") return Aggregator::distnewton;
  if (name == "sgd_average") return Aggregator::sgd_average;
  throw std::invalid_argument("unknown aggregator '" + name + "'");
}

std::string to_string(Aggregator aggregator) {
  return aggregator == Aggregator::distnewton ? "distnewton" : "sgd_average";
}

std::string to_string(RunStatus status) { return status == RunStatus::completed ? "completed" : "diverged"; }

void validate(const TrainingParams& p) {
  if (p.m < 1) throw ConfigError("m", "worker count must be >= 1");
  if (p.local_steps < 1) throw ConfigError("local_steps", "must be >= 1");
  if (!(p.local_lr >= 0.0) || !std::isfinite(p.local_lr)) throw ConfigError("local_lr", "must be finite and >= 0");
  if (!(p.server_tau > 0.0) || !std::isfinite(p.server_tau)) throw ConfigError("tau", "must be finite and > 0");
  if (!(p.lambda > 0.0) || !std::isfinite(p.lambda)) throw ConfigError("lambda", "must be finite and > 0");
  if (p.global_batch < 1) throw ConfigError("global_batch", "must be >= 1");
  if (p.epochs < 0) throw ConfigError("epochs", "must be >= 0");
  if (p.rounds_per_epoch < 0) throw ConfigError("rounds_per_epoch", "must be >= 0");
  if (!(p.worker_spread >= 0.0)) throw ConfigError("worker_spread", "must be >= 0");
  if (!(p.grad_noise >= 0.0)) throw ConfigError("grad_noise", "must be >= 0");
  if (p.threads < 1) throw ConfigError("threads", "must be >= 1");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(epoch) + 1));
}

void add_noise(VectorXd& v, double std_dev, std::mt19937_64& rng) {
  if (std_dev <= 0.0) return;
  std::normal_distribution<double> normal(0.0, std_dev);
  for (Index i = 0; i < v.size(); ++i) v(i) += normal(rng);
}

// Cyclic reader over one worker's shard.
class ShardCursor {
 public:
  explicit ShardCursor(const std::vector<Index>* samples) : samples_(samples) {}

  std::vector<Index> take(Index count) {
    std::vector<Index> out;
    if (samples_->empty()) return out;
    out.reserve(static_cast<std::size_t>(count));
    for (Index i = 0; i < count; ++i) {
      out.push_back((*samples_)[position_]);
      position_ = (position_ + 1) % samples_->size();
    }
    return out;
  }

 private:
  const std::vector<Index>* samples_;
  std::size_t position_ = 0;
};

}  // namespace

std::mt19937_64 worker_rng(std::uint64_t seed, int worker, std::uint64_t global_round) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(worker), static_cast<std::uint32_t>(global_round),
                    static_cast<std::uint32_t>(global_round >> 32)};
  return std::mt19937_64(seq);
}

WorkerOutcome worker_round(const VectorXd& theta_read, const Objective& objective, std::span<const Batch> batches,
                           int local_steps, double local_lr, std::mt19937_64& rng,
                           const WorkerPerturbation& perturbation) {
  if (local_steps < 1) throw std::invalid_argument("worker_round: local_steps must be >= 1");
  if (!batches.empty() && batches.size() != static_cast<std::size_t>(local_steps) + 1)
    throw DimensionError("worker_round: batch count", local_steps + 1, static_cast<Index>(batches.size()));

  static const Batch kEmpty;
  auto batch_at = [&](int i) -> const Batch& {
    return batches.empty() ? kEmpty : batches[static_cast<std::size_t>(i)];
  };

  WorkerOutcome outcome;
  VectorXd theta = theta_read;
  add_noise(theta, perturbation.spread, rng);
  for (int step = 0; step < local_steps; ++step) {
    VectorXd grad = objective.value_grad(theta, batch_at(step)).grad;
    add_noise(grad, perturbation.grad_noise, rng);
    theta -= local_lr * grad;
    if (!theta.allFinite()) {
      outcome.diverged = true;
      outcome.report.theta = std::move(theta);
      return outcome;
    }
  }
  VectorXd grad = objective.value_grad(theta, batch_at(local_steps)).grad;
  add_noise(grad, perturbation.grad_noise, rng);
  outcome.diverged = !grad.allFinite();
  outcome.report = {std::move(theta), std::move(grad)};
  return outcome;
}

ServerResult server_round(std::span<const WorkerReport<double>> reports, double lambda, double tau, bool use_lr_cap,
                          Aggregator aggregator) {
  const CenteredBatch<double> batch = center_reports(reports);
  ServerResult result;
  if (aggregator == Aggregator::sgd_average) {
    result.theta_new = batch.theta_bar;
    result.stats.tau_used = 0.0;
    return result;
  }
  const InverseHessianOperator<double> op = build_operator(batch, lambda);
  const double tau_used = use_lr_cap ? lr_cap(tau, op) : tau;
  result.theta_new = newton_update(op, batch.theta_bar, batch.g_bar, tau_used);
  result.stats.sigma = op.sigma_full();
  result.stats.retained_j = op.retained();
  result.stats.tau_used = tau_used;
  return result;
}

int rounds_per_epoch(const TrainingParams& params, const Dataset* dataset) {
  if (params.rounds_per_epoch > 0) return params.rounds_per_epoch;
  if (dataset == nullptr || dataset->sample_count() == 0) return 1;
  const Index per_round = static_cast<Index>(params.local_steps + 1) * params.global_batch;
  return static_cast<int>((dataset->sample_count() + per_round - 1) / per_round);
}

RunHistory run_experiment(const ExperimentConfig& config, const RoundObserver& observer) {
  const TrainingParams& p = config.params;
  validate(p);
  if (!config.objective) throw ConfigError("objective", "missing");
  if (config.initial_theta.size() != config.objective->dim())
    throw ConfigError("initial_theta", "length " + std::to_string(config.initial_theta.size()) +
                                           " does not match objective dimension " +
                                           std::to_string(config.objective->dim()));
  const Dataset* dataset = config.dataset.get();

  RunHistory history;
  history.config = p;
  history.final_theta = config.initial_theta;
  if (p.epochs == 0) return history;

  const Batch train = dataset != nullptr ? full_batch(*dataset) : Batch{};
  const int rounds = rounds_per_epoch(p, dataset);
  const std::vector<Index> worker_batch = split_batch(p.global_batch, p.m);
  const WorkerPerturbation perturbation{p.worker_spread, p.grad_noise};
  const int thread_count = std::min(p.threads, p.m);

  VectorXd theta = config.initial_theta;
  std::uint64_t global_round = 0;
  std::uint64_t snapshot_version = 0;  // bumped whenever the server publishes theta
  std::vector<WorkerOutcome> outcomes(static_cast<std::size_t>(p.m));
  std::vector<std::uint64_t> read_versions(static_cast<std::size_t>(p.m));

  for (int epoch = 1; epoch <= p.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    ShardPlan plan;
    std::vector<ShardCursor> cursors;
    if (dataset != nullptr) {
      plan = shard(*dataset, p.m, epoch_seed(p.seed, epoch));
      for (const auto& samples : plan.shards) cursors.emplace_back(&samples);
    }

    double sigma_sum = 0.0;
    double j_sum = 0.0;
    for (int round = 0; round < rounds; ++round, ++global_round) {
      std::vector<std::vector<Batch>> batches(static_cast<std::size_t>(p.m));
      if (dataset != nullptr) {
        for (int k = 0; k < p.m; ++k)
          for (int b = 0; b <= p.local_steps; ++b) {
            const auto samples = cursors[static_cast<std::size_t>(k)].take(worker_batch[static_cast<std::size_t>(k)]);
            batches[static_cast<std::size_t>(k)].push_back(make_batch(*dataset, samples));
          }
      }

      // Every worker reads the same snapshot; joining all threads is the barrier.
      auto run_worker = [&](int k) {
        read_versions[static_cast<std::size_t>(k)] = snapshot_version;
        auto rng = worker_rng(p.seed, k, global_round);
        outcomes[static_cast<std::size_t>(k)] =
            worker_round(theta, *config.objective, batches[static_cast<std::size_t>(k)], p.local_steps, p.local_lr,
                         rng, perturbation);
      };
      if (thread_count <= 1) {
        for (int k = 0; k < p.m; ++k) run_worker(k);
      } else {
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(thread_count));
        {
          std::vector<std::jthread> pool;
          for (int t = 0; t < thread_count; ++t)
            pool.emplace_back([&, t] {
              try {
                for (int k = t; k < p.m; k += thread_count) run_worker(k);
              } catch (...) {
                errors[static_cast<std::size_t>(t)] = std::current_exception();
              }
            });
        }
        for (const auto& error : errors)
          if (error) std::rethrow_exception(error);
      }

      if (std::any_of(outcomes.begin(), outcomes.end(), [](const WorkerOutcome& o) { return o.diverged; })) {
        history.status = RunStatus::diverged;
        return history;
      }

      std::vector<WorkerReport<double>> reports;
      reports.reserve(outcomes.size());
      for (auto& outcome : outcomes) reports.push_back(std::move(outcome.report));

      const ServerResult result = server_round(reports, p.lambda, p.server_tau, p.use_lr_cap, p.aggregator);
      sigma_sum += result.stats.sigma_max();
      j_sum += static_cast<double>(result.stats.retained_j);

      if (observer) {
        RoundEvent event;
        event.epoch = epoch;
        event.round = round;
        event.global_round = global_round;
        event.snapshot_ids = read_versions;
        event.reports = reports;
        event.theta_read = &theta;
        event.result = &result;
        observer(event);
      }

      if (!result.theta_new.allFinite()) {
        history.status = RunStatus::diverged;
        return history;
      }
      theta = result.theta_new;
      ++snapshot_version;
      history.final_theta = theta;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_nll = config.objective->value(theta, train);
    record.sigma_max = sigma_sum / rounds;
    record.retained_j = j_sum / rounds;
    record.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (!std::isfinite(record.train_nll)) {
      history.status = RunStatus::diverged;
      return history;
    }
    history.epochs.push_back(record);
  }
  return history;
}

}  // namespace distnewton
