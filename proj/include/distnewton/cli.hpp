#pragma once

// Experiment driver behind the `distnewton` command line tool.
//
// A run is fully described by a flat key = value file with dotted keys
// (harness.m, operator.lambda, ...). Every key has a default; the resolved
// set is echoed into each output directory as config.resolved.

#include "distnewton/harness.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace distnewton::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 1;
inline constexpr int kExitDiverged = 2;
inline constexpr int kExitInternalError = 3;
inline constexpr int kExitCheckFailed = 4;

inline constexpr const char* kOutputDirEnv = "DISTNEWTON_OUT";

class Config {
 public:
  // All known keys with their defaults.
  static const std::map<std::string, std::string>& defaults();

  // Parses `key = value` lines; `#` starts a comment. Unknown keys and
  // malformed lines throw ConfigError.
  static Config parse(const std::string& text, std::filesystem::path base_dir = {});
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  std::string get_string(const std::string& key) const { return get(key); }
  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<long long> get_int_list(const std::string& key) const;
  // Relative paths resolve against the directory of the config file.
  std::filesystem::path get_path(const std::string& key) const;

  // Fully resolved, one `key = value` per line, sorted by key.
  std::string render() const;

  const std::filesystem::path& base_dir() const { return base_dir_; }

 private:
  std::map<std::string, std::string> values_ = defaults();
  std::filesystem::path base_dir_;
};

TrainingParams training_params(const Config& config);

std::shared_ptr<const Dataset> load_dataset(const Config& config);
std::shared_ptr<const Objective> make_objective(const Config& config, const Dataset* dataset);
VectorXd initial_parameters(const Config& config, const Objective& objective);
ExperimentConfig build_experiment(const Config& config, std::shared_ptr<const Dataset> dataset);

// "distnewton-<m>" or "sgd".
std::string curve_name(const TrainingParams& params);

// CSV history: header epoch,train_nll,sigma_max,retained_j,wall_time_s and
// one row per completed epoch. A diverged run ends with a `# status: diverged` line.
inline constexpr const char* kCsvHeader = "epoch,train_nll,sigma_max,retained_j,wall_time_s";
std::string format_history_csv(const RunHistory& history);

struct ParsedHistory {
  std::vector<EpochRecord> epochs;
  RunStatus status = RunStatus::completed;
};
ParsedHistory parse_history_csv(const std::string& text);

struct Options {
  std::filesystem::path config_path;
  std::optional<std::filesystem::path> output_dir;  // falls back to $DISTNEWTON_OUT, then ./out
  std::optional<std::uint64_t> seed;
  std::optional<std::vector<int>> workers;
  std::optional<int> threads;
};

std::filesystem::path resolve_output_dir(const Options& options);

int run(const Options& options, std::ostream& out, std::ostream& err);
int sweep(const Options& options, std::ostream& out, std::ostream& err);
int grad_check(const Options& options, std::ostream& out, std::ostream& err);

}  // namespace distnewton::cli
