#include "distnewton/cli.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace distnewton::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream in(s);
  while (std::getline(in, part, sep)) parts.push_back(trim(part));
  return parts;
}

std::string format_real(double x) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.16e", x);
  return buffer;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("short write to " + path.string());
}

}  // namespace

const std::map<std::string, std::string>& Config::defaults() {
  static const std::map<std::string, std::string> values{
      {"objective.kind", "mlp"},
      {"objective.dim", "8"},
      {"objective.condition", "100"},
      {"objective.seed", "0"},
      {"objective.layers", "784,32,10"},
      {"objective.activation", "tanh"},
      {"data.source", "mnist"},
      {"data.images", ""},
      {"data.labels", ""},
      {"data.limit", "5000"},
      {"data.features", "20"},
      {"data.classes", "3"},
      {"data.samples", "600"},
      {"harness.m", "1"},
      {"harness.local_steps", "1"},
      {"harness.local_lr", "0.01"},
      {"harness.global_batch", "256"},
      {"harness.epochs", "50"},
      {"harness.seed", "1"},
      {"harness.aggregator", "distnewton"},
      {"harness.rounds_per_epoch", "0"},
      {"harness.worker_spread", "0"},
      {"harness.grad_noise", "0"},
      {"harness.threads", "1"},
      {"operator.lambda", "0.1"},
      {"operator.tau", "0.01"},
      {"operator.lr_cap", "false"},
      {"sweep.workers", "1,2,4,8"},
      {"sweep.baseline_m", "1"},
      {"gradcheck.points", "10"},
      {"gradcheck.coords", "20"},
      {"gradcheck.batch", "32"},
      {"gradcheck.h", "1e-5"},
      {"gradcheck.threshold", "0"},
      {"gradcheck.corrupt", "false"},
  };
  return values;
}

Config Config::parse(const std::string& text, fs::path base_dir) {
  Config config;
  config.base_dir_ = std::move(base_dir);
  std::istringstream in(text);
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_number), "expected `key = value`");
    config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return config;
}

Config Config::load(const fs::path& path) { return parse(read_text(path), path.parent_path()); }

void Config::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(key, "unknown key");
  it->second = value;
}

const std::string& Config::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(key, "unknown key");
  return it->second;
}

long long Config::get_int(const std::string& key) const {
  const std::string& raw = get(key);
  char* end = nullptr;
  errno = 0;
  const long long value = std::strtoll(raw.c_str(), &end, 10);
  if (raw.empty() || *end != '\0' || errno != 0) throw ConfigError(key, "expected an integer, got '" + raw + "'");
  return value;
}

double Config::get_double(const std::string& key) const {
  const std::string& raw = get(key);
  char* end = nullptr;
  errno = 0;
  const double value = std::strtod(raw.c_str(), &end);
  if (raw.empty() || *end != '\0' || errno != 0) throw ConfigError(key, "expected a number, got '" + raw + "'");
  return value;
}

bool Config::get_bool(const std::string& key) const {
  const std::string& raw = get(key);
  if (raw == "true" || raw == "1" || raw == "yes") return true;
  if (raw == "false" || raw == "0" || raw == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + raw + "'");
}

std::vector<long long> Config::get_int_list(const std::string& key) const {
  std::vector<long long> out;
  for (const auto& part : split(get(key), ',')) {
    char* end = nullptr;
    const long long value = std::strtoll(part.c_str(), &end, 10);
    if (part.empty() || *end != '\0') throw ConfigError(key, "expected a comma-separated integer list");
    out.push_back(value);
  }
  if (out.empty()) throw ConfigError(key, "empty list");
  return out;
}

fs::path Config::get_path(const std::string& key) const {
  const fs::path raw(get(key));
  if (raw.empty() || raw.is_absolute() || base_dir_.empty()) return raw;
  return base_dir_ / raw;
}

std::string Config::render() const {
  std::ostringstream out;
  for (const auto& [key, value] : values_) out << key << " = " << value << '\n';
  return out.str();
}

TrainingParams training_params(const Config& config) {
  TrainingParams p;
  p.m = static_cast<int>(config.get_int("harness.m"));
  p.local_steps = static_cast<int>(config.get_int("harness.local_steps"));
  p.local_lr = config.get_double("harness.local_lr");
  p.server_tau = config.get_double("operator.tau");
  p.lambda = config.get_double("operator.lambda");
  p.use_lr_cap = config.get_bool("operator.lr_cap");
  p.global_batch = config.get_int("harness.global_batch");
  p.epochs = static_cast<int>(config.get_int("harness.epochs"));
  const long long seed = config.get_int("harness.seed");
  if (seed < 0) throw ConfigError("harness.seed", "must be >= 0");
  p.seed = static_cast<std::uint64_t>(seed);
  try {
    p.aggregator = parse_aggregator(config.get("harness.aggregator"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError("harness.aggregator", e.what());
  }
  p.rounds_per_epoch = static_cast<int>(config.get_int("harness.rounds_per_epoch"));
  p.worker_spread = config.get_double("harness.worker_spread");
  p.grad_noise = config.get_double("harness.grad_noise");
  p.threads = static_cast<int>(config.get_int("harness.threads"));
  try {
    validate(p);
  } catch (const ConfigError& e) {
    // Report the dotted key the user wrote.
    static const std::map<std::string, std::string> keys{
        {"m", "harness.m"},           {"local_steps", "harness.local_steps"},
        {"local_lr", "harness.local_lr"}, {"tau", "operator.tau"},
        {"lambda", "operator.lambda"}, {"global_batch", "harness.global_batch"},
        {"epochs", "harness.epochs"},  {"rounds_per_epoch", "harness.rounds_per_epoch"},
        {"worker_spread", "harness.worker_spread"}, {"grad_noise", "harness.grad_noise"},
        {"threads", "harness.threads"}};
    const auto it = keys.find(e.field());
    const std::string message = std::string(e.what()).substr(e.field().size() + 2);
    throw ConfigError(it != keys.end() ? it->second : e.field(), message);
  }
  return p;
}

std::shared_ptr<const Dataset> load_dataset(const Config& config) {
  const std::string& source = config.get("data.source");
  if (source == "none") return nullptr;
  if (source == "mnist") {
    const fs::path images = config.get_path("data.images");
    const fs::path labels = config.get_path("data.labels");
    if (images.empty()) throw ConfigError("data.images", "required when data.source = mnist");
    if (labels.empty()) throw ConfigError("data.labels", "required when data.source = mnist");
    const long long limit = config.get_int("data.limit");
    if (limit < 0) throw ConfigError("data.limit", "must be >= 0 (0 loads every sample)");
    try {
      return std::make_shared<const Dataset>(
          load_idx(images, labels, limit > 0 ? std::optional<Index>(limit) : std::nullopt));
    } catch (const IdxError& e) {
      throw ConfigError("data.images", e.what());
    }
  }
  if (source == "blobs") {
    const long long features = config.get_int("data.features");
    const long long classes = config.get_int("data.classes");
    const long long samples = config.get_int("data.samples");
    if (features < 1) throw ConfigError("data.features", "must be >= 1");
    if (classes < 1) throw ConfigError("data.classes", "must be >= 1");
    if (samples < 1) throw ConfigError("data.samples", "must be >= 1");
    return std::make_shared<const Dataset>(synthetic_blobs(features, static_cast<int>(classes), samples,
                                                           static_cast<std::uint64_t>(config.get_int("objective.seed"))));
  }
  throw ConfigError("data.source", "expected mnist, blobs or none, got '" + source + "'");
}

std::shared_ptr<const Objective> make_objective(const Config& config, const Dataset* dataset) {
  const std::string& kind = config.get("objective.kind");
  if (kind == "quadratic") {
    const long long dim = config.get_int("objective.dim");
    const double condition = config.get_double("objective.condition");
    if (dim < 1) throw ConfigError("objective.dim", "must be >= 1");
    if (!(condition >= 1.0)) throw ConfigError("objective.condition", "must be >= 1");
    return std::make_shared<const QuadraticObjective>(
        make_quadratic_spec(dim, condition, static_cast<std::uint64_t>(config.get_int("objective.seed"))));
  }
  if (kind == "rosenbrock") {
    const long long dim = config.get_int("objective.dim");
    if (dim < 2 || dim % 2 != 0) throw ConfigError("objective.dim", "rosenbrock needs an even dimension >= 2");
    return std::make_shared<const RosenbrockObjective>(dim);
  }
  if (kind == "mlp") {
    MlpSpec spec;
    spec.layer_sizes.clear();
    for (long long size : config.get_int_list("objective.layers")) {
      if (size < 1) throw ConfigError("objective.layers", "layer sizes must be >= 1");
      spec.layer_sizes.push_back(size);
    }
    if (spec.layer_sizes.size() < 2) throw ConfigError("objective.layers", "need input and output sizes");
    try {
      spec.activation = parse_activation(config.get("objective.activation"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError("objective.activation", e.what());
    }
    if (dataset == nullptr) throw ConfigError("data.source", "the mlp objective needs a dataset");
    if (spec.input_size() != dataset->feature_count())
      throw ConfigError("objective.layers", "input size " + std::to_string(spec.input_size()) +
                                                " does not match the dataset's " +
                                                std::to_string(dataset->feature_count()) + " features");
    if (spec.class_count() < dataset->class_count())
      throw ConfigError("objective.layers", "output size " + std::to_string(spec.class_count()) +
                                                " is smaller than the dataset's class count");
    return std::make_shared<const MlpObjective>(spec);
  }
  throw ConfigError("objective.kind", "expected quadratic, rosenbrock or mlp, got '" + kind + "'");
}

VectorXd initial_parameters(const Config& config, const Objective& objective) {
  if (const auto* mlp = dynamic_cast<const MlpObjective*>(&objective))
    return mlp_initial_parameters(mlp->spec(), static_cast<std::uint64_t>(config.get_int("harness.seed")));
  if (dynamic_cast<const RosenbrockObjective*>(&objective) != nullptr) {
    VectorXd theta(objective.dim());
    for (Index i = 0; i < theta.size(); i += 2) {
      theta(i) = -1.2;
      theta(i + 1) = 1.0;
    }
    return theta;
  }
  return VectorXd::Zero(objective.dim());
}

ExperimentConfig build_experiment(const Config& config, std::shared_ptr<const Dataset> dataset) {
  ExperimentConfig experiment;
  experiment.params = training_params(config);
  experiment.dataset = std::move(dataset);
  experiment.objective = make_objective(config, experiment.dataset.get());
  experiment.initial_theta = initial_parameters(config, *experiment.objective);
  // Data-free objectives never look at the dataset.
  if (dynamic_cast<const MlpObjective*>(experiment.objective.get()) == nullptr) experiment.dataset.reset();
  return experiment;
}

std::string curve_name(const TrainingParams& params) {
  if (params.aggregator == Aggregator::sgd_average) return "sgd";
  return "distnewton-" + std::to_string(params.m);
}

std::string format_history_csv(const RunHistory& history) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& record : history.epochs) {
    out += std::to_string(record.epoch) + "," + format_real(record.train_nll) + "," + format_real(record.sigma_max) +
           "," + format_real(record.retained_j) + "," + format_real(record.wall_time_s) + "\n";
  }
  if (history.status == RunStatus::diverged)
    out += "# status: diverged after " + std::to_string(history.epochs.size()) + " completed epochs\n";
  return out;
}

ParsedHistory parse_history_csv(const std::string& text) {
  ParsedHistory parsed;
  std::istringstream in(text);
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (line.find("diverged") != std::string::npos) parsed.status = RunStatus::diverged;
      continue;
    }
    if (!header_seen) {
      if (line != kCsvHeader) throw std::runtime_error("csv: unexpected header '" + line + "'");
      header_seen = true;
      continue;
    }
    const auto fields = split(line, ',');
    if (fields.size() != 5) throw std::runtime_error("csv: expected 5 fields in '" + line + "'");
    EpochRecord record;
    record.epoch = std::stoi(fields[0]);
    record.train_nll = std::strtod(fields[1].c_str(), nullptr);
    record.sigma_max = std::strtod(fields[2].c_str(), nullptr);
    record.retained_j = std::strtod(fields[3].c_str(), nullptr);
    record.wall_time_s = std::strtod(fields[4].c_str(), nullptr);
    parsed.epochs.push_back(record);
  }
  if (!header_seen) throw std::runtime_error("csv: missing header");
  return parsed;
}

fs::path resolve_output_dir(const Options& options) {
  if (options.output_dir) return *options.output_dir;
  if (const char* env = std::getenv(kOutputDirEnv); env != nullptr && *env != '\0') return env;
  return "out";
}

namespace {

Config load_with_overrides(const Options& options) {
  Config config = Config::load(options.config_path);
  if (options.seed) config.set("harness.seed", std::to_string(*options.seed));
  if (options.threads) config.set("harness.threads", std::to_string(*options.threads));
  if (options.workers) {
    std::string list;
    for (int m : *options.workers) list += (list.empty() ? "" : ",") + std::to_string(m);
    config.set("sweep.workers", list);
  }
  return config;
}

// Files written by a command; removed again unless the command commits.
class OutputTransaction {
 public:
  explicit OutputTransaction(fs::path dir) : dir_(std::move(dir)) {
    if (!fs::exists(dir_)) {
      fs::create_directories(dir_);
      created_dir_ = true;
    }
  }
  ~OutputTransaction() {
    if (committed_) return;
    std::error_code ignored;
    for (const auto& path : written_) fs::remove(path, ignored);
    if (created_dir_ && fs::is_empty(dir_, ignored)) fs::remove(dir_, ignored);
  }

  void write(const std::string& name, const std::string& text) {
    const fs::path path = dir_ / name;
    write_text(path, text);
    written_.push_back(path);
  }
  void commit() { committed_ = true; }

 private:
  fs::path dir_;
  std::vector<fs::path> written_;
  bool created_dir_ = false;
  bool committed_ = false;
};

std::string format_summary_line(const std::string& curve, const RunHistory& history) {
  std::ostringstream line;
  line << std::left << std::setw(16) << curve << std::setw(11) << to_string(history.status) << std::right
       << std::setw(7) << history.epochs.size();
  if (!history.epochs.empty()) {
    const auto& last = history.epochs.back();
    line << "  " << format_real(last.train_nll) << "  " << format_real(last.sigma_max) << "  "
         << format_real(last.retained_j);
  }
  return line.str();
}

const char* kSummaryHeader = "curve           status      epochs  final_train_nll          sigma_max                retained_j";

template <typename Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInternalError;
  }
}

}  // namespace

int run(const Options& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Config config = load_with_overrides(options);
    const ExperimentConfig experiment = build_experiment(config, load_dataset(config));
    const std::string curve = curve_name(experiment.params);

    OutputTransaction output(resolve_output_dir(options));
    output.write("config.resolved", config.render());
    const RunHistory history = run_experiment(experiment);
    output.write(curve + ".csv", format_history_csv(history));
    output.write("summary.txt", std::string(kSummaryHeader) + "\n" + format_summary_line(curve, history) + "\n");
    output.commit();

    out << format_summary_line(curve, history) << '\n';
    return history.status == RunStatus::completed ? kExitOk : kExitDiverged;
  });
}

int sweep(const Options& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Config config = load_with_overrides(options);
    const auto dataset = load_dataset(config);
    std::vector<int> workers;
    for (long long m : config.get_int_list("sweep.workers")) {
      if (m < 1) throw ConfigError("sweep.workers", "worker counts must be >= 1");
      workers.push_back(static_cast<int>(m));
    }
    const long long baseline_m = config.get_int("sweep.baseline_m");
    if (baseline_m < 1) throw ConfigError("sweep.baseline_m", "must be >= 1");

    // Validate every cell before any compute.
    std::vector<ExperimentConfig> cells;
    for (int m : workers) {
      Config cell = config;
      cell.set("harness.m", std::to_string(m));
      cell.set("harness.aggregator", "distnewton");
      cells.push_back(build_experiment(cell, dataset));
    }
    {
      Config cell = config;
      cell.set("harness.m", std::to_string(baseline_m));
      cell.set("harness.aggregator", "sgd_average");
      cells.push_back(build_experiment(cell, dataset));
    }

    OutputTransaction output(resolve_output_dir(options));
    output.write("config.resolved", config.render());

    struct Row {
      std::string curve;
      std::string status;
      std::size_t epochs = 0;
      double final_nll = std::numeric_limits<double>::quiet_NaN();
    };
    std::vector<Row> rows;
    int exit_code = kExitOk;
    for (const auto& cell : cells) {
      const std::string curve = curve_name(cell.params);
      try {
        const RunHistory history = run_experiment(cell);
        output.write(curve + ".csv", format_history_csv(history));
        rows.push_back({curve, to_string(history.status), history.epochs.size(),
                        history.epochs.empty() ? std::numeric_limits<double>::quiet_NaN()
                                               : history.epochs.back().train_nll});
        if (history.status == RunStatus::diverged && exit_code == kExitOk) exit_code = kExitDiverged;
        out << format_summary_line(curve, history) << '\n';
      } catch (const std::exception& e) {
        err << curve << ": " << e.what() << '\n';
        rows.push_back({curve, "error", 0, std::numeric_limits<double>::quiet_NaN()});
        exit_code = kExitInternalError;
      }
    }

    // Completed curves by final NLL, then diverged and failed cells.
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
      const bool a_ok = a.status == "completed";
      const bool b_ok = b.status == "completed";
      if (a_ok != b_ok) return a_ok;
      return a_ok && a.final_nll < b.final_nll;
    });
    std::string summary = "rank,curve,final_train_nll,status,epochs\n";
    for (std::size_t i = 0; i < rows.size(); ++i)
      summary += std::to_string(i + 1) + "," + rows[i].curve + "," + format_real(rows[i].final_nll) + "," +
                 rows[i].status + "," + std::to_string(rows[i].epochs) + "\n";
    output.write("summary.csv", summary);
    output.commit();
    return exit_code;
  });
}

int grad_check(const Options& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Config config = load_with_overrides(options);
    const auto dataset = load_dataset(config);
    const auto objective = make_objective(config, dataset.get());
    const auto* mlp = dynamic_cast<const MlpObjective*>(objective.get());

    const long long points = config.get_int("gradcheck.points");
    const long long coords = config.get_int("gradcheck.coords");
    const long long batch_size = config.get_int("gradcheck.batch");
    const double h = config.get_double("gradcheck.h");
    if (points < 1) throw ConfigError("gradcheck.points", "must be >= 1");
    if (coords < 1) throw ConfigError("gradcheck.coords", "must be >= 1");
    if (batch_size < 1) throw ConfigError("gradcheck.batch", "must be >= 1");
    if (!(h > 0.0)) throw ConfigError("gradcheck.h", "must be > 0");

    double threshold = config.get_double("gradcheck.threshold");
    if (threshold <= 0.0) {
      if (objective->name() == "quadratic")
        threshold = 1e-8;
      else if (mlp != nullptr && mlp->spec().activation == Activation::relu)
        threshold = 1e-5;
      else
        threshold = 1e-6;
    }
    GradCheckOptions check_options;
    check_options.h = h;
    check_options.screen_kinks = mlp != nullptr && mlp->spec().activation == Activation::relu;
    const bool corrupt = config.get_bool("gradcheck.corrupt");
    const auto seed = static_cast<std::uint64_t>(config.get_int("harness.seed"));

    const Index n = objective->dim();
    double worst_error = 0.0;
    Index worst_coordinate = -1;
    long long worst_point = -1;
    for (long long point = 0; point < points; ++point) {
      std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(point));
      std::normal_distribution<double> normal(0.0, 1.0);

      VectorXd theta = initial_parameters(config, *objective);
      Batch batch;
      if (mlp != nullptr) {
        theta = mlp_initial_parameters(mlp->spec(), rng());
        for (Index i = 0; i < n; ++i) theta(i) += 0.1 * normal(rng);
        std::uniform_int_distribution<Index> pick(0, dataset->sample_count() - 1);
        std::vector<Index> samples(static_cast<std::size_t>(batch_size));
        for (auto& s : samples) s = pick(rng);
        batch = make_batch(*dataset, samples);
      } else if (const auto* quadratic = dynamic_cast<const QuadraticObjective*>(objective.get())) {
        theta = quadratic->spec().theta_star;
        for (Index i = 0; i < n; ++i) theta(i) += normal(rng);
      } else {
        std::uniform_real_distribution<double> uniform(-2.0, 2.0);
        for (Index i = 0; i < n; ++i) theta(i) = uniform(rng);
      }

      std::vector<Index> coordinates(static_cast<std::size_t>(n));
      std::iota(coordinates.begin(), coordinates.end(), Index(0));
      if (n > coords) {
        std::shuffle(coordinates.begin(), coordinates.end(), rng);
        coordinates.resize(static_cast<std::size_t>(coords));
        std::sort(coordinates.begin(), coordinates.end());
      }

      VectorXd analytic = objective->value_grad(theta, batch).grad;
      if (corrupt) analytic(coordinates.front()) += 1e-2 * std::max(1.0, analytic.cwiseAbs().maxCoeff());

      const GradCheckResult result = check_gradient(*objective, theta, batch, analytic, coordinates, check_options);
      out << "point " << point << ": relative error " << format_real(result.relative_error) << " over "
          << result.checked << " coordinates";
      if (result.skipped > 0) out << " (" << result.skipped << " kink-screened)";
      out << '\n';
      if (result.relative_error > worst_error || worst_point < 0) {
        worst_error = result.relative_error;
        worst_coordinate = result.worst_coordinate;
        worst_point = point;
      }
    }

    out << objective->name() << ": max relative error " << format_real(worst_error) << " (threshold "
        << format_real(threshold) << ")\n";
    if (worst_error > threshold) {
      err << "gradient check failed at point " << worst_point << ", worst coordinate " << worst_coordinate << '\n';
      return kExitCheckFailed;
    }
    return kExitOk;
  });
}

}  // namespace distnewton::cli
