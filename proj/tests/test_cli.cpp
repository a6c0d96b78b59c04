#include "distnewton/cli.hpp"

#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

using namespace distnewton;
using namespace distnewton::cli;
namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& tag)
      : dir(fs::temp_directory_path() / ("distnewton_cli_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }

  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir / name) << text;
    return dir / name;
  }
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// CSV text with the wall_time_s column removed.
std::string without_wall_time(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') line = line.substr(0, line.rfind(','));
    out += line + '\n';
  }
  return out;
}

const char* kQuadratic =
    "objective.kind = quadratic\n"
    "objective.dim = 4\n"
    "data.source = none\n"
    "harness.m = 5\n"
    "harness.worker_spread = 0.5\n"
    "harness.epochs = 3\n"
    "operator.tau = 1.0\n"
    "operator.lambda = 1e-6\n";

const char* kBlobs =
    "objective.kind = mlp\n"
    "objective.layers = 6,5,3\n"
    "data.source = blobs\n"
    "data.features = 6\n"
    "data.classes = 3\n"
    "data.samples = 300\n"
    "harness.global_batch = 32\n"
    "harness.local_lr = 0.1\n"
    "harness.epochs = 3\n"
    "operator.tau = 0.1\n";

Options options_for(const fs::path& config, const fs::path& out) {
  Options o;
  o.config_path = config;
  o.output_dir = out;
  return o;
}

int run_binary(const std::string& args) {
  const std::string command = std::string(DISTNEWTON_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing") {
  const Config c = Config::parse("# comment\nharness.m = 4  # trailing\n\noperator.lambda=0.05\n");
  CHECK(c.get_int("harness.m") == 4);
  CHECK(c.get_double("operator.lambda") == 0.05);
  CHECK(c.get_int("harness.global_batch") == 256);
  CHECK(c.get_int_list("sweep.workers") == std::vector<long long>{1, 2, 4, 8});
  CHECK_FALSE(c.get_bool("operator.lr_cap"));

  CHECK_THROWS_AS(Config::parse("harness.bogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("harness.m 4\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("harness.m = four\n").get_int("harness.m"), ConfigError);
  CHECK_THROWS_AS(Config::parse("operator.lr_cap = maybe\n").get_bool("operator.lr_cap"), ConfigError);

  const Config rel = Config::parse("data.images = ../x/img\n", "/base/configs");
  CHECK(rel.get_path("data.images") == fs::path("/base/configs/../x/img"));
  CHECK(Config::parse("data.images = /abs/img\n", "/base").get_path("data.images") == fs::path("/abs/img"));
}

TEST_CASE("render materializes every default") {
  const Config c = Config::parse("harness.m = 3\n");
  const std::string text = c.render();
  CHECK(text.find("harness.m = 3\n") != std::string::npos);
  CHECK(text.find("operator.tau = 0.01\n") != std::string::npos);
  const Config back = Config::parse(text);
  CHECK(back.render() == text);
}

TEST_CASE("training_params names config fields") {
  try {
    training_params(Config::parse("harness.m = 0\n"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "harness.m");
  }
  try {
    training_params(Config::parse("operator.lambda = 0\n"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "operator.lambda");
  }
}

TEST_CASE("curve names") {
  TrainingParams p;
  p.m = 4;
  CHECK(curve_name(p) == "distnewton-4");
  p.aggregator = Aggregator::sgd_average;
  CHECK(curve_name(p) == "sgd");
}

TEST_CASE("CSV round trip") {
  RunHistory h;
  h.epochs.push_back({1, 2.302585092994046, 1.5, 3.0, 0.25});
  h.epochs.push_back({2, 1.0 / 3.0, 1e-300, 2.5, 0.125});
  const std::string text = format_history_csv(h);
  CHECK(text.rfind(std::string(kCsvHeader) + "\n", 0) == 0);
  const ParsedHistory parsed = parse_history_csv(text);
  REQUIRE(parsed.epochs.size() == 2);
  CHECK(parsed.status == RunStatus::completed);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(parsed.epochs[i].epoch == h.epochs[i].epoch);
    CHECK(parsed.epochs[i].train_nll == h.epochs[i].train_nll);
    CHECK(parsed.epochs[i].sigma_max == h.epochs[i].sigma_max);
    CHECK(parsed.epochs[i].retained_j == h.epochs[i].retained_j);
  }

  h.status = RunStatus::diverged;
  const ParsedHistory diverged = parse_history_csv(format_history_csv(h));
  CHECK(diverged.status == RunStatus::diverged);
  CHECK(diverged.epochs.size() == 2);

  CHECK_THROWS(parse_history_csv("wrong,header\n"));
  CHECK_THROWS(parse_history_csv(std::string(kCsvHeader) + "\n1,2,3\n"));
}

TEST_CASE("run on a quadratic config") {
  Scratch s("run");
  const auto config = s.write("q.conf", kQuadratic);
  std::ostringstream out, err;
  REQUIRE(run(options_for(config, s.dir / "out"), out, err) == kExitOk);
  const auto parsed = parse_history_csv(slurp(s.dir / "out" / "distnewton-5.csv"));
  CHECK(parsed.epochs.size() == 3);
  CHECK(parsed.epochs.back().train_nll < 1e-12);
  CHECK(fs::exists(s.dir / "out" / "summary.txt"));

  // The echoed config reproduces itself.
  const std::string echoed = slurp(s.dir / "out" / "config.resolved");
  CHECK(echoed.find("objective.dim = 4\n") != std::string::npos);
  CHECK(Config::parse(echoed).render() == echoed);
}

TEST_CASE("config error leaves no partial output") {
  Scratch s("bad");
  const auto config = s.write("bad.conf", std::string(kQuadratic) + "harness.m = 0\n");
  std::ostringstream out, err;
  CHECK(run(options_for(config, s.dir / "out"), out, err) == kExitConfigError);
  CHECK(err.str().find("harness.m") != std::string::npos);
  CHECK((!fs::exists(s.dir / "out") || fs::is_empty(s.dir / "out")));

  CHECK(run(options_for(s.dir / "missing.conf", s.dir / "out"), out, err) == kExitConfigError);
}

TEST_CASE("diverged run keeps a truncated CSV") {
  Scratch s("div");
  const auto config = s.write("d.conf", std::string(kQuadratic) +
                                            "operator.lambda = 2\noperator.tau = 10\n"
                                            "harness.rounds_per_epoch = 50\nharness.epochs = 20\n");
  std::ostringstream out, err;
  CHECK(run(options_for(config, s.dir / "out"), out, err) == kExitDiverged);
  const std::string csv = slurp(s.dir / "out" / "distnewton-5.csv");
  const auto parsed = parse_history_csv(csv);
  CHECK(parsed.status == RunStatus::diverged);
  CHECK(parsed.epochs.size() < 20);
  CHECK(csv.find("# status: diverged") != std::string::npos);
}

TEST_CASE("re-running overwrites with identical CSV bodies") {
  Scratch s("idem");
  const auto config = s.write("b.conf", kBlobs);
  std::ostringstream out, err;
  REQUIRE(run(options_for(config, s.dir / "a"), out, err) == kExitOk);
  const std::string first = slurp(s.dir / "a" / "distnewton-1.csv");
  REQUIRE(run(options_for(config, s.dir / "a"), out, err) == kExitOk);
  const std::string second = slurp(s.dir / "a" / "distnewton-1.csv");
  CHECK(without_wall_time(first) == without_wall_time(second));

  Options threaded = options_for(config, s.dir / "t");
  threaded.threads = 4;
  threaded.seed = 1;
  REQUIRE(run(threaded, out, err) == kExitOk);
  CHECK(without_wall_time(slurp(s.dir / "t" / "distnewton-1.csv")) == without_wall_time(first));

  Options reseeded = options_for(config, s.dir / "r");
  reseeded.seed = 9;
  REQUIRE(run(reseeded, out, err) == kExitOk);
  CHECK(without_wall_time(slurp(s.dir / "r" / "distnewton-1.csv")) != without_wall_time(first));
}

TEST_CASE("sweep writes one CSV per curve and a ranked summary") {
  Scratch s("sweep");
  const auto config = s.write("b.conf", kBlobs);
  std::ostringstream out, err;
  REQUIRE(sweep(options_for(config, s.dir / "out"), out, err) == kExitOk);
  int csv_files = 0;
  for (const auto& entry : fs::directory_iterator(s.dir / "out"))
    if (entry.path().extension() == ".csv" && entry.path().filename() != "summary.csv") ++csv_files;
  CHECK(csv_files == 5);
  for (const char* name : {"distnewton-1", "distnewton-2", "distnewton-4", "distnewton-8", "sgd"})
    CHECK(fs::exists(s.dir / "out" / (std::string(name) + ".csv")));

  std::istringstream summary(slurp(s.dir / "out" / "summary.csv"));
  std::string line;
  std::getline(summary, line);
  CHECK(line == "rank,curve,final_train_nll,status,epochs");
  double previous = -1.0;
  int rows = 0;
  while (std::getline(summary, line)) {
    std::vector<std::string> fields;
    std::stringstream ls(line);
    for (std::string f; std::getline(ls, f, ',');) fields.push_back(f);
    REQUIRE(fields.size() == 5);
    const double nll = std::stod(fields[2]);
    CHECK(nll >= previous);
    previous = nll;
    ++rows;
  }
  CHECK(rows == 5);

  Options subset = options_for(config, s.dir / "subset");
  subset.workers = std::vector<int>{2, 3};
  REQUIRE(sweep(subset, out, err) == kExitOk);
  CHECK(fs::exists(s.dir / "subset" / "distnewton-3.csv"));
  CHECK_FALSE(fs::exists(s.dir / "subset" / "distnewton-8.csv"));
}

TEST_CASE("grad-check") {
  Scratch s("gc");
  std::ostringstream out, err;
  const auto quadratic = s.write("q.conf", kQuadratic);
  CHECK(grad_check(options_for(quadratic, s.dir), out, err) == kExitOk);
  CHECK(out.str().find("threshold 1.0000000000000000e-08") != std::string::npos);

  const auto tanh = s.write("t.conf", std::string(kBlobs) + "gradcheck.points = 3\n");
  CHECK(grad_check(options_for(tanh, s.dir), out, err) == kExitOk);

  const auto relu = s.write("r.conf", std::string(kBlobs) + "objective.activation = relu\ngradcheck.points = 3\n");
  CHECK(grad_check(options_for(relu, s.dir), out, err) == kExitOk);

  const auto corrupt = s.write("c.conf", std::string(kQuadratic) + "gradcheck.corrupt = true\n");
  std::ostringstream cerr_text;
  CHECK(grad_check(options_for(corrupt, s.dir), out, cerr_text) == kExitCheckFailed);
  CHECK(cerr_text.str().find("worst coordinate") != std::string::npos);
}

TEST_CASE("resolve_output_dir prefers the flag, then the environment") {
  Options o;
  o.output_dir = "/tmp/flag";
  CHECK(resolve_output_dir(o) == fs::path("/tmp/flag"));
  o.output_dir.reset();
  ::setenv(kOutputDirEnv, "/tmp/from_env", 1);
  CHECK(resolve_output_dir(o) == fs::path("/tmp/from_env"));
  ::unsetenv(kOutputDirEnv);
  CHECK(resolve_output_dir(o) == fs::path("out"));
}

TEST_CASE("command line exit codes") {
  Scratch s("bin");
  const auto good = s.write("q.conf", kQuadratic);
  const auto bad = s.write("bad.conf", std::string(kQuadratic) + "harness.m = 0\n");
  const auto corrupt = s.write("c.conf", std::string(kQuadratic) + "gradcheck.corrupt = true\n");
  const std::string out = " --out " + (s.dir / "out").string();
  CHECK(run_binary("run --config " + good.string() + out) == 0);
  CHECK(run_binary("run --config " + bad.string() + out) == 1);
  CHECK(run_binary("grad-check --config " + good.string()) == 0);
  CHECK(run_binary("grad-check --config " + corrupt.string()) == 4);
  CHECK(run_binary("frobnicate") == 1);
  CHECK(run_binary("run") == 1);
  CHECK(run_binary("sweep --config " + good.string() + " --workers 2,3" + out) == 0);
}
