#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sensorgrad/experiment.hpp"

using namespace sensorgrad;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("sensorgrad_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path write_config(const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path path = dir / name;
  std::ofstream(path) << text;
  return path;
}

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(const std::string& command, const fs::path& config, const fs::path& out_dir, unsigned threads = 1,
               std::optional<std::uint64_t> seed = {}) {
  CommandOptions options;
  options.config_path = config.string();
  options.out_dir = out_dir.string();
  options.threads = threads;
  options.seed = seed;
  std::ostringstream out, err;
  const int code = run_subcommand(command, options, out, err);
  return {code, out.str(), err.str()};
}

int data_rows(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  int rows = -2;
  while (std::getline(in, line)) ++rows;
  return rows;
}

const char* kCannon = R"(seed = 3
environment = cannon
cannon.control_noise_cov = diag(1, 4)
cannon.noise_angle_unit = deg
search.trials_per_step = 10
search.exploration_cov = diag(0.25, 0.0025)
search.initial_policy = [16, pi/4]
search.steps = 5
search.runs = 3
search.eval_trials_per_point = 5
)";

const char* kSynthetic = R"(seed = 9
environment = synthetic
synthetic.true_gradient = [2, -1]
synthetic.sensor_slope = [1.5, -0.5]
synthetic.output_variance = 0
synthetic.sensor_cov = [[1, 0.3], [0.3, 0.5]]
variance.replications = 500
variance.batch_size = 12
variance.exploration_cov = diag(0.5, 0.2)
)";

}  // namespace

TEST_CASE("config values and expressions") {
  const Config c = Config::parse(R"(# comment
a.real = -2.5e-1   # trailing comment
a.pi = pi/4
a.expr = 2 * (1 + 0.5)
a.int = 12
a.flag = true
a.word = "quoted # not a comment"
a.vec = [1, -2, pi]
a.mat = [[1, 0], [0, 4]]
a.diag = diag(1, 4)
a.scaled = 0.01 * identity(3)
a.trail = identity(2) * 3
a.list = [ignore_sensors, with_encoding(1)]
)");
  CHECK(c.real("a.real") == -0.25);
  CHECK(c.real("a.pi") == doctest::Approx(std::numbers::pi / 4));
  CHECK(c.real("a.expr") == 3.0);
  CHECK(c.integer("a.int") == 12);
  CHECK(c.boolean("a.flag", false));
  CHECK(c.string("a.word") == "quoted # not a comment");
  CHECK(c.vector("a.vec")(2) == doctest::Approx(std::numbers::pi));
  CHECK(c.matrix("a.mat")(1, 1) == 4.0);
  CHECK(c.matrix("a.diag") == c.matrix("a.mat"));
  CHECK(c.matrix("a.scaled").isApprox(0.01 * Matrix::Identity(3, 3)));
  CHECK(c.matrix("a.trail").isApprox(3.0 * Matrix::Identity(2, 2)));
  CHECK(c.strings("a.list") == std::vector<std::string>{"ignore_sensors", "with_encoding(1)"});
  CHECK(c.real("a.missing", 7.0) == 7.0);
  CHECK_NOTHROW(c.reject_unused());
}

TEST_CASE("config errors carry line and key") {
  try {
    Config::parse("a = 1\nb = [1, x]\n").vector("b");
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 2);
    CHECK(e.key() == "b");
  }
  CHECK_THROWS_WITH_AS(Config::parse("a = 1\na = 2\n"), doctest::Contains("duplicate key (first set on line 1)"), ConfigError);
  CHECK_THROWS_WITH_AS(Config::parse("just words\n"), doctest::Contains("expected 'key = value'"), ConfigError);
  CHECK_THROWS_WITH_AS(Config::parse("a = 1\n").real("b"), doctest::Contains("required key is missing"), ConfigError);
  CHECK_THROWS_AS(Config::parse("a = maybe\n").boolean("a", true), ConfigError);
  CHECK_THROWS_AS(Config::parse("a = -3\n").count("a"), ConfigError);
  CHECK_THROWS_AS(Config::parse("a = 1.5\n").integer("a"), ConfigError);
  const Config unused = Config::parse("a = 1\nzzz = 2\n");
  unused.real("a");
  CHECK_THROWS_WITH_AS(unused.reject_unused(), doctest::Contains(":2: zzz: unknown key"), ConfigError);
}

TEST_CASE("config hash ignores formatting and excluded keys") {
  const Config a = Config::parse("x = [1,2]\ny = 3\nout = a\n");
  const Config b = Config::parse("y=3\n# note\nx = [ 1, 2 ]\nout = b\n");
  CHECK(a.hash({"out"}) == b.hash({"out"}));
  CHECK(a.hash() != b.hash());
  CHECK(a.hash().size() == 16);
  Config c = a;
  c.set("y", "4");
  CHECK(c.hash({"out"}) != a.hash({"out"}));
}

TEST_CASE("run writes the documented tables deterministically") {
  const fs::path dir = scratch_dir("run");
  const fs::path config = write_config(dir, "cannon.conf", kCannon);
  const Outcome first = invoke("run", config, dir / "a");
  REQUIRE(first.code == kExitOk);
  CHECK(data_rows(dir / "a" / "learning_curve.csv") == 10);
  const Outcome second = invoke("run", config, dir / "b", 3);
  REQUIRE(second.code == kExitOk);
  for (const char* file : {"learning_curve.csv", "diagnostics.csv", "runs.csv", "config_echo.txt"}) {
    CHECK(slurp(dir / "a" / file) == slurp(dir / "b" / file));
  }
  const std::string curve = slurp(dir / "a" / "learning_curve.csv");
  CHECK(curve.rfind("# sensorgrad config_hash=", 0) == 0);
  CHECK(curve.find("\nstep,estimator,mean_value,std_error,runs,noise_scale\n") != std::string::npos);

  std::ostringstream out, err;
  CommandOptions check;
  check.out_dir = (dir / "a").string();
  CHECK(run_subcommand("schema-check", check, out, err) == kExitOk);
}

TEST_CASE("run exit codes") {
  const fs::path dir = scratch_dir("codes");
  std::string missing = kCannon;
  missing.replace(missing.find("cannon.control_noise_cov"), std::string("cannon.control_noise_cov = diag(1, 4)\n").size(), "");
  const Outcome no_key = invoke("run", write_config(dir, "missing.conf", missing), dir / "out");
  CHECK(no_key.code == kExitConfig);
  CHECK(no_key.err.find("cannon.control_noise_cov") != std::string::npos);

  const Outcome typo = invoke("run", write_config(dir, "typo.conf", std::string(kCannon) + "search.stpes = 3\n"), dir / "out");
  CHECK(typo.code == kExitConfig);
  CHECK(typo.err.find(":11: search.stpes: unknown key") != std::string::npos);

  const Outcome small = invoke(
      "run", write_config(dir, "small.conf", std::string(kCannon) + "search.estimators = [with_sensors]\n"), dir / "out");
  CHECK(small.code == kExitOk);
  std::string tiny = kCannon;
  tiny.replace(tiny.find("search.trials_per_step = 10"), 27, "search.trials_per_step = 5");
  const Outcome below = invoke("run", write_config(dir, "tiny.conf", tiny), dir / "out2");
  CHECK(below.code == kExitConfig);
  CHECK(below.err.find("search.trials_per_step") != std::string::npos);

  CHECK(invoke("run", dir / "nope.conf", dir / "out").code == kExitConfig);
  CHECK(invoke("launch", write_config(dir, "x.conf", kCannon), dir / "out").code == kExitConfig);
}

TEST_CASE("mixed-config output directories are rejected") {
  const fs::path dir = scratch_dir("mixed");
  const fs::path config = write_config(dir, "cannon.conf", kCannon);
  REQUIRE(invoke("run", config, dir / "out").code == kExitOk);
  const Outcome other = invoke("run", config, dir / "out", 1, 99);
  CHECK(other.code == kExitConfig);
  CHECK(other.err.find("config hash") != std::string::npos);
  CHECK(invoke("run", config, dir / "out").code == kExitOk);
}

TEST_CASE("schema-check catches damaged files") {
  const fs::path dir = scratch_dir("schema");
  const fs::path config = write_config(dir, "cannon.conf", kCannon);
  REQUIRE(invoke("run", config, dir / "out").code == kExitOk);
  std::ofstream(dir / "out" / "learning_curve.csv", std::ios::app) << "1,ignore_sensors,abc,0,3,1\n";
  std::ostringstream out, err;
  CommandOptions check;
  check.out_dir = (dir / "out").string();
  CHECK(run_subcommand("schema-check", check, out, err) == kExitThreshold);
  CHECK(err.str().find("bad value 'abc' in column mean_value") != std::string::npos);

  const std::string echo = slurp(dir / "out" / "config_echo.txt");
  std::ofstream(dir / "out" / "config_echo.txt") << "# sensorgrad config_hash=0000000000000000 seed=1 command=run\n"
                                                 << echo.substr(echo.find('\n') + 1);
  std::ostringstream out2, err2;
  CHECK(run_subcommand("schema-check", check, out2, err2) == kExitThreshold);
  CHECK(err2.str().find("config hash differs") != std::string::npos);
}

TEST_CASE("variance-check on a noise-free world") {
  const fs::path dir = scratch_dir("variance");
  const Outcome result = invoke("variance-check", write_config(dir, "v.conf", kSynthetic), dir / "out");
  CHECK(result.code == kExitOk);
  const std::string matrices = slurp(dir / "out" / "variance_matrices.csv");
  std::istringstream rows(matrices);
  std::string line;
  while (std::getline(rows, line)) {
    if (line.rfind("g2,", 0) != 0) continue;
    CHECK(std::abs(std::stod(line.substr(line.rfind(',') + 1))) < 1e-12);
  }
  CHECK(slurp(dir / "out" / "variance_checks.csv").find("g2_covariance_error") != std::string::npos);

  const Outcome wrong = invoke("variance-check", write_config(dir, "c.conf", kCannon), dir / "out2");
  CHECK(wrong.code == kExitConfig);
}

TEST_CASE("encode-search writes its trace") {
  const fs::path dir = scratch_dir("encode");
  const std::string text = std::string(kSynthetic) +
                           "encode.trials = 30\nencode.target_dim = 2\nencode.exploration_cov = diag(0.5, 0.5)\n";
  std::string config = text;
  for (const char* key : {"variance.replications", "variance.batch_size", "variance.exploration_cov"}) {
    const std::size_t at = config.find(key);
    config.erase(at, config.find('\n', at) - at + 1);
  }
  config.replace(config.find("synthetic.output_variance = 0"), 29, "synthetic.output_variance = 0.1");
  const Outcome result = invoke("encode-search", write_config(dir, "e.conf", config), dir / "out");
  CHECK(result.code == kExitOk);
  std::ifstream summary(dir / "out" / "encode_summary.csv");
  std::string line;
  double initial = 0, final_cost = 0;
  long iterations = -1;
  while (std::getline(summary, line)) {
    const auto comma = line.find(',');
    if (line.rfind("initial_cost", 0) == 0) initial = std::stod(line.substr(comma + 1));
    if (line.rfind("final_cost", 0) == 0) final_cost = std::stod(line.substr(comma + 1));
    if (line.rfind("iterations", 0) == 0) iterations = std::stol(line.substr(comma + 1));
  }
  CHECK(final_cost <= initial);
  CHECK(data_rows(dir / "out" / "loo_trace.csv") == iterations);
  CHECK(data_rows(dir / "out" / "projection.csv") == 2);
  std::ostringstream out, err;
  CommandOptions check;
  check.out_dir = (dir / "out").string();
  CHECK(run_subcommand("schema-check", check, out, err) == kExitOk);
}

TEST_CASE("output values are written compactly") {
  CHECK(format_real(0.1) == "0.1");
  CHECK(format_real(-2.0) == "-2");
  CHECK(format_real(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(output_header("abc", 5, "run") == "# sensorgrad config_hash=abc seed=5 command=run");
}
