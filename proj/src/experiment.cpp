#include "sensorgrad/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "sensorgrad/stats.hpp"

namespace sensorgrad {

namespace fs = std::filesystem;

namespace {

constexpr const char* kHeaderPrefix = "# sensorgrad config_hash=";
constexpr std::uint64_t kEncodingSearchStream = std::uint64_t{1} << 32;

/// Runs `fn`, reporting any validation failure as a ConfigError on `key`.
template <typename Fn>
auto configured(const Config& config, const std::string& key, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw config.error(key, e.what());
  }
}

void require_length(const Config& config, const std::string& key, Eigen::Index actual, Eigen::Index expected) {
  if (actual != expected) {
    throw config.error(key, "expected " + std::to_string(expected) + " entries, got " + std::to_string(actual));
  }
}

void require_shape(const Config& config, const std::string& key, const Matrix& m, Eigen::Index rows,
                   Eigen::Index cols) {
  if (m.rows() != rows || m.cols() != cols) {
    throw config.error(key, "expected a " + std::to_string(rows) + "x" + std::to_string(cols) + " matrix, got " +
                                std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

std::string sanitize(std::string text) {
  for (char& c : text) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return text;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("failed writing " + path.string());
}

std::string resolve_out_dir(const CommandOptions& options, const Config& config) {
  if (options.out_dir) return *options.out_dir;
  if (const char* env = std::getenv("SENSORGRAD_OUT"); env && *env) return env;
  if (config.has("output.dir")) return config.string("output.dir");
  throw ConfigError(config.source(), 0, "output.dir", "no output directory (use --out, SENSORGRAD_OUT or output.dir)");
}

struct Context {
  Config config;
  std::string command;
  std::uint64_t seed = 0;
  std::string hash;
  fs::path out_dir;
  unsigned threads = 1;

  std::string header() const { return output_header(hash, seed, command); }
};

Context open_context(const std::string& command, const CommandOptions& options) {
  Context ctx;
  ctx.config = Config::load(options.config_path);
  ctx.command = command;
  if (options.seed) ctx.config.set("seed", std::to_string(*options.seed));
  const std::int64_t seed = ctx.config.integer("seed");
  if (seed < 0) throw ctx.config.error("seed", "seed must be non-negative");
  ctx.seed = static_cast<std::uint64_t>(seed);
  const std::string configured_dir = ctx.config.string("output.dir", "");
  ctx.out_dir = resolve_out_dir(options, ctx.config);
  (void)configured_dir;
  // Where results are written never changes them, so output.dir is not hashed.
  ctx.hash = ctx.config.hash({"output.dir"});
  ctx.threads = std::max(1u, options.threads);
  return ctx;
}

void prepare_out_dir(const Context& ctx) {
  std::error_code ec;
  fs::create_directories(ctx.out_dir, ec);
  if (ec) throw Error("cannot create output directory " + ctx.out_dir.string() + ": " + ec.message());
  try {
    check_output_dir(ctx.out_dir.string(), ctx.hash);
  } catch (const Error& e) {
    throw ConfigError(ctx.config.source(), 0, "output.dir", e.what());
  }
}

void write_config_echo(const Context& ctx) {
  write_file(ctx.out_dir / "config_echo.txt", ctx.header() + "\n" + ctx.config.canonical_text());
}

std::string real_or_empty(const std::optional<double>& v) { return v ? format_real(*v) : std::string(); }

// ---------------------------------------------------------------------------
// run

int cmd_run(const CommandOptions& options, std::ostream& out) {
  Context ctx = open_context("run", options);
  const Config& config = ctx.config;
  const std::unique_ptr<Environment> env = read_environment(config, ctx.seed);
  SearchConfig search = read_search_config(config, *env, ctx.seed);
  const std::vector<EstimatorChoice> estimators = read_estimators(config);
  const Vector scales = config.vector("search.noise_scales", Vector::Ones(1));
  if (scales.size() == 0) throw config.error("search.noise_scales", "needs at least one scale");
  for (Eigen::Index i = 0; i < scales.size(); ++i) {
    if (!(scales(i) >= 0.0)) throw config.error("search.noise_scales", "scales must be non-negative");
  }
  for (const auto& e : estimators) {
    SearchConfig probe = search;
    probe.estimator = e;
    configured(config, "search.trials_per_step", [&] {
      probe.validate(*env);
      return 0;
    });
  }
  config.reject_unused();
  prepare_out_dir(ctx);

  std::ostringstream curve_csv, diag_csv, runs_csv;
  curve_csv << ctx.header() << "\nstep,estimator,mean_value,std_error,runs,noise_scale\n";
  diag_csv << ctx.header()
           << "\nnoise_scale,estimator,run,step,value,gradient_norm,loo_cost,mean_trial_score,flagged_trials,attempts\n";
  runs_csv << ctx.header() << "\nnoise_scale,estimator,run,status,final_value,message\n";

  for (Eigen::Index si = 0; si < scales.size(); ++si) {
    const double scale = scales(si);
    const std::unique_ptr<Environment> scaled = env->with_noise_scale(scale);
    std::map<std::string, std::vector<double>> finals;
    for (const auto& estimator : estimators) {
      search.estimator = estimator;
      const std::string label = estimator.label();
      const LearningCurve curve = run_learning_curve(*scaled, search, ctx.threads);
      const std::string scale_text = format_real(scale);
      for (std::size_t s = 0; s < search.steps; ++s) {
        curve_csv << (s + 1) << ',' << label << ',' << format_real(curve.mean[s]) << ','
                  << format_real(curve.standard_error[s]) << ',' << curve.completed_runs << ',' << scale_text << '\n';
      }
      for (std::size_t r = 0; r < curve.runs.size(); ++r) {
        const RunRecord& run = curve.runs[r];
        for (std::size_t s = 0; s < run.steps.size() && s < run.values.size(); ++s) {
          const StepDiagnostics& d = run.steps[s];
          const auto& scores = d.trial_scores;
          const double mean_score = mean_and_error(scores).mean;
          diag_csv << scale_text << ',' << label << ',' << r << ',' << (s + 1) << ',' << format_real(run.values[s])
                   << ',' << format_real(d.gradient.norm()) << ',' << real_or_empty(d.loo_cost) << ','
                   << format_real(mean_score) << ',' << d.flagged_trials << ',' << d.attempts << '\n';
        }
        const bool done = run.completed();
        runs_csv << scale_text << ',' << label << ',' << r << ',' << (done ? "completed" : "failed") << ','
                 << (done && !run.values.empty() ? format_real(run.values.back()) : std::string()) << ','
                 << (done ? std::string() : sanitize(*run.error)) << '\n';
      }
      out << "noise_scale " << scale_text << "  " << label << ": final mean "
          << (search.steps ? format_real(curve.mean.back()) : std::string("n/a")) << " (se "
          << (search.steps ? format_real(curve.standard_error.back()) : std::string("n/a")) << "), "
          << curve.completed_runs << "/" << curve.runs.size() << " runs completed\n";
      finals[label] = curve.final_values();
    }
    if (search.steps > 0 && estimators.size() > 1) {
      const std::string base = estimators.front().label();
      for (std::size_t e = 1; e < estimators.size(); ++e) {
        const std::string label = estimators[e].label();
        try {
          std::vector<double> a, b;
          for (std::size_t r = 0; r < finals[label].size(); ++r) {
            if (std::isfinite(finals[label][r]) && std::isfinite(finals[base][r])) {
              a.push_back(finals[label][r]);
              b.push_back(finals[base][r]);
            }
          }
          const PairedTest t = paired_t_test_greater(a, b);
          out << "noise_scale " << format_real(scale) << "  " << label << " - " << base << ": mean difference "
              << format_real(t.mean_difference) << ", one-sided p " << format_real(t.p_value) << " over " << t.pairs
              << " paired runs\n";
        } catch (const Error& err) {
          out << "noise_scale " << format_real(scale) << "  " << label << " - " << base << ": " << err.what() << '\n';
        }
      }
    }
  }
  write_file(ctx.out_dir / "learning_curve.csv", curve_csv.str());
  write_file(ctx.out_dir / "diagnostics.csv", diag_csv.str());
  write_file(ctx.out_dir / "runs.csv", runs_csv.str());
  write_config_echo(ctx);
  out << "wrote " << (ctx.out_dir / "learning_curve.csv").string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// variance-check

std::string matrix_text(const Matrix& m) {
  std::ostringstream s;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    s << "    [";
    for (Eigen::Index c = 0; c < m.cols(); ++c) s << (c ? ", " : "") << format_real(m(r, c));
    s << "]\n";
  }
  return s.str();
}

std::string vector_text(const Vector& v) {
  std::string s = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_real(v(i));
  return s + "]";
}

int cmd_variance_check(const CommandOptions& options, std::ostream& out) {
  Context ctx = open_context("variance-check", options);
  const Config& config = ctx.config;
  const std::string kind = config.string("environment");
  if (kind != "synthetic") throw config.error("environment", "variance-check needs environment = synthetic");
  const SyntheticWorld world = read_synthetic_world(config);
  VarianceCheckSettings settings;
  settings.replications = config.count("variance.replications", 20000);
  settings.batch_size = config.count("variance.batch_size", 12);
  settings.exploration_cov = config.matrix("variance.exploration_cov");
  require_shape(config, "variance.exploration_cov", settings.exploration_cov, world.policy_dim(), world.policy_dim());
  configured(config, "variance.exploration_cov", [&] { return psd_factor(settings.exploration_cov); });
  settings.nominal_policy = config.vector("variance.nominal_policy", Vector::Zero(world.policy_dim()));
  require_length(config, "variance.nominal_policy", settings.nominal_policy.size(), world.policy_dim());
  settings.seed = derive_seed(ctx.seed, kSeedVariance);
  settings.threads = ctx.threads;
  const double tolerance = config.real("variance.tolerance", 0.10);
  const double correlated_tolerance = config.real("variance.correlated_tolerance", 0.15);
  const double z_limit = config.real("variance.bias_z_limit", 3.0);
  if (settings.replications < 2) throw config.error("variance.replications", "needs at least 2 replications");
  const auto needed = static_cast<std::size_t>(world.policy_dim() + world.sensor_dim() + 2);
  if (settings.batch_size < needed) {
    throw config.error("variance.batch_size", "must be at least d + d_s + 2 = " + std::to_string(needed));
  }
  config.reject_unused();
  prepare_out_dir(ctx);

  const VarianceCheckResult result =
      configured(config, "variance", [&] { return run_variance_check(world, settings, tolerance, correlated_tolerance); });

  std::ostringstream report, checks, matrices;
  report << ctx.header() << '\n';
  report << "replications " << settings.replications << ", batch size " << settings.batch_size << ", d "
         << world.policy_dim() << ", d_s " << world.sensor_dim() << (result.correlated ? ", correlated sensors" : "")
         << "\n";
  report << "value gradient " << vector_text(result.value_gradient) << "\n";
  report << "mean g1 " << vector_text(result.mean_g1) << " (se " << vector_text(result.se_g1) << ")\n";
  report << "mean g2 " << vector_text(result.mean_g2) << " (se " << vector_text(result.se_g2) << ")\n";
  checks << ctx.header() << "\ncheck,value,threshold,status\n";
  matrices << ctx.header() << "\nlaw,row,col,predicted,empirical\n";
  bool all = true;
  for (const LawCheck& law : result.laws) {
    report << law.name << " predicted covariance\n" << matrix_text(law.predicted);
    report << law.name << " empirical covariance\n" << matrix_text(law.empirical);
    report << law.name << " error " << format_real(law.error) << " (limit " << format_real(law.tolerance) << ") "
           << (law.passed() ? "PASS" : "FAIL") << "\n";
    checks << law.name << "_covariance_error," << format_real(law.error) << ',' << format_real(law.tolerance) << ','
           << (law.passed() ? "pass" : "fail") << '\n';
    for (Eigen::Index r = 0; r < law.predicted.rows(); ++r) {
      for (Eigen::Index c = 0; c < law.predicted.cols(); ++c) {
        matrices << law.name << ',' << r << ',' << c << ',' << format_real(law.predicted(r, c)) << ','
                 << format_real(law.empirical(r, c)) << '\n';
      }
    }
    all = all && law.passed();
  }
  const bool g1_ok = result.g1_bias_z <= z_limit;
  const bool g2_ok = result.g2_bias_z <= z_limit;
  report << "g1 mean vs value gradient: max z " << format_real(result.g1_bias_z) << (g1_ok ? " PASS" : " FAIL") << "\n";
  checks << "g1_mean_z," << format_real(result.g1_bias_z) << ',' << format_real(z_limit) << ','
         << (g1_ok ? "pass" : "fail") << '\n';
  report << "g2 bias predicted " << vector_text(result.predicted_bias) << ", empirical "
         << vector_text(result.empirical_bias) << ": max z " << format_real(result.g2_bias_z)
         << (g2_ok ? " PASS" : " FAIL") << "\n";
  checks << "g2_bias_z," << format_real(result.g2_bias_z) << ',' << format_real(z_limit) << ','
         << (g2_ok ? "pass" : "fail") << '\n';
  all = all && g1_ok && g2_ok;
  write_file(ctx.out_dir / "variance_report.txt", report.str());
  write_file(ctx.out_dir / "variance_checks.csv", checks.str());
  write_file(ctx.out_dir / "variance_matrices.csv", matrices.str());
  write_config_echo(ctx);
  out << report.str().substr(report.str().find('\n') + 1);
  return all ? kExitOk : kExitThreshold;
}

// ---------------------------------------------------------------------------
// encode-search

int cmd_encode_search(const CommandOptions& options, std::ostream& out) {
  Context ctx = open_context("encode-search", options);
  const Config& config = ctx.config;
  const std::unique_ptr<Environment> env = read_environment(config, ctx.seed);
  const Eigen::Index d = env->policy_dim();
  const Vector nominal = config.vector("encode.nominal_policy", Vector::Zero(d));
  require_length(config, "encode.nominal_policy", nominal.size(), d);
  const Matrix cov = config.matrix("encode.exploration_cov", Matrix::Identity(d, d));
  require_shape(config, "encode.exploration_cov", cov, d, d);
  configured(config, "encode.exploration_cov", [&] { return psd_factor(cov); });
  const std::size_t trials = config.count("encode.trials", 50);
  EncodingSearchConfig search;
  search.target_dim = config.integer("encode.target_dim", 1);
  search.max_iterations = static_cast<int>(config.integer("encoding.max_iterations", 100));
  search.gradient_step = config.real("encoding.gradient_step", 1e-4);
  search.restarts = static_cast<int>(config.integer("encoding.restarts", 5));
  configured(config, "encoding", [&] {
    search.validate();
    return 0;
  });
  if (search.target_dim > env->sensor_dim()) throw config.error("encode.target_dim", "exceeds the sensor dimension");
  if (static_cast<Eigen::Index>(trials) < d + search.target_dim + 2) {
    throw config.error("encode.trials", "must be at least d + target_dim + 2 = " +
                                            std::to_string(d + search.target_dim + 2));
  }
  std::optional<Vector> planted;
  if (config.has("encode.planted_direction")) {
    planted = config.vector("encode.planted_direction");
    require_length(config, "encode.planted_direction", planted->size(), env->sensor_dim());
    if (planted->norm() == 0.0) throw config.error("encode.planted_direction", "must be nonzero");
  }
  const double min_cosine = config.real("encode.min_cosine", 0.95);
  config.reject_unused();
  prepare_out_dir(ctx);

  const EncodeSearchReport report =
      run_encode_search(*env, nominal, cov, trials, search, derive_seed(ctx.seed, kSeedEncoding), planted);

  std::ostringstream projection, trace, summary;
  projection << ctx.header() << "\nraw_index";
  const Matrix& basis = report.search.projection.basis;
  for (Eigen::Index c = 0; c < basis.cols(); ++c) projection << ",b" << (c + 1);
  projection << '\n';
  for (Eigen::Index r = 0; r < basis.rows(); ++r) {
    projection << r;
    for (Eigen::Index c = 0; c < basis.cols(); ++c) projection << ',' << format_real(basis(r, c));
    projection << '\n';
  }
  trace << ctx.header() << "\nrestart,iteration,loo_cost\n";
  for (std::size_t r = 0; r < report.search.restarts.size(); ++r) {
    const auto& costs = report.search.restarts[r].costs;
    for (std::size_t i = 0; i < costs.size(); ++i) trace << r << ',' << (i + 1) << ',' << format_real(costs[i]) << '\n';
  }
  const bool improved = report.search.final_cost() <= report.search.initial_cost();
  const bool recovered = !report.cosine || *report.cosine >= min_cosine;
  summary << ctx.header() << "\nquantity,value\n";
  summary << "initial_cost," << format_real(report.search.initial_cost()) << '\n';
  summary << "final_cost," << format_real(report.search.final_cost()) << '\n';
  summary << "iterations," << report.search.iterations_performed() << '\n';
  summary << "best_restart," << report.search.best_restart << '\n';
  if (report.cosine) summary << "abs_cosine_to_planted," << format_real(*report.cosine) << '\n';
  for (Eigen::Index i = 0; i < report.encoded.gradient.size(); ++i) {
    summary << "gradient_" << i << ',' << format_real(report.encoded.gradient(i)) << '\n';
  }
  write_file(ctx.out_dir / "projection.csv", projection.str());
  write_file(ctx.out_dir / "loo_trace.csv", trace.str());
  write_file(ctx.out_dir / "encode_summary.csv", summary.str());
  write_config_echo(ctx);

  out << "leave-one-out cost " << format_real(report.search.initial_cost()) << " -> "
      << format_real(report.search.final_cost()) << " over " << report.search.iterations_performed()
      << " iterations (best restart " << report.search.best_restart << ")\n";
  if (report.cosine) {
    out << "|cosine| to planted direction " << format_real(*report.cosine) << " (limit " << format_real(min_cosine)
        << ") " << (recovered ? "PASS" : "FAIL") << '\n';
  }
  return improved && recovered ? kExitOk : kExitThreshold;
}

// ---------------------------------------------------------------------------
// schema-check

int cmd_schema_check(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  std::string dir;
  if (options.out_dir) {
    dir = *options.out_dir;
  } else if (const char* env = std::getenv("SENSORGRAD_OUT"); env && *env) {
    dir = env;
  } else if (!options.config_path.empty()) {
    dir = resolve_out_dir(options, Config::load(options.config_path));
  } else {
    throw ConfigError("<command line>", 0, "output.dir", "schema-check needs --out or SENSORGRAD_OUT");
  }
  if (!fs::is_directory(dir)) throw ConfigError("<command line>", 0, "output.dir", "not a directory: " + dir);
  const std::vector<std::string> problems = schema_problems(dir);
  for (const auto& p : problems) err << p << '\n';
  if (problems.empty()) out << "all output files in " << dir << " match their schemas\n";
  return problems.empty() ? kExitOk : kExitThreshold;
}

// ---------------------------------------------------------------------------
// Schema validation.

enum class Field { kInteger, kReal, kOptionalReal, kText, kWord };

struct Schema {
  std::vector<std::string> columns;
  std::vector<Field> fields;
};

const std::map<std::string, Schema>& known_schemas() {
  using F = Field;
  static const std::map<std::string, Schema> schemas = {
      {"learning_curve.csv",
       {{"step", "estimator", "mean_value", "std_error", "runs", "noise_scale"},
        {F::kInteger, F::kWord, F::kReal, F::kReal, F::kInteger, F::kReal}}},
      {"diagnostics.csv",
       {{"noise_scale", "estimator", "run", "step", "value", "gradient_norm", "loo_cost", "mean_trial_score",
         "flagged_trials", "attempts"},
        {F::kReal, F::kWord, F::kInteger, F::kInteger, F::kReal, F::kReal, F::kOptionalReal, F::kReal, F::kInteger,
         F::kInteger}}},
      {"runs.csv",
       {{"noise_scale", "estimator", "run", "status", "final_value", "message"},
        {F::kReal, F::kWord, F::kInteger, F::kWord, F::kOptionalReal, F::kText}}},
      {"variance_checks.csv", {{"check", "value", "threshold", "status"}, {F::kWord, F::kReal, F::kReal, F::kWord}}},
      {"variance_matrices.csv",
       {{"law", "row", "col", "predicted", "empirical"}, {F::kWord, F::kInteger, F::kInteger, F::kReal, F::kReal}}},
      {"loo_trace.csv", {{"restart", "iteration", "loo_cost"}, {F::kInteger, F::kInteger, F::kReal}}},
      {"encode_summary.csv", {{"quantity", "value"}, {F::kWord, F::kReal}}},
  };
  return schemas;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool field_ok(const std::string& cell, Field field) {
  switch (field) {
    case Field::kText: return true;
    case Field::kWord: return !cell.empty() && cell.find(' ') == std::string::npos;
    case Field::kInteger: {
      if (cell.empty()) return false;
      std::size_t i = cell[0] == '-' ? 1 : 0;
      if (i == cell.size()) return false;
      for (; i < cell.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(cell[i]))) return false;
      }
      return true;
    }
    case Field::kOptionalReal:
      if (cell.empty()) return true;
      [[fallthrough]];
    case Field::kReal: {
      if (cell == "nan" || cell == "inf" || cell == "-inf") return true;
      char* end = nullptr;
      std::strtod(cell.c_str(), &end);
      return !cell.empty() && end == cell.c_str() + cell.size();
    }
  }
  return false;
}

std::optional<std::string> header_hash(const std::string& first_line) {
  const std::string prefix = kHeaderPrefix;
  if (first_line.rfind(prefix, 0) != 0) return std::nullopt;
  const std::size_t end = first_line.find(' ', prefix.size());
  return first_line.substr(prefix.size(), end == std::string::npos ? std::string::npos : end - prefix.size());
}

}  // namespace

// ---------------------------------------------------------------------------

SyntheticWorld read_synthetic_world(const Config& config) {
  SyntheticWorld world;
  world.true_gradient = config.vector("synthetic.true_gradient");
  world.sensor_slope = config.vector("synthetic.sensor_slope");
  const Eigen::Index d = world.true_gradient.size();
  const Eigen::Index ds = world.sensor_slope.size();
  if (d < 1) throw config.error("synthetic.true_gradient", "needs at least one entry");
  world.offset = config.real("synthetic.offset", 0.0);
  world.noise.output_variance = config.real("synthetic.output_variance");
  world.noise.sensor_cov = config.matrix("synthetic.sensor_cov");
  require_shape(config, "synthetic.sensor_cov", world.noise.sensor_cov, ds, ds);
  world.noise.sensor_mean = config.vector("synthetic.sensor_mean", Vector::Zero(ds));
  require_length(config, "synthetic.sensor_mean", world.noise.sensor_mean.size(), ds);
  world.noise.policy_sensor_coupling = config.matrix("synthetic.coupling", Matrix::Zero(d, ds));
  require_shape(config, "synthetic.coupling", world.noise.policy_sensor_coupling, d, ds);
  world.noise.coupling_offset = config.vector("synthetic.coupling_offset", Vector::Zero(ds));
  require_length(config, "synthetic.coupling_offset", world.noise.coupling_offset.size(), ds);
  configured(config, "synthetic", [&] {
    world.validate();
    return 0;
  });
  return world;
}

CannonWorld read_cannon_world(const Config& config) {
  CannonWorld world;
  const std::string unit = config.string("cannon.noise_angle_unit", "rad");
  if (unit != "rad" && unit != "deg") throw config.error("cannon.noise_angle_unit", "expected rad or deg");
  const double to_rad = unit == "deg" ? std::numbers::pi / 180.0 : 1.0;
  auto angle_units = [&](Matrix cov) {
    cov(0, 1) *= to_rad;
    cov(1, 0) *= to_rad;
    cov(1, 1) *= to_rad * to_rad;
    return cov;
  };
  const Matrix control = config.matrix("cannon.control_noise_cov");
  require_shape(config, "cannon.control_noise_cov", control, 2, 2);
  const Matrix sensor = config.matrix("cannon.sensor_noise_cov", Matrix::Zero(2, 2));
  require_shape(config, "cannon.sensor_noise_cov", sensor, 2, 2);
  world.control_noise_cov = angle_units(control);
  world.sensor_noise_cov = angle_units(sensor);
  world.gravity = config.real("cannon.gravity", 9.8);
  world.target_range = config.real("cannon.target_range", 400.0 / world.gravity);
  configured(config, "cannon", [&] {
    world.validate();
    return 0;
  });
  return world;
}

ArmWorld read_arm_world(const Config& config) {
  ArmWorld world;
  const Eigen::Index k = world.joint_count();
  Vector lengths(k), masses(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    lengths(i) = world.links[static_cast<std::size_t>(i)].length;
    masses(i) = world.links[static_cast<std::size_t>(i)].mass;
  }
  lengths = config.vector("dart.link_lengths", lengths);
  masses = config.vector("dart.link_masses", masses);
  const Eigen::Index joints = lengths.size();
  require_length(config, "dart.link_masses", masses.size(), joints);
  world.links.clear();
  for (Eigen::Index i = 0; i < joints; ++i) world.links.push_back(Link::rod(lengths(i), masses(i)));
  if (config.has("dart.link_inertias")) {
    const Vector inertias = config.vector("dart.link_inertias");
    require_length(config, "dart.link_inertias", inertias.size(), joints);
    for (Eigen::Index i = 0; i < joints; ++i) world.links[static_cast<std::size_t>(i)].inertia = inertias(i);
  }
  world.gravity = config.real("dart.gravity", world.gravity);
  world.kp = config.vector("dart.kp", joints == k ? world.kp : Vector::Constant(joints, 50.0));
  world.kd = config.vector("dart.kd", joints == k ? world.kd : Vector::Constant(joints, 5.0));
  world.torque_noise_multiplicative = config.real("dart.torque_noise_multiplicative", world.torque_noise_multiplicative);
  world.torque_noise_additive = config.real("dart.torque_noise_additive", world.torque_noise_additive);
  world.release_time_std = config.real("dart.release_time_std", world.release_time_std);
  world.sim_duration = config.real("dart.sim_duration", world.sim_duration);
  world.timestep = config.real("dart.timestep", world.timestep);
  const Vector shoulder = config.vector("dart.shoulder_position", world.shoulder_position);
  require_length(config, "dart.shoulder_position", shoulder.size(), 2);
  world.shoulder_position = shoulder;
  const Vector target = config.vector("dart.target_position", world.target_position);
  require_length(config, "dart.target_position", target.size(), 2);
  world.target_position = target;
  world.start_posture = config.vector("dart.start_posture", joints == k ? world.start_posture : Vector::Zero(joints));
  world.knots_per_joint = static_cast<int>(config.integer("dart.knots_per_joint", world.knots_per_joint));
  configured(config, "dart", [&] {
    world.validate();
    return 0;
  });
  return world;
}

std::shared_ptr<const DynamicsModel> prepare_dynamics_model(const Config& config, const ArmWorld& world,
                                                           const Vector& nominal_policy, const Matrix& exploration_cov,
                                                           std::uint64_t root_seed) {
  const std::string cache = config.string("pretraining.model_file", "");
  PretrainingConfig pre;
  pre.nominal_policy = config.vector("pretraining.nominal_policy", nominal_policy);
  require_length(config, "pretraining.nominal_policy", pre.nominal_policy.size(), world.policy_dim());
  pre.exploration_cov = config.matrix("pretraining.exploration_cov", exploration_cov);
  require_shape(config, "pretraining.exploration_cov", pre.exploration_cov, world.policy_dim(), world.policy_dim());
  pre.rollouts = config.count("pretraining.rollouts", pre.rollouts);
  const std::size_t states = config.count("pretraining.states", 2000);
  const auto minimum = static_cast<std::size_t>(quad_feature_count(static_cast<std::size_t>(2 * world.joint_count())) + 2);
  if (states < minimum) throw config.error("pretraining.states", "must be at least " + std::to_string(minimum));
  if (!cache.empty() && fs::exists(cache)) {
    std::ifstream in(cache);
    auto model = std::make_shared<DynamicsModel>(configured(config, "pretraining.model_file", [&] {
      return load_dynamics_model(in);
    }));
    if (model->joints != world.joint_count()) {
      throw config.error("pretraining.model_file", "cached model has a different joint count");
    }
    return model;
  }
  Rng rng = make_rng(derive_seed(root_seed, kSeedPretraining));
  const std::vector<StateSample> samples =
      configured(config, "pretraining", [&] { return sample_pretraining_states(world, pre, states, rng); });
  auto model = std::make_shared<DynamicsModel>(fit_dynamics_model(world, samples));
  if (!cache.empty()) {
    std::ofstream out(cache);
    if (!out) throw config.error("pretraining.model_file", "cannot write " + cache);
    save_dynamics_model(*model, out);
  }
  return model;
}

std::unique_ptr<Environment> read_environment(const Config& config, std::uint64_t root_seed) {
  const std::string kind = config.string("environment");
  if (kind == "synthetic") return std::make_unique<SyntheticEnvironment>(read_synthetic_world(config));
  if (kind == "cannon") return std::make_unique<CannonEnvironment>(read_cannon_world(config));
  if (kind == "dart") {
    const ArmWorld world = read_arm_world(config);
    const Eigen::Index d = world.policy_dim();
    Vector nominal = Vector::Zero(d);
    Matrix cov = 0.01 * Matrix::Identity(d, d);
    if (config.has("search.initial_policy")) nominal = config.vector("search.initial_policy");
    if (config.has("search.exploration_cov")) cov = config.matrix("search.exploration_cov");
    if (config.has("encode.nominal_policy")) nominal = config.vector("encode.nominal_policy");
    if (config.has("encode.exploration_cov")) cov = config.matrix("encode.exploration_cov");
    require_length(config, "search.initial_policy", nominal.size(), d);
    require_shape(config, "search.exploration_cov", cov, d, d);
    return std::make_unique<DartEnvironment>(world, prepare_dynamics_model(config, world, nominal, cov, root_seed));
  }
  throw config.error("environment", "expected synthetic, cannon or dart");
}

SearchConfig read_search_config(const Config& config, const Environment& env, std::uint64_t root_seed) {
  const Eigen::Index d = env.policy_dim();
  SearchConfig search;
  search.trials_per_step = config.count("search.trials_per_step", search.trials_per_step);
  search.exploration_cov = config.matrix("search.exploration_cov");
  require_shape(config, "search.exploration_cov", search.exploration_cov, d, d);
  search.initial_policy = config.vector("search.initial_policy");
  require_length(config, "search.initial_policy", search.initial_policy.size(), d);
  const std::string rule = config.string("search.step_rule", "normalized");
  if (rule == "normalized") {
    search.step_rule = StepRule::kNormalized;
  } else if (rule == "fixed") {
    search.step_rule = StepRule::kFixedRate;
  } else {
    throw config.error("search.step_rule", "expected normalized or fixed");
  }
  search.learning_rate = config.real("search.learning_rate", search.learning_rate);
  search.decay_rate = config.boolean("search.decay_rate", search.decay_rate);
  search.steps = config.count("search.steps", search.steps);
  search.runs = config.count("search.runs", search.runs);
  search.eval_trials_per_point = config.count("search.eval_trials_per_point", search.eval_trials_per_point);
  search.encoding.max_iterations = static_cast<int>(config.integer("encoding.max_iterations", 100));
  search.encoding.gradient_step = config.real("encoding.gradient_step", 1e-4);
  search.encoding.restarts = static_cast<int>(config.integer("encoding.restarts", 5));
  search.warm_start_encoding = config.boolean("encoding.warm_start", false);
  search.seed = derive_seed(root_seed, kSeedCurves);
  configured(config, "encoding", [&] {
    search.encoding.validate();
    return 0;
  });
  return search;
}

std::vector<EstimatorChoice> read_estimators(const Config& config) {
  const std::vector<std::string> names = config.strings("search.estimators", {"ignore_sensors", "with_sensors"});
  if (names.empty()) throw config.error("search.estimators", "needs at least one estimator");
  std::vector<EstimatorChoice> out;
  for (const auto& name : names) {
    out.push_back(configured(config, "search.estimators", [&] { return EstimatorChoice::parse(name); }));
  }
  return out;
}

// ---------------------------------------------------------------------------

bool VarianceCheckResult::passed(double z_limit) const {
  for (const auto& law : laws) {
    if (!law.passed()) return false;
  }
  return g1_bias_z <= z_limit && g2_bias_z <= z_limit;
}

namespace {

double max_z(const Vector& mean, const Vector& target, const Vector& se) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double gap = std::abs(mean(i) - target(i));
    if (se(i) > 0.0) {
      worst = std::max(worst, gap / se(i));
    } else if (gap > 1e-9 * (1.0 + std::abs(target(i)))) {
      worst = std::numeric_limits<double>::infinity();
    }
  }
  return worst;
}

LawCheck make_law(std::string name, Matrix predicted, Matrix empirical, double tolerance) {
  LawCheck law{std::move(name), std::move(predicted), std::move(empirical), 0.0, tolerance};
  if (law.predicted.norm() == 0.0) {
    law.error = law.empirical.norm();
    law.tolerance = 1e-12;
  } else {
    law.error = relative_frobenius_error(law.empirical, law.predicted);
  }
  return law;
}

}  // namespace

VarianceCheckResult run_variance_check(const SyntheticWorld& world, const VarianceCheckSettings& settings,
                                       double tolerance, double correlated_tolerance) {
  world.validate();
  const Eigen::Index d = world.policy_dim();
  const Eigen::Index ds = world.sensor_dim();
  const std::size_t n = settings.batch_size;
  const std::size_t reps = settings.replications;
  const SyntheticSampler sampler(world);
  const Matrix factor = psd_factor(settings.exploration_cov);
  Matrix g1(static_cast<Eigen::Index>(reps), d), g2(static_cast<Eigen::Index>(reps), d);
  parallel_for(reps, settings.threads, [&](std::size_t r) {
    Rng rng = make_rng(derive_seed(settings.seed, r));
    Matrix policies(static_cast<Eigen::Index>(n), d), sensors(static_cast<Eigen::Index>(n), ds);
    Vector scores(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const Vector policy = sample_gaussian(settings.nominal_policy, factor, rng);
      const TrialRecord rec = sampler.trial(policy, rng);
      policies.row(row) = policy.transpose();
      sensors.row(row) = rec.encoded_sensors->transpose();
      scores(row) = rec.score;
    }
    g1.row(static_cast<Eigen::Index>(r)) = fit_g1(policies, scores).gradient.transpose();
    g2.row(static_cast<Eigen::Index>(r)) = fit_g2(policies, sensors, scores).gradient.transpose();
  });

  VarianceCheckResult out;
  out.value_gradient = world.value_gradient();
  const double root_reps = std::sqrt(static_cast<double>(reps));
  const Matrix cov1 = sample_covariance(g1);
  const Matrix cov2 = sample_covariance(g2);
  out.mean_g1 = g1.colwise().mean().transpose();
  out.mean_g2 = g2.colwise().mean().transpose();
  out.se_g1 = cov1.diagonal().cwiseMax(0.0).cwiseSqrt() / root_reps;
  out.se_g2 = cov2.diagonal().cwiseMax(0.0).cwiseSqrt() / root_reps;
  out.correlated = world.noise.policy_sensor_coupling.cwiseAbs().maxCoeff() > 0.0;
  const double samples = effective_samples(n);
  out.laws.push_back(make_law("g1", predicted_variance_g1(settings.exploration_cov, world.noise, world.sensor_slope, samples, d),
                              cov1, tolerance));
  if (out.correlated) {
    out.laws.push_back(make_law("g2_correlated",
                                predicted_variance_g2_correlated(settings.exploration_cov, world.noise, samples, d, ds),
                                cov2, correlated_tolerance));
  } else {
    out.laws.push_back(make_law(
        "g2", predicted_variance_g2(settings.exploration_cov, world.noise.output_variance, samples, d, ds), cov2,
        tolerance));
  }
  out.predicted_bias = predicted_bias_g2(world.noise, world.sensor_slope);
  out.empirical_bias = out.value_gradient - out.mean_g2;
  out.g1_bias_z = max_z(out.mean_g1, out.value_gradient, out.se_g1);
  out.g2_bias_z = max_z(out.empirical_bias, out.predicted_bias, out.se_g2);
  return out;
}

EncodeSearchReport run_encode_search(const Environment& env, const Vector& nominal, const Matrix& exploration_cov,
                                     std::size_t trials, const EncodingSearchConfig& search, std::uint64_t seed,
                                     const std::optional<Vector>& planted) {
  EncodeSearchReport report;
  Rng policy_rng = make_rng(derive_seed(seed, 0));
  const Matrix policies = sample_exploration_policies(nominal, exploration_cov, trials, policy_rng);
  report.batch = TrialBatch{nominal, exploration_cov, {}};
  for (std::size_t i = 0; i < trials; ++i) {
    Rng rng = make_rng(derive_seed(seed, i + 1));
    TrialRecord rec = env.run_trial(policies.row(static_cast<Eigen::Index>(i)).transpose(), rng);
    if (rec.flagged) continue;
    if (!rec.encoded_sensors) throw Error("environment produced a trial without encoded sensors");
    rec.raw_sensors = *rec.encoded_sensors;
    report.batch.trials.push_back(std::move(rec));
  }
  EncodingSearchConfig config = search;
  config.seed = derive_seed(seed, kEncodingSearchStream);
  report.search = search_projection(report.batch, config);
  report.encoded = estimate_gradient_encoded(report.batch, report.search.projection);
  if (planted) {
    report.cosine = std::abs(report.search.projection.basis.col(0).dot(planted->normalized()));
  }
  return report;
}

// ---------------------------------------------------------------------------

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string output_header(const std::string& config_hash, std::uint64_t seed, const std::string& command) {
  return std::string(kHeaderPrefix) + config_hash + " seed=" + std::to_string(seed) + " command=" + command;
}

void check_output_dir(const std::string& dir, const std::string& config_hash) {
  if (!fs::is_directory(dir)) return;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    const auto found = header_hash(first);
    if (found && *found != config_hash) {
      throw Error("output directory " + dir + " holds " + path.filename().string() + " from config hash " + *found +
                  " (this config hashes to " + config_hash + "); use a separate directory");
    }
  }
}

std::vector<std::string> schema_problems(const std::string& dir) {
  std::vector<std::string> problems;
  std::optional<std::string> seen_hash;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::size_t checked = 0;
  for (const auto& path : files) {
    const std::string name = path.filename().string();
    const bool known = known_schemas().count(name) || name == "projection.csv" || name == "config_echo.txt" ||
                       name == "variance_report.txt";
    if (!known) continue;
    ++checked;
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    const auto hash = header_hash(line);
    if (!hash) {
      problems.push_back(name + ":1: missing '" + std::string(kHeaderPrefix) + "...' header");
      continue;
    }
    if (seen_hash && *seen_hash != *hash) problems.push_back(name + ":1: config hash differs from other files");
    seen_hash = *hash;
    if (name == "variance_report.txt") continue;
    if (name == "config_echo.txt") {
      int number = 1;
      while (std::getline(in, line)) {
        ++number;
        if (line.find(" = ") == std::string::npos) problems.push_back(name + ":" + std::to_string(number) + ": expected 'key = value'");
      }
      continue;
    }
    Schema schema;
    std::string header_line;
    std::getline(in, header_line);
    if (name == "projection.csv") {
      const auto cols = split_csv(header_line);
      schema.columns.push_back("raw_index");
      schema.fields.push_back(Field::kInteger);
      for (std::size_t c = 1; c < std::max<std::size_t>(cols.size(), 2); ++c) {
        schema.columns.push_back("b" + std::to_string(c));
        schema.fields.push_back(Field::kReal);
      }
    } else {
      schema = known_schemas().at(name);
    }
    const auto header = split_csv(header_line);
    if (header != schema.columns) {
      problems.push_back(name + ":2: column header does not match the schema");
      continue;
    }
    int number = 2;
    while (std::getline(in, line)) {
      ++number;
      const auto cells = split_csv(line);
      if (cells.size() != schema.columns.size()) {
        problems.push_back(name + ":" + std::to_string(number) + ": expected " + std::to_string(schema.columns.size()) +
                           " fields, got " + std::to_string(cells.size()));
        continue;
      }
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (!field_ok(cells[c], schema.fields[c])) {
          problems.push_back(name + ":" + std::to_string(number) + ": bad value '" + cells[c] + "' in column " +
                             schema.columns[c]);
        }
      }
    }
  }
  if (checked == 0) problems.push_back(dir + ": no sensorgrad output files found");
  return problems;
}

// ---------------------------------------------------------------------------

int run_subcommand(const std::string& name, const CommandOptions& options, std::ostream& out, std::ostream& err) {
  try {
    if (name == "run") return cmd_run(options, out);
    if (name == "variance-check") return cmd_variance_check(options, out);
    if (name == "encode-search") return cmd_encode_search(options, out);
    if (name == "schema-check") return cmd_schema_check(options, out, err);
    err << "unknown subcommand '" << name << "'\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace sensorgrad
