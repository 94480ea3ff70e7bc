#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sensorgrad/config.hpp"
#include "sensorgrad/dynamics_pipeline.hpp"
#include "sensorgrad/environments.hpp"
#include "sensorgrad/policy_search.hpp"
#include "sensorgrad/sensor_encoding.hpp"

namespace sensorgrad {

enum ExitCode : int { kExitOk = 0, kExitThreshold = 1, kExitConfig = 2, kExitRuntime = 3 };

/// Sub-seeds of the root seed, one per consumer.
enum SeedStream : std::uint64_t {
  kSeedCurves = 1,
  kSeedPretraining = 2,
  kSeedVariance = 3,
  kSeedEncoding = 4,
};

struct CommandOptions {
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
};

/// Runs one subcommand (run, variance-check, encode-search, schema-check).
/// Progress goes to `out`, problems to `err`; the return value is an ExitCode.
int run_subcommand(const std::string& name, const CommandOptions& options, std::ostream& out, std::ostream& err);

// ---------------------------------------------------------------------------
// Configuration readers.

SyntheticWorld read_synthetic_world(const Config& config);
CannonWorld read_cannon_world(const Config& config);
ArmWorld read_arm_world(const Config& config);

/// Fits or loads the dart dynamics model described by `pretraining.*`.
std::shared_ptr<const DynamicsModel> prepare_dynamics_model(const Config& config, const ArmWorld& world,
                                                           const Vector& nominal_policy, const Matrix& exploration_cov,
                                                           std::uint64_t root_seed);

/// Environment selected by `environment`.
std::unique_ptr<Environment> read_environment(const Config& config, std::uint64_t root_seed);

/// `search.*` and `encoding.*`; the estimator is set per curve.
SearchConfig read_search_config(const Config& config, const Environment& env, std::uint64_t root_seed);
std::vector<EstimatorChoice> read_estimators(const Config& config);

// ---------------------------------------------------------------------------
// Monte Carlo check of the variance and bias laws.

struct VarianceCheckSettings {
  std::size_t replications = 20000;
  std::size_t batch_size = 12;
  Matrix exploration_cov;
  Vector nominal_policy;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct LawCheck {
  std::string name;
  Matrix predicted;
  Matrix empirical;
  /// Relative Frobenius error, or the empirical norm when the prediction is zero.
  double error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return error <= tolerance; }
};

struct VarianceCheckResult {
  Vector value_gradient;
  Vector mean_g1, se_g1;
  Vector mean_g2, se_g2;
  std::vector<LawCheck> laws;
  bool correlated = false;
  Vector predicted_bias;
  /// ∇V − E[g2]: how far g2 falls short of the value gradient.
  Vector empirical_bias;
  /// Largest |mean − target| / SE over components.
  double g1_bias_z = 0.0;
  double g2_bias_z = 0.0;
  bool passed(double z_limit = 3.0) const;
};

VarianceCheckResult run_variance_check(const SyntheticWorld& world, const VarianceCheckSettings& settings,
                                       double tolerance, double correlated_tolerance);

// ---------------------------------------------------------------------------
// Single-batch projection search.

struct EncodeSearchReport {
  TrialBatch batch;  // raw_sensors hold the search input
  EncodingSearchResult search;
  GradientEstimate encoded;
  std::optional<double> cosine;
};

/// Draws one batch of `trials` at the nominal policy and searches a projection
/// of its encoded sensors. `planted` is compared with the first basis column.
EncodeSearchReport run_encode_search(const Environment& env, const Vector& nominal, const Matrix& exploration_cov,
                                     std::size_t trials, const EncodingSearchConfig& search, std::uint64_t seed,
                                     const std::optional<Vector>& planted);

// ---------------------------------------------------------------------------
// Output files.

/// First line of every output file.
std::string output_header(const std::string& config_hash, std::uint64_t seed, const std::string& command);

/// Throws if `dir` holds an output file stamped with another config hash.
void check_output_dir(const std::string& dir, const std::string& config_hash);

/// Validates every known output file in `dir`; returns the problems found.
std::vector<std::string> schema_problems(const std::string& dir);

std::string format_real(double v);

}  // namespace sensorgrad
