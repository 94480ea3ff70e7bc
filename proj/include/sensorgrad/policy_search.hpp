#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sensorgrad/environments.hpp"
#include "sensorgrad/sensor_encoding.hpp"

namespace sensorgrad {

enum class EstimatorKind { kIgnoreSensors, kWithSensors, kWithEncoding };

struct EstimatorChoice {
  EstimatorKind kind = EstimatorKind::kIgnoreSensors;
  /// Encoded dimension for kWithEncoding.
  Eigen::Index encoding_dim = 1;

  std::string label() const;
  static EstimatorChoice parse(const std::string& text);
};

enum class StepRule { kFixedRate, kNormalized };

struct SearchConfig {
  std::size_t trials_per_step = 10;
  Matrix exploration_cov;
  Vector initial_policy;
  StepRule step_rule = StepRule::kNormalized;
  double learning_rate = 0.5;
  /// Scale the rate by 1/√(step + 1).
  bool decay_rate = true;
  std::size_t steps = 25;
  std::size_t runs = 10;
  EstimatorChoice estimator;
  EncodingSearchConfig encoding;
  /// Start each step's projection search from the previous step's result.
  bool warm_start_encoding = false;
  std::size_t eval_trials_per_point = 20;
  std::uint64_t seed = 1;

  /// Checks shapes against the environment and the estimator's sample needs.
  void validate(const Environment& env) const;
  double rate_at(std::size_t step) const;
};

/// Rows i.i.d. Normal(π0, Σ_e).
Matrix sample_exploration_policies(const Vector& nominal, const Matrix& exploration_cov, std::size_t count, Rng& rng);

struct StepDiagnostics {
  Vector gradient;
  std::optional<double> loo_cost;
  /// Projection chosen by the encoding search.
  std::optional<Matrix> projection;
  std::vector<double> trial_scores;
  std::size_t flagged_trials = 0;
  /// 1, or 2 when the first attempt's estimate failed.
  int attempts = 1;
};

struct StepResult {
  Vector policy;
  StepDiagnostics diagnostics;
};

struct EncodingOutcome {
  double loo_cost = 0.0;
  Matrix projection;
};

/// Gradient estimate of one batch per the configured estimator. For
/// kWithEncoding the encoded sensors are treated as the raw input of the
/// projection search, seeded with `encoding_seed`; the search result is
/// reported through `outcome` when given.
GradientEstimate estimate_for(const TrialBatch& batch, const SearchConfig& config, std::uint64_t encoding_seed,
                              EncodingOutcome* outcome = nullptr);

/// One hill-climbing step from `nominal`. All randomness derives from
/// `step_seed`: attempt a samples its exploration policies from
/// derive_seed(step_seed, {a, 0}), runs trial i on derive_seed(step_seed,
/// {a, i + 1}) and seeds the encoding search with derive_seed(step_seed, {a, 2^32}).
StepResult hill_climb_step(const Environment& env, const Vector& nominal, std::size_t step_index,
                           const SearchConfig& config, std::uint64_t step_seed);

struct PolicyEvaluation {
  double mean = 0.0;
  std::optional<double> standard_error;
};

/// Mean (and standard error) of `trials` fresh scores; trial i uses
/// derive_seed(seed, i). Flagged trials count with their penalty score.
PolicyEvaluation evaluate_policy(const Environment& env, const Vector& policy, std::size_t trials, std::uint64_t seed);

struct RunRecord {
  std::vector<double> values;  // value after each completed step
  std::vector<StepDiagnostics> steps;
  std::vector<Vector> policies;
  std::optional<std::string> error;
  bool completed() const { return !error; }
};

struct LearningCurve {
  std::vector<double> mean;
  std::vector<double> standard_error;
  std::vector<RunRecord> runs;
  std::size_t completed_runs = 0;

  /// Final-step values of completed runs in run order, NaN for failed runs.
  std::vector<double> final_values() const;
};

/// Seeds: run r uses derive_seed(config.seed, r); its step s uses
/// derive_seed(run_seed, {1, s}) and the evaluation after step s uses
/// derive_seed(run_seed, {2, s}). Runs execute on up to `threads` workers;
/// the result is identical for any thread count.
LearningCurve run_learning_curve(const Environment& env, const SearchConfig& config, unsigned threads = 1);

/// Runs fn(i) for i in [0, count) across up to `threads` workers.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace sensorgrad
