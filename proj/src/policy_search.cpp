#include "sensorgrad/policy_search.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "sensorgrad/stats.hpp"

namespace sensorgrad {

namespace {

constexpr std::uint64_t kEncodingStream = std::uint64_t{1} << 32;

}  // namespace

std::string EstimatorChoice::label() const {
  switch (kind) {
    case EstimatorKind::kIgnoreSensors: return "ignore_sensors";
    case EstimatorKind::kWithSensors: return "with_sensors";
    case EstimatorKind::kWithEncoding: return "with_encoding(" + std::to_string(encoding_dim) + ")";
  }
  return "unknown";
}

EstimatorChoice EstimatorChoice::parse(const std::string& text) {
  if (text == "ignore_sensors") return {EstimatorKind::kIgnoreSensors, 0};
  if (text == "with_sensors") return {EstimatorKind::kWithSensors, 0};
  const std::string prefix = "with_encoding(";
  if (text.rfind(prefix, 0) == 0 && text.size() > prefix.size() + 1 && text.back() == ')') {
    const std::string digits = text.substr(prefix.size(), text.size() - prefix.size() - 1);
    std::size_t used = 0;
    long dim = -1;
    try {
      dim = std::stol(digits, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == digits.size() && dim >= 1) return {EstimatorKind::kWithEncoding, dim};
  }
  throw Error("unknown estimator '" + text + "' (expected ignore_sensors, with_sensors or with_encoding(N))");
}

void SearchConfig::validate(const Environment& env) const {
  const Eigen::Index d = env.policy_dim();
  if (initial_policy.size() != d) throw Error("initial policy has " + std::to_string(initial_policy.size()) +
                                              " entries, environment expects " + std::to_string(d));
  if (exploration_cov.rows() != d || exploration_cov.cols() != d) throw Error("exploration covariance must be d x d");
  psd_factor(exploration_cov);
  if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
  if (eval_trials_per_point < 1) throw Error("eval_trials_per_point must be at least 1");
  Eigen::Index needed = d + 2;
  switch (estimator.kind) {
    case EstimatorKind::kIgnoreSensors: break;
    case EstimatorKind::kWithSensors: needed = d + env.sensor_dim() + 2; break;
    case EstimatorKind::kWithEncoding:
      if (estimator.encoding_dim > env.sensor_dim()) throw Error("encoding dimension exceeds the sensor dimension");
      needed = d + estimator.encoding_dim + 2;
      encoding.validate();
      break;
  }
  if (static_cast<Eigen::Index>(trials_per_step) < needed) {
    throw Error("trials_per_step = " + std::to_string(trials_per_step) + " is below the " + estimator.label() +
                " minimum of " + std::to_string(needed));
  }
}

double SearchConfig::rate_at(std::size_t step) const {
  return decay_rate ? learning_rate / std::sqrt(static_cast<double>(step) + 1.0) : learning_rate;
}

Matrix sample_exploration_policies(const Vector& nominal, const Matrix& exploration_cov, std::size_t count, Rng& rng) {
  const Matrix factor = psd_factor(exploration_cov);
  Matrix out(static_cast<Eigen::Index>(count), nominal.size());
  for (std::size_t i = 0; i < count; ++i) out.row(static_cast<Eigen::Index>(i)) = sample_gaussian(nominal, factor, rng).transpose();
  return out;
}

GradientEstimate estimate_for(const TrialBatch& batch, const SearchConfig& config, std::uint64_t encoding_seed,
                              EncodingOutcome* outcome) {
  switch (config.estimator.kind) {
    case EstimatorKind::kIgnoreSensors: return estimate_g1(batch);
    case EstimatorKind::kWithSensors: return estimate_g2(batch);
    case EstimatorKind::kWithEncoding: {
      TrialBatch features = batch;
      for (std::size_t i = 0; i < features.trials.size(); ++i) {
        auto& trial = features.trials[i];
        if (!trial.encoded_sensors) throw RegressionError("trial " + std::to_string(i) + " has no encoded sensors");
        trial.raw_sensors = *trial.encoded_sensors;
      }
      EncodingSearchConfig search = config.encoding;
      search.target_dim = config.estimator.encoding_dim;
      search.seed = encoding_seed;
      const EncodingSearchResult result = search_projection(features, search);
      if (outcome) *outcome = EncodingOutcome{result.final_cost(), result.projection.basis};
      return estimate_gradient_encoded(features, result.projection);
    }
  }
  throw Error("unknown estimator");
}

StepResult hill_climb_step(const Environment& env, const Vector& nominal, std::size_t step_index,
                           const SearchConfig& config, std::uint64_t step_seed) {
  StepResult result;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const auto a = static_cast<std::uint64_t>(attempt);
    Rng policy_rng = make_rng(derive_seed(step_seed, {a, 0}));
    const Matrix policies = sample_exploration_policies(nominal, config.exploration_cov, config.trials_per_step, policy_rng);
    TrialBatch batch{nominal, config.exploration_cov, {}};
    StepDiagnostics diag;
    diag.attempts = attempt + 1;
    for (std::size_t i = 0; i < config.trials_per_step; ++i) {
      Rng trial_rng = make_rng(derive_seed(step_seed, {a, i + 1}));
      TrialRecord rec = env.run_trial(policies.row(static_cast<Eigen::Index>(i)).transpose(), trial_rng);
      diag.trial_scores.push_back(rec.score);
      if (rec.flagged) {
        ++diag.flagged_trials;
        continue;
      }
      batch.trials.push_back(std::move(rec));
    }
    try {
      const bool encoded = config.estimator.kind == EstimatorKind::kWithEncoding;
      EncodingOutcome outcome;
      const GradientEstimate est =
          estimate_for(batch, config, derive_seed(step_seed, {a, kEncodingStream}), encoded ? &outcome : nullptr);
      diag.gradient = est.gradient;
      if (encoded) {
        diag.loo_cost = outcome.loo_cost;
        diag.projection = std::move(outcome.projection);
      }
      result.diagnostics = std::move(diag);
      break;
    } catch (const RegressionError&) {
      if (attempt == 1) throw;
    }
  }
  const Vector& g = result.diagnostics.gradient;
  const double rate = config.rate_at(step_index);
  if (config.step_rule == StepRule::kFixedRate) {
    result.policy = nominal + rate * g;
  } else {
    const double norm = g.norm();
    result.policy = norm > 0.0 ? Vector(nominal + rate * g / norm) : nominal;
  }
  return result;
}

PolicyEvaluation evaluate_policy(const Environment& env, const Vector& policy, std::size_t trials, std::uint64_t seed) {
  if (trials < 1) throw Error("evaluation needs at least one trial");
  std::vector<double> scores(trials);
  for (std::size_t i = 0; i < trials; ++i) {
    Rng rng = make_rng(derive_seed(seed, i));
    scores[i] = env.run_trial(policy, rng).score;
  }
  const MeanAndError me = mean_and_error(scores);
  return PolicyEvaluation{me.mean, me.standard_error};
}

std::vector<double> LearningCurve::final_values() const {
  std::vector<double> out;
  for (const auto& run : runs) {
    out.push_back(run.completed() && !run.values.empty() ? run.values.back() : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), count));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < count; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

LearningCurve run_learning_curve(const Environment& env, const SearchConfig& config, unsigned threads) {
  config.validate(env);
  LearningCurve curve;
  curve.runs.resize(config.runs);
  parallel_for(config.runs, threads, [&](std::size_t r) {
    RunRecord& run = curve.runs[r];
    const std::uint64_t run_seed = derive_seed(config.seed, r);
    Vector policy = config.initial_policy;
    SearchConfig step_config = config;
    try {
      for (std::size_t s = 0; s < config.steps; ++s) {
        StepResult step = hill_climb_step(env, policy, s, step_config, derive_seed(run_seed, {1, s}));
        if (config.warm_start_encoding && step.diagnostics.projection) {
          step_config.encoding.warm_start = step.diagnostics.projection;
        }
        policy = step.policy;
        run.policies.push_back(policy);
        run.steps.push_back(std::move(step.diagnostics));
        run.values.push_back(evaluate_policy(env, policy, config.eval_trials_per_point, derive_seed(run_seed, {2, s})).mean);
      }
    } catch (const Error& e) {
      run.error = e.what();
    }
  });

  curve.mean.assign(config.steps, 0.0);
  curve.standard_error.assign(config.steps, 0.0);
  for (const auto& run : curve.runs) curve.completed_runs += run.completed() ? 1 : 0;
  for (std::size_t s = 0; s < config.steps; ++s) {
    std::vector<double> values;
    for (const auto& run : curve.runs) {
      if (run.completed()) values.push_back(run.values[s]);
    }
    const MeanAndError me = mean_and_error(values);
    curve.mean[s] = values.empty() ? std::numeric_limits<double>::quiet_NaN() : me.mean;
    curve.standard_error[s] = me.standard_error.value_or(0.0);
  }
  return curve;
}

}  // namespace sensorgrad
