#pragma once

#include <iosfwd>
#include <memory>
#include <numbers>
#include <string>

#include "sensorgrad/gradient_estimators.hpp"
#include "sensorgrad/random.hpp"

namespace sensorgrad {

/// Anything that turns a policy into a scored trial. Implementations are
/// immutable after construction and safe to share across threads; each call
/// draws only from the generator it is handed.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::string name() const = 0;
  virtual Eigen::Index policy_dim() const = 0;
  /// Length of TrialRecord::encoded_sensors produced by run_trial.
  virtual Eigen::Index sensor_dim() const = 0;
  virtual TrialRecord run_trial(const Vector& policy, Rng& rng) const = 0;
  /// Copy whose noise standard deviations are multiplied by `scale`.
  virtual std::unique_ptr<Environment> with_noise_scale(double scale) const = 0;
};

// ---------------------------------------------------------------------------
// Linear-Gaussian world: f = πᵀA_π + sᵀA_s + b + w.

struct SyntheticWorld {
  Vector true_gradient;  // A_π
  Vector sensor_slope;   // A_s
  double offset = 0.0;   // b
  NoiseSpec noise;

  Eigen::Index policy_dim() const { return true_gradient.size(); }
  Eigen::Index sensor_dim() const { return sensor_slope.size(); }
  void validate() const;
  /// Gradient of E[f | π0], i.e. A_π + A_{π,s} A_s.
  Vector value_gradient() const;
  /// E[f | π] for fixed π.
  double expected_score(const Vector& policy) const;
};

/// Precomputed sampling factors for a SyntheticWorld.
class SyntheticSampler {
 public:
  explicit SyntheticSampler(SyntheticWorld world);
  const SyntheticWorld& world() const { return world_; }
  TrialRecord trial(const Vector& policy, Rng& rng) const;

 private:
  SyntheticWorld world_;
  Matrix sensor_factor_;
  double output_sd_;
};

TrialRecord synthetic_trial(const SyntheticWorld& world, const Vector& policy, Rng& rng);

class SyntheticEnvironment final : public Environment {
 public:
  explicit SyntheticEnvironment(SyntheticWorld world) : sampler_(std::move(world)) {}
  std::string name() const override { return "synthetic"; }
  Eigen::Index policy_dim() const override { return sampler_.world().policy_dim(); }
  Eigen::Index sensor_dim() const override { return sampler_.world().sensor_dim(); }
  TrialRecord run_trial(const Vector& policy, Rng& rng) const override { return sampler_.trial(policy, rng); }
  std::unique_ptr<Environment> with_noise_scale(double scale) const override;
  const SyntheticWorld& world() const { return sampler_.world(); }

 private:
  SyntheticSampler sampler_;
};

// ---------------------------------------------------------------------------
// Toy cannon: policy (muzzle speed, elevation), flat ground, reward −d².

struct CannonWorld {
  Matrix control_noise_cov = Matrix::Zero(2, 2);  // Σ_u, (m/s, rad)
  Matrix sensor_noise_cov = Matrix::Zero(2, 2);   // Σ_s
  double target_range = 400.0 / 9.8;
  double gravity = 9.8;

  void validate() const;
  double range(double speed, double elevation) const;
};

/// Landing distance of the flat-ground shot (speed on policy(0), elevation on policy(1)).
double cannon_range(const CannonWorld& world, const Vector& controls);

TrialRecord cannon_trial(const CannonWorld& world, const Vector& policy, Rng& rng);

/// Monte Carlo mean score at `policy` using `samples` draws from a generator
/// seeded with `seed`. Equal seeds give common random numbers across policies.
double cannon_true_value(const CannonWorld& world, const Vector& policy, std::size_t samples, std::uint64_t seed);

class CannonEnvironment final : public Environment {
 public:
  explicit CannonEnvironment(CannonWorld world);
  std::string name() const override { return "cannon"; }
  Eigen::Index policy_dim() const override { return 2; }
  Eigen::Index sensor_dim() const override { return 2; }
  TrialRecord run_trial(const Vector& policy, Rng& rng) const override;
  std::unique_ptr<Environment> with_noise_scale(double scale) const override;
  const CannonWorld& world() const { return world_; }

 private:
  CannonWorld world_;
  Matrix control_factor_;
  Matrix sensor_factor_;
};

/// Line-oriented trial records, one trial per line:
///   trial <flagged 0|1> <score> | <policy...> | <raw sensors...> | <encoded sensors...|->
/// Reals are written with 17 significant digits so a round trip is exact.
void write_trial_records(const std::vector<TrialRecord>& trials, std::ostream& out);
std::vector<TrialRecord> read_trial_records(std::istream& in);

/// Degrees-squared to radians-squared conversion for angle variances.
inline constexpr double kDegreeSquared = (std::numbers::pi / 180.0) * (std::numbers::pi / 180.0);

}  // namespace sensorgrad
