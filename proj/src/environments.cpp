#include "sensorgrad/environments.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace sensorgrad {

void SyntheticWorld::validate() const {
  const Eigen::Index d = policy_dim();
  if (d < 1) throw Error("synthetic world needs at least one policy parameter");
  noise.validate(d);
  if (noise.sensor_dim() != sensor_dim()) throw Error("sensor slope does not match sensor covariance");
  psd_factor(noise.sensor_cov);
}

Vector SyntheticWorld::value_gradient() const {
  return true_gradient + noise.policy_sensor_coupling * sensor_slope;
}

double SyntheticWorld::expected_score(const Vector& policy) const {
  const Vector mean_sensor = noise.policy_sensor_coupling.transpose() * policy + noise.coupling_offset + noise.sensor_mean;
  return policy.dot(true_gradient) + mean_sensor.dot(sensor_slope) + offset;
}

SyntheticSampler::SyntheticSampler(SyntheticWorld world)
    : world_(std::move(world)),
      sensor_factor_(psd_factor(world_.noise.sensor_cov)),
      output_sd_(std::sqrt(world_.noise.output_variance)) {
  world_.validate();
}

TrialRecord SyntheticSampler::trial(const Vector& policy, Rng& rng) const {
  if (policy.size() != world_.policy_dim()) throw Error("policy dimension mismatch");
  const NoiseSpec& n = world_.noise;
  const Vector mean_sensor = n.policy_sensor_coupling.transpose() * policy + n.coupling_offset + n.sensor_mean;
  Vector sensors = sample_gaussian(mean_sensor, sensor_factor_, rng);
  const double w = output_sd_ * standard_normal(rng);
  TrialRecord rec;
  rec.policy = policy;
  rec.score = policy.dot(world_.true_gradient) + sensors.dot(world_.sensor_slope) + world_.offset + w;
  rec.raw_sensors = sensors;
  rec.encoded_sensors = std::move(sensors);
  return rec;
}

TrialRecord synthetic_trial(const SyntheticWorld& world, const Vector& policy, Rng& rng) {
  return SyntheticSampler(world).trial(policy, rng);
}

std::unique_ptr<Environment> SyntheticEnvironment::with_noise_scale(double scale) const {
  SyntheticWorld w = world();
  w.noise.sensor_cov *= scale * scale;
  w.noise.output_variance *= scale * scale;
  return std::make_unique<SyntheticEnvironment>(std::move(w));
}

void CannonWorld::validate() const {
  if (control_noise_cov.rows() != 2 || control_noise_cov.cols() != 2) throw Error("control noise covariance must be 2x2");
  if (sensor_noise_cov.rows() != 2 || sensor_noise_cov.cols() != 2) throw Error("sensor noise covariance must be 2x2");
  psd_factor(control_noise_cov);
  psd_factor(sensor_noise_cov);
  if (!(target_range > 0.0)) throw Error("target range must be positive");
  if (!(gravity > 0.0)) throw Error("gravity must be positive");
}

double CannonWorld::range(double speed, double elevation) const {
  return speed * speed * std::sin(2.0 * elevation) / gravity;
}

double cannon_range(const CannonWorld& world, const Vector& controls) {
  return world.range(controls(0), controls(1));
}

CannonEnvironment::CannonEnvironment(CannonWorld world)
    : world_(std::move(world)),
      control_factor_(psd_factor(world_.control_noise_cov)),
      sensor_factor_(psd_factor(world_.sensor_noise_cov)) {
  world_.validate();
}

TrialRecord CannonEnvironment::run_trial(const Vector& policy, Rng& rng) const {
  if (policy.size() != 2) throw Error("cannon policy must have two entries");
  if (!(policy(0) > 0.0) || !(policy(1) > 0.0 && policy(1) < std::numbers::pi / 2)) {
    throw Error("cannon policy needs a positive speed and an elevation in (0, pi/2)");
  }
  Vector controls = sample_gaussian(policy, control_factor_, rng);
  if (controls(0) <= 0.0) controls(0) = 1e-6;
  const double miss = cannon_range(world_, controls) - world_.target_range;
  Vector sensors = sample_gaussian(controls - policy, sensor_factor_, rng);
  TrialRecord rec;
  rec.policy = policy;
  rec.score = -miss * miss;
  rec.raw_sensors = sensors;
  rec.encoded_sensors = std::move(sensors);
  return rec;
}

std::unique_ptr<Environment> CannonEnvironment::with_noise_scale(double scale) const {
  CannonWorld w = world_;
  w.control_noise_cov *= scale * scale;
  return std::make_unique<CannonEnvironment>(std::move(w));
}

TrialRecord cannon_trial(const CannonWorld& world, const Vector& policy, Rng& rng) {
  return CannonEnvironment(world).run_trial(policy, rng);
}

double cannon_true_value(const CannonWorld& world, const Vector& policy, std::size_t samples, std::uint64_t seed) {
  if (samples < 1) throw Error("cannon_true_value needs at least one sample");
  const CannonEnvironment env(world);
  Rng rng = make_rng(seed);
  double sum = 0.0;
  for (std::size_t i = 0; i < samples; ++i) sum += env.run_trial(policy, rng).score;
  return sum / static_cast<double>(samples);
}

namespace {

std::string exact_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_values(const Vector& v, std::ostream& out) {
  for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << exact_real(v(i));
}

Vector read_values(std::istringstream& in, int line) {
  std::vector<double> values;
  std::string token;
  while (in >> token && token != "|") {
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (end != token.c_str() + token.size()) {
      throw Error("trial record line " + std::to_string(line) + ": bad number '" + token + "'");
    }
    values.push_back(v);
  }
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

void write_trial_records(const std::vector<TrialRecord>& trials, std::ostream& out) {
  for (const auto& t : trials) {
    out << "trial " << (t.flagged ? 1 : 0) << ' ' << exact_real(t.score) << " |";
    write_values(t.policy, out);
    out << " |";
    write_values(t.raw_sensors, out);
    out << " |";
    if (t.encoded_sensors) {
      write_values(*t.encoded_sensors, out);
    } else {
      out << " -";
    }
    out << '\n';
  }
}

std::vector<TrialRecord> read_trial_records(std::istream& in) {
  std::vector<TrialRecord> out;
  std::string text;
  int line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    std::istringstream fields(text);
    std::string tag, bar;
    int flagged = 0;
    TrialRecord rec;
    if (!(fields >> tag >> flagged >> rec.score >> bar) || tag != "trial" || bar != "|" || (flagged != 0 && flagged != 1)) {
      throw Error("trial record line " + std::to_string(line) + ": malformed header");
    }
    rec.flagged = flagged == 1;
    rec.policy = read_values(fields, line);
    rec.raw_sensors = read_values(fields, line);
    std::string rest;
    std::getline(fields, rest);
    if (rest.find_first_not_of(' ') != std::string::npos && rest.substr(rest.find_first_not_of(' ')) == "-") {
      rec.encoded_sensors.reset();
    } else {
      std::istringstream encoded(rest);
      rec.encoded_sensors = read_values(encoded, line);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace sensorgrad
