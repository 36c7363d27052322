#include "tcla/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace tcla {

namespace {

constexpr std::uint64_t kTuningStream = 0x7475ULL;
constexpr std::uint64_t kDriftStream = 0xd71fULL;
constexpr std::uint64_t kTrialStream = 0x7419ULL;

void require(bool ok, const char* what) {
  if (!ok) throw validation_error("config", std::string("invalid generator config: ") + what);
}

}  // namespace

void GenConfig::validate() const {
  require(num_directions >= 2, "num_directions >= 2");
  require(trials_per_session >= num_directions, "trials_per_session >= num_directions");
  require(num_channels >= 1, "num_channels >= 1");
  require(num_bins >= 2, "num_bins >= 2");
  require(bin_width_ms > 0.0 && std::isfinite(bin_width_ms), "bin_width_ms > 0");
  require(std::isfinite(baseline_log_rate), "baseline_log_rate finite");
  require(tuning_depth >= 0.0 && std::isfinite(tuning_depth), "tuning_depth >= 0");
  require(reach_duration_bins >= 2 && reach_duration_bins <= num_bins, "2 <= reach_duration_bins <= num_bins");
  require(std::isfinite(kinematic_peak_speed) && kinematic_peak_speed > 0.0, "kinematic_peak_speed > 0");
}

void DriftConfig::validate(int num_channels) const {
  require(std::isfinite(permute_fraction) && permute_fraction >= 0.0 && permute_fraction <= 1.0,
          "permute_fraction in [0, 1]");
  require(std::isfinite(gain_log_std) && gain_log_std >= 0.0, "gain_log_std >= 0");
  require(std::isfinite(tuning_rotation_rad), "tuning_rotation_rad finite");
  require(std::isfinite(dropped_unit_fraction) && dropped_unit_fraction >= 0.0 && dropped_unit_fraction < 1.0,
          "dropped_unit_fraction in [0, 1)");
  require(num_channels - dropped_unit_count(dropped_unit_fraction, num_channels) >= 1,
          "dropped_unit_fraction leaves at least one unit");
}

int dropped_unit_count(double fraction, int num_channels) {
  return static_cast<int>(std::floor(fraction * num_channels + 0.5));
}

double speed_profile(int bin, int reach_duration_bins) {
  if (bin < 0 || bin >= reach_duration_bins) return 0.0;
  return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * bin / reach_duration_bins));
}

double direction_angle(int direction, int num_directions) {
  return 2.0 * std::numbers::pi * (direction - 1) / num_directions;
}

SessionTuning base_tuning(const GenConfig& gen) {
  gen.validate();
  auto engine = make_engine({gen.master_seed, kTuningStream});
  SessionTuning tuning;
  const int C = gen.num_channels;
  tuning.unit_of_channel.resize(static_cast<std::size_t>(C));
  tuning.preferred_direction.resize(C);
  tuning.log_gain = Eigen::VectorXd::Zero(C);
  for (int c = 0; c < C; ++c) {
    tuning.unit_of_channel[static_cast<std::size_t>(c)] = c;
    tuning.preferred_direction(c) = 2.0 * std::numbers::pi * uniform01(engine);
  }
  return tuning;
}

SessionTuning session_tuning(const GenConfig& gen, const DriftConfig& drift) {
  drift.validate(gen.num_channels);
  const SessionTuning base = base_tuning(gen);
  const int C = gen.num_channels;
  auto engine = make_engine({gen.master_seed, drift.session_seed, kDriftStream});

  // Unit-level drift: rotation and gain act on the units themselves.
  Eigen::VectorXd unit_pd = base.preferred_direction.array() + drift.tuning_rotation_rad;
  Eigen::VectorXd unit_gain(C);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int u = 0; u < C; ++u) unit_gain(u) = drift.gain_log_std * normal(engine);

  // Channel-level drift: a random subset of channels swaps units cyclically.
  std::vector<int> unit_of_channel = base.unit_of_channel;
  const int num_permuted = dropped_unit_count(drift.permute_fraction, C);
  if (num_permuted >= 2) {
    const auto pick = random_permutation(C, engine);
    std::vector<int> chosen(pick.begin(), pick.begin() + num_permuted);
    std::sort(chosen.begin(), chosen.end());
    std::vector<int> units;
    for (int c : chosen) units.push_back(unit_of_channel[static_cast<std::size_t>(c)]);
    std::rotate(units.begin(), units.begin() + 1, units.end());
    for (std::size_t k = 0; k < chosen.size(); ++k) unit_of_channel[static_cast<std::size_t>(chosen[k])] = units[k];
  }

  const int num_dropped = dropped_unit_count(drift.dropped_unit_fraction, C);
  std::vector<bool> keep(static_cast<std::size_t>(C), true);
  if (num_dropped > 0) {
    const auto pick = random_permutation(C, engine);
    for (int k = 0; k < num_dropped; ++k) keep[static_cast<std::size_t>(pick[static_cast<std::size_t>(k)])] = false;
  }

  SessionTuning out;
  for (int c = 0; c < C; ++c)
    if (keep[static_cast<std::size_t>(c)]) out.unit_of_channel.push_back(unit_of_channel[static_cast<std::size_t>(c)]);
  const int Cm = out.num_channels();
  out.preferred_direction.resize(Cm);
  out.log_gain.resize(Cm);
  for (int c = 0; c < Cm; ++c) {
    const int u = out.unit_of_channel[static_cast<std::size_t>(c)];
    out.preferred_direction(c) = unit_pd(u);
    out.log_gain(c) = unit_gain(u);
  }
  return out;
}

Eigen::MatrixXd expected_counts(const GenConfig& gen, const SessionTuning& tuning, int direction) {
  const double theta = direction_angle(direction, gen.num_directions);
  const double dt = gen.bin_width_ms / 1000.0;
  const int Cm = tuning.num_channels();
  Eigen::MatrixXd lambda(Cm, gen.num_bins);
  for (int t = 0; t < gen.num_bins; ++t) {
    const double speed = speed_profile(t, gen.reach_duration_bins);
    for (int c = 0; c < Cm; ++c) {
      const double log_rate = gen.baseline_log_rate + tuning.log_gain(c) +
                              gen.tuning_depth * speed * std::cos(theta - tuning.preferred_direction(c));
      lambda(c, t) = std::exp(log_rate) * dt;
    }
  }
  return lambda;
}

PositionMatrix reach_trajectory(const GenConfig& gen, int direction) {
  const double theta = direction_angle(direction, gen.num_directions);
  const double dt = gen.bin_width_ms / 1000.0;
  const double ux = std::cos(theta), uy = std::sin(theta);
  PositionMatrix pos(2, gen.num_bins);
  double x = 0.0, y = 0.0;
  for (int t = 0; t < gen.num_bins; ++t) {
    pos(0, t) = static_cast<float>(x);
    pos(1, t) = static_cast<float>(y);
    const double step = gen.kinematic_peak_speed * speed_profile(t, gen.reach_duration_bins) * dt;
    x += step * ux;
    y += step * uy;
  }
  return pos;
}

SessionDataset generate_session(const GenConfig& gen, const DriftConfig& drift, const std::string& session_id) {
  gen.validate();
  const SessionTuning tuning = session_tuning(gen, drift);
  SessionDataset ds;
  ds.session_id = session_id;
  ds.bin_width_ms = gen.bin_width_ms;
  ds.num_directions = gen.num_directions;

  std::vector<Eigen::MatrixXd> lambda_by_dir;
  std::vector<PositionMatrix> reach_by_dir;
  for (int d = 1; d <= gen.num_directions; ++d) {
    lambda_by_dir.push_back(expected_counts(gen, tuning, d));
    reach_by_dir.push_back(reach_trajectory(gen, d));
  }

  const int n = gen.trials_per_session;
  ds.spikes.resize(static_cast<std::size_t>(n));
  ds.position.resize(static_cast<std::size_t>(n));
  ds.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int label = i % gen.num_directions + 1;
    const auto& lambda = lambda_by_dir[static_cast<std::size_t>(label - 1)];
    auto engine = make_engine({gen.master_seed, drift.session_seed, kTrialStream, static_cast<std::uint64_t>(i)});
    CountMatrix x(lambda.rows(), lambda.cols());
    for (Eigen::Index t = 0; t < lambda.cols(); ++t)
      for (Eigen::Index c = 0; c < lambda.rows(); ++c) {
        std::poisson_distribution<int> poisson(lambda(c, t));
        x(c, t) = poisson(engine);
      }
    ds.spikes[static_cast<std::size_t>(i)] = std::move(x);
    ds.position[static_cast<std::size_t>(i)] = reach_by_dir[static_cast<std::size_t>(label - 1)];
    ds.labels[static_cast<std::size_t>(i)] = label;
  }
  return ds;
}

std::string session_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "session%02d", index);
  return buf;
}

std::vector<SessionDataset> make_multisession(const GenConfig& gen, const std::vector<DriftConfig>& drifts) {
  if (drifts.empty()) throw validation_error("config", "make_multisession needs at least one session");
  std::vector<SessionDataset> out;
  out.reserve(drifts.size());
  for (std::size_t s = 0; s < drifts.size(); ++s) {
    const DriftConfig drift = s == 0 ? DriftConfig::identity(drifts[0].session_seed) : drifts[s];
    out.push_back(generate_session(gen, drift, session_name(static_cast<int>(s))));
  }
  return out;
}

}  // namespace tcla
