#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tcla/dataio.hpp"

namespace tcla {

/// Center-out task and population encoding parameters shared by all sessions.
struct GenConfig {
  int num_directions = 8;
  int trials_per_session = 200;
  int num_channels = 96;
  int num_bins = 60;
  double bin_width_ms = 5.0;
  double baseline_log_rate = 2.995732273553991;  // log(20 spikes/s)
  double tuning_depth = 1.5;
  int reach_duration_bins = 50;
  double kinematic_peak_speed = 0.5;  // position units per second
  std::uint64_t master_seed = 1;

  void validate() const;
};

/// Parametric cross-session nonstationarity applied on top of the base tuning.
struct DriftConfig {
  double permute_fraction = 0.0;
  double gain_log_std = 0.0;
  double tuning_rotation_rad = 0.0;
  double dropped_unit_fraction = 0.0;
  std::uint64_t session_seed = 0;

  static DriftConfig identity(std::uint64_t session_seed) {
    DriftConfig d;
    d.session_seed = session_seed;
    return d;
  }
  void validate(int num_channels) const;
};

/// Per recorded channel: which base unit it observes, that unit's preferred
/// direction after rotation, and its multiplicative log-gain.
struct SessionTuning {
  std::vector<int> unit_of_channel;
  Eigen::VectorXd preferred_direction;
  Eigen::VectorXd log_gain;

  int num_channels() const { return static_cast<int>(unit_of_channel.size()); }
};

/// round(fraction * C) with ties rounded half up.
int dropped_unit_count(double fraction, int num_channels);

/// Normalized speed profile in [0, 1]: a raised-cosine bell over the reach, zero after it.
double speed_profile(int bin, int reach_duration_bins);

/// Reach angle of direction d in 1..D, counter-clockwise from +x.
double direction_angle(int direction, int num_directions);

SessionTuning base_tuning(const GenConfig& gen);
SessionTuning session_tuning(const GenConfig& gen, const DriftConfig& drift);

/// Expected spike count per bin for channel rows [C, T] given a trial's direction.
Eigen::MatrixXd expected_counts(const GenConfig& gen, const SessionTuning& tuning, int direction);

PositionMatrix reach_trajectory(const GenConfig& gen, int direction);

SessionDataset generate_session(const GenConfig& gen, const DriftConfig& drift,
                                const std::string& session_id = "session00");

/// Session 0 is the source and always uses the identity drift (keeping only
/// drifts[0].session_seed); later sessions apply their own drift.
std::vector<SessionDataset> make_multisession(const GenConfig& gen, const std::vector<DriftConfig>& drifts);

std::string session_name(int index);

}  // namespace tcla
