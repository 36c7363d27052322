#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tcla/common.hpp"

namespace tcla {

/// One recording session: n trials of binned spikes [C, T], 2-D position [2, T]
/// and a direction label in 1..D.
struct SessionDataset {
  std::string session_id;
  double bin_width_ms = 5.0;
  int num_directions = 0;
  std::vector<CountMatrix> spikes;       // n x [C, T]
  std::vector<PositionMatrix> position;  // n x [2, T]
  std::vector<int> labels;               // n, values in 1..D

  int num_trials() const { return static_cast<int>(labels.size()); }
  int num_channels() const { return spikes.empty() ? 0 : static_cast<int>(spikes.front().rows()); }
  int num_bins() const { return spikes.empty() ? 0 : static_cast<int>(spikes.front().cols()); }

  /// Forward-difference velocity in position units per second; the last bin
  /// repeats the previous velocity.
  Eigen::Matrix2Xd velocity(int trial) const;

  /// Trials (in the given order) as a new dataset with the same metadata.
  SessionDataset subset(std::span<const int> trial_indices) const;

  /// Throws a validation error naming the first violated invariant.
  void validate() const;

  /// Per-channel mean spike count per bin over all trials and bins.
  Eigen::VectorXd channel_mean_counts() const;

  bool operator==(const SessionDataset&) const = default;
};

Eigen::Matrix2Xd velocity_from_position(const PositionMatrix& position, double bin_width_ms);

std::string sha256_hex(std::string_view bytes);

/// Writes manifest.json, spikes.bin, kinematics.bin and labels.bin under
/// `directory`. Returns the SHA-256 of spikes|kinematics|labels payloads.
std::string write_bundle(const SessionDataset& dataset, const std::filesystem::path& directory);
SessionDataset read_bundle(const std::filesystem::path& directory);

/// Event times in ms per channel -> counts [C, T] over half-open bins
/// [t0 + t*w, t0 + (t+1)*w).
CountMatrix bin_spikes(const std::vector<std::vector<double>>& event_times, double t0_ms,
                       int num_bins, double bin_width_ms);

struct SplitSpec {
  std::vector<int> ratios{8, 1, 1};  // integer weights for train/val/test
  bool stratify_by_label = true;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<int> train, val, test;
};

struct DatasetSplit {
  SessionDataset train, val, test;
};

/// Largest-remainder apportionment of `total` items over integer weights.
std::vector<int> apportion(int total, std::span<const int> weights);

SplitIndices split_indices(const SessionDataset& dataset, const SplitSpec& spec);
DatasetSplit split_session(const SessionDataset& dataset, const SplitSpec& spec);

}  // namespace tcla
