#pragma once

// JSON form of every configuration struct. Readers are strict: unknown keys
// are rejected so a typo cannot silently fall back to a default.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcla/decoder.hpp"
#include "tcla/synthgen.hpp"
#include "tcla/training.hpp"

namespace tcla {

using ojson = nlohmann::ordered_json;

/// One generated session. Index 0 is the source; its drift fields must be
/// zero (only its session_seed is used).
struct SessionSpec {
  DriftConfig drift;
  std::optional<int> num_trials;  // overrides generator.trials_per_session
};

struct EvalConfig {
  int runs_per_session = 5;
  int bootstrap_resamples = 10000;
  double alpha = 0.05;
  std::uint64_t seed = 23;
};

struct ExperimentConfig {
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;  // mixed into every per-run seed
  GenConfig generator;
  std::vector<SessionSpec> sessions;
  SplitSpec source_split{{8, 1, 1}, true, 101};
  SplitSpec target_split{{1, 1, 3}, true, 103};
  ModelConfig model;
  StageOneConfig stage1;
  StageTwoConfig stage2;
  DecoderConfig decoder;
  EvalConfig eval;

  void validate() const;
  int num_sessions() const { return static_cast<int>(sessions.size()); }
  GenConfig generator_for(int session) const;
};

ojson to_json(const Architecture& a);
ojson to_json(const ModelConfig& m);
ojson to_json(const RegConfig& r);
ojson to_json(const MMDConfig& m);
ojson to_json(const DropoutConfig& d);
ojson to_json(const StageOneConfig& c);
ojson to_json(const StageTwoConfig& c);
ojson to_json(const DecoderConfig& c);
ojson to_json(const GenConfig& g);
ojson to_json(const SessionSpec& s);
ojson to_json(const SplitSpec& s);
ojson to_json(const EvalConfig& e);
ojson to_json(const ExperimentConfig& c);

/// Parses and validates; `config`-coded validation errors name the offending key.
ExperimentConfig experiment_config_from_json(const ojson& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

std::string to_string(Granularity g);
std::string to_string(DecoderKind k);

}  // namespace tcla
