#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tcla/config_json.hpp"
#include "tcla/decoder.hpp"
#include "tcla/stats.hpp"
#include "tcla/training.hpp"

namespace tcla {

inline constexpr std::array<const char*, 4> kVariables{"pos_x", "pos_y", "vel_x", "vel_y"};

/// One (session, method, run) evaluation.
struct CellResult {
  std::string session;
  std::string method;
  int run = 0;
  std::array<double, 4> r2{};  // order of kVariables
  std::optional<double> val_mmd_init, val_mmd_final;

  double velocity_mean() const { return 0.5 * (r2[2] + r2[3]); }
};

ojson to_json(const CellResult& c);
CellResult cell_from_json(const ojson& j);

/// Validation MMD at target-layer init and at the selected (best) epoch of
/// the last stage-two run recorded in `history`.
std::pair<std::optional<double>, std::optional<double>> alignment_progress(const std::vector<EpochRecord>& history);

/// Stacks kinematics of all trials; rows are trials' time bins, columns x/y.
std::vector<Eigen::Matrix2Xd> positions_of(const SessionDataset& data);
std::vector<Eigen::Matrix2Xd> velocities_of(const SessionDataset& data);

/// Trains separate position and velocity decoders on `train` rates and scores
/// per-coordinate R^2 over the concatenated `test` bins.
std::array<double, 4> decode_and_score(const Checkpoint& ckpt, const std::string& session_id,
                                       const SessionDataset& train, const SessionDataset& test,
                                       const DecoderConfig& cfg);

/// Aggregates cells into the report document: per-session means over runs,
/// bootstrap summaries across sessions and paired tests between methods.
ojson build_report(const std::vector<CellResult>& cells, const std::vector<std::string>& methods,
                   const EvalConfig& eval, const ojson& metadata);

/// Rows: session,method,variable,run,r2
std::string report_csv(const std::vector<CellResult>& cells);

/// Runs `runs` decoder seeds per target session against one checkpoint and
/// reports them under `method`.
ojson evaluate_pipeline(const Checkpoint& ckpt, const std::map<std::string, DatasetSplit>& targets,
                        const DecoderConfig& decoder, const EvalConfig& eval, const std::string& method = "tcla");

struct ProjectionRow {
  std::string session_id;
  int trial = 0;
  int direction = 0;
  double pc1 = 0.0, pc2 = 0.0;
};

struct ProjectionInput {
  const Checkpoint* ckpt;
  const SessionDataset* data;
};

/// Time-averaged latents of every trial, projected on the top two principal
/// components of the pooled set.
std::vector<ProjectionRow> export_latent_projection(const std::vector<ProjectionInput>& inputs);
std::string projection_csv(const std::vector<ProjectionRow>& rows);

}  // namespace tcla
