#pragma once

// Orchestration of the full protocol over an output directory:
//
//   data/<session>/                    generated bundles
//   checkpoints/stage1/                source pretraining
//   checkpoints/tcla/<session>/run<r>/ stage-two alignment per target and run
//   checkpoints/ldnsws/<session>/run<r>/ within-session baseline
//   reports/cells/<method>/<session>/run<r>.json
//   reports/report.json, report.csv, latent_projection.csv
//
// Every artifact directory holds a digest.txt keyed on the configuration that
// produced it and on the digests of its inputs. A step whose digest matches is
// skipped, so reruns reuse what is still valid and recompute the rest.

#include <filesystem>
#include <string>
#include <vector>

#include "tcla/config_json.hpp"
#include "tcla/evaluate.hpp"

namespace tcla {

inline const std::string kMethodTcla = "tcla";
inline const std::string kMethodBaseline = "ldnsws";

struct StepEvent {
  std::string step;  // e.g. "align:session01:run0"
  bool executed = false;
};

struct StepLog {
  std::vector<StepEvent> events;
  int executed() const;
  int skipped() const;
};

/// Which pieces a pipeline invocation touches.
struct Selection {
  std::vector<std::string> targets;  // empty = all target sessions
  bool with_baseline = false;
};

class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg);

  const ExperimentConfig& config() const { return cfg_; }
  const StepLog& log() const { return log_; }

  std::filesystem::path data_dir(const std::string& session) const;
  std::filesystem::path stage1_dir() const;
  std::filesystem::path checkpoint_dir(const std::string& method, const std::string& session, int run) const;
  std::filesystem::path cell_path(const std::string& method, const std::string& session, int run) const;
  std::filesystem::path reports_dir() const;

  std::vector<std::string> session_ids() const;
  std::vector<std::string> target_ids(const Selection& sel) const;

  /// Per-run copies of the stage configs with run-specific seeds.
  StageTwoConfig stage2_for_run(int run) const;
  ModelConfig baseline_model_for_run(int run) const;
  StageOneConfig baseline_stage1_for_run(int run) const;
  DecoderConfig decoder_for_run(int run) const;

  void generate();
  void pretrain();
  void align(const Selection& sel);
  void baseline(const Selection& sel);
  void decode(const Selection& sel);
  ojson report(const Selection& sel);

  SessionDataset load_session(const std::string& session) const;
  DatasetSplit split(const std::string& session) const;

 private:
  std::string data_digest(int index) const;
  std::string stage1_digest() const;
  std::string checkpoint_digest(const std::string& method, const std::string& session, int run) const;
  std::string cell_digest(const std::string& method, const std::string& session, int run) const;
  int session_index(const std::string& session) const;
  void record(std::string step, bool executed);

  ExperimentConfig cfg_;
  StepLog log_;
};

struct ExperimentResult {
  ojson report;
  StepLog log;
};

/// generate -> pretrain -> align + baseline -> decode -> report.
ExperimentResult run_full_experiment(const ExperimentConfig& cfg);

/// Stored digest for an artifact directory, empty when absent.
std::string read_digest(const std::filesystem::path& dir);
void write_digest(const std::filesystem::path& dir, const std::string& digest);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace tcla
