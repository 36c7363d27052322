#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcla/dataio.hpp"
#include "tcla/model.hpp"
#include "tcla/objectives.hpp"

namespace tcla {

/// Training runs in single precision; checkpoints store the same 32-bit values.
using Real = float;
using Shared = SharedAutoencoder<Real>;
using Layers = SessionLayers<Real>;

struct ModelConfig {
  Architecture arch;
  std::uint64_t seed = 7;
};

struct StageOneConfig {
  RegConfig reg;
  DropoutConfig dropout;
  double learning_rate = 1e-3;
  int batch_size = 32;
  int max_epochs = 500;
  int early_stop_patience = 25;
  std::uint64_t seed = 11;

  void validate(int num_bins) const;
};

struct StageTwoConfig {
  MMDConfig mmd;
  DropoutConfig dropout;
  double learning_rate = 5e-4;
  int batch_size = 32;
  int max_epochs = 500;
  int early_stop_patience = 25;
  int source_latent_cache_size = 400;
  std::uint64_t seed = 13;

  void validate() const;
};

struct EpochRecord {
  std::string stage;  // "stage1" or "stage2"
  int epoch = 0;      // 0 = evaluation at initialization
  double train_loss = 0.0;
  double val_loss = 0.0;
  double nll = 0.0;  // validation components
  double reg = 0.0;
  std::optional<double> mmd;

  bool operator==(const EpochRecord&) const = default;
};

struct Checkpoint {
  std::string stage;  // "stage1", "stage2"
  std::string source_session;
  Shared shared;
  std::map<std::string, Layers> sessions;
  std::vector<EpochRecord> history;
  nlohmann::ordered_json config;

  const Layers& layers(const std::string& session_id) const;
};

/// Carries the best finite checkpoint seen before the loss blew up.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& message, std::shared_ptr<const Checkpoint> last_good)
      : Error(ErrorKind::Divergence, "divergence", message), last_good_(std::move(last_good)) {}
  const Checkpoint* last_good() const { return last_good_.get(); }

 private:
  std::shared_ptr<const Checkpoint> last_good_;
};

struct LossBreakdown {
  double total = 0.0;
  double nll = 0.0;
  double reg = 0.0;
  std::optional<double> mmd;
};

/// Mean over trials of unmasked Poisson NLL plus latent_reg.
LossBreakdown stage_one_loss(const Shared& shared, const Layers& layers, const SessionDataset& data,
                             const RegConfig& reg);

/// Latents of every trial grouped by direction (index = label - 1), in double.
ConditionSets<double> latents_by_condition(const Shared& shared, const Layers& layers, const SessionDataset& data);

/// Source-side latents for the alignment loss: up to `cache_size` source
/// trials, stride-selected, encoded once without dropout.
ConditionSets<double> source_latent_cache(const Checkpoint& ckpt, const SessionDataset& source_train, int cache_size);

/// Mean unmasked NLL plus beta3 * conditional MMD against the source cache.
LossBreakdown stage_two_loss(const Shared& shared, const Layers& layers, const SessionDataset& data,
                             const ConditionSets<double>& source_cache, const MMDConfig& mmd);

/// Stage One: joint training of the shared module and the source session layers.
Checkpoint pretrain_source(const SessionDataset& source_train, const SessionDataset& source_val,
                           const ModelConfig& model, const StageOneConfig& cfg);

/// Stage Two: fresh target layers trained against the frozen shared module.
Checkpoint align_target(const Checkpoint& ckpt, const SessionDataset& target_train, const SessionDataset& target_val,
                        const SessionDataset& source_train, const StageTwoConfig& cfg);

struct Inference {
  Mat<Real> latent;
  Mat<Real> rates;
};

std::vector<Inference> infer_rates(const Checkpoint& ckpt, const SessionDataset& dataset, const std::string& session_id);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& directory);
Checkpoint load_checkpoint(const std::filesystem::path& directory);

/// Byte image of every shared tensor, in visit order.
std::string shared_tensor_bytes(const Shared& shared);

}  // namespace tcla
