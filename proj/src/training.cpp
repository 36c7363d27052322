#include "tcla/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include "tcla/config_json.hpp"
#include "tcla/optim.hpp"

namespace tcla {

namespace {

constexpr double kDivergenceFactor = 1e3;

Mat<double> to_double(const Mat<Real>& m) { return m.cast<double>(); }

std::vector<int> epoch_order(int n, std::uint64_t seed, int epoch) {
  auto engine = make_engine({seed, 0xe90cULL, static_cast<std::uint64_t>(epoch)});
  return random_permutation(n, engine);
}

/// Round-robin over directions so every batch sees every present direction.
std::vector<int> stratified_epoch_order(const SessionDataset& data, std::uint64_t seed, int epoch) {
  std::vector<std::vector<int>> by_dir(static_cast<std::size_t>(data.num_directions));
  for (int i = 0; i < data.num_trials(); ++i) by_dir[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)] - 1)].push_back(i);
  for (std::size_t d = 0; d < by_dir.size(); ++d) {
    auto engine = make_engine({seed, 0x57a7ULL, static_cast<std::uint64_t>(epoch), d});
    const auto perm = random_permutation(static_cast<int>(by_dir[d].size()), engine);
    std::vector<int> shuffled;
    for (int p : perm) shuffled.push_back(by_dir[d][static_cast<std::size_t>(p)]);
    by_dir[d] = std::move(shuffled);
  }
  std::vector<int> order;
  for (std::size_t round = 0; order.size() < static_cast<std::size_t>(data.num_trials()); ++round)
    for (const auto& trials : by_dir)
      if (round < trials.size()) order.push_back(trials[round]);
  return order;
}

std::uint64_t mask_counter(long long step, int slot) {
  return (static_cast<std::uint64_t>(step) << 16) ^ static_cast<std::uint64_t>(slot);
}

void check_divergence(double loss, double initial, const std::string& stage, int epoch,
                      const std::shared_ptr<const Checkpoint>& best) {
  if (!std::isfinite(loss) || std::abs(loss) > kDivergenceFactor * std::max(std::abs(initial), 1e-12))
    throw DivergenceError(stage + " diverged at epoch " + std::to_string(epoch) + " (loss " + std::to_string(loss) +
                              ", initial " + std::to_string(initial) + ")",
                          best);
}

void require_finite(const Checkpoint& ckpt) {
  bool ok = true;
  ckpt.shared.for_each_tensor([&](const std::string&, const auto& t) { ok = ok && t.allFinite(); });
  for (const auto& [id, layers] : ckpt.sessions)
    layers.for_each_tensor([&](const std::string&, const auto& t) { ok = ok && t.allFinite(); });
  if (!ok) throw validation_error("non_finite", "checkpoint contains non-finite parameters");
}

}  // namespace

void StageOneConfig::validate(int num_bins) const {
  reg.validate(num_bins);
  dropout.validate();
  if (!(learning_rate > 0.0)) throw validation_error("config", "stage1 learning_rate must be > 0");
  if (batch_size < 1 || max_epochs < 1 || early_stop_patience < 1)
    throw validation_error("config", "stage1 batch_size, max_epochs and early_stop_patience must be >= 1");
  if (early_stop_patience > max_epochs) throw validation_error("config", "stage1 patience must be <= max_epochs");
}

void StageTwoConfig::validate() const {
  mmd.validate();
  dropout.validate();
  if (!(learning_rate > 0.0)) throw validation_error("config", "stage2 learning_rate must be > 0");
  if (batch_size < 1 || max_epochs < 1 || early_stop_patience < 1 || source_latent_cache_size < 1)
    throw validation_error("config", "stage2 sizes must be >= 1");
  if (early_stop_patience > max_epochs) throw validation_error("config", "stage2 patience must be <= max_epochs");
}

const Layers& Checkpoint::layers(const std::string& session_id) const {
  const auto it = sessions.find(session_id);
  if (it == sessions.end()) throw validation_error("unknown_session", "checkpoint has no session '" + session_id + "'");
  return it->second;
}

std::string shared_tensor_bytes(const Shared& shared) {
  std::string bytes;
  shared.for_each_tensor([&](const std::string&, const auto& t) {
    bytes.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(Real));
  });
  return bytes;
}

LossBreakdown stage_one_loss(const Shared& shared, const Layers& layers, const SessionDataset& data,
                             const RegConfig& reg) {
  LossBreakdown out;
  const int n = data.num_trials();
  if (n == 0) throw validation_error("dataset", "loss over an empty dataset");
  for (int i = 0; i < n; ++i) {
    const auto fwd = forward(data.spikes[static_cast<std::size_t>(i)], layers, shared);
    out.nll += static_cast<double>(poisson_nll(fwd.rates, data.spikes[static_cast<std::size_t>(i)]));
    out.reg += static_cast<double>(latent_reg(fwd.latent, reg));
  }
  out.nll /= n;
  out.reg /= n;
  out.total = out.nll + out.reg;
  return out;
}

ConditionSets<double> latents_by_condition(const Shared& shared, const Layers& layers, const SessionDataset& data) {
  ConditionSets<double> sets(static_cast<std::size_t>(data.num_directions));
  for (int i = 0; i < data.num_trials(); ++i) {
    const auto& x = data.spikes[static_cast<std::size_t>(i)];
    sets[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)] - 1)].push_back(to_double(encode(x, layers, shared)));
  }
  return sets;
}

ConditionSets<double> source_latent_cache(const Checkpoint& ckpt, const SessionDataset& source_train, int cache_size) {
  const auto pick = stride_subsample(source_train.num_trials(), cache_size);
  return latents_by_condition(ckpt.shared, ckpt.layers(ckpt.source_session), source_train.subset(pick));
}

LossBreakdown stage_two_loss(const Shared& shared, const Layers& layers, const SessionDataset& data,
                             const ConditionSets<double>& source_cache, const MMDConfig& mmd) {
  LossBreakdown out;
  const int n = data.num_trials();
  if (n == 0) throw validation_error("dataset", "loss over an empty dataset");
  ConditionSets<double> target(source_cache.size());
  for (int i = 0; i < n; ++i) {
    const auto& x = data.spikes[static_cast<std::size_t>(i)];
    const auto fwd = forward(x, layers, shared);
    out.nll += static_cast<double>(poisson_nll(fwd.rates, x));
    if (mmd.beta3 > 0.0) target[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)] - 1)].push_back(to_double(fwd.latent));
  }
  out.nll /= n;
  out.total = out.nll;
  if (mmd.beta3 > 0.0) {
    out.mmd = conditional_mmd(source_cache, target, mmd).value;
    out.total += mmd.beta3 * *out.mmd;
  }
  return out;
}

Checkpoint pretrain_source(const SessionDataset& source_train, const SessionDataset& source_val,
                           const ModelConfig& model, const StageOneConfig& cfg) {
  source_train.validate();
  source_val.validate();
  if (source_train.num_trials() == 0 || source_val.num_trials() == 0)
    throw validation_error("dataset", "stage1 needs nonempty train and validation sets");
  cfg.validate(source_train.num_bins());
  const Eigen::VectorXd mean_counts = source_train.channel_mean_counts();

  Checkpoint ckpt;
  ckpt.stage = "stage1";
  ckpt.source_session = source_train.session_id;
  {
    auto [shared, layers] =
        init_model<Real>(model.arch, source_train.num_channels(), model.seed, source_train.session_id, &mean_counts);
    ckpt.shared = std::move(shared);
    ckpt.sessions.emplace(source_train.session_id, std::move(layers));
  }
  ckpt.config = {{"model", to_json(model)}, {"stage1", to_json(cfg)}};
  Layers& layers = ckpt.sessions.at(source_train.session_id);

  std::vector<ParamView<Real>> params;
  collect_params<Real>(ckpt.shared, params);
  collect_params<Real>(layers, params);
  Adam<Real> adam(params, cfg.learning_rate);
  Shared grad_shared = ckpt.shared.zeros_like();
  Layers grad_layers = layers.zeros_like();
  std::vector<ParamView<Real>> grads;
  collect_params<Real>(grad_shared, grads);
  collect_params<Real>(grad_layers, grads);

  auto record = [&](int epoch, double train_loss) {
    const LossBreakdown val = stage_one_loss(ckpt.shared, layers, source_val, cfg.reg);
    ckpt.history.push_back({"stage1", epoch, train_loss, val.total, val.nll, val.reg, std::nullopt});
    return val.total;
  };
  const double initial_train = stage_one_loss(ckpt.shared, layers, source_train, cfg.reg).total;
  double best_val = record(0, initial_train);
  auto best = std::make_shared<const Checkpoint>(ckpt);
  int since_best = 0;
  long long step = 0;
  const int n = source_train.num_trials();
  const int T = source_train.num_bins();

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto order = epoch_order(n, cfg.seed, epoch);
    double epoch_loss = 0.0;
    for (int start = 0; start < n; start += cfg.batch_size, ++step) {
      const int stop = std::min(n, start + cfg.batch_size);
      const auto inv_batch = static_cast<Real>(1.0 / (stop - start));
      grad_shared.for_each_tensor([](const std::string&, auto& t) { t.setZero(); });
      grad_layers.for_each_tensor([](const std::string&, auto& t) { t.setZero(); });
      double batch_loss = 0.0;
      for (int k = start; k < stop; ++k) {
        const auto& x = source_train.spikes[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
        const DropoutMask mask = coordinated_dropout_mask(T, cfg.dropout, mask_counter(step, k - start));
        ForwardTrace<Real> trace;
        const auto fwd = forward(x, layers, ckpt.shared, &mask, &trace);
        batch_loss += static_cast<double>(poisson_nll(fwd.rates, x, &mask.masked)) +
                      static_cast<double>(latent_reg(fwd.latent, cfg.reg));
        const Mat<Real> d_rates = poisson_nll_grad(fwd.rates, x, &mask.masked) * inv_batch;
        const Mat<Real> d_latent = latent_reg_grad(fwd.latent, cfg.reg) * inv_batch;
        backward(trace, d_rates, &d_latent, layers, ckpt.shared, GradSinks<Real>{&grad_shared, &grad_layers});
      }
      batch_loss /= (stop - start);
      check_divergence(batch_loss, initial_train, "stage1", epoch, best);
      adam.step(grads);
      epoch_loss += batch_loss * (stop - start);
    }
    const double val = record(epoch, epoch_loss / n);
    check_divergence(val, ckpt.history.front().val_loss, "stage1", epoch, best);
    if (val < best_val) {
      best_val = val;
      best = std::make_shared<const Checkpoint>(ckpt);
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;
    }
  }
  Checkpoint out = *best;
  out.history = ckpt.history;
  return out;
}

Checkpoint align_target(const Checkpoint& ckpt, const SessionDataset& target_train, const SessionDataset& target_val,
                        const SessionDataset& source_train, const StageTwoConfig& cfg) {
  target_train.validate();
  target_val.validate();
  cfg.validate();
  if (target_train.num_trials() == 0 || target_val.num_trials() == 0)
    throw validation_error("dataset", "stage2 needs nonempty train and validation sets");
  if (ckpt.sessions.count(ckpt.source_session) == 0)
    throw validation_error("checkpoint", "checkpoint lacks its source session layers");
  if (ckpt.sessions.count(target_train.session_id) != 0)
    throw validation_error("checkpoint", "session '" + target_train.session_id + "' already present in checkpoint");
  if (target_train.num_directions != source_train.num_directions)
    throw validation_error("dataset", "source and target disagree on the number of directions");
  require_finite(ckpt);

  const bool align = cfg.mmd.beta3 > 0.0;
  const std::string frozen_before = shared_tensor_bytes(ckpt.shared);
  const Eigen::VectorXd mean_counts = target_train.channel_mean_counts();

  Checkpoint work = ckpt;
  work.stage = "stage2";
  work.config["stage2"] = to_json(cfg);
  work.config["stage2"]["target_session"] = target_train.session_id;
  work.sessions.emplace(target_train.session_id,
                        add_session_layers(work.shared, target_train.session_id, target_train.num_channels(),
                                           derive_seed({cfg.seed, 0x1a7eULL}), &mean_counts));
  Layers& layers = work.sessions.at(target_train.session_id);
  const Shared& shared = work.shared;

  ConditionSets<double> cache;
  if (align) cache = source_latent_cache(ckpt, source_train, cfg.source_latent_cache_size);

  std::vector<ParamView<Real>> params;
  collect_params<Real>(layers, params);
  Adam<Real> adam(params, cfg.learning_rate);
  Layers grad_layers = layers.zeros_like();
  std::vector<ParamView<Real>> grads;
  collect_params<Real>(grad_layers, grads);

  const auto first_stage2 = static_cast<std::ptrdiff_t>(work.history.size());
  auto record = [&](int epoch, double train_loss) {
    const LossBreakdown val = stage_two_loss(shared, layers, target_val, cache, cfg.mmd);
    work.history.push_back({"stage2", epoch, train_loss, val.total, val.nll, 0.0, val.mmd});
    return val.total;
  };
  const double initial_train = stage_two_loss(shared, layers, target_train, cache, cfg.mmd).total;
  double best_val = record(0, initial_train);
  auto best = std::make_shared<const Checkpoint>(work);
  int since_best = 0;
  long long step = 0;
  const int n = target_train.num_trials();
  const int T = target_train.num_bins();
  const auto D = static_cast<std::size_t>(target_train.num_directions);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto order = stratified_epoch_order(target_train, cfg.seed, epoch);
    double epoch_loss = 0.0;
    for (int start = 0; start < n; start += cfg.batch_size, ++step) {
      const int stop = std::min(n, start + cfg.batch_size);
      const int B = stop - start;
      const auto inv_batch = static_cast<Real>(1.0 / B);
      grad_layers.for_each_tensor([](const std::string&, auto& t) { t.setZero(); });
      const GradSinks<Real> sinks{nullptr, &grad_layers};
      double nll = 0.0;
      for (int k = start; k < stop; ++k) {
        const auto& x = target_train.spikes[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
        const DropoutMask mask = coordinated_dropout_mask(T, cfg.dropout, mask_counter(step, k - start));
        ForwardTrace<Real> trace;
        const auto fwd = forward(x, layers, shared, &mask, &trace);
        nll += static_cast<double>(poisson_nll(fwd.rates, x, &mask.masked));
        const Mat<Real> d_rates = poisson_nll_grad(fwd.rates, x, &mask.masked) * inv_batch;
        backward(trace, d_rates, static_cast<const Mat<Real>*>(nullptr), layers, shared, sinks);
      }
      double batch_loss = nll / B;
      if (align) {
        // Unmasked latents for the alignment term, matching how the cache was built.
        std::vector<ForwardTrace<Real>> traces(static_cast<std::size_t>(B));
        ConditionSets<double> target(D);
        std::vector<std::pair<std::size_t, std::size_t>> slot(static_cast<std::size_t>(B));
        for (int k = start; k < stop; ++k) {
          const int i = order[static_cast<std::size_t>(k)];
          const auto d = static_cast<std::size_t>(target_train.labels[static_cast<std::size_t>(i)] - 1);
          const Mat<Real> z = encode(target_train.spikes[static_cast<std::size_t>(i)], layers, shared,
                                     static_cast<const DropoutMask*>(nullptr), &traces[static_cast<std::size_t>(k - start)]);
          slot[static_cast<std::size_t>(k - start)] = {d, target[d].size()};
          target[d].push_back(to_double(z));
        }
        const auto mmd = conditional_mmd(cache, target, cfg.mmd, MMDGrad::Target);
        batch_loss += cfg.mmd.beta3 * mmd.value;
        for (int k = 0; k < B; ++k) {
          const auto [d, j] = slot[static_cast<std::size_t>(k)];
          const Mat<Real> d_latent = (cfg.mmd.beta3 * mmd.grad_target[d][j]).cast<Real>();
          backward_encoder(traces[static_cast<std::size_t>(k)], d_latent, layers, shared, sinks);
        }
      }
      check_divergence(batch_loss, initial_train, "stage2", epoch, best);
      adam.step(grads);
      epoch_loss += batch_loss * B;
    }
    const double val = record(epoch, epoch_loss / n);
    check_divergence(val, work.history[static_cast<std::size_t>(first_stage2)].val_loss, "stage2", epoch, best);
    if (val < best_val) {
      best_val = val;
      best = std::make_shared<const Checkpoint>(work);
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;
    }
  }

  Checkpoint out = *best;
  out.history = work.history;
  if (shared_tensor_bytes(out.shared) != frozen_before)
    throw Error(ErrorKind::Internal, "frozen_mutation", "shared autoencoder tensors changed during stage2");
  return out;
}

std::vector<Inference> infer_rates(const Checkpoint& ckpt, const SessionDataset& dataset, const std::string& session_id) {
  const Layers& layers = ckpt.layers(session_id);
  std::vector<Inference> out;
  out.reserve(static_cast<std::size_t>(dataset.num_trials()));
  for (const auto& x : dataset.spikes) {
    auto fwd = forward(x, layers, ckpt.shared);
    out.push_back({std::move(fwd.latent), std::move(fwd.rates)});
  }
  return out;
}

}  // namespace tcla
