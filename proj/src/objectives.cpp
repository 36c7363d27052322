#include "tcla/objectives.hpp"

namespace tcla {

namespace {

bool zero_or_within(double v, double lo, double hi) { return v == 0.0 || (v >= lo && v <= hi); }

}  // namespace

void RegConfig::validate(int num_bins) const {
  if (!zero_or_within(beta1, 1e-4, 1e-3)) throw validation_error("config", "beta1 must be 0 or in [1e-4, 1e-3]");
  if (!zero_or_within(beta2, 0.01, 0.2)) throw validation_error("config", "beta2 must be 0 or in [0.01, 0.2]");
  if (smooth_window < 1 || smooth_window >= num_bins)
    throw validation_error("config", "smooth_window must satisfy 1 <= W < T");
}

void MMDConfig::validate() const {
  if (!zero_or_within(beta3, 1.0, 10.0)) throw validation_error("config", "beta3 must be 0 or in [1, 10]");
  if (num_bandwidths < 1) throw validation_error("config", "num_bandwidths must be >= 1");
  if (!(bandwidth_scale > 1.0)) throw validation_error("config", "bandwidth_scale must be > 1");
  if (max_samples_per_condition < 2) throw validation_error("config", "max_samples_per_condition must be >= 2");
  if (!(sigma_floor > 0.0)) throw validation_error("config", "sigma_floor must be > 0");
}

void DropoutConfig::validate() const {
  if (!(mask_rate >= 0.0 && mask_rate < 1.0)) throw validation_error("config", "mask_rate must be in [0, 1)");
}

DropoutMask coordinated_dropout_mask(int num_bins, const DropoutConfig& cfg, std::uint64_t step_counter) {
  cfg.validate();
  DropoutMask mask;
  if (cfg.mask_rate == 0.0) {
    mask.active = false;
    mask.masked = BinMask::Constant(num_bins, true);
    return mask;
  }
  mask.active = true;
  mask.input_scale = 1.0 / (1.0 - cfg.mask_rate);
  mask.masked.resize(num_bins);
  auto engine = make_engine({cfg.seed_stream, 0xcd0ULL, step_counter});
  for (int t = 0; t < num_bins; ++t) mask.masked(t) = uniform01(engine) < cfg.mask_rate;
  return mask;
}

std::vector<int> stride_subsample(int total, int max_samples) {
  std::vector<int> idx;
  if (total <= max_samples) {
    idx.resize(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) idx[static_cast<std::size_t>(i)] = i;
    return idx;
  }
  idx.resize(static_cast<std::size_t>(max_samples));
  for (int k = 0; k < max_samples; ++k)
    idx[static_cast<std::size_t>(k)] = static_cast<int>(static_cast<long long>(k) * total / max_samples);
  return idx;
}

}  // namespace tcla
