#pragma once

// Loss terms for both training stages, templated on the scalar type so the
// gradient tests can run in double while training runs in float.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tcla/common.hpp"

namespace tcla {

using BinMask = Eigen::Array<bool, Eigen::Dynamic, 1>;

struct RegConfig {
  double beta1 = 5e-4;
  double beta2 = 0.05;
  int smooth_window = 5;

  /// Ranges [1e-4, 1e-3] and [0.01, 0.2]; zero disables a term.
  void validate(int num_bins) const;
};

enum class Granularity { PerTimeBin, PerTrialFlat };

struct MMDConfig {
  double beta3 = 5.0;
  int num_bandwidths = 5;
  double bandwidth_scale = 2.0;
  Granularity granularity = Granularity::PerTimeBin;
  int max_samples_per_condition = 512;
  double sigma_floor = 1e-8;

  /// beta3 in [1, 10] (zero allowed as the ablation), J >= 1, K > 1.
  void validate() const;
};

struct DropoutConfig {
  double mask_rate = 0.25;
  std::uint64_t seed_stream = 0;

  void validate() const;
};

/// Coordinated-dropout mask for one trial. When inactive (rate 0) the input is
/// left untouched and every bin contributes to the loss.
struct DropoutMask {
  bool active = false;
  BinMask masked;            // true = bin zeroed on input and scored by the loss
  double input_scale = 1.0;  // applied to unmasked input bins, 1 / (1 - rate)

  int num_masked() const { return static_cast<int>(masked.count()); }
};

DropoutMask coordinated_dropout_mask(int num_bins, const DropoutConfig& cfg, std::uint64_t step_counter);

// ---------------------------------------------------------------------------
// Poisson negative log-likelihood, sum over included (c, t) of r - x ln r.

template <typename Scalar>
void check_nll_inputs(const Mat<Scalar>& rates, const CountMatrix& spikes, const BinMask* loss_mask) {
  if (rates.rows() != spikes.rows() || rates.cols() != spikes.cols())
    throw validation_error("shape", "poisson_nll: rates and spikes shapes differ");
  if (loss_mask && loss_mask->size() != rates.cols())
    throw validation_error("shape", "poisson_nll: loss mask length differs from T");
  if (!(rates.array() > Scalar(0)).all()) throw validation_error("domain", "poisson_nll: rates must be > 0");
}

template <typename Scalar>
Scalar poisson_nll(const Mat<Scalar>& rates, const CountMatrix& spikes, const BinMask* loss_mask = nullptr) {
  check_nll_inputs(rates, spikes, loss_mask);
  Scalar total(0);
  for (Eigen::Index t = 0; t < rates.cols(); ++t) {
    if (loss_mask && !(*loss_mask)(t)) continue;
    for (Eigen::Index c = 0; c < rates.rows(); ++c) {
      const Scalar r = rates(c, t);
      total += r - Scalar(spikes(c, t)) * std::log(r);
    }
  }
  return total;
}

/// d(poisson_nll)/d(rates).
template <typename Scalar>
Mat<Scalar> poisson_nll_grad(const Mat<Scalar>& rates, const CountMatrix& spikes, const BinMask* loss_mask = nullptr) {
  check_nll_inputs(rates, spikes, loss_mask);
  Mat<Scalar> g = Scalar(1) - spikes.cast<Scalar>().array() / rates.array();
  if (loss_mask)
    for (Eigen::Index t = 0; t < g.cols(); ++t)
      if (!(*loss_mask)(t)) g.col(t).setZero();
  return g;
}

// ---------------------------------------------------------------------------
// Latent regularizer: beta1 ||z||_F^2 + beta2 sum_w sum_t ||z(t) - z(t-w)||^2 / (1 + w).

template <typename Scalar>
Scalar latent_reg(const Mat<Scalar>& z, const RegConfig& cfg) {
  const Eigen::Index T = z.cols();
  if (cfg.smooth_window < 1 || cfg.smooth_window >= T)
    throw validation_error("shape", "latent_reg: smooth_window must satisfy 1 <= W < T");
  Scalar smooth(0);
  for (int w = 1; w <= cfg.smooth_window; ++w) {
    const Scalar diff = (z.rightCols(T - w) - z.leftCols(T - w)).squaredNorm();
    smooth += diff / Scalar(1 + w);
  }
  return Scalar(cfg.beta1) * z.squaredNorm() + Scalar(cfg.beta2) * smooth;
}

template <typename Scalar>
Mat<Scalar> latent_reg_grad(const Mat<Scalar>& z, const RegConfig& cfg) {
  const Eigen::Index T = z.cols();
  if (cfg.smooth_window < 1 || cfg.smooth_window >= T)
    throw validation_error("shape", "latent_reg: smooth_window must satisfy 1 <= W < T");
  Mat<Scalar> g = Scalar(2 * cfg.beta1) * z;
  for (int w = 1; w <= cfg.smooth_window; ++w) {
    const Mat<Scalar> diff = (z.rightCols(T - w) - z.leftCols(T - w)) * Scalar(2 * cfg.beta2 / (1 + w));
    g.rightCols(T - w) += diff;
    g.leftCols(T - w) -= diff;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Multi-kernel MMD. Sample sets are matrices with one sample per column.

/// Mean squared distance over ordered distinct-index pairs of the pooled set.
template <typename Scalar>
Scalar mean_pairwise_sq_distance(const Mat<Scalar>& pooled) {
  const Eigen::Index N = pooled.cols();
  if (N < 2) throw validation_error("mmd", "bandwidths need at least 2 samples");
  // sum_{a,b} ||p_a - p_b||^2 = 2 N sum_a ||p_a - mean||^2
  const Vec<Scalar> mean = pooled.rowwise().mean();
  const Scalar spread = (pooled.colwise() - mean).squaredNorm();
  return Scalar(2) * Scalar(N) * spread / (Scalar(N) * Scalar(N - 1));
}

inline double bandwidth_multiplier(int j, int J, double K) { return std::pow(K, j - J / 2); }

/// sigma_j = K^(j - floor(J/2)) * m for j = 0..J-1, floored at sigma_floor.
template <typename Scalar>
std::vector<Scalar> mmd_bandwidths(const Mat<Scalar>& samples, int J, double K, double sigma_floor) {
  if (J < 1) throw validation_error("mmd", "num_bandwidths must be >= 1");
  const Scalar m = mean_pairwise_sq_distance(samples);
  std::vector<Scalar> sigmas(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) {
    const Scalar s = Scalar(bandwidth_multiplier(j, J, K)) * m;
    sigmas[static_cast<std::size_t>(j)] = s < Scalar(sigma_floor) ? Scalar(sigma_floor) : s;
  }
  return sigmas;
}

/// (1 / |A||B|) sum_j sum_a sum_b exp(-||a - b||^2 / sigma_j)
template <typename Scalar>
Scalar gaussian_multikernel(const Mat<Scalar>& A, const Mat<Scalar>& B, const std::vector<Scalar>& sigmas) {
  if (A.cols() == 0 || B.cols() == 0) throw validation_error("mmd", "kernel sets must be nonempty");
  if (A.rows() != B.rows()) throw validation_error("shape", "kernel sets differ in dimension");
  if (sigmas.empty()) throw validation_error("mmd", "need at least one bandwidth");
  for (Scalar s : sigmas)
    if (!(s > Scalar(0))) throw validation_error("mmd", "bandwidths must be > 0");
  Scalar total(0);
  for (Eigen::Index a = 0; a < A.cols(); ++a)
    for (Eigen::Index b = 0; b < B.cols(); ++b) {
      const Scalar d2 = (A.col(a) - B.col(b)).squaredNorm();
      for (Scalar s : sigmas) total += std::exp(-d2 / s);
    }
  return total / (Scalar(A.cols()) * Scalar(B.cols()));
}

template <typename Scalar>
struct MMDPairResult {
  Scalar value{0};
  std::vector<Scalar> sigmas;
  Mat<Scalar> grad_source;  // same shape as the source samples when requested
  Mat<Scalar> grad_target;
};

/// k(S,S) + k(T,T) - 2 k(S,T) with bandwidths from the pooled samples. The
/// gradient, when requested, includes the bandwidths' dependence on the samples.
template <typename Scalar>
MMDPairResult<Scalar> mmd_pair(const Mat<Scalar>& S, const Mat<Scalar>& T, int J, double K, double sigma_floor,
                               bool with_grad) {
  if (S.cols() == 0 || T.cols() == 0) throw validation_error("mmd", "kernel sets must be nonempty");
  if (S.rows() != T.rows()) throw validation_error("shape", "kernel sets differ in dimension");
  const Eigen::Index ns = S.cols(), nt = T.cols(), N = ns + nt;
  Mat<Scalar> P(S.rows(), N);
  P << S, T;
  // Everything below is translation invariant; centering keeps the Gram-matrix
  // distances from cancelling catastrophically.
  P.colwise() -= Vec<Scalar>(P.rowwise().mean());

  MMDPairResult<Scalar> out;
  const Scalar mean_d2 = mean_pairwise_sq_distance(P);
  out.sigmas = mmd_bandwidths(P, J, K, sigma_floor);

  using Arr = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Vec<Scalar> sq = P.colwise().squaredNorm().transpose();
  Arr D = ((-Scalar(2) * (P.transpose() * P)).colwise() + sq).rowwise() + sq.transpose();
  D = D.max(Scalar(0));
  D.matrix().diagonal().setZero();

  Arr w(N, N);
  w.topLeftCorner(ns, ns).setConstant(Scalar(1) / (Scalar(ns) * Scalar(ns)));
  w.bottomRightCorner(nt, nt).setConstant(Scalar(1) / (Scalar(nt) * Scalar(nt)));
  w.topRightCorner(ns, nt).setConstant(-Scalar(1) / (Scalar(ns) * Scalar(nt)));
  w.bottomLeftCorner(nt, ns).setConstant(-Scalar(1) / (Scalar(ns) * Scalar(nt)));

  Arr G;  // dL/dD with bandwidths held fixed
  if (with_grad) G = Arr::Zero(N, N);
  Scalar dL_dm(0);
  // Largest bandwidth first: when consecutive bandwidths differ by exactly
  // K = 2, exp(-D / (s/2)) is the square of exp(-D / s).
  Arr kern;
  for (int j = J - 1; j >= 0; --j) {
    const Scalar sigma = out.sigmas[static_cast<std::size_t>(j)];
    const bool chained = j < J - 1 && K == 2.0 && out.sigmas[static_cast<std::size_t>(j + 1)] == Scalar(2) * sigma;
    if (chained)
      kern = kern.square();
    else
      kern = (-D / sigma).exp();
    const Arr wk = w * kern;
    out.value += wk.sum();
    if (with_grad) {
      G -= wk / sigma;
      const double mult = bandwidth_multiplier(j, J, K);
      const bool floored = Scalar(mult) * mean_d2 < Scalar(sigma_floor);
      if (!floored) dL_dm += Scalar(mult) * (wk * D).sum() / (sigma * sigma);
    }
  }
  if (with_grad) {
    const Vec<Scalar> rowsum = G.rowwise().sum().matrix();
    Mat<Scalar> grad = Scalar(4) * (P * rowsum.asDiagonal() - P * G.matrix());
    const Vec<Scalar> total = P.rowwise().sum();
    grad += dL_dm * Scalar(4) / (Scalar(N) * Scalar(N - 1)) * ((Scalar(N) * P).colwise() - total);
    out.grad_source = grad.leftCols(ns);
    out.grad_target = grad.rightCols(nt);
  }
  return out;
}

/// Where each MMD sample came from: trial index within the condition's set and
/// time bin (-1 for whole-trial samples).
struct SampleOrigin {
  int trial;
  int bin;
};

template <typename Scalar>
struct ConditionSamples {
  Mat<Scalar> samples;
  std::vector<SampleOrigin> origin;
};

/// Deterministic stride subsample indices floor(k N / M), k = 0..M-1.
std::vector<int> stride_subsample(int total, int max_samples);

template <typename Scalar>
ConditionSamples<Scalar> condition_samples(const std::vector<Mat<Scalar>>& trajectories, Granularity granularity,
                                           int max_samples) {
  std::vector<SampleOrigin> all;
  Eigen::Index dim = 0;
  if (!trajectories.empty()) {
    const Eigen::Index q = trajectories.front().rows();
    const Eigen::Index T = trajectories.front().cols();
    dim = granularity == Granularity::PerTimeBin ? q : q * T;
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
      if (trajectories[i].rows() != q || trajectories[i].cols() != T)
        throw validation_error("shape", "latent trajectories within a condition differ in shape");
      if (granularity == Granularity::PerTimeBin)
        for (Eigen::Index t = 0; t < T; ++t) all.push_back({static_cast<int>(i), static_cast<int>(t)});
      else
        all.push_back({static_cast<int>(i), -1});
    }
  }
  ConditionSamples<Scalar> out;
  const auto keep = stride_subsample(static_cast<int>(all.size()), max_samples);
  out.samples.resize(dim, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const SampleOrigin o = all[static_cast<std::size_t>(keep[k])];
    const auto& z = trajectories[static_cast<std::size_t>(o.trial)];
    if (o.bin >= 0)
      out.samples.col(static_cast<Eigen::Index>(k)) = z.col(o.bin);
    else
      out.samples.col(static_cast<Eigen::Index>(k)) = z.reshaped();
    out.origin.push_back(o);
  }
  return out;
}

/// Scatter per-sample gradients back onto the trajectories they were taken from.
template <typename Scalar>
std::vector<Mat<Scalar>> scatter_sample_grad(const ConditionSamples<Scalar>& samples, const Mat<Scalar>& grad,
                                             const std::vector<Mat<Scalar>>& trajectories) {
  std::vector<Mat<Scalar>> out;
  out.reserve(trajectories.size());
  for (const auto& z : trajectories) out.push_back(Mat<Scalar>::Zero(z.rows(), z.cols()));
  for (std::size_t k = 0; k < samples.origin.size(); ++k) {
    const SampleOrigin o = samples.origin[k];
    auto& g = out[static_cast<std::size_t>(o.trial)];
    if (o.bin >= 0)
      g.col(o.bin) += grad.col(static_cast<Eigen::Index>(k));
    else
      g.reshaped() += grad.col(static_cast<Eigen::Index>(k));
  }
  return out;
}

/// Latent trajectories grouped by condition: sets[d] holds direction d+1.
template <typename Scalar>
using ConditionSets = std::vector<std::vector<Mat<Scalar>>>;

template <typename Scalar>
struct ConditionalMMDResult {
  Scalar value{0};
  std::vector<int> used_directions;     // 1-based
  std::vector<int> skipped_directions;  // 1-based; empty on either side
  ConditionSets<Scalar> grad_source;    // filled when requested
  ConditionSets<Scalar> grad_target;
};

enum class MMDGrad { None, Target, Both };

/// Sum over directions of the per-condition multi-kernel MMD.
template <typename Scalar>
ConditionalMMDResult<Scalar> conditional_mmd(const ConditionSets<Scalar>& source, const ConditionSets<Scalar>& target,
                                             const MMDConfig& cfg, MMDGrad grad = MMDGrad::None) {
  if (source.size() != target.size())
    throw validation_error("mmd", "source and target must have the same number of conditions");
  if (cfg.max_samples_per_condition < 2) throw validation_error("mmd", "max_samples_per_condition must be >= 2");
  ConditionalMMDResult<Scalar> out;
  const bool want = grad != MMDGrad::None;
  if (want) {
    for (const auto& set : target) out.grad_target.emplace_back(set.size());
    if (grad == MMDGrad::Both)
      for (const auto& set : source) out.grad_source.emplace_back(set.size());
  }
  for (std::size_t d = 0; d < source.size(); ++d) {
    const int dir = static_cast<int>(d) + 1;
    const auto S = condition_samples(source[d], cfg.granularity, cfg.max_samples_per_condition);
    const auto T = condition_samples(target[d], cfg.granularity, cfg.max_samples_per_condition);
    if (S.samples.cols() == 0 || T.samples.cols() == 0) {
      out.skipped_directions.push_back(dir);
      if (want) {
        out.grad_target[d] = scatter_sample_grad(T, Mat<Scalar>(Mat<Scalar>::Zero(T.samples.rows(), T.samples.cols())), target[d]);
        if (grad == MMDGrad::Both)
          out.grad_source[d] = scatter_sample_grad(S, Mat<Scalar>(Mat<Scalar>::Zero(S.samples.rows(), S.samples.cols())), source[d]);
      }
      continue;
    }
    const auto term = mmd_pair(S.samples, T.samples, cfg.num_bandwidths, cfg.bandwidth_scale, cfg.sigma_floor, want);
    out.value += term.value;
    out.used_directions.push_back(dir);
    if (want) {
      out.grad_target[d] = scatter_sample_grad(T, term.grad_target, target[d]);
      if (grad == MMDGrad::Both) out.grad_source[d] = scatter_sample_grad(S, term.grad_source, source[d]);
    }
  }
  if (out.used_directions.empty())
    throw validation_error("mmd", "no direction has samples on both source and target sides");
  return out;
}

}  // namespace tcla
