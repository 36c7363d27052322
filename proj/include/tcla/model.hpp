#pragma once

// Session-specific 1x1 read-in/read-out projections around a shared temporal
// autoencoder. Every trial is a [C, T] matrix; all layers keep time on the
// column axis so the read-in/read-out maps act independently per time bin.
//
//   x [C,T] -> read-in [E,T] -> gated conv blocks -> latent map [q,T] = z
//   z -> expand [E,T] -> gated conv blocks -> read-out [C,T] -> exp(clamp) = r

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tcla/common.hpp"
#include "tcla/objectives.hpp"

namespace tcla {

struct Architecture {
  int embed_width = 64;
  int latent_dim = 8;
  int num_blocks = 3;
  int kernel_width = 9;

  void validate() const;
  bool operator==(const Architecture&) const = default;
};

inline constexpr double kRateClamp = 10.0;

template <typename Scalar>
struct GatedConvBlock {
  Mat<Scalar> weight;  // [2E, k*E]; first E output rows feed tanh, last E the sigmoid gate
  Vec<Scalar> bias;    // [2E]
};

template <typename Scalar>
struct SharedAutoencoder {
  Architecture arch;
  std::vector<GatedConvBlock<Scalar>> encoder_blocks;
  Mat<Scalar> latent_weight;  // [q, E]
  Vec<Scalar> latent_bias;
  Mat<Scalar> expand_weight;  // [E, q]
  Vec<Scalar> expand_bias;
  std::vector<GatedConvBlock<Scalar>> decoder_blocks;

  template <typename F>
  void for_each_tensor(F&& f) { visit(*this, f); }
  template <typename F>
  void for_each_tensor(F&& f) const { visit(*this, f); }

  SharedAutoencoder zeros_like() const {
    SharedAutoencoder z = *this;
    z.for_each_tensor([](const std::string&, auto& t) { t.setZero(); });
    return z;
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    for (std::size_t b = 0; b < self.encoder_blocks.size(); ++b) {
      const std::string p = "encoder.block" + std::to_string(b);
      f(p + ".weight", self.encoder_blocks[b].weight);
      f(p + ".bias", self.encoder_blocks[b].bias);
    }
    f(std::string("encoder.latent.weight"), self.latent_weight);
    f(std::string("encoder.latent.bias"), self.latent_bias);
    f(std::string("decoder.expand.weight"), self.expand_weight);
    f(std::string("decoder.expand.bias"), self.expand_bias);
    for (std::size_t b = 0; b < self.decoder_blocks.size(); ++b) {
      const std::string p = "decoder.block" + std::to_string(b);
      f(p + ".weight", self.decoder_blocks[b].weight);
      f(p + ".bias", self.decoder_blocks[b].bias);
    }
  }
};

template <typename Scalar>
struct SessionLayers {
  std::string session_id;
  Mat<Scalar> read_in_weight;   // [E, C]
  Vec<Scalar> read_in_bias;     // [E]
  Mat<Scalar> read_out_weight;  // [C, E]
  Vec<Scalar> read_out_bias;    // [C]

  int num_channels() const { return static_cast<int>(read_in_weight.cols()); }

  template <typename F>
  void for_each_tensor(F&& f) { visit(*this, f); }
  template <typename F>
  void for_each_tensor(F&& f) const { visit(*this, f); }

  SessionLayers zeros_like() const {
    SessionLayers z = *this;
    z.for_each_tensor([](const std::string&, auto& t) { t.setZero(); });
    return z;
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    f(std::string("read_in.weight"), self.read_in_weight);
    f(std::string("read_in.bias"), self.read_in_bias);
    f(std::string("read_out.weight"), self.read_out_weight);
    f(std::string("read_out.bias"), self.read_out_bias);
  }
};

template <typename Scalar>
struct BlockTrace {
  Mat<Scalar> cols;    // im2col of the block input
  Mat<Scalar> tanh_a;  // [E, T]
  Mat<Scalar> sig_g;   // [E, T]
};

/// Intermediate activations kept for the backward pass.
template <typename Scalar>
struct ForwardTrace {
  Mat<Scalar> input;  // read-in input after masking
  std::vector<BlockTrace<Scalar>> encoder;
  Mat<Scalar> encoder_out;
  Mat<Scalar> latent;
  std::vector<BlockTrace<Scalar>> decoder;
  Mat<Scalar> decoder_out;
  Mat<Scalar> preact;
  Mat<Scalar> rates;
};

template <typename Scalar>
struct ForwardResult {
  Mat<Scalar> latent;  // [q, T]
  Mat<Scalar> rates;   // [C, T], strictly positive
};

// ---------------------------------------------------------------------------
// Building blocks

/// [k*E, T] matrix whose row block j holds h shifted by (j - k/2) bins, zero padded.
template <typename Scalar>
Mat<Scalar> im2col(const Mat<Scalar>& h, int kernel) {
  const Eigen::Index E = h.rows(), T = h.cols();
  Mat<Scalar> cols = Mat<Scalar>::Zero(kernel * E, T);
  for (int j = 0; j < kernel; ++j) {
    const Eigen::Index shift = j - kernel / 2;
    const Eigen::Index t0 = std::max<Eigen::Index>(0, -shift);
    const Eigen::Index t1 = std::min<Eigen::Index>(T, T - shift);
    if (t1 > t0) cols.block(j * E, t0, E, t1 - t0) = h.middleCols(t0 + shift, t1 - t0);
  }
  return cols;
}

/// Adjoint of im2col.
template <typename Scalar>
Mat<Scalar> col2im(const Mat<Scalar>& cols, Eigen::Index E, int kernel) {
  const Eigen::Index T = cols.cols();
  Mat<Scalar> h = Mat<Scalar>::Zero(E, T);
  for (int j = 0; j < kernel; ++j) {
    const Eigen::Index shift = j - kernel / 2;
    const Eigen::Index t0 = std::max<Eigen::Index>(0, -shift);
    const Eigen::Index t1 = std::min<Eigen::Index>(T, T - shift);
    if (t1 > t0) h.middleCols(t0 + shift, t1 - t0) += cols.block(j * E, t0, E, t1 - t0);
  }
  return h;
}

template <typename Scalar>
Mat<Scalar> gated_block_forward(const GatedConvBlock<Scalar>& block, const Mat<Scalar>& h, int kernel,
                                BlockTrace<Scalar>* trace) {
  const Eigen::Index E = h.rows();
  Mat<Scalar> cols = im2col(h, kernel);
  Mat<Scalar> pre = block.weight * cols;
  pre.colwise() += block.bias;
  Mat<Scalar> ta = pre.topRows(E).array().tanh();
  Mat<Scalar> sg = (Scalar(1) + (-pre.bottomRows(E).array()).exp()).inverse();
  Mat<Scalar> out = h + (ta.array() * sg.array()).matrix();
  if (trace) {
    trace->cols = std::move(cols);
    trace->tanh_a = std::move(ta);
    trace->sig_g = std::move(sg);
  }
  return out;
}

/// Returns d(loss)/d(block input). Accumulates weight grads when `grad` is set.
template <typename Scalar>
Mat<Scalar> gated_block_backward(const GatedConvBlock<Scalar>& block, const BlockTrace<Scalar>& trace,
                                 const Mat<Scalar>& d_out, int kernel, GatedConvBlock<Scalar>* grad) {
  const Eigen::Index E = d_out.rows(), T = d_out.cols();
  Mat<Scalar> d_pre(2 * E, T);
  const auto ta = trace.tanh_a.array();
  const auto sg = trace.sig_g.array();
  d_pre.topRows(E) = (d_out.array() * sg * (Scalar(1) - ta.square())).matrix();
  d_pre.bottomRows(E) = (d_out.array() * ta * sg * (Scalar(1) - sg)).matrix();
  if (grad) {
    grad->weight.noalias() += d_pre * trace.cols.transpose();
    grad->bias += d_pre.rowwise().sum();
  }
  Mat<Scalar> d_cols = block.weight.transpose() * d_pre;
  return d_out + col2im(d_cols, E, kernel);
}

template <typename Scalar>
Mat<Scalar> masked_input(const CountMatrix& spikes, const DropoutMask* mask) {
  Mat<Scalar> x = spikes.cast<Scalar>();
  if (mask && mask->active) {
    if (mask->masked.size() != x.cols()) throw validation_error("shape", "input mask length differs from T");
    for (Eigen::Index t = 0; t < x.cols(); ++t) {
      if (mask->masked(t))
        x.col(t).setZero();
      else
        x.col(t) *= Scalar(mask->input_scale);
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename Scalar>
void check_forward_shapes(const CountMatrix& spikes, const SessionLayers<Scalar>& layers,
                          const SharedAutoencoder<Scalar>& shared) {
  if (spikes.rows() != layers.num_channels())
    throw validation_error("shape", "spikes have " + std::to_string(spikes.rows()) + " channels, session '" +
                                        layers.session_id + "' expects " + std::to_string(layers.num_channels()));
  if (layers.read_in_weight.rows() != shared.arch.embed_width)
    throw validation_error("shape", "session layers embedding width differs from the shared module");
}

template <typename Scalar>
Mat<Scalar> encode_input(const Mat<Scalar>& x, const SessionLayers<Scalar>& layers,
                         const SharedAutoencoder<Scalar>& shared, ForwardTrace<Scalar>* trace) {
  Mat<Scalar> h = layers.read_in_weight * x;
  h.colwise() += layers.read_in_bias;
  if (trace) trace->encoder.resize(shared.encoder_blocks.size());
  for (std::size_t b = 0; b < shared.encoder_blocks.size(); ++b)
    h = gated_block_forward(shared.encoder_blocks[b], h, shared.arch.kernel_width, trace ? &trace->encoder[b] : nullptr);
  Mat<Scalar> z = shared.latent_weight * h;
  z.colwise() += shared.latent_bias;
  if (trace) {
    trace->input = x;
    trace->encoder_out = std::move(h);
    trace->latent = z;
  }
  return z;
}

template <typename Scalar>
Mat<Scalar> decode_latent(const Mat<Scalar>& z, const SessionLayers<Scalar>& layers,
                          const SharedAutoencoder<Scalar>& shared, ForwardTrace<Scalar>* trace) {
  Mat<Scalar> h = shared.expand_weight * z;
  h.colwise() += shared.expand_bias;
  if (trace) trace->decoder.resize(shared.decoder_blocks.size());
  for (std::size_t b = 0; b < shared.decoder_blocks.size(); ++b)
    h = gated_block_forward(shared.decoder_blocks[b], h, shared.arch.kernel_width, trace ? &trace->decoder[b] : nullptr);
  Mat<Scalar> a = layers.read_out_weight * h;
  a.colwise() += layers.read_out_bias;
  Mat<Scalar> r = a.array().max(Scalar(-kRateClamp)).min(Scalar(kRateClamp)).exp();
  if (trace) {
    trace->decoder_out = std::move(h);
    trace->preact = std::move(a);
    trace->rates = r;
  }
  return r;
}

/// Latent trajectory only; the MMD path needs no decoder.
template <typename Scalar>
Mat<Scalar> encode(const CountMatrix& spikes, const SessionLayers<Scalar>& layers,
                   const SharedAutoencoder<Scalar>& shared, const DropoutMask* input_mask = nullptr,
                   ForwardTrace<Scalar>* trace = nullptr) {
  check_forward_shapes(spikes, layers, shared);
  return encode_input(masked_input<Scalar>(spikes, input_mask), layers, shared, trace);
}

template <typename Scalar>
ForwardResult<Scalar> forward(const CountMatrix& spikes, const SessionLayers<Scalar>& layers,
                              const SharedAutoencoder<Scalar>& shared, const DropoutMask* input_mask = nullptr,
                              ForwardTrace<Scalar>* trace = nullptr) {
  ForwardResult<Scalar> out;
  out.latent = encode(spikes, layers, shared, input_mask, trace);
  out.rates = decode_latent(out.latent, layers, shared, trace);
  return out;
}

/// Gradient sinks. A null `shared` pointer freezes the shared module: no shared
/// weight gradient is formed, gradients still flow through it to the session layers.
template <typename Scalar>
struct GradSinks {
  SharedAutoencoder<Scalar>* shared = nullptr;
  SessionLayers<Scalar>* layers = nullptr;
};

/// Backpropagates d(loss)/d(latent) through a traced encode() pass.
template <typename Scalar>
void backward_encoder(const ForwardTrace<Scalar>& trace, const Mat<Scalar>& d_latent, const SessionLayers<Scalar>& /*layers*/,
                      const SharedAutoencoder<Scalar>& shared, GradSinks<Scalar> sinks) {
  const int k = shared.arch.kernel_width;
  if (sinks.shared) {
    sinks.shared->latent_weight.noalias() += d_latent * trace.encoder_out.transpose();
    sinks.shared->latent_bias += d_latent.rowwise().sum();
  }
  Mat<Scalar> dh = shared.latent_weight.transpose() * d_latent;
  for (std::size_t b = shared.encoder_blocks.size(); b-- > 0;)
    dh = gated_block_backward(shared.encoder_blocks[b], trace.encoder[b], dh, k,
                              sinks.shared ? &sinks.shared->encoder_blocks[b] : nullptr);
  if (sinks.layers) {
    sinks.layers->read_in_weight.noalias() += dh * trace.input.transpose();
    sinks.layers->read_in_bias += dh.rowwise().sum();
  }
}

/// Backpropagates d(loss)/d(rates) and an optional extra d(loss)/d(latent)
/// through a traced forward() pass.
template <typename Scalar>
void backward(const ForwardTrace<Scalar>& trace, const Mat<Scalar>& d_rates, const Mat<Scalar>* d_latent_extra,
              const SessionLayers<Scalar>& layers, const SharedAutoencoder<Scalar>& shared, GradSinks<Scalar> sinks) {
  const int k = shared.arch.kernel_width;
  // r = exp(clamp(a)); the clamp passes no gradient outside [-10, 10].
  Mat<Scalar> d_pre = (d_rates.array() * trace.rates.array() *
                       (trace.preact.array().abs() < Scalar(kRateClamp)).template cast<Scalar>())
                          .matrix();
  if (sinks.layers) {
    sinks.layers->read_out_weight.noalias() += d_pre * trace.decoder_out.transpose();
    sinks.layers->read_out_bias += d_pre.rowwise().sum();
  }
  Mat<Scalar> dh = layers.read_out_weight.transpose() * d_pre;
  for (std::size_t b = shared.decoder_blocks.size(); b-- > 0;)
    dh = gated_block_backward(shared.decoder_blocks[b], trace.decoder[b], dh, k,
                              sinks.shared ? &sinks.shared->decoder_blocks[b] : nullptr);
  if (sinks.shared) {
    sinks.shared->expand_weight.noalias() += dh * trace.latent.transpose();
    sinks.shared->expand_bias += dh.rowwise().sum();
  }
  Mat<Scalar> dz = shared.expand_weight.transpose() * dh;
  if (d_latent_extra) dz += *d_latent_extra;
  backward_encoder(trace, dz, layers, shared, sinks);
}

// ---------------------------------------------------------------------------
// Construction

/// Shared module plus source-session layers. The read-out bias is set to the
/// log of `channel_mean_counts` so a zero input reproduces the mean rates.
template <typename Scalar>
std::pair<SharedAutoencoder<Scalar>, SessionLayers<Scalar>> init_model(const Architecture& arch, int source_channels,
                                                                       std::uint64_t seed,
                                                                       const std::string& source_session_id,
                                                                       const Eigen::VectorXd* channel_mean_counts = nullptr);

template <typename Scalar>
SessionLayers<Scalar> add_session_layers(const SharedAutoencoder<Scalar>& shared, const std::string& session_id,
                                         int channels, std::uint64_t seed,
                                         const Eigen::VectorXd* channel_mean_counts = nullptr);

struct ParameterPartition {
  std::vector<std::string> shared_names;
  std::vector<std::string> session_names;
};

/// Fully qualified names: "shared.<tensor>" and "session.<id>.<tensor>".
template <typename Scalar>
ParameterPartition parameter_partition(const SharedAutoencoder<Scalar>& shared,
                                       std::span<const SessionLayers<Scalar>> sessions) {
  ParameterPartition out;
  std::set<std::string> seen;
  auto add = [&](std::vector<std::string>& dst, std::string name) {
    if (!seen.insert(name).second) throw validation_error("duplicate_parameter", "duplicate parameter name " + name);
    dst.push_back(std::move(name));
  };
  shared.for_each_tensor([&](const std::string& n, const auto&) { add(out.shared_names, "shared." + n); });
  for (const auto& s : sessions)
    s.for_each_tensor([&](const std::string& n, const auto&) { add(out.session_names, "session." + s.session_id + "." + n); });
  return out;
}

}  // namespace tcla
