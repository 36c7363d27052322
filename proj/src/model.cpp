#include "tcla/model.hpp"

#include <cmath>

namespace tcla {

void Architecture::validate() const {
  if (embed_width < 1) throw validation_error("config", "embed_width must be >= 1");
  if (latent_dim < 1) throw validation_error("config", "latent_dim must be >= 1");
  if (embed_width < latent_dim) throw validation_error("config", "embed_width must be >= latent_dim");
  if (num_blocks < 0) throw validation_error("config", "num_blocks must be >= 0");
  if (kernel_width < 1 || kernel_width % 2 == 0) throw validation_error("config", "kernel_width must be odd and >= 1");
}

namespace {

template <typename Scalar, typename Derived>
void fill_normal(Eigen::MatrixBase<Derived>& m, double stddev, std::mt19937_64& engine) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<Scalar>(normal(engine));
}

template <typename Scalar>
SessionLayers<Scalar> make_layers(const Architecture& arch, const std::string& session_id, int channels,
                                  std::uint64_t seed, const Eigen::VectorXd* channel_mean_counts) {
  if (channels < 1) throw validation_error("shape", "session must have at least one channel");
  if (arch.latent_dim >= channels)
    throw validation_error("shape", "latent_dim q = " + std::to_string(arch.latent_dim) +
                                        " must be smaller than the session channel count " + std::to_string(channels));
  if (channel_mean_counts && channel_mean_counts->size() != channels)
    throw validation_error("shape", "channel mean vector length differs from channel count");
  const int E = arch.embed_width;
  auto engine = make_engine({seed, 0x5e55ULL});
  SessionLayers<Scalar> layers;
  layers.session_id = session_id;
  layers.read_in_weight.resize(E, channels);
  fill_normal<Scalar>(layers.read_in_weight, 1.0 / std::sqrt(static_cast<double>(channels)), engine);
  layers.read_in_bias = Vec<Scalar>::Zero(E);
  layers.read_out_weight.resize(channels, E);
  fill_normal<Scalar>(layers.read_out_weight, 0.5 / std::sqrt(static_cast<double>(E)), engine);
  layers.read_out_bias = Vec<Scalar>::Zero(channels);
  if (channel_mean_counts)
    for (int c = 0; c < channels; ++c) {
      const double mean = std::max((*channel_mean_counts)(c), 1e-4);
      layers.read_out_bias(c) = static_cast<Scalar>(std::log(mean));
    }
  return layers;
}

template <typename Scalar>
GatedConvBlock<Scalar> make_block(int E, int k, std::mt19937_64& engine) {
  GatedConvBlock<Scalar> b;
  b.weight.resize(2 * E, k * E);
  fill_normal<Scalar>(b.weight, 1.0 / std::sqrt(static_cast<double>(k * E)), engine);
  b.bias = Vec<Scalar>::Zero(2 * E);
  return b;
}

}  // namespace

template <typename Scalar>
std::pair<SharedAutoencoder<Scalar>, SessionLayers<Scalar>> init_model(const Architecture& arch, int source_channels,
                                                                       std::uint64_t seed,
                                                                       const std::string& source_session_id,
                                                                       const Eigen::VectorXd* channel_mean_counts) {
  arch.validate();
  SharedAutoencoder<Scalar> shared;
  shared.arch = arch;
  const int E = arch.embed_width, q = arch.latent_dim, k = arch.kernel_width;
  auto engine = make_engine({seed, 0x5a4eULL});
  for (int b = 0; b < arch.num_blocks; ++b) shared.encoder_blocks.push_back(make_block<Scalar>(E, k, engine));
  shared.latent_weight.resize(q, E);
  fill_normal<Scalar>(shared.latent_weight, 1.0 / std::sqrt(static_cast<double>(E)), engine);
  shared.latent_bias = Vec<Scalar>::Zero(q);
  shared.expand_weight.resize(E, q);
  fill_normal<Scalar>(shared.expand_weight, 1.0 / std::sqrt(static_cast<double>(q)), engine);
  shared.expand_bias = Vec<Scalar>::Zero(E);
  for (int b = 0; b < arch.num_blocks; ++b) shared.decoder_blocks.push_back(make_block<Scalar>(E, k, engine));
  SessionLayers<Scalar> layers =
      make_layers<Scalar>(arch, source_session_id, source_channels, derive_seed({seed, 1}), channel_mean_counts);
  return {std::move(shared), std::move(layers)};
}

template <typename Scalar>
SessionLayers<Scalar> add_session_layers(const SharedAutoencoder<Scalar>& shared, const std::string& session_id,
                                         int channels, std::uint64_t seed, const Eigen::VectorXd* channel_mean_counts) {
  return make_layers<Scalar>(shared.arch, session_id, channels, seed, channel_mean_counts);
}

template std::pair<SharedAutoencoder<float>, SessionLayers<float>> init_model<float>(const Architecture&, int,
                                                                                     std::uint64_t, const std::string&,
                                                                                     const Eigen::VectorXd*);
template std::pair<SharedAutoencoder<double>, SessionLayers<double>> init_model<double>(const Architecture&, int,
                                                                                        std::uint64_t,
                                                                                        const std::string&,
                                                                                        const Eigen::VectorXd*);
template SessionLayers<float> add_session_layers<float>(const SharedAutoencoder<float>&, const std::string&, int,
                                                        std::uint64_t, const Eigen::VectorXd*);
template SessionLayers<double> add_session_layers<double>(const SharedAutoencoder<double>&, const std::string&, int,
                                                          std::uint64_t, const Eigen::VectorXd*);

}  // namespace tcla
