#pragma once

#include <cstdint>
#include <vector>

#include "tcla/common.hpp"

namespace tcla {

enum class DecoderKind { Recurrent, LinearRidge };

struct DecoderConfig {
  DecoderKind kind = DecoderKind::Recurrent;
  int hidden_size = 32;
  double ridge_lambda = 1.0;
  double learning_rate = 5e-3;
  int max_epochs = 300;
  int patience = 30;
  std::uint64_t seed = 17;

  void validate() const;
};

/// LSTM weights; gate rows are stacked input, forget, cell, output.
struct LstmParams {
  Eigen::MatrixXd w_input;   // [4H, C]
  Eigen::MatrixXd w_hidden;  // [4H, H]
  Eigen::VectorXd bias;      // [4H]
  Eigen::MatrixXd w_out;     // [2, H]
  Eigen::VectorXd b_out;     // [2]

  template <typename F>
  void for_each_tensor(F&& f) {
    f("w_input", w_input);
    f("w_hidden", w_hidden);
    f("bias", bias);
    f("w_out", w_out);
    f("b_out", b_out);
  }
};

/// Maps rate sequences [C, T] to 2-D kinematics [2, T]. Inputs are rates
/// standardized per channel; outputs are fit in standardized units.
struct DecoderModel {
  DecoderKind kind = DecoderKind::LinearRidge;
  Eigen::VectorXd input_mean, input_scale;
  Eigen::Vector2d output_mean{0, 0}, output_scale{1, 1};
  Eigen::MatrixXd ridge_weight;  // [2, C + 1], last column is the intercept
  LstmParams lstm;
  int epochs_trained = 0;

  std::vector<Eigen::Matrix2Xd> predict(const std::vector<Mat<float>>& rates) const;
};

DecoderModel train_decoder(const std::vector<Mat<float>>& rates, const std::vector<Eigen::Matrix2Xd>& kinematics,
                           const DecoderConfig& cfg);

}  // namespace tcla
