#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tcla {

/// Flat view of one trainable tensor.
template <typename Scalar>
struct ParamView {
  Scalar* data;
  Eigen::Index size;
};

/// Appends a view of every tensor the model exposes through for_each_tensor.
template <typename Scalar, typename Model>
void collect_params(Model& model, std::vector<ParamView<Scalar>>& out) {
  model.for_each_tensor([&](const std::string&, auto& t) { out.push_back({t.data(), t.size()}); });
}

/// Adaptive moment estimation over a fixed list of tensors.
template <typename Scalar>
class Adam {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Adam(std::vector<ParamView<Scalar>> params, double learning_rate)
      : params_(std::move(params)), lr_(learning_rate) {
    for (const auto& p : params_) {
      m_.push_back(Vector::Zero(p.size));
      v_.push_back(Vector::Zero(p.size));
    }
  }

  /// `grads` must list tensors in the same order and shapes as the parameters.
  void step(const std::vector<ParamView<Scalar>>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, t_);
    const double bc2 = 1.0 - std::pow(kBeta2, t_);
    const auto step_size = static_cast<Scalar>(lr_ / bc1);
    const auto inv_bc2 = static_cast<Scalar>(1.0 / bc2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Eigen::Map<Vector> w(params_[i].data, params_[i].size);
      Eigen::Map<const Vector> g(grads[i].data, grads[i].size);
      m_[i] = Scalar(kBeta1) * m_[i] + Scalar(1 - kBeta1) * g;
      v_[i] = Scalar(kBeta2) * v_[i] + Scalar(1 - kBeta2) * g.cwiseAbs2();
      w.array() -= step_size * m_[i].array() / ((v_[i].array() * inv_bc2).sqrt() + Scalar(kEps));
    }
  }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::vector<ParamView<Scalar>> params_;
  std::vector<Vector> m_, v_;
  double lr_;
  int t_ = 0;
};

}  // namespace tcla
