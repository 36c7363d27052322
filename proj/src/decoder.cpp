#include "tcla/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tcla/optim.hpp"

namespace tcla {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Normalizer {
  VectorXd mean, scale;
};

Normalizer fit_normalizer(const std::vector<MatrixXd>& seqs) {
  const Eigen::Index dim = seqs.front().rows();
  VectorXd sum = VectorXd::Zero(dim), sq = VectorXd::Zero(dim);
  double count = 0;
  for (const auto& s : seqs) {
    sum += s.rowwise().sum();
    sq += s.array().square().matrix().rowwise().sum();
    count += static_cast<double>(s.cols());
  }
  Normalizer n;
  n.mean = sum / count;
  const VectorXd var = (sq / count - n.mean.cwiseAbs2()).cwiseMax(0.0);
  n.scale = var.cwiseSqrt().unaryExpr([](double s) { return s > 1e-6 ? s : 1.0; });
  return n;
}

MatrixXd standardize(const MatrixXd& x, const VectorXd& mean, const VectorXd& scale) {
  return (x.colwise() - mean).array().colwise() / scale.array();
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

struct LstmTape {
  std::vector<MatrixXd> i, f, g, o, c, tanh_c, h, y;
};

/// Runs the LSTM over time-major inputs xs[t] = [C, B].
LstmTape lstm_forward(const LstmParams& p, const std::vector<MatrixXd>& xs) {
  const Eigen::Index H = p.w_hidden.cols();
  const Eigen::Index B = xs.front().cols();
  LstmTape tape;
  MatrixXd h = MatrixXd::Zero(H, B), c = MatrixXd::Zero(H, B);
  for (const auto& x : xs) {
    MatrixXd a = p.w_input * x + p.w_hidden * h;
    a.colwise() += p.bias;
    MatrixXd gi = a.topRows(H).unaryExpr(&sigmoid);
    MatrixXd gf = a.middleRows(H, H).unaryExpr(&sigmoid);
    MatrixXd gg = a.middleRows(2 * H, H).array().tanh();
    MatrixXd go = a.bottomRows(H).unaryExpr(&sigmoid);
    c = (gf.array() * c.array() + gi.array() * gg.array()).matrix();
    MatrixXd tc = c.array().tanh();
    h = (go.array() * tc.array()).matrix();
    MatrixXd y = p.w_out * h;
    y.colwise() += p.b_out;
    tape.i.push_back(std::move(gi));
    tape.f.push_back(std::move(gf));
    tape.g.push_back(std::move(gg));
    tape.o.push_back(std::move(go));
    tape.c.push_back(c);
    tape.tanh_c.push_back(std::move(tc));
    tape.h.push_back(h);
    tape.y.push_back(std::move(y));
  }
  return tape;
}

/// Mean squared error over all outputs and its gradient.
double lstm_backward(const LstmParams& p, const std::vector<MatrixXd>& xs, const std::vector<MatrixXd>& targets,
                     const LstmTape& tape, LstmParams& grad) {
  const Eigen::Index H = p.w_hidden.cols();
  const Eigen::Index B = xs.front().cols();
  const auto T = xs.size();
  const double denom = static_cast<double>(T) * static_cast<double>(B) * 2.0;
  double loss = 0.0;
  MatrixXd dh_next = MatrixXd::Zero(H, B), dc_next = MatrixXd::Zero(H, B);
  for (std::size_t t = T; t-- > 0;) {
    const MatrixXd err = tape.y[t] - targets[t];
    loss += err.squaredNorm();
    const MatrixXd dy = 2.0 * err / denom;
    grad.w_out.noalias() += dy * tape.h[t].transpose();
    grad.b_out += dy.rowwise().sum();
    const MatrixXd dh = p.w_out.transpose() * dy + dh_next;
    const auto o = tape.o[t].array(), tc = tape.tanh_c[t].array();
    const auto gi = tape.i[t].array(), gf = tape.f[t].array(), gg = tape.g[t].array();
    const MatrixXd dc = (dh.array() * o * (1.0 - tc.square()) + dc_next.array()).matrix();
    const MatrixXd c_prev = t > 0 ? tape.c[t - 1] : MatrixXd::Zero(H, B);
    const MatrixXd h_prev = t > 0 ? tape.h[t - 1] : MatrixXd::Zero(H, B);
    MatrixXd da(4 * H, B);
    da.topRows(H) = (dc.array() * gg * gi * (1.0 - gi)).matrix();
    da.middleRows(H, H) = (dc.array() * c_prev.array() * gf * (1.0 - gf)).matrix();
    da.middleRows(2 * H, H) = (dc.array() * gi * (1.0 - gg.square())).matrix();
    da.bottomRows(H) = (dh.array() * tc * o * (1.0 - o)).matrix();
    grad.w_input.noalias() += da * xs[t].transpose();
    grad.w_hidden.noalias() += da * h_prev.transpose();
    grad.bias += da.rowwise().sum();
    dh_next = p.w_hidden.transpose() * da;
    dc_next = (dc.array() * gf).matrix();
  }
  return loss / denom;
}

double lstm_mse(const LstmParams& p, const std::vector<MatrixXd>& xs, const std::vector<MatrixXd>& targets) {
  const LstmTape tape = lstm_forward(p, xs);
  double loss = 0.0;
  for (std::size_t t = 0; t < xs.size(); ++t) loss += (tape.y[t] - targets[t]).squaredNorm();
  return loss / (static_cast<double>(xs.size()) * static_cast<double>(xs.front().cols()) * 2.0);
}

/// Time-major batch: out[t] has one column per trial.
std::vector<MatrixXd> time_major(const std::vector<MatrixXd>& seqs, const std::vector<int>& pick) {
  const Eigen::Index T = seqs.front().cols();
  const Eigen::Index dim = seqs.front().rows();
  std::vector<MatrixXd> out(static_cast<std::size_t>(T), MatrixXd(dim, static_cast<Eigen::Index>(pick.size())));
  for (std::size_t b = 0; b < pick.size(); ++b) {
    const auto& s = seqs[static_cast<std::size_t>(pick[b])];
    for (Eigen::Index t = 0; t < T; ++t) out[static_cast<std::size_t>(t)].col(static_cast<Eigen::Index>(b)) = s.col(t);
  }
  return out;
}

LstmParams init_lstm(Eigen::Index C, int H, std::uint64_t seed) {
  auto engine = make_engine({seed, 0x157aULL});
  const double bound = 1.0 / std::sqrt(static_cast<double>(H));
  auto uniform = [&](Eigen::Index r, Eigen::Index c) {
    MatrixXd m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = bound * (2.0 * uniform01(engine) - 1.0);
    return m;
  };
  LstmParams p;
  p.w_input = uniform(4 * H, C);
  p.w_hidden = uniform(4 * H, H);
  p.bias = VectorXd::Zero(4 * H);
  p.bias.segment(H, H).setOnes();
  p.w_out = uniform(2, H);
  p.b_out = VectorXd::Zero(2);
  return p;
}

}  // namespace

void DecoderConfig::validate() const {
  if (hidden_size < 1) throw validation_error("config", "decoder hidden_size must be >= 1");
  if (!(ridge_lambda > 0.0)) throw validation_error("config", "decoder ridge_lambda must be > 0");
  if (!(learning_rate > 0.0)) throw validation_error("config", "decoder learning_rate must be > 0");
  if (max_epochs < 1 || patience < 1) throw validation_error("config", "decoder max_epochs and patience must be >= 1");
}

DecoderModel train_decoder(const std::vector<Mat<float>>& rates, const std::vector<Eigen::Matrix2Xd>& kinematics,
                           const DecoderConfig& cfg) {
  cfg.validate();
  if (rates.empty()) throw validation_error("decoder", "decoder needs at least one training trial");
  if (rates.size() != kinematics.size()) throw validation_error("decoder", "rates and kinematics lists differ in length");
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (rates[i].rows() != rates.front().rows() || rates[i].cols() != kinematics[i].cols())
      throw validation_error("shape", "decoder trial " + std::to_string(i) + " has inconsistent shape");
    if (!kinematics[i].allFinite()) throw validation_error("decoder", "non-finite kinematics target in trial " + std::to_string(i));
    if (!rates[i].allFinite()) throw validation_error("decoder", "non-finite rates in trial " + std::to_string(i));
  }

  std::vector<MatrixXd> inputs, targets;
  for (const auto& r : rates) inputs.push_back(r.cast<double>());
  for (const auto& k : kinematics) targets.push_back(k);

  DecoderModel model;
  model.kind = cfg.kind;
  const Normalizer in_norm = fit_normalizer(inputs);
  const Normalizer out_norm = fit_normalizer(targets);
  model.input_mean = in_norm.mean;
  model.input_scale = in_norm.scale;
  model.output_mean = out_norm.mean;
  model.output_scale = out_norm.scale;
  for (auto& x : inputs) x = standardize(x, in_norm.mean, in_norm.scale);
  for (auto& y : targets) y = standardize(y, out_norm.mean, out_norm.scale);
  const Eigen::Index C = inputs.front().rows();

  if (cfg.kind == DecoderKind::LinearRidge) {
    Eigen::Index total = 0;
    for (const auto& x : inputs) total += x.cols();
    MatrixXd X(total, C + 1), Y(total, 2);
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const Eigen::Index T = inputs[i].cols();
      X.block(row, 0, T, C) = inputs[i].transpose();
      X.block(row, C, T, 1).setOnes();
      Y.middleRows(row, T) = targets[i].transpose();
      row += T;
    }
    MatrixXd gram = X.transpose() * X;
    gram.diagonal().head(C).array() += cfg.ridge_lambda;
    model.ridge_weight = gram.ldlt().solve(X.transpose() * Y).transpose();
    return model;
  }

  // Recurrent: hold out a tenth of the trials for early stopping.
  const int n = static_cast<int>(inputs.size());
  auto engine = make_engine({cfg.seed, 0x401dULL});
  const auto perm = random_permutation(n, engine);
  const int held = n >= 2 ? std::max(1, static_cast<int>(std::lround(n / 10.0))) : 0;
  std::vector<int> val_pick(perm.begin(), perm.begin() + held);
  std::vector<int> train_pick(perm.begin() + held, perm.end());
  std::sort(val_pick.begin(), val_pick.end());
  std::sort(train_pick.begin(), train_pick.end());
  if (val_pick.empty()) val_pick = train_pick;

  const auto xs = time_major(inputs, train_pick), ys = time_major(targets, train_pick);
  const auto vxs = time_major(inputs, val_pick), vys = time_major(targets, val_pick);

  LstmParams params = init_lstm(C, cfg.hidden_size, cfg.seed);
  LstmParams grad = params;
  std::vector<ParamView<double>> pv, gv;
  collect_params<double>(params, pv);
  collect_params<double>(grad, gv);
  Adam<double> adam(pv, cfg.learning_rate);

  LstmParams best = params;
  double best_val = lstm_mse(params, vxs, vys);
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    grad.for_each_tensor([](const char*, auto& t) { t.setZero(); });
    const LstmTape tape = lstm_forward(params, xs);
    const double loss = lstm_backward(params, xs, ys, tape, grad);
    if (!std::isfinite(loss)) throw Error(ErrorKind::Divergence, "divergence", "decoder training diverged");
    adam.step(gv);
    model.epochs_trained = epoch;
    const double val = lstm_mse(params, vxs, vys);
    if (val < best_val) {
      best_val = val;
      best = params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  model.lstm = std::move(best);
  return model;
}

std::vector<Eigen::Matrix2Xd> DecoderModel::predict(const std::vector<Mat<float>>& rates) const {
  std::vector<Eigen::Matrix2Xd> out;
  out.reserve(rates.size());
  if (rates.empty()) return out;
  std::vector<MatrixXd> inputs;
  for (const auto& r : rates) {
    if (r.rows() != input_mean.size()) throw validation_error("shape", "decoder input channel count differs from training");
    inputs.push_back(standardize(r.cast<double>(), input_mean, input_scale));
  }
  auto unscale = [&](const MatrixXd& y) -> Eigen::Matrix2Xd {
    return (y.array().colwise() * output_scale.array()).matrix().colwise() + output_mean;
  };
  if (kind == DecoderKind::LinearRidge) {
    const Eigen::Index C = input_mean.size();
    for (const auto& x : inputs) {
      MatrixXd y = ridge_weight.leftCols(C) * x;
      y.colwise() += ridge_weight.col(C);
      out.push_back(unscale(y));
    }
    return out;
  }
  // Trials may differ in length; run them one at a time.
  for (const auto& x : inputs) {
    std::vector<MatrixXd> xs;
    for (Eigen::Index t = 0; t < x.cols(); ++t) xs.push_back(x.col(t));
    const LstmTape tape = lstm_forward(lstm, xs);
    MatrixXd y(2, x.cols());
    for (Eigen::Index t = 0; t < x.cols(); ++t) y.col(t) = tape.y[static_cast<std::size_t>(t)];
    out.push_back(unscale(y));
  }
  return out;
}

}  // namespace tcla
