#pragma once

// Independent reference implementations used to check the library. These are
// written for clarity, not speed, and share no code with src/.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "tcla/objectives.hpp"

namespace oracle {

using Eigen::MatrixXd;

/// Central difference of a scalar function of one matrix.
inline MatrixXd numeric_gradient(const std::function<double(const MatrixXd&)>& f, const MatrixXd& x,
                                 double h = 1e-6) {
  MatrixXd g(x.rows(), x.cols());
  MatrixXd probe = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double saved = probe(i, j);
      probe(i, j) = saved + h;
      const double up = f(probe);
      probe(i, j) = saved - h;
      const double down = f(probe);
      probe(i, j) = saved;
      g(i, j) = (up - down) / (2.0 * h);
    }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor)
inline double relative_error(const MatrixXd& a, const MatrixXd& b, double floor = 1e-8) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

/// One sample per column, following the granularity rule literally.
inline std::vector<Eigen::VectorXd> expand(const std::vector<MatrixXd>& trials, tcla::Granularity g, int max_samples) {
  std::vector<Eigen::VectorXd> all;
  for (const auto& z : trials) {
    if (g == tcla::Granularity::PerTimeBin) {
      for (Eigen::Index t = 0; t < z.cols(); ++t) all.push_back(z.col(t));
    } else {
      Eigen::VectorXd flat(z.size());
      Eigen::Index k = 0;
      for (Eigen::Index t = 0; t < z.cols(); ++t)
        for (Eigen::Index i = 0; i < z.rows(); ++i) flat(k++) = z(i, t);
      all.push_back(flat);
    }
  }
  const int n = static_cast<int>(all.size());
  if (n <= max_samples) return all;
  std::vector<Eigen::VectorXd> kept;
  for (int k = 0; k < max_samples; ++k) kept.push_back(all[static_cast<std::size_t>((static_cast<long long>(k) * n) / max_samples)]);
  return kept;
}

inline double sq_dist(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) s += (a(i) - b(i)) * (a(i) - b(i));
  return s;
}

inline std::vector<double> bandwidths(const std::vector<Eigen::VectorXd>& pooled, int J, double K, double floor) {
  const double N = static_cast<double>(pooled.size());
  double sum = 0.0;
  for (std::size_t a = 0; a < pooled.size(); ++a)
    for (std::size_t b = 0; b < pooled.size(); ++b)
      if (a != b) sum += sq_dist(pooled[a], pooled[b]);
  const double m = sum / (N * (N - 1.0));
  std::vector<double> s;
  for (int j = 0; j < J; ++j) s.push_back(std::max(std::pow(K, j - J / 2) * m, floor));
  return s;
}

inline double kernel(const std::vector<Eigen::VectorXd>& A, const std::vector<Eigen::VectorXd>& B,
                     const std::vector<double>& sigmas) {
  double total = 0.0;
  for (double s : sigmas)
    for (const auto& a : A)
      for (const auto& b : B) total += std::exp(-sq_dist(a, b) / s);
  return total / (static_cast<double>(A.size()) * static_cast<double>(B.size()));
}

/// Triple-loop conditional MMD.
inline double conditional_mmd(const std::vector<std::vector<MatrixXd>>& source,
                              const std::vector<std::vector<MatrixXd>>& target, const tcla::MMDConfig& cfg) {
  double total = 0.0;
  for (std::size_t d = 0; d < source.size(); ++d) {
    const auto S = expand(source[d], cfg.granularity, cfg.max_samples_per_condition);
    const auto T = expand(target[d], cfg.granularity, cfg.max_samples_per_condition);
    if (S.empty() || T.empty()) continue;
    std::vector<Eigen::VectorXd> pooled = S;
    pooled.insert(pooled.end(), T.begin(), T.end());
    const auto sig = bandwidths(pooled, cfg.num_bandwidths, cfg.bandwidth_scale, cfg.sigma_floor);
    total += kernel(S, S, sig) + kernel(T, T, sig) - 2.0 * kernel(S, T, sig);
  }
  return total;
}

}  // namespace oracle
