#pragma once

#include <cstdint>
#include <span>

#include "tcla/common.hpp"

namespace tcla {

/// 1 - SS_res / SS_tot. Throws `degenerate_target` when truth is constant.
double r_squared(std::span<const double> pred, std::span<const double> truth);

struct BootstrapResult {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Percentile bootstrap of the mean. Resample r draws from its own stream
/// keyed by (seed, r), so the result does not depend on evaluation order.
BootstrapResult bootstrap_ci(std::span<const double> values, int resamples = 10000, double alpha = 0.05,
                             std::uint64_t seed = 0);

enum class WilcoxonMethod { Auto, Exact, Normal };

struct WilcoxonResult {
  double p_value = 1.0;
  double w_plus = 0.0;
  int n = 0;  // nonzero differences
  bool exact = false;
};

/// Two-sided signed-rank test on a - b. Auto uses the exact null for n <= 20.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                    WilcoxonMethod method = WilcoxonMethod::Auto);

/// Mid-ranks (1-based) of the values, ties sharing their average rank.
Eigen::VectorXd mid_ranks(const Eigen::VectorXd& values);

/// Rows of `samples` projected on the top two principal components of the
/// rows. Each component's sign is fixed so its largest-magnitude loading is positive.
Eigen::MatrixX2d pca_project_2d(const Eigen::MatrixXd& samples);

}  // namespace tcla
