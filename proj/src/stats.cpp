#include "tcla/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tcla {

double r_squared(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw validation_error("shape", "r_squared: lengths differ");
  if (truth.size() < 2) throw validation_error("shape", "r_squared: need at least two values");
  const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / static_cast<double>(truth.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_res += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  if (!(ss_tot > 0.0)) throw validation_error("degenerate_target", "r_squared: truth is constant");
  return 1.0 - ss_res / ss_tot;
}

BootstrapResult bootstrap_ci(std::span<const double> values, int resamples, double alpha, std::uint64_t seed) {
  if (values.empty()) throw validation_error("empty", "bootstrap_ci: no values");
  if (resamples < 1) throw validation_error("config", "bootstrap_ci: resamples must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw validation_error("config", "bootstrap_ci: alpha must be in (0, 1)");
  const auto n = values.size();
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (int r = 0; r < resamples; ++r) {
    auto engine = make_engine({seed, 0xb007ULL, static_cast<std::uint64_t>(r)});
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) sum += values[static_cast<std::size_t>(engine() % n)];
    means[static_cast<std::size_t>(r)] = sum / static_cast<double>(n);
  }
  BootstrapResult out;
  out.mean = std::accumulate(means.begin(), means.end(), 0.0) / resamples;
  std::sort(means.begin(), means.end());
  // Nearest-rank percentiles.
  auto rank = [&](double p) {
    const auto k = static_cast<long long>(std::ceil(p * resamples - 1e-9));
    return means[static_cast<std::size_t>(std::clamp<long long>(k, 1, resamples) - 1)];
  };
  out.lo = rank(alpha / 2.0);
  out.hi = rank(1.0 - alpha / 2.0);
  // Guard the mean against rounding past the extreme order statistics.
  out.mean = std::clamp(out.mean, means.front(), means.back());
  return out;
}

Eigen::VectorXd mid_ranks(const Eigen::VectorXd& values) {
  const auto n = values.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return values(i) < values(j); });
  Eigen::VectorXd ranks(n);
  for (Eigen::Index start = 0; start < n;) {
    Eigen::Index stop = start + 1;
    while (stop < n && values(order[static_cast<std::size_t>(stop)]) == values(order[static_cast<std::size_t>(start)])) ++stop;
    const double rank = 0.5 * static_cast<double>(start + 1 + stop);
    for (Eigen::Index k = start; k < stop; ++k) ranks(order[static_cast<std::size_t>(k)]) = rank;
    start = stop;
  }
  return ranks;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, WilcoxonMethod method) {
  if (a.size() != b.size()) throw validation_error("shape", "wilcoxon: samples differ in length");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) diffs.push_back(a[i] - b[i]);
  const int n = static_cast<int>(diffs.size());
  if (n < 5)
    throw validation_error("insufficient_sample",
                           "wilcoxon: need >= 5 nonzero differences, got " + std::to_string(n));

  Eigen::VectorXd abs_diff(n);
  for (int i = 0; i < n; ++i) abs_diff(i) = std::abs(diffs[static_cast<std::size_t>(i)]);
  const Eigen::VectorXd ranks = mid_ranks(abs_diff);

  WilcoxonResult out;
  out.n = n;
  for (int i = 0; i < n; ++i)
    if (diffs[static_cast<std::size_t>(i)] > 0) out.w_plus += ranks(i);

  const bool exact = method == WilcoxonMethod::Exact || (method == WilcoxonMethod::Auto && n <= 20);
  out.exact = exact;
  if (exact) {
    if (n > 40) throw validation_error("config", "wilcoxon: exact null limited to n <= 40");
    // Doubled mid-ranks are integers, so the null distribution of 2 W+ is a
    // subset-sum count over 2^n equally likely sign patterns.
    std::vector<int> doubled(static_cast<std::size_t>(n));
    int total = 0;
    for (int i = 0; i < n; ++i) total += doubled[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(2.0 * ranks(i)));
    std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
    count[0] = 1.0;
    for (int r : doubled)
      for (int s = total; s >= r; --s) count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - r)];
    const double patterns = std::ldexp(1.0, n);
    const int w = static_cast<int>(std::lround(2.0 * out.w_plus));
    double lower = 0.0, upper = 0.0;
    for (int s = 0; s <= total; ++s) {
      if (s <= w) lower += count[static_cast<std::size_t>(s)];
      if (s >= w) upper += count[static_cast<std::size_t>(s)];
    }
    out.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / patterns);
    return out;
  }

  const double nn = n;
  const double mean = nn * (nn + 1.0) / 4.0;
  double tie_term = 0.0;
  Eigen::VectorXd sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  for (Eigen::Index start = 0; start < n;) {
    Eigen::Index stop = start + 1;
    while (stop < n && sorted(stop) == sorted(start)) ++stop;
    const double t = static_cast<double>(stop - start);
    tie_term += t * t * t - t;
    start = stop;
  }
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  const double z = std::max(0.0, std::abs(out.w_plus - mean) - 0.5) / std::sqrt(var);
  out.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return out;
}

Eigen::MatrixX2d pca_project_2d(const Eigen::MatrixXd& samples) {
  if (samples.rows() < 1) throw validation_error("empty", "pca: no samples");
  const Eigen::MatrixXd centered = samples.rowwise() - samples.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(std::max<Eigen::Index>(1, samples.rows() - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const auto dim = cov.rows();
  Eigen::MatrixX2d out = Eigen::MatrixX2d::Zero(samples.rows(), 2);
  for (int k = 0; k < 2 && k < dim; ++k) {
    Eigen::VectorXd v = eig.eigenvectors().col(dim - 1 - k);  // eigenvalues ascend
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    out.col(k) = centered * v;
  }
  return out;
}

}  // namespace tcla
