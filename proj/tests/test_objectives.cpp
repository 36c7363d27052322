#include <cmath>
#include <random>

#include "doctest.h"
#include "gradient_checks.hpp"
#include "oracles.hpp"
#include "tcla/objectives.hpp"

using namespace tcla;
using Eigen::MatrixXd;

namespace {

MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = n(rng);
  return m;
}

CountMatrix counts(std::initializer_list<std::initializer_list<int>> rows) {
  CountMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (int v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

ConditionSets<double> random_sets(std::mt19937_64& rng, int D, int q, int T, int max_trials, bool allow_empty) {
  ConditionSets<double> sets(static_cast<std::size_t>(D));
  std::uniform_int_distribution<int> count(allow_empty ? 0 : 1, max_trials);
  for (auto& s : sets) {
    const int n = count(rng);
    for (int i = 0; i < n; ++i) s.push_back(random_matrix(q, T, rng));
  }
  return sets;
}

}  // namespace

TEST_CASE("poisson_nll hand values") {
  const MatrixXd one = MatrixXd::Constant(1, 1, 1.0);
  CHECK(poisson_nll(one, counts({{0}})) == doctest::Approx(1.0));
  CHECK(poisson_nll(one, counts({{1}})) == doctest::Approx(1.0));
  const MatrixXd two = MatrixXd::Constant(1, 1, 2.0);
  CHECK(poisson_nll(two, counts({{3}})) == doctest::Approx(2.0 - 3.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("poisson_nll is minimized at r = x") {
  for (int x = 1; x <= 20; ++x) {
    const CountMatrix c = counts({{x}});
    const double at = poisson_nll(MatrixXd(MatrixXd::Constant(1, 1, x)), c);
    CHECK(at < poisson_nll(MatrixXd(MatrixXd::Constant(1, 1, x * 1.1)), c));
    CHECK(at < poisson_nll(MatrixXd(MatrixXd::Constant(1, 1, x * 0.9)), c));
  }
}

TEST_CASE("poisson_nll mask restricts the sum and bad input is rejected") {
  const MatrixXd r = MatrixXd::Constant(2, 3, 1.5);
  const CountMatrix x = counts({{1, 2, 3}, {0, 1, 4}});
  BinMask mask(3);
  mask << true, false, true;
  double expected = 0.0;
  for (int t : {0, 2})
    for (int c = 0; c < 2; ++c) expected += 1.5 - x(c, t) * std::log(1.5);
  CHECK(poisson_nll(r, x, &mask) == doctest::Approx(expected).epsilon(1e-12));
  CHECK_THROWS_AS(poisson_nll(MatrixXd(MatrixXd::Constant(2, 3, 0.0)), x), Error);
  CHECK_THROWS_AS(poisson_nll(MatrixXd(MatrixXd::Constant(3, 3, 1.0)), x), Error);
}

TEST_CASE("latent_reg hand values") {
  RegConfig cfg{0.0, 1.0, 2};
  MatrixXd z(1, 3);
  z << 0, 1, 2;
  // w=1: (1 + 1)/2, w=2: 4/3
  CHECK(latent_reg(z, cfg) == doctest::Approx(7.0 / 3.0).epsilon(1e-12));
  CHECK(latent_reg(MatrixXd(MatrixXd::Zero(3, 5)), RegConfig{5e-4, 0.05, 2}) == 0.0);
  CHECK(latent_reg(MatrixXd(MatrixXd::Constant(3, 5, 2.5)), RegConfig{0.0, 0.05, 4}) == 0.0);
}

TEST_CASE("latent_reg is linear in beta1 and beta2") {
  std::mt19937_64 rng(3);
  const MatrixXd z = random_matrix(4, 12, rng);
  const double a = latent_reg(z, RegConfig{1e-4, 0.0, 3});
  const double b = latent_reg(z, RegConfig{0.0, 0.01, 3});
  CHECK(latent_reg(z, RegConfig{3e-4, 0.0, 3}) == doctest::Approx(3 * a).epsilon(1e-12));
  CHECK(latent_reg(z, RegConfig{0.0, 0.05, 3}) == doctest::Approx(5 * b).epsilon(1e-12));
  CHECK(latent_reg(z, RegConfig{1e-4, 0.01, 3}) == doctest::Approx(a + b).epsilon(1e-12));
}

TEST_CASE("bandwidth ladder examples") {
  MatrixXd p(1, 2);
  p << 0, 2;  // squared distance 4
  auto s1 = mmd_bandwidths(p, 1, 2.0, 1e-8);
  REQUIRE(s1.size() == 1);
  CHECK(s1[0] == 4.0);
  auto s3 = mmd_bandwidths(p, 3, 2.0, 1e-8);
  CHECK(s3 == std::vector<double>{2.0, 4.0, 8.0});
  auto floored = mmd_bandwidths(MatrixXd(MatrixXd::Constant(3, 5, 1.25)), 3, 2.0, 1e-8);
  CHECK(floored == std::vector<double>{1e-8, 1e-8, 1e-8});
  CHECK_THROWS_AS(mmd_bandwidths(MatrixXd(MatrixXd::Zero(2, 1)), 3, 2.0, 1e-8), Error);
}

TEST_CASE("gaussian_multikernel values and symmetry") {
  const MatrixXd a = MatrixXd::Constant(2, 1, 0.3);
  CHECK(gaussian_multikernel(a, a, std::vector<double>{1.0, 2.0, 4.0}) == doctest::Approx(3.0));
  MatrixXd u(1, 1), v(1, 1);
  u << 0.0;
  v << 1.5;
  CHECK(gaussian_multikernel(u, v, std::vector<double>{2.25}) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  std::mt19937_64 rng(5);
  for (int k = 0; k < 20; ++k) {
    const MatrixXd A = random_matrix(3, 4, rng), B = random_matrix(3, 6, rng);
    const std::vector<double> s{0.5, 1.0, 2.0};
    CHECK(std::abs(gaussian_multikernel(A, B, s) - gaussian_multikernel(B, A, s)) <= 1e-12);
  }
  CHECK_THROWS_AS(gaussian_multikernel(MatrixXd(2, 0), a, std::vector<double>{1.0}), Error);
  CHECK_THROWS_AS(gaussian_multikernel(a, a, std::vector<double>{0.0}), Error);
}

TEST_CASE("conditional_mmd singleton closed form") {
  MMDConfig cfg;
  cfg.num_bandwidths = 1;
  cfg.granularity = Granularity::PerTrialFlat;
  // Pooled {u, v}: bandwidth = ||u - v||^2, so each term is 2 - 2 e^-1.
  ConditionSets<double> S(2), T(2);
  S[0].push_back(MatrixXd::Constant(1, 1, 0.0));
  T[0].push_back(MatrixXd::Constant(1, 1, 2.0));
  S[1].push_back(MatrixXd::Constant(1, 1, 1.0));
  T[1].push_back(MatrixXd::Constant(1, 1, -0.5));
  CHECK(conditional_mmd(S, T, cfg).value == doctest::Approx(2 * (2 - 2 * std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("conditional_mmd reports skipped directions") {
  std::mt19937_64 rng(9);
  MMDConfig cfg;
  ConditionSets<double> S(3), T(3);
  for (auto& s : S) s.push_back(random_matrix(2, 4, rng));
  T[0].push_back(random_matrix(2, 4, rng));
  T[2].push_back(random_matrix(2, 4, rng));
  const auto r = conditional_mmd(S, T, cfg);
  CHECK(r.used_directions == std::vector<int>{1, 3});
  CHECK(r.skipped_directions == std::vector<int>{2});
  ConditionSets<double> empty(3);
  CHECK_THROWS_AS(conditional_mmd(S, empty, cfg), Error);
}

TEST_CASE("conditional_mmd matches the triple-loop oracle with subsampling") {
  std::mt19937_64 rng(17);
  MMDConfig cfg;
  cfg.max_samples_per_condition = 7;  // forces stride subsampling of 3 x 5 bins
  for (int k = 0; k < 10; ++k) {
    const auto S = random_sets(rng, 3, 2, 5, 3, false), T = random_sets(rng, 3, 2, 5, 3, false);
    CHECK(std::abs(conditional_mmd(S, T, cfg).value - oracle::conditional_mmd(S, T, cfg)) <= 1e-10);
  }
}

TEST_CASE("stride subsample picks floor(kN/M)") {
  CHECK(stride_subsample(10, 4) == std::vector<int>{0, 2, 5, 7});
  CHECK(stride_subsample(3, 5) == std::vector<int>{0, 1, 2});
}

TEST_CASE("coordinated dropout masks") {
  DropoutConfig off{0.0, 1};
  const auto s = coordinated_dropout_mask(50, off, 3);
  CHECK_FALSE(s.active);
  CHECK(s.masked.all());
  CHECK(s.input_scale == 1.0);

  DropoutConfig on{0.25, 7};
  const auto m = coordinated_dropout_mask(10000, on, 42);
  const double frac = m.num_masked() / 10000.0;
  CHECK(frac >= 0.235);
  CHECK(frac <= 0.265);
  CHECK((coordinated_dropout_mask(10000, on, 42).masked == m.masked).all());
  CHECK_FALSE((coordinated_dropout_mask(10000, on, 43).masked == m.masked).all());
  CHECK_THROWS_AS(coordinated_dropout_mask(10, DropoutConfig{1.0, 0}, 0), Error);
}

TEST_CASE("config ranges") {
  CHECK_NOTHROW(RegConfig{}.validate(60));
  CHECK_THROWS_AS((RegConfig{2e-3, 0.05, 5}.validate(60)), Error);
  CHECK_THROWS_AS((RegConfig{5e-4, 0.05, 60}.validate(60)), Error);
  MMDConfig m;
  m.beta3 = 20;
  CHECK_THROWS_AS(m.validate(), Error);
  m.beta3 = 0;
  CHECK_NOTHROW(m.validate());
  m.bandwidth_scale = 1.0;
  CHECK_THROWS_AS(m.validate(), Error);
}

TEST_CASE("analytic gradients match central differences") {
  CHECK(gradcheck::poisson_nll(8, 1) <= 1e-6);
  CHECK(gradcheck::latent_reg(8, 2) <= 1e-6);
  CHECK(gradcheck::conditional_mmd(8, 3) <= 1e-5);
}
