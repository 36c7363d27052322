#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "tcla/evaluate.hpp"
#include "tcla/synthgen.hpp"

using namespace tcla;

namespace {

// Exact two-sided signed-rank p-value by enumerating all 2^n sign flips.
double brute_force_wilcoxon(const std::vector<double>& d) {
  std::vector<double> nz;
  for (double x : d)
    if (x != 0.0) nz.push_back(x);
  const auto n = static_cast<int>(nz.size());
  Eigen::VectorXd abs(n);
  for (int i = 0; i < n; ++i) abs(i) = std::abs(nz[static_cast<std::size_t>(i)]);
  const Eigen::VectorXd r = mid_ranks(abs);
  double w = 0.0;
  for (int i = 0; i < n; ++i)
    if (nz[static_cast<std::size_t>(i)] > 0) w += r(i);
  const double centre = r.sum() / 2.0;
  const double dev = std::abs(w - centre);
  long long extreme = 0;
  for (long long mask = 0; mask < (1LL << n); ++mask) {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      if (mask >> i & 1) s += r(i);
    if (std::abs(s - centre) >= dev - 1e-9) ++extreme;
  }
  return std::min(1.0, static_cast<double>(extreme) / static_cast<double>(1LL << n));
}

}  // namespace

TEST_CASE("r_squared examples and invariances") {
  const std::vector<double> truth{1, 2, 3};
  CHECK(r_squared(std::vector<double>{1, 2, 3}, truth) == 1.0);
  CHECK(r_squared(std::vector<double>{2, 2, 2}, truth) == doctest::Approx(0.0));
  CHECK(r_squared(std::vector<double>{1, 2, 4}, truth) == doctest::Approx(0.5));
  CHECK(r_squared(std::vector<double>{3, 2, 1}, truth) == doctest::Approx(-3.0));

  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<double> y(50), p(50), ys(50), ps(50);
  for (std::size_t i = 0; i < 50; ++i) {
    y[i] = g(rng);
    p[i] = y[i] + 0.3 * g(rng);
    ys[i] = 7.0 * y[i] - 4.0;
    ps[i] = 7.0 * p[i] - 4.0;
  }
  CHECK(r_squared(ps, ys) == doctest::Approx(r_squared(p, y)).epsilon(1e-12));

  try {
    r_squared(std::vector<double>{1, 2}, std::vector<double>{5, 5});
    FAIL("expected degenerate target");
  } catch (const Error& e) {
    CHECK(e.code() == "degenerate_target");
  }
  CHECK_THROWS_AS(r_squared(std::vector<double>{1}, std::vector<double>{1, 2}), Error);
}

TEST_CASE("bootstrap interval behaves on simple inputs") {
  const std::vector<double> same{0.4, 0.4, 0.4, 0.4};
  const auto c = bootstrap_ci(same, 500, 0.05, 3);
  CHECK(c.mean == doctest::Approx(0.4));
  CHECK(c.lo == doctest::Approx(0.4));
  CHECK(c.hi == doctest::Approx(0.4));

  const auto one = bootstrap_ci(std::vector<double>{2.5}, 100);
  CHECK(one.lo == 2.5);
  CHECK(one.hi == 2.5);

  std::vector<double> v;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(1.0, 1.0);
  for (int i = 0; i < 30; ++i) v.push_back(g(rng));
  const double sample_mean = std::accumulate(v.begin(), v.end(), 0.0) / 30.0;
  const auto a = bootstrap_ci(v, 4000, 0.05, 9);
  const auto b = bootstrap_ci(v, 4000, 0.05, 9);
  CHECK(a.lo == b.lo);
  CHECK(a.hi == b.hi);
  CHECK(a.lo < sample_mean);
  CHECK(a.hi > sample_mean);
  CHECK(a.mean == doctest::Approx(sample_mean).epsilon(0.02));
  // Standard error of the mean is about 1/sqrt(30); the 95% width is near 4 SE.
  CHECK((a.hi - a.lo) == doctest::Approx(3.92 / std::sqrt(30.0)).epsilon(0.25));
  const auto wide = bootstrap_ci(v, 4000, 0.01, 9);
  CHECK(wide.lo <= a.lo);
  CHECK(wide.hi >= a.hi);
  CHECK_THROWS_AS(bootstrap_ci(std::vector<double>{}, 10), Error);
  CHECK_THROWS_AS(bootstrap_ci(v, 10, 1.5), Error);
}

TEST_CASE("wilcoxon exact null matches enumeration") {
  const std::vector<double> a{1, 2, 3, 4, 5}, b(5, 0.0);
  const auto r = wilcoxon_signed_rank(a, b);
  CHECK(r.exact);
  CHECK(r.n == 5);
  CHECK(r.w_plus == 15.0);
  CHECK(r.p_value == doctest::Approx(0.0625));

  const std::vector<double> x{0.3, -0.1, 0.5, 0.5, -0.2, 0.7, 0.1, 0.0, -0.4, 0.9, 0.3};
  const std::vector<double> zero(x.size(), 0.0);
  CHECK(wilcoxon_signed_rank(x, zero).p_value == doctest::Approx(brute_force_wilcoxon(x)).epsilon(1e-12));

  std::vector<double> neg(x);
  for (double& v : neg) v = -v;
  CHECK(wilcoxon_signed_rank(neg, zero).p_value == doctest::Approx(wilcoxon_signed_rank(x, zero).p_value));
  CHECK(wilcoxon_signed_rank(x, zero).p_value == doctest::Approx(wilcoxon_signed_rank(zero, x).p_value));
}

TEST_CASE("wilcoxon normal approximation tracks the exact null") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.3, 1.0);
  std::vector<double> d(20), zero(20, 0.0);
  for (double& v : d) v = g(rng);
  const auto exact = wilcoxon_signed_rank(d, zero, WilcoxonMethod::Exact);
  const auto normal = wilcoxon_signed_rank(d, zero, WilcoxonMethod::Normal);
  CHECK(exact.exact);
  CHECK_FALSE(normal.exact);
  CHECK(std::abs(exact.p_value - normal.p_value) < 0.02);
  CHECK(exact.p_value == doctest::Approx(brute_force_wilcoxon(d)).epsilon(1e-12));
}

TEST_CASE("wilcoxon rejects degenerate samples") {
  const std::vector<double> a{1, 2, 3, 4, 5, 6};
  try {
    wilcoxon_signed_rank(a, a);
    FAIL("expected insufficient sample");
  } catch (const Error& e) {
    CHECK(e.code() == "insufficient_sample");
  }
  CHECK_THROWS_AS(wilcoxon_signed_rank(a, std::vector<double>{1, 2}), Error);
}

TEST_CASE("mid ranks average ties") {
  Eigen::VectorXd v(5);
  v << 3, 1, 3, 2, 3;
  Eigen::VectorXd want(5);
  want << 4, 1, 4, 2, 4;
  CHECK(mid_ranks(v) == want);
}

TEST_CASE("pca orders components by variance and fixes signs") {
  Eigen::MatrixXd s(4, 2);
  s << 2, 0, -2, 0, 0, 1, 0, -1;
  const Eigen::MatrixX2d p = pca_project_2d(s);
  for (int i = 0; i < 4; ++i) {
    CHECK(p(i, 0) == doctest::Approx(s(i, 0)));
    CHECK(p(i, 1) == doctest::Approx(s(i, 1)));
  }
  Eigen::MatrixXd flipped = -s;
  const Eigen::MatrixX2d q = pca_project_2d(flipped);
  CHECK(q(0, 0) == doctest::Approx(-2.0));

  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  Eigen::MatrixXd cloud(200, 5);
  for (int i = 0; i < 200; ++i)
    for (int j = 0; j < 5; ++j) cloud(i, j) = g(rng) * (5 - j);
  const Eigen::MatrixX2d c = pca_project_2d(cloud);
  CHECK(c.col(0).squaredNorm() > c.col(1).squaredNorm());
  CHECK(std::abs(c.col(0).mean()) < 1e-9);
}

TEST_CASE("ridge decoder recovers a noiseless linear map") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  Eigen::Matrix<double, 2, 5> A;
  A << 1, -2, 0.5, 0, 3, 0.2, 0.1, -1, 2, 0;
  const Eigen::Vector2d b(0.7, -1.3);
  std::vector<Mat<float>> rates;
  std::vector<Eigen::Matrix2Xd> kin;
  for (int trial = 0; trial < 12; ++trial) {
    Mat<float> r(5, 30);
    for (int t = 0; t < 30; ++t)
      for (int c = 0; c < 5; ++c) r(c, t) = static_cast<float>(u(rng));
    rates.push_back(r);
    kin.push_back((A * r.cast<double>()).colwise() + b);
  }
  DecoderConfig cfg;
  cfg.kind = DecoderKind::LinearRidge;
  cfg.ridge_lambda = 1e-6;
  const DecoderModel m = train_decoder(rates, kin, cfg);
  const auto pred = m.predict(rates);
  for (int axis = 0; axis < 2; ++axis) {
    std::vector<double> p, y;
    for (std::size_t i = 0; i < pred.size(); ++i)
      for (Eigen::Index t = 0; t < pred[i].cols(); ++t) {
        p.push_back(pred[i](axis, t));
        y.push_back(kin[i](axis, t));
      }
    CHECK(r_squared(p, y) > 0.999);
  }
}

TEST_CASE("recurrent decoder is deterministic and handles one trial") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Mat<float>> rates;
  std::vector<Eigen::Matrix2Xd> kin;
  for (int trial = 0; trial < 6; ++trial) {
    Mat<float> r(4, 15);
    Eigen::Matrix2Xd k(2, 15);
    double acc = 0.0;
    for (int t = 0; t < 15; ++t) {
      for (int c = 0; c < 4; ++c) r(c, t) = static_cast<float>(u(rng));
      acc += r(0, t) - 0.5;
      k(0, t) = acc;
      k(1, t) = r(1, t);
    }
    rates.push_back(r);
    kin.push_back(k);
  }
  DecoderConfig cfg;
  cfg.hidden_size = 6;
  cfg.max_epochs = 40;
  cfg.patience = 10;
  const DecoderModel a = train_decoder(rates, kin, cfg);
  const DecoderModel b = train_decoder(rates, kin, cfg);
  const auto pa = a.predict(rates), pb = b.predict(rates);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i] == pb[i]);
    CHECK(pa[i].allFinite());
  }
  cfg.seed = 99;
  CHECK(train_decoder(rates, kin, cfg).predict(rates)[0] != pa[0]);

  const DecoderModel single = train_decoder({rates[0]}, {kin[0]}, cfg);
  const auto ps = single.predict({rates[1]});
  REQUIRE(ps.size() == 1);
  CHECK(ps[0].cols() == 15);
  CHECK(ps[0].allFinite());

  std::vector<Eigen::Matrix2Xd> bad = kin;
  bad[2](0, 3) = std::nan("");
  CHECK_THROWS_AS(train_decoder(rates, bad, cfg), Error);
}

TEST_CASE("latent projection covers every trial once") {
  GenConfig g;
  g.trials_per_session = 16;
  g.num_channels = 8;
  g.num_bins = 12;
  g.reach_duration_bins = 10;
  const auto sessions = make_multisession(g, {DriftConfig::identity(1), DriftConfig::identity(2)});
  Architecture arch{8, 3, 1, 3};
  auto [shared, layers] = init_model<Real>(arch, 8, 5, sessions[0].session_id);
  Checkpoint ckpt;
  ckpt.stage = "stage1";
  ckpt.source_session = sessions[0].session_id;
  ckpt.shared = shared;
  ckpt.sessions.emplace(sessions[0].session_id, layers);
  ckpt.sessions.emplace(sessions[1].session_id, add_session_layers(shared, sessions[1].session_id, 8, 6));
  const auto rows = export_latent_projection({{&ckpt, &sessions[0]}, {&ckpt, &sessions[1]}});
  REQUIRE(rows.size() == 32);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& ds = sessions[i / 16];
    CHECK(rows[i].session_id == ds.session_id);
    CHECK(rows[i].trial == static_cast<int>(i % 16));
    CHECK(rows[i].direction == ds.labels[i % 16]);
  }
  const std::string csv = projection_csv(rows);
  CHECK(csv.rfind("session_id,trial,direction,pc1,pc2\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 33);
}

TEST_CASE("report aggregates cells and pairs methods") {
  std::vector<CellResult> cells;
  for (int s = 1; s <= 3; ++s)
    for (int run = 0; run < 2; ++run) {
      CellResult a{"session0" + std::to_string(s), "tcla", run, {0.9, 0.9, 0.8 + 0.01 * s, 0.8}, 1.0, 0.1};
      CellResult b{"session0" + std::to_string(s), "ldnsws", run, {0.7, 0.7, 0.6, 0.6 - 0.01 * run}, {}, {}};
      cells.push_back(a);
      cells.push_back(b);
    }
  EvalConfig eval;
  eval.bootstrap_resamples = 200;
  const ojson report = build_report(cells, {"tcla", "ldnsws"}, eval, ojson::object());
  CHECK(report["sessions"].size() == 3);
  const ojson* vel = nullptr;
  for (const auto& cmp : report["comparisons"])
    if (cmp["variable"] == "vel_mean") vel = &cmp;
  REQUIRE(vel);
  CHECK((*vel)["a"] == "tcla");
  CHECK((*vel)["mean_difference"].get<double>() > 0.2);
  CHECK((*vel)["session_run"]["p_value"].get<double>() == doctest::Approx(2.0 / 64.0));
  CHECK((*vel)["session_mean"]["error"] == "insufficient_sample");
  CHECK(cell_from_json(to_json(cells[0])).r2 == cells[0].r2);
  const std::string csv = report_csv(cells);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 12 * 4);
}
