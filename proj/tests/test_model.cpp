#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "tcla/model.hpp"

using namespace tcla;
using Eigen::MatrixXd;

namespace {

CountMatrix random_counts(int C, int T, std::mt19937_64& rng, double mean = 1.0) {
  std::poisson_distribution<int> p(mean);
  CountMatrix x(C, T);
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) x(c, t) = p(rng);
  return x;
}

template <typename Model>
std::string bytes_of(const Model& m) {
  std::string out;
  m.for_each_tensor([&](const std::string&, const auto& t) {
    out.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(t(0)));
  });
  return out;
}

const Architecture kSmall{6, 2, 2, 3};

}  // namespace

TEST_CASE("init_model is deterministic and validates q < C") {
  auto [s1, l1] = init_model<float>(kSmall, 5, 42, "src");
  auto [s2, l2] = init_model<float>(kSmall, 5, 42, "src");
  CHECK(bytes_of(s1) == bytes_of(s2));
  CHECK(bytes_of(l1) == bytes_of(l2));
  auto [s3, l3] = init_model<float>(kSmall, 5, 43, "src");
  CHECK(bytes_of(s1) != bytes_of(s3));
  CHECK_THROWS_AS(init_model<float>(kSmall, 2, 42, "src"), Error);
  CHECK_THROWS_AS(init_model<float>(Architecture{6, 2, 2, 4}, 5, 42, "src"), Error);
}

TEST_CASE("zero input reproduces the calibrated mean rates") {
  Eigen::VectorXd mean(5);
  mean << 0.05, 0.1, 0.4, 1.0, 2.5;
  auto [shared, layers] = init_model<double>(kSmall, 5, 1, "src", &mean);
  const auto fwd = forward(CountMatrix(CountMatrix::Zero(5, 8)), layers, shared);
  for (int c = 0; c < 5; ++c)
    for (int t = 0; t < 8; ++t) CHECK(std::abs(fwd.rates(c, t) / mean(c) - 1.0) <= 0.2);
}

TEST_CASE("session layers attach to the same shared module") {
  auto [shared, src] = init_model<float>(kSmall, 5, 1, "src");
  const std::string before = bytes_of(shared);
  const auto a = add_session_layers(shared, "a", 7, 10);
  const auto b = add_session_layers(shared, "b", 5, 11);
  CHECK(a.read_in_weight.cols() == 7);
  CHECK(a.read_out_weight.rows() == 7);
  CHECK(b.read_in_weight.rows() == src.read_in_weight.rows());
  CHECK(b.read_in_weight.cols() == src.read_in_weight.cols());
  CHECK(bytes_of(b) != bytes_of(src));
  CHECK(bytes_of(shared) == before);
  CHECK_THROWS_AS(add_session_layers(shared, "c", 2, 1), Error);
}

TEST_CASE("forward shapes, positivity and determinism") {
  std::mt19937_64 rng(2);
  auto [shared, layers] = init_model<float>(kSmall, 5, 3, "src");
  for (int T : {2, 7, 20}) {
    const CountMatrix x = random_counts(5, T, rng, 3.0);
    const auto f1 = forward(x, layers, shared);
    const auto f2 = forward(x, layers, shared);
    CHECK(f1.latent.rows() == 2);
    CHECK(f1.latent.cols() == T);
    CHECK(f1.rates.rows() == 5);
    CHECK(f1.rates.cols() == T);
    CHECK((f1.rates.array() > 0).all());
    CHECK(f1.latent.allFinite());
    CHECK((f1.rates.array() == f2.rates.array()).all());
  }
  CHECK((forward(CountMatrix(CountMatrix::Zero(5, 4)), layers, shared).rates.array() > 0).all());
  CHECK_THROWS_AS(forward(CountMatrix(CountMatrix::Zero(4, 4)), layers, shared), Error);
  // Extreme input still gives finite positive rates through the clamp.
  const auto big = forward(CountMatrix(CountMatrix::Constant(5, 6, 60000)), layers, shared);
  CHECK(big.rates.allFinite());
  CHECK((big.rates.array() > 0).all());
}

TEST_CASE("read-in acts independently per time bin") {
  // No blocks and an identity latent map expose the read-in embedding directly.
  Architecture arch{4, 4, 0, 1};
  auto [shared, layers] = init_model<double>(arch, 6, 5, "src");
  shared.latent_weight.setIdentity();
  shared.latent_bias.setZero();
  std::mt19937_64 rng(8);
  const CountMatrix x = random_counts(6, 9, rng, 2.0);
  std::vector<int> perm{3, 0, 8, 1, 7, 2, 6, 4, 5};
  CountMatrix xp(6, 9);
  for (int t = 0; t < 9; ++t) xp.col(t) = x.col(perm[static_cast<std::size_t>(t)]);
  const MatrixXd z = encode(x, layers, shared);
  const MatrixXd zp = encode(xp, layers, shared);
  for (int t = 0; t < 9; ++t) CHECK((zp.col(t).array() == z.col(perm[static_cast<std::size_t>(t)]).array()).all());
}

TEST_CASE("parameter partition is disjoint and exhaustive") {
  auto [shared, src] = init_model<float>(kSmall, 5, 1, "src");
  std::vector<SessionLayers<float>> sessions{src, add_session_layers(shared, "tgt", 6, 2)};
  const auto part = parameter_partition<float>(shared, sessions);
  std::set<std::string> all;
  int total = 0;
  shared.for_each_tensor([&](const std::string& n, const auto&) {
    all.insert("shared." + n);
    ++total;
  });
  for (const auto& s : sessions)
    s.for_each_tensor([&](const std::string& n, const auto&) {
      all.insert("session." + s.session_id + "." + n);
      ++total;
    });
  std::set<std::string> got(part.shared_names.begin(), part.shared_names.end());
  for (const auto& n : part.session_names) CHECK(got.insert(n).second);
  CHECK(got == all);
  CHECK(static_cast<int>(part.shared_names.size() + part.session_names.size()) == total);
  sessions.push_back(sessions.front());
  CHECK_THROWS_AS(parameter_partition<float>(shared, sessions), Error);
}

TEST_CASE("backward matches finite differences for every tensor") {
  std::mt19937_64 rng(11);
  Eigen::VectorXd mean = Eigen::VectorXd::Constant(5, 0.8);
  auto [shared, layers] = init_model<double>(kSmall, 5, 4, "src", &mean);
  // Nonzero biases so every path carries gradient.
  shared.for_each_tensor([&](const std::string&, auto& t) { t += 0.1 * oracle::MatrixXd::Random(t.rows(), t.cols()); });
  layers.for_each_tensor([&](const std::string&, auto& t) { t += 0.1 * oracle::MatrixXd::Random(t.rows(), t.cols()); });
  const CountMatrix x = random_counts(5, 7, rng, 1.0);
  const DropoutMask mask = coordinated_dropout_mask(7, DropoutConfig{0.3, 5}, 1);
  const RegConfig reg{5e-4, 0.1, 2};

  auto loss = [&]() {
    const auto f = forward(x, layers, shared, &mask);
    return poisson_nll(f.rates, x, &mask.masked) + latent_reg(f.latent, reg);
  };
  ForwardTrace<double> trace;
  const auto f = forward(x, layers, shared, &mask, &trace);
  const MatrixXd d_rates = poisson_nll_grad(f.rates, x, &mask.masked);
  const MatrixXd d_latent = latent_reg_grad(f.latent, reg);
  auto g_shared = shared.zeros_like();
  auto g_layers = layers.zeros_like();
  backward(trace, d_rates, &d_latent, layers, shared, GradSinks<double>{&g_shared, &g_layers});

  auto check_model = [&](auto& model, auto& grads) {
    std::vector<MatrixXd> analytic;
    grads.for_each_tensor([&](const std::string&, const auto& g) { analytic.push_back(g.reshaped()); });
    std::size_t k = 0;
    model.for_each_tensor([&](const std::string& name, auto& t) {
      MatrixXd numeric(t.size(), 1);
      for (Eigen::Index i = 0; i < t.size(); ++i) {
        const double saved = t.data()[i];
        t.data()[i] = saved + 1e-6;
        const double up = loss();
        t.data()[i] = saved - 1e-6;
        const double down = loss();
        t.data()[i] = saved;
        numeric(i) = (up - down) / 2e-6;
      }
      INFO(name);
      CHECK(oracle::relative_error(analytic[k++], numeric) <= 1e-5);
    });
  };
  check_model(shared, g_shared);
  check_model(layers, g_layers);

  // A frozen shared module receives nothing but still passes gradient through.
  auto g_layers2 = layers.zeros_like();
  backward(trace, d_rates, &d_latent, layers, shared, GradSinks<double>{nullptr, &g_layers2});
  CHECK(bytes_of(g_layers2) == bytes_of(g_layers));
}
