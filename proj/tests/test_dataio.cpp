#include <algorithm>
#include <filesystem>
#include <functional>
#include <fstream>
#include <random>

#include "doctest.h"
#include "tcla/synthgen.hpp"

using namespace tcla;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tcla_test_" + name);
  fs::remove_all(p);
  return p;
}

SessionDataset sample_dataset(int n = 24) {
  GenConfig g;
  g.trials_per_session = n;
  g.num_channels = 6;
  g.num_bins = 10;
  g.reach_duration_bins = 8;
  return generate_session(g, DriftConfig::identity(2), "demo");
}

std::string expect_error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code() + ": " + e.what();
  }
  return "no error";
}

}  // namespace

TEST_CASE("bundle roundtrip is exact and digests are stable") {
  const SessionDataset ds = sample_dataset();
  const fs::path dir = scratch("roundtrip");
  const std::string digest = write_bundle(ds, dir);
  CHECK(read_bundle(dir) == ds);
  CHECK(write_bundle(ds, dir) == digest);
  CHECK(digest.size() == 64);
}

TEST_CASE("minimal bundle has n*C*T*2 spike bytes") {
  SessionDataset ds;
  ds.session_id = "tiny";
  ds.num_directions = 2;
  ds.spikes.push_back(CountMatrix::Constant(1, 2, 3));
  ds.position.push_back(PositionMatrix::Zero(2, 2));
  ds.labels.push_back(2);
  const fs::path dir = scratch("minimal");
  write_bundle(ds, dir);
  CHECK(fs::file_size(dir / "spikes.bin") == 4);
  CHECK(fs::file_size(dir / "kinematics.bin") == 16);
  CHECK(fs::file_size(dir / "labels.bin") == 1);
  std::ifstream in(dir / "labels.bin", std::ios::binary);
  CHECK(in.get() == 1);  // stored zero-based
}

TEST_CASE("read_bundle reports each failure distinctly") {
  const SessionDataset ds = sample_dataset();
  const fs::path dir = scratch("broken");
  write_bundle(ds, dir);
  fs::resize_file(dir / "spikes.bin", fs::file_size(dir / "spikes.bin") - 2);
  const std::string size_err = expect_error_code([&] { read_bundle(dir); });
  CHECK(size_err.rfind("size_mismatch", 0) == 0);
  CHECK(size_err.find("spikes.bin") != std::string::npos);

  write_bundle(ds, dir);
  {
    std::fstream f(dir / "labels.bin", std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(5);
    f.put(static_cast<char>(ds.num_directions));  // label D + 1
  }
  const std::string label_err = expect_error_code([&] { read_bundle(dir); });
  CHECK(label_err.rfind("label_range", 0) == 0);
  CHECK(label_err.find("trial 5") != std::string::npos);

  write_bundle(ds, dir);
  fs::remove(dir / "kinematics.bin");
  CHECK(expect_error_code([&] { read_bundle(dir); }).rfind("missing_file", 0) == 0);

  write_bundle(ds, dir);
  {
    std::ifstream in(dir / "manifest.json");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto pos = text.find("\"format_version\": 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 19, "\"format_version\": 9");
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << text;
  }
  CHECK(expect_error_code([&] { read_bundle(dir); }).rfind("unsupported_version", 0) == 0);
}

TEST_CASE("bin_spikes uses half-open bins") {
  const CountMatrix a = bin_spikes({{0.0, 4.9}}, 0.0, 2, 5.0);
  CHECK(a(0, 0) == 2);
  CHECK(a(0, 1) == 0);
  const CountMatrix b = bin_spikes({{5.0}}, 0.0, 2, 5.0);
  CHECK(b(0, 0) == 0);
  CHECK(b(0, 1) == 1);
  CHECK(bin_spikes({{}, {}}, 0.0, 3, 5.0).sum() == 0);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-20.0, 120.0);
  std::vector<std::vector<double>> events(3);
  int inside = 0;
  for (auto& ch : events)
    for (int k = 0; k < 200; ++k) {
      const double t = u(rng);
      ch.push_back(t);
      if (t >= 10.0 && t < 10.0 + 18 * 5.0) ++inside;
    }
  CHECK(bin_spikes(events, 10.0, 18, 5.0).sum() == inside);
}

TEST_CASE("splits hit the stated ratios") {
  const SessionDataset ds = sample_dataset(200);
  SplitSpec source{{8, 1, 1}, true, 1};
  const auto s = split_indices(ds, source);
  CHECK(s.train.size() == 160);
  CHECK(s.val.size() == 20);
  CHECK(s.test.size() == 20);
  SplitSpec target{{1, 1, 3}, true, 1};
  const auto t = split_indices(ds, target);
  CHECK(t.train.size() == 40);
  CHECK(t.val.size() == 40);
  CHECK(t.test.size() == 120);

  std::vector<int> all;
  for (const auto* part : {&t.train, &t.val, &t.test}) all.insert(all.end(), part->begin(), part->end());
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 200; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);

  const auto again = split_indices(ds, target);
  CHECK(again.train == t.train);
  CHECK(again.test == t.test);
  SplitSpec other = target;
  other.seed = 2;
  CHECK(split_indices(ds, other).train != t.train);
}

TEST_CASE("direction with too few trials is rejected when stratified") {
  SessionDataset ds = sample_dataset(24);
  // Direction 1 keeps only two trials.
  std::vector<int> keep;
  int seen = 0;
  for (int i = 0; i < ds.num_trials(); ++i)
    if (ds.labels[static_cast<std::size_t>(i)] != 1 || seen++ < 2) keep.push_back(i);
  const SessionDataset thin = ds.subset(keep);
  CHECK_THROWS_AS(split_indices(thin, SplitSpec{{1, 1, 3}, true, 0}), Error);
  CHECK_NOTHROW(split_indices(thin, SplitSpec{{1, 1, 3}, false, 0}));
}

TEST_CASE("apportion is largest remainder") {
  const std::vector<int> w{1, 1, 3};
  CHECK(apportion(25, w) == std::vector<int>{5, 5, 15});
  CHECK(apportion(12, w) == std::vector<int>{3, 2, 7});
}

TEST_CASE("velocity is a forward difference with the last bin repeated") {
  PositionMatrix p(2, 4);
  p << 0, 1, 3, 6, 0, 0, -1, -1;
  const auto v = velocity_from_position(p, 5.0);
  CHECK(v(0, 0) == doctest::Approx(200.0));
  CHECK(v(0, 2) == doctest::Approx(600.0));
  CHECK(v(0, 3) == v(0, 2));
  CHECK(v(1, 1) == doctest::Approx(-200.0));
}
