#include "tcla/dataio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <sstream>

#include <openssl/evp.h>

#include "json.hpp"

namespace tcla {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kFormatVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits = 0;
  std::memcpy(&bits, &f, sizeof bits);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

std::uint16_t get_u16(const std::string& in, std::size_t offset) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(in[offset]) |
                                    (static_cast<unsigned char>(in[offset + 1]) << 8));
}

float get_f32(const std::string& in, std::size_t offset) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b)
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + b])) << (8 * b);
  float f;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("missing_file", "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("unwritable", "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw io_error("unwritable", "short write to " + path.string());
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  unsigned char hash[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), hash, &len, EVP_sha256(), nullptr) != 1)
    throw io_error("digest", "SHA-256 computation failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[hash[i] >> 4]);
    out.push_back(kHex[hash[i] & 0xf]);
  }
  return out;
}

Eigen::Matrix2Xd velocity_from_position(const PositionMatrix& position, double bin_width_ms) {
  const Eigen::Index T = position.cols();
  const double dt = bin_width_ms / 1000.0;
  Eigen::Matrix2Xd vel(2, T);
  for (Eigen::Index t = 0; t + 1 < T; ++t)
    vel.col(t) = (position.col(t + 1).cast<double>() - position.col(t).cast<double>()) / dt;
  if (T >= 2) vel.col(T - 1) = vel.col(T - 2);
  return vel;
}

Eigen::Matrix2Xd SessionDataset::velocity(int trial) const {
  return velocity_from_position(position.at(static_cast<std::size_t>(trial)), bin_width_ms);
}

SessionDataset SessionDataset::subset(std::span<const int> trial_indices) const {
  SessionDataset out;
  out.session_id = session_id;
  out.bin_width_ms = bin_width_ms;
  out.num_directions = num_directions;
  out.spikes.reserve(trial_indices.size());
  out.position.reserve(trial_indices.size());
  out.labels.reserve(trial_indices.size());
  for (int i : trial_indices) {
    const auto k = static_cast<std::size_t>(i);
    out.spikes.push_back(spikes.at(k));
    out.position.push_back(position.at(k));
    out.labels.push_back(labels.at(k));
  }
  return out;
}

void SessionDataset::validate() const {
  if (!(bin_width_ms > 0.0) || !std::isfinite(bin_width_ms))
    throw validation_error("dataset", "bin_width_ms must be positive and finite");
  if (num_directions < 1) throw validation_error("dataset", "num_directions must be >= 1");
  const std::size_t n = labels.size();
  if (spikes.size() != n || position.size() != n)
    throw validation_error("dataset", "spikes, kinematics and labels must share the trial dimension");
  if (n == 0) return;
  const Eigen::Index C = spikes.front().rows();
  const Eigen::Index T = spikes.front().cols();
  if (T < 2) throw validation_error("dataset", "num_bins must be >= 2");
  if (C < 1) throw validation_error("dataset", "num_channels must be >= 1");
  for (std::size_t i = 0; i < n; ++i) {
    if (spikes[i].rows() != C || spikes[i].cols() != T)
      throw validation_error("dataset", "trial " + std::to_string(i) + " spike shape differs");
    if (position[i].cols() != T)
      throw validation_error("dataset", "trial " + std::to_string(i) + " kinematics length differs");
    if ((spikes[i].array() < 0).any())
      throw validation_error("dataset", "trial " + std::to_string(i) + " has negative spike counts");
    if (!position[i].allFinite())
      throw validation_error("dataset", "trial " + std::to_string(i) + " has non-finite kinematics");
    if (labels[i] < 1 || labels[i] > num_directions)
      throw validation_error("label_range", "trial " + std::to_string(i) + " label " +
                                                std::to_string(labels[i]) + " outside 1.." +
                                                std::to_string(num_directions));
  }
}

Eigen::VectorXd SessionDataset::channel_mean_counts() const {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(num_channels());
  for (const auto& x : spikes) sum += x.cast<double>().rowwise().sum();
  const double denom = static_cast<double>(num_trials()) * num_bins();
  return denom > 0 ? Eigen::VectorXd(sum / denom) : sum;
}

std::string write_bundle(const SessionDataset& dataset, const fs::path& directory) {
  dataset.validate();
  const int n = dataset.num_trials();
  const int C = dataset.num_channels();
  const int T = dataset.num_bins();

  std::string spikes;
  spikes.reserve(static_cast<std::size_t>(n) * C * T * 2);
  for (const auto& x : dataset.spikes)
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < T; ++t) {
        const std::int32_t v = x(c, t);
        if (v > std::numeric_limits<std::uint16_t>::max())
          throw validation_error("dataset", "spike count exceeds u16 range");
        put_u16(spikes, static_cast<std::uint16_t>(v));
      }

  std::string kinematics;
  kinematics.reserve(static_cast<std::size_t>(n) * 2 * T * 4);
  for (const auto& p : dataset.position)
    for (int k = 0; k < 2; ++k)
      for (int t = 0; t < T; ++t) put_f32(kinematics, p(k, t));

  std::string labels;
  for (int l : dataset.labels) {
    if (l - 1 > 255) throw validation_error("dataset", "direction label exceeds u8 range");
    labels.push_back(static_cast<char>(static_cast<unsigned char>(l - 1)));
  }

  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) throw io_error("unwritable", "cannot create " + directory.string() + ": " + ec.message());

  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["session_id"] = dataset.session_id;
  manifest["num_trials"] = n;
  manifest["num_channels"] = C;
  manifest["num_bins"] = T;
  manifest["bin_width_ms"] = dataset.bin_width_ms;
  manifest["num_directions"] = dataset.num_directions;
  manifest["files"] = {{"spikes", "spikes.bin"}, {"kinematics", "kinematics.bin"}, {"labels", "labels.bin"}};

  write_file(directory / "spikes.bin", spikes);
  write_file(directory / "kinematics.bin", kinematics);
  write_file(directory / "labels.bin", labels);
  write_file(directory / "manifest.json", manifest.dump(2) + "\n");
  return sha256_hex(spikes + kinematics + labels);
}

SessionDataset read_bundle(const fs::path& directory) {
  const fs::path manifest_path = directory / "manifest.json";
  if (!fs::exists(manifest_path)) throw io_error("missing_file", "missing " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw io_error("bad_manifest", manifest_path.string() + ": " + e.what());
  }
  if (!manifest.contains("format_version") || manifest["format_version"] != kFormatVersion)
    throw io_error("unsupported_version",
                   manifest_path.string() + ": unsupported format_version " +
                       (manifest.contains("format_version") ? manifest["format_version"].dump() : "<absent>"));

  SessionDataset ds;
  int n = 0, C = 0, T = 0;
  try {
    ds.session_id = manifest.at("session_id").get<std::string>();
    ds.bin_width_ms = manifest.at("bin_width_ms").get<double>();
    ds.num_directions = manifest.at("num_directions").get<int>();
    n = manifest.at("num_trials").get<int>();
    C = manifest.at("num_channels").get<int>();
    T = manifest.at("num_bins").get<int>();
  } catch (const json::exception& e) {
    throw io_error("bad_manifest", manifest_path.string() + ": " + e.what());
  }
  if (n < 0 || C < 1 || T < 2) throw io_error("bad_manifest", manifest_path.string() + ": invalid shape");
  const auto& files = manifest.at("files");

  auto load = [&](const char* key, std::size_t expected) {
    const fs::path p = directory / files.at(key).get<std::string>();
    if (!fs::exists(p)) throw io_error("missing_file", "missing " + p.string());
    std::string bytes = read_file(p);
    if (bytes.size() != expected)
      throw io_error("size_mismatch", p.filename().string() + ": expected " + std::to_string(expected) +
                                          " bytes, found " + std::to_string(bytes.size()));
    return bytes;
  };
  const auto nn = static_cast<std::size_t>(n);
  const std::string spikes = load("spikes", nn * C * T * 2);
  const std::string kinematics = load("kinematics", nn * 2 * T * 4);
  const std::string labels = load("labels", nn);

  ds.spikes.resize(nn);
  ds.position.resize(nn);
  ds.labels.resize(nn);
  for (std::size_t i = 0; i < nn; ++i) {
    ds.spikes[i].resize(C, T);
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < T; ++t) ds.spikes[i](c, t) = get_u16(spikes, 2 * ((i * C + c) * T + t));
    ds.position[i].resize(2, T);
    for (int k = 0; k < 2; ++k)
      for (int t = 0; t < T; ++t) ds.position[i](k, t) = get_f32(kinematics, 4 * ((i * 2 + k) * T + t));
    const int label = static_cast<unsigned char>(labels[i]) + 1;
    if (label > ds.num_directions)
      throw validation_error("label_range", "labels.bin: trial " + std::to_string(i) + " has label " +
                                                std::to_string(label) + " > D = " +
                                                std::to_string(ds.num_directions));
    ds.labels[i] = label;
  }
  ds.validate();
  return ds;
}

CountMatrix bin_spikes(const std::vector<std::vector<double>>& event_times, double t0_ms, int num_bins,
                       double bin_width_ms) {
  if (!(bin_width_ms > 0.0)) throw validation_error("bin_spikes", "bin_width_ms must be > 0");
  if (num_bins < 0) throw validation_error("bin_spikes", "num_bins must be >= 0");
  CountMatrix counts = CountMatrix::Zero(static_cast<Eigen::Index>(event_times.size()), num_bins);
  const double t_end = t0_ms + num_bins * bin_width_ms;
  for (std::size_t c = 0; c < event_times.size(); ++c) {
    for (double time : event_times[c]) {
      if (!std::isfinite(time)) throw validation_error("bin_spikes", "non-finite timestamp");
      if (time < t0_ms || time >= t_end) continue;
      auto t = static_cast<Eigen::Index>(std::floor((time - t0_ms) / bin_width_ms));
      // Guard the floating-point edge where (time - t0)/w rounds across a boundary.
      if (t >= num_bins) t = num_bins - 1;
      while (t > 0 && time < t0_ms + t * bin_width_ms) --t;
      while (t + 1 < num_bins && time >= t0_ms + (t + 1) * bin_width_ms) ++t;
      ++counts(static_cast<Eigen::Index>(c), t);
    }
  }
  return counts;
}

std::vector<int> apportion(int total, std::span<const int> weights) {
  long long wsum = 0;
  for (int w : weights) {
    if (w <= 0) throw validation_error("split", "split ratio parts must be > 0");
    wsum += w;
  }
  std::vector<int> out(weights.size());
  std::vector<long long> rem(weights.size());
  int assigned = 0;
  for (std::size_t p = 0; p < weights.size(); ++p) {
    const long long num = static_cast<long long>(total) * weights[p];
    out[p] = static_cast<int>(num / wsum);
    rem[p] = num % wsum;
    assigned += out[p];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++out[order[k % order.size()]];
  return out;
}

SplitIndices split_indices(const SessionDataset& dataset, const SplitSpec& spec) {
  if (spec.ratios.size() != 3) throw validation_error("split", "split ratios must have three parts");
  const int n = dataset.num_trials();
  const std::vector<int> totals = apportion(n, spec.ratios);
  constexpr int kParts = 3;
  std::vector<std::vector<int>> parts(kParts);

  if (!spec.stratify_by_label) {
    auto engine = make_engine({spec.seed, 0x5eedULL});
    const auto perm = random_permutation(n, engine);
    int k = 0;
    for (int p = 0; p < kParts; ++p)
      for (int j = 0; j < totals[static_cast<std::size_t>(p)]; ++j) parts[static_cast<std::size_t>(p)].push_back(perm[static_cast<std::size_t>(k++)]);
  } else {
    const int D = dataset.num_directions;
    std::vector<std::vector<int>> by_dir(static_cast<std::size_t>(D));
    for (int i = 0; i < n; ++i) by_dir[static_cast<std::size_t>(dataset.labels[static_cast<std::size_t>(i)] - 1)].push_back(i);

    long long wsum = 0;
    for (int w : spec.ratios) wsum += w;
    // Floors per (direction, part); leftovers are placed so that each
    // direction's row total and each part's aggregate total are both exact.
    std::vector<std::array<int, kParts>> cell(static_cast<std::size_t>(D));
    std::vector<std::array<long long, kParts>> rem(static_cast<std::size_t>(D));
    std::vector<int> row_need(static_cast<std::size_t>(D));
    std::array<int, kParts> col_need{};
    for (int p = 0; p < kParts; ++p) col_need[static_cast<std::size_t>(p)] = totals[static_cast<std::size_t>(p)];
    for (int d = 0; d < D; ++d) {
      const auto du = static_cast<std::size_t>(d);
      const int nd = static_cast<int>(by_dir[du].size());
      if (nd == 0) continue;
      if (nd < kParts)
        throw validation_error("split", "direction " + std::to_string(d + 1) + " has " + std::to_string(nd) +
                                            " trials, fewer than the " + std::to_string(kParts) + " split parts");
      int used = 0;
      for (int p = 0; p < kParts; ++p) {
        const auto pu = static_cast<std::size_t>(p);
        const long long num = static_cast<long long>(nd) * spec.ratios[pu];
        cell[du][pu] = static_cast<int>(num / wsum);
        rem[du][pu] = num % wsum;
        used += cell[du][pu];
        col_need[pu] -= cell[du][pu];
      }
      row_need[du] = nd - used;
    }
    std::vector<int> dir_order(static_cast<std::size_t>(D));
    std::iota(dir_order.begin(), dir_order.end(), 0);
    std::stable_sort(dir_order.begin(), dir_order.end(),
                     [&](int a, int b) { return row_need[static_cast<std::size_t>(a)] > row_need[static_cast<std::size_t>(b)]; });
    for (int d : dir_order) {
      const auto du = static_cast<std::size_t>(d);
      std::array<int, kParts> order{0, 1, 2};
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const auto au = static_cast<std::size_t>(a), bu = static_cast<std::size_t>(b);
        if (col_need[au] != col_need[bu]) return col_need[au] > col_need[bu];
        return rem[du][au] > rem[du][bu];
      });
      for (int k = 0; k < row_need[du]; ++k) {
        const auto pu = static_cast<std::size_t>(order[static_cast<std::size_t>(k)]);
        if (col_need[pu] <= 0) throw Error(ErrorKind::Internal, "split", "stratified apportionment failed");
        ++cell[du][pu];
        --col_need[pu];
      }
    }
    for (int d = 0; d < D; ++d) {
      const auto du = static_cast<std::size_t>(d);
      if (by_dir[du].empty()) continue;
      auto engine = make_engine({spec.seed, 0x5eedULL, static_cast<std::uint64_t>(d)});
      const auto perm = random_permutation(static_cast<int>(by_dir[du].size()), engine);
      int k = 0;
      for (int p = 0; p < kParts; ++p) {
        const auto pu = static_cast<std::size_t>(p);
        if (cell[du][pu] == 0)
          throw validation_error("split", "direction " + std::to_string(d + 1) + " leaves split part " +
                                              std::to_string(p) + " empty");
        for (int j = 0; j < cell[du][pu]; ++j) parts[pu].push_back(by_dir[du][static_cast<std::size_t>(perm[static_cast<std::size_t>(k++)])]);
      }
    }
  }
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return {std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
}

DatasetSplit split_session(const SessionDataset& dataset, const SplitSpec& spec) {
  const SplitIndices idx = split_indices(dataset, spec);
  return {dataset.subset(idx.train), dataset.subset(idx.val), dataset.subset(idx.test)};
}

}  // namespace tcla
