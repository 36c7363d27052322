#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "tcla/training.hpp"

namespace tcla {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kCheckpointVersion = 1;

template <typename Tensor>
json shape_of(const Tensor& t) {
  if constexpr (Tensor::ColsAtCompileTime == 1)
    return json::array({t.rows()});
  else
    return json::array({t.rows(), t.cols()});
}

template <typename Tensor>
void append_row_major(std::string& out, const Tensor& t) {
  for (Eigen::Index i = 0; i < t.rows(); ++i)
    for (Eigen::Index j = 0; j < t.cols(); ++j) {
      const float f = t(i, j);
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
}

template <typename Tensor>
void read_row_major(const std::string& in, std::size_t offset, Tensor& t) {
  for (Eigen::Index i = 0; i < t.rows(); ++i)
    for (Eigen::Index j = 0; j < t.cols(); ++j) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + b])) << (8 * b);
      offset += 4;
      float f;
      std::memcpy(&f, &bits, sizeof f);
      t(i, j) = f;
    }
}

json history_record(const EpochRecord& r) {
  json j;
  j["stage"] = r.stage;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["val_loss"] = r.val_loss;
  j["nll"] = r.nll;
  j["reg"] = r.reg;
  j["mmd"] = r.mmd ? json(*r.mmd) : json(nullptr);
  return j;
}

EpochRecord parse_record(const json& j) {
  EpochRecord r;
  r.stage = j.at("stage").get<std::string>();
  r.epoch = j.at("epoch").get<int>();
  r.train_loss = j.at("train_loss").get<double>();
  r.val_loss = j.at("val_loss").get<double>();
  r.nll = j.at("nll").get<double>();
  r.reg = j.at("reg").get<double>();
  if (!j.at("mmd").is_null()) r.mmd = j.at("mmd").get<double>();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw io_error("missing_file", "cannot open " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("unwritable", "cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw io_error("unwritable", "short write to " + p.string());
}

struct TensorIndex {
  std::map<std::string, std::pair<std::size_t, json>> entries;  // name -> (offset, shape)
};

template <typename Model>
void load_tensors(Model& model, const std::string& prefix, const TensorIndex& index, const std::string& weights) {
  model.for_each_tensor([&](const std::string& name, auto& t) {
    const std::string full = prefix + name;
    const auto it = index.entries.find(full);
    if (it == index.entries.end()) throw io_error("bad_checkpoint", "tensor " + full + " missing from model.json");
    const auto& [offset, shape] = it->second;
    using T = std::remove_reference_t<decltype(t)>;
    if constexpr (T::ColsAtCompileTime == 1)
      t.resize(shape.at(0).template get<Eigen::Index>());
    else
      t.resize(shape.at(0).template get<Eigen::Index>(), shape.at(1).template get<Eigen::Index>());
    if (offset + static_cast<std::size_t>(t.size()) * 4 > weights.size())
      throw io_error("bad_checkpoint", "tensor " + full + " extends past the end of weights.bin");
    read_row_major(weights, offset, t);
  });
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& directory) {
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) throw io_error("unwritable", "cannot create " + directory.string() + ": " + ec.message());

  std::string weights;
  auto describe = [&](json& list, const std::string& prefix) {
    return [&, prefix](const std::string& name, const auto& t) {
      list.push_back({{"name", prefix + name}, {"shape", shape_of(t)}, {"offset", weights.size()}});
      append_row_major(weights, t);
    };
  };

  json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["stage"] = ckpt.stage;
  manifest["source_session"] = ckpt.source_session;
  const Architecture& a = ckpt.shared.arch;
  manifest["architecture"] = {{"embed_width", a.embed_width},
                              {"latent_dim", a.latent_dim},
                              {"num_blocks", a.num_blocks},
                              {"kernel_width", a.kernel_width}};
  json shared_list = json::array();
  ckpt.shared.for_each_tensor(describe(shared_list, "shared."));
  manifest["tensors"] = shared_list;
  json sessions = json::object();
  for (const auto& [id, layers] : ckpt.sessions) {
    json list = json::array();
    layers.for_each_tensor(describe(list, "session." + id + "."));
    sessions[id] = {{"num_channels", layers.num_channels()}, {"tensors", list}};
  }
  manifest["sessions"] = sessions;
  manifest["weights_file"] = "weights.bin";
  manifest["weights_sha256"] = sha256_hex(weights);
  manifest["history_file"] = "history.jsonl";
  manifest["config"] = ckpt.config;

  std::string history;
  for (const auto& r : ckpt.history) history += history_record(r).dump() + "\n";

  spit(directory / "weights.bin", weights);
  spit(directory / "history.jsonl", history);
  spit(directory / "model.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& directory) {
  const fs::path manifest_path = directory / "model.json";
  if (!fs::exists(manifest_path)) throw io_error("missing_checkpoint", "no checkpoint at " + directory.string());
  json manifest;
  try {
    manifest = json::parse(slurp(manifest_path));
  } catch (const json::exception& e) {
    throw io_error("bad_checkpoint", manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format_version", -1) != kCheckpointVersion)
    throw io_error("version_mismatch", manifest_path.string() + ": unsupported checkpoint format_version");

  try {
    const std::string weights = slurp(directory / manifest.at("weights_file").get<std::string>());
    if (sha256_hex(weights) != manifest.at("weights_sha256").get<std::string>())
      throw io_error("digest_mismatch", (directory / "weights.bin").string() + ": SHA-256 does not match model.json");

    Checkpoint ckpt;
    ckpt.stage = manifest.at("stage").get<std::string>();
    ckpt.source_session = manifest.at("source_session").get<std::string>();
    const auto& a = manifest.at("architecture");
    Architecture arch;
    arch.embed_width = a.at("embed_width").get<int>();
    arch.latent_dim = a.at("latent_dim").get<int>();
    arch.num_blocks = a.at("num_blocks").get<int>();
    arch.kernel_width = a.at("kernel_width").get<int>();
    arch.validate();

    TensorIndex index;
    auto add_entries = [&](const json& list) {
      for (const auto& e : list)
        index.entries[e.at("name").get<std::string>()] = {e.at("offset").get<std::size_t>(), e.at("shape")};
    };
    add_entries(manifest.at("tensors"));
    ckpt.shared.arch = arch;
    ckpt.shared.encoder_blocks.resize(static_cast<std::size_t>(arch.num_blocks));
    ckpt.shared.decoder_blocks.resize(static_cast<std::size_t>(arch.num_blocks));
    load_tensors(ckpt.shared, "shared.", index, weights);
    for (const auto& [id, entry] : manifest.at("sessions").items()) {
      add_entries(entry.at("tensors"));
      Layers layers;
      layers.session_id = id;
      load_tensors(layers, "session." + id + ".", index, weights);
      ckpt.sessions.emplace(id, std::move(layers));
    }
    ckpt.config = manifest.at("config");

    std::istringstream history(slurp(directory / manifest.at("history_file").get<std::string>()));
    for (std::string line; std::getline(history, line);)
      if (!line.empty()) ckpt.history.push_back(parse_record(json::parse(line)));
    return ckpt;
  } catch (const json::exception& e) {
    throw io_error("bad_checkpoint", manifest_path.string() + ": " + e.what());
  }
}

}  // namespace tcla
