#include "tcla/config_json.hpp"

#include <fstream>
#include <set>

namespace tcla {

namespace {

/// Reads fields from one JSON object and remembers which keys were consumed.
class Fields {
 public:
  Fields(const ojson& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw validation_error("config", path_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& dst) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      dst = j_.at(key).template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw validation_error("config", path_ + "." + key + " has the wrong type");
    }
  }

  const ojson* child(const char* key) {
    used_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!used_.count(key)) throw validation_error("config", "unknown key " + path_ + "." + key);
  }

 private:
  const ojson& j_;
  std::string path_;
  std::set<std::string> used_;
};

Granularity parse_granularity(const std::string& s, const std::string& path) {
  if (s == "per_time_bin") return Granularity::PerTimeBin;
  if (s == "per_trial_flat") return Granularity::PerTrialFlat;
  throw validation_error("config", path + " must be per_time_bin or per_trial_flat");
}

DecoderKind parse_decoder_kind(const std::string& s, const std::string& path) {
  if (s == "recurrent") return DecoderKind::Recurrent;
  if (s == "linear_ridge") return DecoderKind::LinearRidge;
  throw validation_error("config", path + " must be recurrent or linear_ridge");
}

void read(const ojson& j, const std::string& path, Architecture& a) {
  Fields f(j, path);
  f.get("embed_width", a.embed_width);
  f.get("latent_dim", a.latent_dim);
  f.get("num_blocks", a.num_blocks);
  f.get("kernel_width", a.kernel_width);
  f.finish();
}

void read(const ojson& j, const std::string& path, ModelConfig& m) {
  Fields f(j, path);
  if (const auto* a = f.child("architecture")) read(*a, f.path("architecture"), m.arch);
  f.get("seed", m.seed);
  f.finish();
}

void read(const ojson& j, const std::string& path, RegConfig& r) {
  Fields f(j, path);
  f.get("beta1", r.beta1);
  f.get("beta2", r.beta2);
  f.get("smooth_window", r.smooth_window);
  f.finish();
}

void read(const ojson& j, const std::string& path, MMDConfig& m) {
  Fields f(j, path);
  f.get("beta3", m.beta3);
  f.get("num_bandwidths", m.num_bandwidths);
  f.get("bandwidth_scale", m.bandwidth_scale);
  std::string g = to_string(m.granularity);
  f.get("granularity", g);
  m.granularity = parse_granularity(g, f.path("granularity"));
  f.get("max_samples_per_condition", m.max_samples_per_condition);
  f.get("sigma_floor", m.sigma_floor);
  f.finish();
}

void read(const ojson& j, const std::string& path, DropoutConfig& d) {
  Fields f(j, path);
  f.get("mask_rate", d.mask_rate);
  f.get("seed_stream", d.seed_stream);
  f.finish();
}

template <typename Stage>
void read_common(Fields& f, Stage& c) {
  if (const auto* d = f.child("dropout")) read(*d, f.path("dropout"), c.dropout);
  f.get("learning_rate", c.learning_rate);
  f.get("batch_size", c.batch_size);
  f.get("max_epochs", c.max_epochs);
  f.get("early_stop_patience", c.early_stop_patience);
  f.get("seed", c.seed);
}

void read(const ojson& j, const std::string& path, StageOneConfig& c) {
  Fields f(j, path);
  if (const auto* r = f.child("reg")) read(*r, f.path("reg"), c.reg);
  read_common(f, c);
  f.finish();
}

void read(const ojson& j, const std::string& path, StageTwoConfig& c) {
  Fields f(j, path);
  if (const auto* m = f.child("mmd")) read(*m, f.path("mmd"), c.mmd);
  read_common(f, c);
  f.get("source_latent_cache_size", c.source_latent_cache_size);
  f.finish();
}

void read(const ojson& j, const std::string& path, DecoderConfig& c) {
  Fields f(j, path);
  std::string kind = to_string(c.kind);
  f.get("kind", kind);
  c.kind = parse_decoder_kind(kind, f.path("kind"));
  f.get("hidden_size", c.hidden_size);
  f.get("ridge_lambda", c.ridge_lambda);
  f.get("learning_rate", c.learning_rate);
  f.get("max_epochs", c.max_epochs);
  f.get("patience", c.patience);
  f.get("seed", c.seed);
  f.finish();
}

void read(const ojson& j, const std::string& path, GenConfig& g) {
  Fields f(j, path);
  f.get("num_directions", g.num_directions);
  f.get("trials_per_session", g.trials_per_session);
  f.get("num_channels", g.num_channels);
  f.get("num_bins", g.num_bins);
  f.get("bin_width_ms", g.bin_width_ms);
  f.get("baseline_log_rate", g.baseline_log_rate);
  f.get("tuning_depth", g.tuning_depth);
  f.get("reach_duration_bins", g.reach_duration_bins);
  f.get("kinematic_peak_speed", g.kinematic_peak_speed);
  f.get("master_seed", g.master_seed);
  f.finish();
}

void read(const ojson& j, const std::string& path, SessionSpec& s) {
  Fields f(j, path);
  f.get("permute_fraction", s.drift.permute_fraction);
  f.get("gain_log_std", s.drift.gain_log_std);
  f.get("tuning_rotation_rad", s.drift.tuning_rotation_rad);
  f.get("dropped_unit_fraction", s.drift.dropped_unit_fraction);
  f.get("session_seed", s.drift.session_seed);
  if (const auto* n = f.child("num_trials"); n && !n->is_null()) {
    int v = 0;
    f.get("num_trials", v);
    s.num_trials = v;
  }
  f.finish();
}

void read(const ojson& j, const std::string& path, SplitSpec& s) {
  Fields f(j, path);
  f.get("ratios", s.ratios);
  f.get("stratify_by_label", s.stratify_by_label);
  f.get("seed", s.seed);
  f.finish();
}

void read(const ojson& j, const std::string& path, EvalConfig& e) {
  Fields f(j, path);
  f.get("runs_per_session", e.runs_per_session);
  f.get("bootstrap_resamples", e.bootstrap_resamples);
  f.get("alpha", e.alpha);
  f.get("seed", e.seed);
  f.finish();
}

ojson common_json(const auto& c) {
  return {{"dropout", to_json(c.dropout)},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"early_stop_patience", c.early_stop_patience},
          {"seed", c.seed}};
}

}  // namespace

std::string to_string(Granularity g) { return g == Granularity::PerTimeBin ? "per_time_bin" : "per_trial_flat"; }
std::string to_string(DecoderKind k) { return k == DecoderKind::Recurrent ? "recurrent" : "linear_ridge"; }

ojson to_json(const Architecture& a) {
  return {{"embed_width", a.embed_width},
          {"latent_dim", a.latent_dim},
          {"num_blocks", a.num_blocks},
          {"kernel_width", a.kernel_width}};
}

ojson to_json(const ModelConfig& m) { return {{"architecture", to_json(m.arch)}, {"seed", m.seed}}; }

ojson to_json(const RegConfig& r) {
  return {{"beta1", r.beta1}, {"beta2", r.beta2}, {"smooth_window", r.smooth_window}};
}

ojson to_json(const MMDConfig& m) {
  return {{"beta3", m.beta3},
          {"num_bandwidths", m.num_bandwidths},
          {"bandwidth_scale", m.bandwidth_scale},
          {"granularity", to_string(m.granularity)},
          {"max_samples_per_condition", m.max_samples_per_condition},
          {"sigma_floor", m.sigma_floor}};
}

ojson to_json(const DropoutConfig& d) { return {{"mask_rate", d.mask_rate}, {"seed_stream", d.seed_stream}}; }

ojson to_json(const StageOneConfig& c) {
  ojson j = {{"reg", to_json(c.reg)}};
  j.update(common_json(c));
  return j;
}

ojson to_json(const StageTwoConfig& c) {
  ojson j = {{"mmd", to_json(c.mmd)}};
  j.update(common_json(c));
  j["source_latent_cache_size"] = c.source_latent_cache_size;
  return j;
}

ojson to_json(const DecoderConfig& c) {
  return {{"kind", to_string(c.kind)},       {"hidden_size", c.hidden_size}, {"ridge_lambda", c.ridge_lambda},
          {"learning_rate", c.learning_rate}, {"max_epochs", c.max_epochs},   {"patience", c.patience},
          {"seed", c.seed}};
}

ojson to_json(const GenConfig& g) {
  return {{"num_directions", g.num_directions},
          {"trials_per_session", g.trials_per_session},
          {"num_channels", g.num_channels},
          {"num_bins", g.num_bins},
          {"bin_width_ms", g.bin_width_ms},
          {"baseline_log_rate", g.baseline_log_rate},
          {"tuning_depth", g.tuning_depth},
          {"reach_duration_bins", g.reach_duration_bins},
          {"kinematic_peak_speed", g.kinematic_peak_speed},
          {"master_seed", g.master_seed}};
}

ojson to_json(const SessionSpec& s) {
  ojson j = {{"permute_fraction", s.drift.permute_fraction},
             {"gain_log_std", s.drift.gain_log_std},
             {"tuning_rotation_rad", s.drift.tuning_rotation_rad},
             {"dropped_unit_fraction", s.drift.dropped_unit_fraction},
             {"session_seed", s.drift.session_seed}};
  j["num_trials"] = s.num_trials ? ojson(*s.num_trials) : ojson(nullptr);
  return j;
}

ojson to_json(const SplitSpec& s) {
  return {{"ratios", s.ratios}, {"stratify_by_label", s.stratify_by_label}, {"seed", s.seed}};
}

ojson to_json(const EvalConfig& e) {
  return {{"runs_per_session", e.runs_per_session},
          {"bootstrap_resamples", e.bootstrap_resamples},
          {"alpha", e.alpha},
          {"seed", e.seed}};
}

ojson to_json(const ExperimentConfig& c) {
  ojson sessions = ojson::array();
  for (const auto& s : c.sessions) sessions.push_back(to_json(s));
  return {{"output_dir", c.output_dir.string()},
          {"seed", c.seed},
          {"generator", to_json(c.generator)},
          {"sessions", sessions},
          {"splits", {{"source", to_json(c.source_split)}, {"target", to_json(c.target_split)}}},
          {"model", to_json(c.model)},
          {"stage1", to_json(c.stage1)},
          {"stage2", to_json(c.stage2)},
          {"decoder", to_json(c.decoder)},
          {"eval", to_json(c.eval)}};
}

GenConfig ExperimentConfig::generator_for(int session) const {
  GenConfig g = generator;
  if (const auto& n = sessions.at(static_cast<std::size_t>(session)).num_trials) g.trials_per_session = *n;
  return g;
}

void ExperimentConfig::validate() const {
  if (output_dir.empty()) throw validation_error("config", "output_dir must be set");
  generator.validate();
  if (sessions.size() < 2) throw validation_error("config", "sessions must list a source and at least one target");
  const DriftConfig& src = sessions.front().drift;
  if (src.permute_fraction != 0.0 || src.gain_log_std != 0.0 || src.tuning_rotation_rad != 0.0 ||
      src.dropped_unit_fraction != 0.0)
    throw validation_error("config", "sessions[0] is the source session and must have zero drift");
  for (int i = 0; i < num_sessions(); ++i) {
    generator_for(i).validate();
    sessions[static_cast<std::size_t>(i)].drift.validate(generator.num_channels);
  }
  for (const auto* s : {&source_split, &target_split}) {
    if (s->ratios.size() != 3) throw validation_error("config", "split ratios must have three parts");
    for (int r : s->ratios)
      if (r < 1) throw validation_error("config", "split ratio parts must be >= 1");
  }
  model.arch.validate();
  stage1.validate(generator.num_bins);
  stage2.validate();
  decoder.validate();
  if (eval.runs_per_session < 1) throw validation_error("config", "eval.runs_per_session must be >= 1");
  if (eval.bootstrap_resamples < 1) throw validation_error("config", "eval.bootstrap_resamples must be >= 1");
  if (!(eval.alpha > 0.0 && eval.alpha < 1.0)) throw validation_error("config", "eval.alpha must be in (0, 1)");
}

ExperimentConfig experiment_config_from_json(const ojson& j) {
  ExperimentConfig c;
  Fields f(j, "config");
  std::string out = c.output_dir.string();
  f.get("output_dir", out);
  c.output_dir = out;
  f.get("seed", c.seed);
  if (const auto* g = f.child("generator")) read(*g, "config.generator", c.generator);
  if (const auto* s = f.child("sessions")) {
    if (!s->is_array()) throw validation_error("config", "config.sessions must be an array");
    for (std::size_t i = 0; i < s->size(); ++i) {
      SessionSpec spec;
      read(s->at(i), "config.sessions[" + std::to_string(i) + "]", spec);
      c.sessions.push_back(spec);
    }
  }
  if (const auto* s = f.child("splits")) {
    Fields sf(*s, "config.splits");
    if (const auto* x = sf.child("source")) read(*x, "config.splits.source", c.source_split);
    if (const auto* x = sf.child("target")) read(*x, "config.splits.target", c.target_split);
    sf.finish();
  }
  if (const auto* m = f.child("model")) read(*m, "config.model", c.model);
  if (const auto* s = f.child("stage1")) read(*s, "config.stage1", c.stage1);
  if (const auto* s = f.child("stage2")) read(*s, "config.stage2", c.stage2);
  if (const auto* d = f.child("decoder")) read(*d, "config.decoder", c.decoder);
  if (const auto* e = f.child("eval")) read(*e, "config.eval", c.eval);
  f.finish();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("missing_config", "cannot open config " + path.string());
  ojson j;
  try {
    j = ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("config", path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

}  // namespace tcla
