#include "tcla/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

namespace tcla {

namespace fs = std::filesystem;

namespace {

std::string hash_parts(std::initializer_list<std::string> parts) {
  std::string joined;
  for (const auto& p : parts) {
    joined += p;
    joined += '\x1f';
  }
  return sha256_hex(joined);
}

std::string run_dir(int run) { return "run" + std::to_string(run); }

}  // namespace

int StepLog::executed() const {
  return static_cast<int>(std::count_if(events.begin(), events.end(), [](const auto& e) { return e.executed; }));
}
int StepLog::skipped() const { return static_cast<int>(events.size()) - executed(); }

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw io_error("unwritable", "cannot create " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("unwritable", "cannot write " + path.string());
  out << text;
  if (!out) throw io_error("unwritable", "short write to " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("missing_file", "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string read_digest(const fs::path& dir) {
  const fs::path p = dir / "digest.txt";
  if (!fs::exists(p)) return {};
  std::string s = read_text(p);
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

void write_digest(const fs::path& dir, const std::string& digest) { write_text(dir / "digest.txt", digest + "\n"); }

Experiment::Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

fs::path Experiment::data_dir(const std::string& session) const { return cfg_.output_dir / "data" / session; }
fs::path Experiment::stage1_dir() const { return cfg_.output_dir / "checkpoints" / "stage1"; }
fs::path Experiment::checkpoint_dir(const std::string& method, const std::string& session, int run) const {
  return cfg_.output_dir / "checkpoints" / method / session / run_dir(run);
}
fs::path Experiment::cell_path(const std::string& method, const std::string& session, int run) const {
  return cfg_.output_dir / "reports" / "cells" / method / session / (run_dir(run) + ".json");
}
fs::path Experiment::reports_dir() const { return cfg_.output_dir / "reports"; }

std::vector<std::string> Experiment::session_ids() const {
  std::vector<std::string> ids;
  for (int i = 0; i < cfg_.num_sessions(); ++i) ids.push_back(session_name(i));
  return ids;
}

std::vector<std::string> Experiment::target_ids(const Selection& sel) const {
  auto ids = session_ids();
  ids.erase(ids.begin());
  if (sel.targets.empty()) return ids;
  for (const auto& t : sel.targets)
    if (std::find(ids.begin(), ids.end(), t) == ids.end())
      throw validation_error("unknown_session", "'" + t + "' is not a target session of this config");
  return sel.targets;
}

int Experiment::session_index(const std::string& session) const {
  const auto ids = session_ids();
  const auto it = std::find(ids.begin(), ids.end(), session);
  if (it == ids.end()) throw validation_error("unknown_session", "'" + session + "' is not a session of this config");
  return static_cast<int>(it - ids.begin());
}

void Experiment::record(std::string step, bool executed) { log_.events.push_back({std::move(step), executed}); }

StageTwoConfig Experiment::stage2_for_run(int run) const {
  StageTwoConfig c = cfg_.stage2;
  const auto r = static_cast<std::uint64_t>(run);
  c.seed = derive_seed({cfg_.stage2.seed, cfg_.seed, r});
  c.dropout.seed_stream = derive_seed({cfg_.stage2.dropout.seed_stream, cfg_.seed, r, 2});
  return c;
}

ModelConfig Experiment::baseline_model_for_run(int run) const {
  ModelConfig m = cfg_.model;
  m.seed = derive_seed({cfg_.model.seed, cfg_.seed, static_cast<std::uint64_t>(run), 0xba5eULL});
  return m;
}

StageOneConfig Experiment::baseline_stage1_for_run(int run) const {
  StageOneConfig c = cfg_.stage1;
  const auto r = static_cast<std::uint64_t>(run);
  c.seed = derive_seed({cfg_.stage1.seed, cfg_.seed, r, 0xba5eULL});
  c.dropout.seed_stream = derive_seed({cfg_.stage1.dropout.seed_stream, cfg_.seed, r, 0xba5eULL, 1});
  return c;
}

DecoderConfig Experiment::decoder_for_run(int run) const {
  DecoderConfig d = cfg_.decoder;
  d.seed = derive_seed({cfg_.decoder.seed, cfg_.seed, static_cast<std::uint64_t>(run)});
  return d;
}

std::string Experiment::data_digest(int index) const {
  return hash_parts({"data", "1", session_name(index), to_json(cfg_.generator_for(index)).dump(),
                     to_json(cfg_.sessions[static_cast<std::size_t>(index)]).dump()});
}

std::string Experiment::stage1_digest() const {
  return hash_parts({"stage1", data_digest(0), to_json(cfg_.source_split).dump(), to_json(cfg_.model).dump(),
                     to_json(cfg_.stage1).dump()});
}

std::string Experiment::checkpoint_digest(const std::string& method, const std::string& session, int run) const {
  const int idx = session_index(session);
  if (method == kMethodTcla)
    return hash_parts({"tcla", stage1_digest(), data_digest(idx), to_json(cfg_.source_split).dump(),
                       to_json(cfg_.target_split).dump(), to_json(stage2_for_run(run)).dump()});
  return hash_parts({"ldnsws", data_digest(idx), to_json(cfg_.target_split).dump(),
                     to_json(baseline_model_for_run(run)).dump(), to_json(baseline_stage1_for_run(run)).dump()});
}

std::string Experiment::cell_digest(const std::string& method, const std::string& session, int run) const {
  return hash_parts({"cell", checkpoint_digest(method, session, run), to_json(decoder_for_run(run)).dump()});
}

void Experiment::generate() {
  for (int i = 0; i < cfg_.num_sessions(); ++i) {
    const std::string sid = session_name(i);
    const fs::path dir = data_dir(sid);
    const std::string digest = data_digest(i);
    if (read_digest(dir) == digest && fs::exists(dir / "manifest.json")) {
      record("generate:" + sid, false);
      continue;
    }
    const auto& spec = cfg_.sessions[static_cast<std::size_t>(i)];
    const DriftConfig drift = i == 0 ? DriftConfig::identity(spec.drift.session_seed) : spec.drift;
    write_bundle(generate_session(cfg_.generator_for(i), drift, sid), dir);
    write_digest(dir, digest);
    record("generate:" + sid, true);
  }
}

SessionDataset Experiment::load_session(const std::string& session) const {
  const fs::path dir = data_dir(session);
  if (read_digest(dir) != data_digest(session_index(session)))
    throw validation_error("missing_data", "no current data for " + session + " under " + dir.string() +
                                               "; run generate first");
  return read_bundle(dir);
}

DatasetSplit Experiment::split(const std::string& session) const {
  const int idx = session_index(session);
  SplitSpec spec = idx == 0 ? cfg_.source_split : cfg_.target_split;
  spec.seed = derive_seed({spec.seed, static_cast<std::uint64_t>(idx)});
  return split_session(load_session(session), spec);
}

void Experiment::pretrain() {
  const std::string digest = stage1_digest();
  if (read_digest(stage1_dir()) == digest && fs::exists(stage1_dir() / "model.json")) {
    record("pretrain", false);
    return;
  }
  const DatasetSplit src = split(session_name(0));
  Checkpoint ckpt = pretrain_source(src.train, src.val, cfg_.model, cfg_.stage1);
  save_checkpoint(ckpt, stage1_dir());
  write_digest(stage1_dir(), digest);
  record("pretrain", true);
}

void Experiment::align(const Selection& sel) {
  const auto targets = target_ids(sel);
  if (read_digest(stage1_dir()) != stage1_digest())
    throw validation_error("missing_checkpoint", "no current stage1 checkpoint under " + stage1_dir().string() +
                                                     "; run pretrain first");
  std::optional<Checkpoint> stage1;
  std::optional<DatasetSplit> source;
  for (const auto& sid : targets) {
    std::optional<DatasetSplit> target;
    for (int r = 0; r < cfg_.eval.runs_per_session; ++r) {
      const fs::path dir = checkpoint_dir(kMethodTcla, sid, r);
      const std::string digest = checkpoint_digest(kMethodTcla, sid, r);
      const std::string step = "align:" + sid + ":" + run_dir(r);
      if (read_digest(dir) == digest && fs::exists(dir / "model.json")) {
        record(step, false);
        continue;
      }
      if (!stage1) stage1 = load_checkpoint(stage1_dir());
      if (!source) source = split(session_name(0));
      if (!target) target = split(sid);
      const Checkpoint out = align_target(*stage1, target->train, target->val, source->train, stage2_for_run(r));
      save_checkpoint(out, dir);
      write_digest(dir, digest);
      record(step, true);
    }
  }
}

void Experiment::baseline(const Selection& sel) {
  for (const auto& sid : target_ids(sel)) {
    std::optional<DatasetSplit> target;
    for (int r = 0; r < cfg_.eval.runs_per_session; ++r) {
      const fs::path dir = checkpoint_dir(kMethodBaseline, sid, r);
      const std::string digest = checkpoint_digest(kMethodBaseline, sid, r);
      const std::string step = "baseline:" + sid + ":" + run_dir(r);
      if (read_digest(dir) == digest && fs::exists(dir / "model.json")) {
        record(step, false);
        continue;
      }
      if (!target) target = split(sid);
      // Fresh shared and session layers, trained with the stage-one loss on target data only.
      Checkpoint out = pretrain_source(target->train, target->val, baseline_model_for_run(r), baseline_stage1_for_run(r));
      out.stage = "baseline";
      save_checkpoint(out, dir);
      write_digest(dir, digest);
      record(step, true);
    }
  }
}

void Experiment::decode(const Selection& sel) {
  std::vector<std::string> methods{kMethodTcla};
  if (sel.with_baseline) methods.push_back(kMethodBaseline);
  for (const auto& sid : target_ids(sel)) {
    std::optional<DatasetSplit> target;
    for (const auto& method : methods) {
      for (int r = 0; r < cfg_.eval.runs_per_session; ++r) {
        const fs::path path = cell_path(method, sid, r);
        const std::string digest = cell_digest(method, sid, r);
        const std::string step = "decode:" + method + ":" + sid + ":" + run_dir(r);
        if (fs::exists(path) && ojson::parse(read_text(path)).value("digest", "") == digest) {
          record(step, false);
          continue;
        }
        const fs::path ckpt_dir = checkpoint_dir(method, sid, r);
        if (read_digest(ckpt_dir) != checkpoint_digest(method, sid, r))
          throw validation_error("missing_checkpoint", "no current " + method + " checkpoint under " +
                                                           ckpt_dir.string() + "; run align first");
        const Checkpoint ckpt = load_checkpoint(ckpt_dir);
        if (!target) target = split(sid);
        CellResult cell;
        cell.session = sid;
        cell.method = method;
        cell.run = r;
        cell.r2 = decode_and_score(ckpt, sid, target->train, target->test, decoder_for_run(r));
        std::tie(cell.val_mmd_init, cell.val_mmd_final) = alignment_progress(ckpt.history);
        ojson j = to_json(cell);
        j["digest"] = digest;
        write_text(path, j.dump(2) + "\n");
        record(step, true);
      }
    }
  }
}

ojson Experiment::report(const Selection& sel) {
  std::vector<std::string> methods{kMethodTcla};
  if (sel.with_baseline) methods.push_back(kMethodBaseline);
  const auto targets = target_ids(sel);

  std::vector<std::string> cell_digests;
  for (const auto& method : methods)
    for (const auto& sid : targets)
      for (int r = 0; r < cfg_.eval.runs_per_session; ++r) cell_digests.push_back(cell_digest(method, sid, r));
  ojson methods_json = methods;
  ojson targets_json = targets;
  const std::string digest = hash_parts({"report", "1", methods_json.dump(), targets_json.dump(),
                                         ojson(cell_digests).dump(), to_json(cfg_.eval).dump()});
  const fs::path dir = reports_dir();
  if (read_digest(dir) == digest && fs::exists(dir / "report.json")) {
    record("report", false);
    return ojson::parse(read_text(dir / "report.json"));
  }

  std::vector<CellResult> cells;
  for (const auto& method : methods)
    for (const auto& sid : targets)
      for (int r = 0; r < cfg_.eval.runs_per_session; ++r) {
        const fs::path path = cell_path(method, sid, r);
        if (!fs::exists(path) || ojson::parse(read_text(path)).value("digest", "") != cell_digest(method, sid, r))
          throw validation_error("missing_cell", "no current evaluation for " + method + "/" + sid + "/" + run_dir(r) +
                                                     "; run decode first");
        cells.push_back(cell_from_json(ojson::parse(read_text(path))));
      }

  ojson config = to_json(cfg_);
  config.erase("output_dir");  // reports compare equal across output locations
  ojson metadata = {{"config", config},
                    {"stage1_digest", stage1_digest()},
                    {"primary_pairing", "session_run"},
                    {"report_digest", digest}};
  ojson report = build_report(cells, methods, cfg_.eval, metadata);

  // Latent projection: the source under the stage-one model, each target under its first alignment run.
  const Checkpoint stage1 = load_checkpoint(stage1_dir());
  std::vector<Checkpoint> aligned;
  std::vector<SessionDataset> datasets;
  datasets.push_back(load_session(session_name(0)));
  for (const auto& sid : targets) {
    aligned.push_back(load_checkpoint(checkpoint_dir(kMethodTcla, sid, 0)));
    datasets.push_back(load_session(sid));
  }
  std::vector<ProjectionInput> inputs{{&stage1, &datasets[0]}};
  for (std::size_t i = 0; i < aligned.size(); ++i) inputs.push_back({&aligned[i], &datasets[i + 1]});

  write_text(dir / "report.json", report.dump(2) + "\n");
  write_text(dir / "report.csv", report_csv(cells));
  write_text(dir / "latent_projection.csv", projection_csv(export_latent_projection(inputs)));
  write_digest(dir, digest);
  record("report", true);
  return report;
}

ExperimentResult run_full_experiment(const ExperimentConfig& cfg) {
  Experiment exp(cfg);
  Selection sel;
  sel.with_baseline = true;
  exp.generate();
  exp.pretrain();
  exp.align(sel);
  exp.baseline(sel);
  exp.decode(sel);
  ExperimentResult out;
  out.report = exp.report(sel);
  out.log = exp.log();
  return out;
}

}  // namespace tcla
