#include "tcla/evaluate.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

namespace tcla {

namespace {

std::vector<Mat<float>> rates_of(const std::vector<Inference>& inf) {
  std::vector<Mat<float>> out;
  out.reserve(inf.size());
  for (const auto& i : inf) out.push_back(i.rates);
  return out;
}

/// R^2 per coordinate over all bins of all trials.
std::array<double, 2> score(const std::vector<Eigen::Matrix2Xd>& pred, const std::vector<Eigen::Matrix2Xd>& truth) {
  std::array<double, 2> out{};
  for (int k = 0; k < 2; ++k) {
    std::vector<double> p, t;
    for (std::size_t i = 0; i < truth.size(); ++i)
      for (Eigen::Index b = 0; b < truth[i].cols(); ++b) {
        p.push_back(pred[i](k, b));
        t.push_back(truth[i](k, b));
      }
    out[static_cast<std::size_t>(k)] = r_squared(p, t);
  }
  return out;
}

ojson summary_json(const BootstrapResult& b) { return {{"mean", b.mean}, {"ci_lo", b.lo}, {"ci_hi", b.hi}}; }

double variable_value(const CellResult& c, const std::string& var) {
  if (var == "vel_mean") return c.velocity_mean();
  for (std::size_t k = 0; k < kVariables.size(); ++k)
    if (var == kVariables[k]) return c.r2[k];
  throw validation_error("internal", "unknown variable " + var);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ojson to_json(const CellResult& c) {
  ojson r2 = ojson::object();
  for (std::size_t k = 0; k < kVariables.size(); ++k) r2[kVariables[k]] = c.r2[k];
  return {{"session", c.session},
          {"method", c.method},
          {"run", c.run},
          {"r2", r2},
          {"val_mmd_init", c.val_mmd_init ? ojson(*c.val_mmd_init) : ojson(nullptr)},
          {"val_mmd_final", c.val_mmd_final ? ojson(*c.val_mmd_final) : ojson(nullptr)}};
}

CellResult cell_from_json(const ojson& j) {
  CellResult c;
  c.session = j.at("session").get<std::string>();
  c.method = j.at("method").get<std::string>();
  c.run = j.at("run").get<int>();
  for (std::size_t k = 0; k < kVariables.size(); ++k) c.r2[k] = j.at("r2").at(kVariables[k]).get<double>();
  if (!j.at("val_mmd_init").is_null()) c.val_mmd_init = j.at("val_mmd_init").get<double>();
  if (!j.at("val_mmd_final").is_null()) c.val_mmd_final = j.at("val_mmd_final").get<double>();
  return c;
}

std::pair<std::optional<double>, std::optional<double>> alignment_progress(const std::vector<EpochRecord>& history) {
  // The last stage-two run starts at its final epoch-0 record.
  std::ptrdiff_t start = -1;
  for (std::size_t i = 0; i < history.size(); ++i)
    if (history[i].stage == "stage2" && history[i].epoch == 0) start = static_cast<std::ptrdiff_t>(i);
  if (start < 0) return {};
  const EpochRecord* best = &history[static_cast<std::size_t>(start)];
  for (auto i = static_cast<std::size_t>(start); i < history.size(); ++i)
    if (history[i].val_loss < best->val_loss) best = &history[i];
  return {history[static_cast<std::size_t>(start)].mmd, best->mmd};
}

std::vector<Eigen::Matrix2Xd> positions_of(const SessionDataset& data) {
  std::vector<Eigen::Matrix2Xd> out;
  for (const auto& p : data.position) out.push_back(p.cast<double>());
  return out;
}

std::vector<Eigen::Matrix2Xd> velocities_of(const SessionDataset& data) {
  std::vector<Eigen::Matrix2Xd> out;
  for (int i = 0; i < data.num_trials(); ++i) out.push_back(data.velocity(i));
  return out;
}

std::array<double, 4> decode_and_score(const Checkpoint& ckpt, const std::string& session_id,
                                       const SessionDataset& train, const SessionDataset& test,
                                       const DecoderConfig& cfg) {
  const auto train_rates = rates_of(infer_rates(ckpt, train, session_id));
  const auto test_rates = rates_of(infer_rates(ckpt, test, session_id));
  const auto pos_truth = positions_of(test), vel_truth = velocities_of(test);
  const DecoderModel pos = train_decoder(train_rates, positions_of(train), cfg);
  const DecoderModel vel = train_decoder(train_rates, velocities_of(train), cfg);
  const auto p = score(pos.predict(test_rates), pos_truth);
  const auto v = score(vel.predict(test_rates), vel_truth);
  return {p[0], p[1], v[0], v[1]};
}

ojson build_report(const std::vector<CellResult>& cells, const std::vector<std::string>& methods,
                   const EvalConfig& eval, const ojson& metadata) {
  std::vector<std::string> variables(kVariables.begin(), kVariables.end());
  variables.push_back("vel_mean");

  std::vector<std::string> sessions;
  for (const auto& c : cells)
    if (std::find(sessions.begin(), sessions.end(), c.session) == sessions.end()) sessions.push_back(c.session);
  std::sort(sessions.begin(), sessions.end());

  auto lookup = [&](const std::string& method, const std::string& session) {
    std::vector<const CellResult*> out;
    for (const auto& c : cells)
      if (c.method == method && c.session == session) out.push_back(&c);
    std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->run < b->run; });
    return out;
  };

  ojson report;
  report["format_version"] = 1;
  report["metadata"] = metadata;
  report["methods"] = methods;
  report["sessions"] = sessions;
  report["variables"] = variables;

  ojson cell_list = ojson::array();
  for (const auto& m : methods)
    for (const auto& s : sessions)
      for (const auto* c : lookup(m, s)) cell_list.push_back(to_json(*c));
  report["cells"] = cell_list;

  // Session means over runs, then bootstrap across sessions.
  std::map<std::string, std::map<std::string, std::vector<double>>> session_means;  // method -> var -> per session
  ojson per_session = ojson::object();
  for (const auto& s : sessions) {
    ojson entry = ojson::object();
    for (const auto& m : methods) {
      const auto runs = lookup(m, s);
      if (runs.empty()) throw validation_error("missing_cell", "no evaluation cells for " + m + " / " + s);
      ojson vars = ojson::object();
      for (const auto& v : variables) {
        double sum = 0.0;
        for (const auto* c : runs) sum += variable_value(*c, v);
        const double mean = sum / static_cast<double>(runs.size());
        vars[v] = mean;
        session_means[m][v].push_back(mean);
      }
      entry[m] = vars;
    }
    per_session[s] = entry;
  }
  report["per_session"] = per_session;

  ojson summary = ojson::object();
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    ojson vars = ojson::object();
    for (std::size_t vi = 0; vi < variables.size(); ++vi) {
      const auto& values = session_means[methods[mi]][variables[vi]];
      vars[variables[vi]] = summary_json(
          bootstrap_ci(values, eval.bootstrap_resamples, eval.alpha, derive_seed({eval.seed, mi, vi})));
    }
    summary[methods[mi]] = vars;
  }
  report["summary"] = summary;

  ojson comparisons = ojson::array();
  for (std::size_t b = 1; b < methods.size(); ++b) {
    const std::string& ma = methods[0];
    const std::string& mb = methods[b];
    for (const auto& v : variables) {
      std::vector<double> xa, xb;
      for (const auto& s : sessions) {
        const auto ra = lookup(ma, s), rb = lookup(mb, s);
        for (const auto* ca : ra)
          for (const auto* cb : rb)
            if (ca->run == cb->run) {
              xa.push_back(variable_value(*ca, v));
              xb.push_back(variable_value(*cb, v));
            }
      }
      double diff = 0.0;
      for (std::size_t i = 0; i < xa.size(); ++i) diff += xa[i] - xb[i];
      ojson cmp = {{"a", ma}, {"b", mb}, {"variable", v}};
      cmp["mean_difference"] = xa.empty() ? 0.0 : diff / static_cast<double>(xa.size());
      auto test = [&](const std::vector<double>& a, const std::vector<double>& bb) {
        ojson t = {{"n_pairs", a.size()}};
        try {
          const auto w = wilcoxon_signed_rank(a, bb);
          t["p_value"] = w.p_value;
          t["w_plus"] = w.w_plus;
          t["n_nonzero"] = w.n;
          t["exact"] = w.exact;
        } catch (const Error& e) {
          t["p_value"] = nullptr;
          t["error"] = e.code();
        }
        return t;
      };
      cmp["session_run"] = test(xa, xb);
      cmp["session_mean"] = test(session_means[ma][v], session_means[mb][v]);
      comparisons.push_back(cmp);
    }
  }
  report["comparisons"] = comparisons;
  return report;
}

std::string report_csv(const std::vector<CellResult>& cells) {
  std::string out = "session,method,variable,run,r2\n";
  for (const auto& c : cells)
    for (std::size_t k = 0; k < kVariables.size(); ++k)
      out += c.session + "," + c.method + "," + kVariables[k] + "," + std::to_string(c.run) + "," + fmt(c.r2[k]) + "\n";
  return out;
}

ojson evaluate_pipeline(const Checkpoint& ckpt, const std::map<std::string, DatasetSplit>& targets,
                        const DecoderConfig& decoder, const EvalConfig& eval, const std::string& method) {
  std::vector<CellResult> cells;
  for (const auto& [sid, split] : targets) {
    if (ckpt.sessions.count(sid) == 0) throw validation_error("unknown_session", "checkpoint has no session '" + sid + "'");
    for (int r = 0; r < eval.runs_per_session; ++r) {
      DecoderConfig cfg = decoder;
      cfg.seed = derive_seed({decoder.seed, static_cast<std::uint64_t>(r)});
      CellResult c;
      c.session = sid;
      c.method = method;
      c.run = r;
      c.r2 = decode_and_score(ckpt, sid, split.train, split.test, cfg);
      std::tie(c.val_mmd_init, c.val_mmd_final) = alignment_progress(ckpt.history);
      cells.push_back(c);
    }
  }
  return build_report(cells, {method}, eval, {{"decoder", to_json(decoder)}, {"eval", to_json(eval)}});
}

std::vector<ProjectionRow> export_latent_projection(const std::vector<ProjectionInput>& inputs) {
  std::vector<ProjectionRow> rows;
  std::vector<Eigen::VectorXd> means;
  for (const auto& in : inputs) {
    const auto inf = infer_rates(*in.ckpt, *in.data, in.data->session_id);
    for (int i = 0; i < in.data->num_trials(); ++i) {
      means.push_back(inf[static_cast<std::size_t>(i)].latent.cast<double>().rowwise().mean());
      rows.push_back({in.data->session_id, i, in.data->labels[static_cast<std::size_t>(i)], 0.0, 0.0});
    }
  }
  if (rows.empty()) return rows;
  Eigen::MatrixXd pooled(static_cast<Eigen::Index>(means.size()), means.front().size());
  for (std::size_t i = 0; i < means.size(); ++i) pooled.row(static_cast<Eigen::Index>(i)) = means[i].transpose();
  const Eigen::MatrixX2d proj = pca_project_2d(pooled);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].pc1 = proj(static_cast<Eigen::Index>(i), 0);
    rows[i].pc2 = proj(static_cast<Eigen::Index>(i), 1);
  }
  return rows;
}

std::string projection_csv(const std::vector<ProjectionRow>& rows) {
  std::string out = "session_id,trial,direction,pc1,pc2\n";
  for (const auto& r : rows)
    out += r.session_id + "," + std::to_string(r.trial) + "," + std::to_string(r.direction) + "," + fmt(r.pc1) + "," +
           fmt(r.pc2) + "\n";
  return out;
}

}  // namespace tcla
