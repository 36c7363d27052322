// Command-line front end: one subcommand per pipeline step.
//
//   tcla generate|pretrain|align|decode|evaluate|report --config exp.json
//        [--seed N] [--session ID] [--beta3 X] [--ablation ldnsws]
//
// Exit status: 0 success, 1 validation error (including usage), 2 runtime
// failure. Failures print one line to stderr: ERROR <step> <code>: <message>

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "tcla/experiment.hpp"

namespace {

int exit_code(tcla::ErrorKind kind) { return kind == tcla::ErrorKind::Validation ? 1 : 2; }

void emit(const std::string& step, const std::string& code, std::string message) {
  for (auto& ch : message)
    if (ch == '\n') ch = ' ';
  std::cerr << "ERROR " << step << " " << code << ": " << message << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-conditioned latent alignment pipeline"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> beta3;
  std::vector<std::string> sessions;
  std::string ablation;

  const char* steps[] = {"generate", "pretrain", "align", "decode", "evaluate", "report"};
  for (const char* name : steps) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--seed", seed, "experiment seed mixed into every run");
    sub->add_option("--session", sessions, "restrict to these target sessions");
    sub->add_option("--beta3", beta3, "override the alignment weight");
    sub->add_option("--ablation", ablation, "add the within-session baseline")->check(CLI::IsMember({"ldnsws"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 1;
  }

  const std::string step = app.get_subcommands().front()->get_name();
  try {
    tcla::ExperimentConfig cfg = tcla::load_experiment_config(config_path);
    if (seed) cfg.seed = *seed;
    if (beta3) cfg.stage2.mmd.beta3 = *beta3;
    tcla::Experiment exp(cfg);
    tcla::Selection sel;
    sel.targets = sessions;
    sel.with_baseline = ablation == "ldnsws";

    if (step == "generate") {
      exp.generate();
    } else if (step == "pretrain") {
      exp.pretrain();
    } else if (step == "align") {
      exp.align(sel);
      if (sel.with_baseline) exp.baseline(sel);
    } else if (step == "decode") {
      exp.decode(sel);
    } else if (step == "evaluate") {
      if (sel.with_baseline) exp.baseline(sel);
      exp.decode(sel);
      exp.report(sel);
    } else {
      exp.report(sel);
    }
    for (const auto& e : exp.log().events) std::cout << (e.executed ? "ran     " : "cached  ") << e.step << "\n";
    return 0;
  } catch (const tcla::Error& e) {
    emit(step, e.code(), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    emit(step, "runtime", e.what());
    return 2;
  }
}
