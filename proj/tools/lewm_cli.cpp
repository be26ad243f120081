// Command-line front end over the C API.

#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "lewm/lewm.h"

namespace {

enum Exit { kOk = 0, kConfig = 2, kIo = 3, kAbort = 4 };

int exit_code(lewm_status s) {
  switch (s) {
    case LEWM_OK:
      return kOk;
    case LEWM_ERR_CONFIG:
    case LEWM_ERR_ARGUMENT:
      return kConfig;
    case LEWM_ERR_IO:
      return kIo;
    case LEWM_ERR_DIVERGENCE:
    case LEWM_ERR_INTERNAL:
      break;
  }
  return kAbort;
}

int report(lewm_status s) {
  if (s != LEWM_OK) std::fprintf(stderr, "lewm: %s\n", lewm_last_error());
  return exit_code(s);
}

struct Options {
  std::string config;
  std::string out;
  long long seed_override = -1;
  bool quiet = false;
  std::string checkpoint;
};

int run_command(const std::string& name, const Options& o) {
  if (name == "verify" && o.config.empty()) {
    if (o.out.empty()) {
      std::fprintf(stderr, "lewm: verify needs --out DIR or --config PATH\n");
      return kConfig;
    }
    std::size_t drift = 0;
    const lewm_status s = lewm_verify(o.out.c_str(), o.quiet, nullptr, &drift);
    if (s != LEWM_OK) return report(s);
    return drift == 0 ? kOk : kIo;
  }
  if (o.config.empty()) {
    std::fprintf(stderr, "lewm: %s needs --config PATH\n", name.c_str());
    return kConfig;
  }

  lewm_experiment* exp = nullptr;
  lewm_status s = lewm_experiment_load(o.config.c_str(), &exp);
  if (s != LEWM_OK) return report(s);
  if (!o.out.empty()) s = lewm_experiment_set_out_dir(exp, o.out.c_str());
  if (s == LEWM_OK && o.seed_override >= 0) s = lewm_experiment_override_seed(exp, static_cast<uint64_t>(o.seed_override));
  if (s == LEWM_OK) s = lewm_experiment_set_quiet(exp, o.quiet);

  int code = kOk;
  if (s != LEWM_OK) {
    code = report(s);
  } else if (name == "generate") {
    code = report(lewm_generate(exp));
  } else if (name == "train") {
    code = report(lewm_train(exp));
  } else if (name == "eval") {
    code = report(lewm_eval(exp, o.checkpoint.empty() ? nullptr : o.checkpoint.c_str()));
  } else if (name == "ablate") {
    code = report(lewm_ablate(exp));
  } else if (name == "filter") {
    code = report(lewm_filter_run(exp));
  } else if (name == "verify") {
    char dir[4096];
    std::size_t drift = 0;
    s = lewm_experiment_out_dir(exp, dir, sizeof dir);
    if (s == LEWM_OK) s = lewm_verify(dir, o.quiet, nullptr, &drift);
    code = s != LEWM_OK ? report(s) : (drift == 0 ? kOk : kIo);
  }
  lewm_experiment_free(exp);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Emotion-aware world model experiments"};
  app.set_version_flag("--version", std::string(lewm_version()));
  app.require_subcommand(1);
  app.fallthrough();

  Options o;
  app.add_option("--config", o.config, "Experiment config file (INI)");
  app.add_option("--out", o.out, "Output directory (overrides [run] out_dir)");
  app.add_option("--seed-override", o.seed_override, "Run this single seed instead of the configured list")
      ->check(CLI::NonNegativeNumber);
  app.add_flag("--quiet", o.quiet, "Suppress progress output");

  app.add_subcommand("generate", "Generate the synthetic transition dataset");
  app.add_subcommand("train", "Train one model per seed (resumes interrupted runs)");
  app.add_subcommand("eval", "Evaluate checkpoints on the test split")
      ->add_option("--checkpoint", o.checkpoint, "Evaluate this checkpoint only");
  app.add_subcommand("ablate", "Paired-seed comparison of LEWM, blind baseline and beta = 0");
  app.add_subcommand("filter", "Train the emotion filter and run the validation probe");
  app.add_subcommand("verify", "Recompute manifest digests and report drift");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }
  return run_command(app.get_subcommands().front()->get_name(), o);
}
