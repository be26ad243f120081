#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <ostream>
#include <sstream>

#include "lewm/errors.hpp"
#include "lewm/harness.hpp"

namespace lewm::harness {

namespace fs = std::filesystem;

namespace {

constexpr int kManifestVersion = 1;

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void say(const Context& ctx, const std::string& line) {
  if (ctx.log) *ctx.log << line << '\n' << std::flush;
}

fs::path dataset_path(const fs::path& out) { return out / "data" / "dataset.jsonl"; }
fs::path seed_dir(const fs::path& out, std::uint64_t seed) { return out / "seeds" / std::to_string(seed); }

std::string rel(const fs::path& out, const fs::path& p) { return fs::relative(p, out).generic_string(); }

ewh::Dataset generate(const ewh::EnvOptions& options, const RunSection& run) {
  const ewh::EnvSpec env = ewh::make_env(options);
  Rng rng(run.data_seed);
  return ewh::generate_dataset(env, run.data_samples, rng);
}

ewh::Split split_dataset(const ewh::Dataset& ds, const RunSection& run) {
  Rng rng(mix_seed(run.data_seed, 1));
  return ewh::split(ds, run.split, rng);
}

/// Adds or replaces artifacts produced by `command` and rewrites the manifest.
void record(const Context& ctx, const std::string& command,
            const std::vector<std::pair<fs::path, std::optional<std::uint64_t>>>& files) {
  const fs::path path = ctx.out() / RunManifest::kFileName;
  const std::string digest = ctx.config.digest();
  RunManifest m;
  if (fs::exists(path)) {
    try {
      m = manifest_from_json(Json::parse(read_text_file(path)));
    } catch (const Json::exception& e) {
      throw ParseError("manifest '" + path.string() + "': " + e.what());
    }
  }
  if (m.created.empty()) m.created = utc_now();
  m.updated = utc_now();
  m.tool_version = std::string(kToolVersion);
  m.config_digest = digest;
  m.experiment = ctx.config.run.name;
  for (const auto& [file, seed] : files) {
    const std::string name = rel(ctx.out(), file);
    std::erase_if(m.artifacts, [&](const ArtifactRecord& a) { return a.path == name; });
    m.artifacts.push_back({name, sha256_file(file), fs::file_size(file), command, seed});
  }
  std::sort(m.artifacts.begin(), m.artifacts.end(),
            [](const ArtifactRecord& a, const ArtifactRecord& b) { return a.path < b.path; });
  write_text_file(path, manifest_to_json(m).dump(1) + "\n");
}

void write_kv_file(const fs::path& path, const std::string& kv) { write_text_file(path, kv); }

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

core::LewmModel fresh_model(const core::ModelConfig& config, std::uint64_t seed) {
  return config.blind ? training::build_blind_baseline(config, seed) : core::LewmModel(config, seed);
}

}  // namespace

Json manifest_to_json(const RunManifest& m) {
  Json artifacts = Json::array();
  for (const ArtifactRecord& a : m.artifacts) {
    Json j{{"path", a.path}, {"sha256", a.sha256}, {"bytes", a.bytes}, {"command", a.command}};
    j["seed"] = a.seed ? Json(*a.seed) : Json(nullptr);
    artifacts.push_back(std::move(j));
  }
  return Json{{"format_version", kManifestVersion},
              {"tool_version", m.tool_version},
              {"config_digest", m.config_digest},
              {"experiment", m.experiment},
              {"created", m.created},
              {"updated", m.updated},
              {"artifacts", artifacts}};
}

RunManifest manifest_from_json(const Json& j) {
  try {
    if (j.at("format_version").get<int>() != kManifestVersion) throw SchemaError("unsupported manifest version");
    RunManifest m;
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config_digest = j.at("config_digest").get<std::string>();
    m.experiment = j.at("experiment").get<std::string>();
    m.created = j.at("created").get<std::string>();
    m.updated = j.at("updated").get<std::string>();
    for (const Json& a : j.at("artifacts")) {
      ArtifactRecord r{a.at("path").get<std::string>(), a.at("sha256").get<std::string>(),
                       a.at("bytes").get<std::uintmax_t>(), a.at("command").get<std::string>(), std::nullopt};
      if (!a.at("seed").is_null()) r.seed = a.at("seed").get<std::uint64_t>();
      m.artifacts.push_back(std::move(r));
    }
    return m;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed manifest: ") + e.what());
  }
}

std::string GenerateSummary::to_kv() const {
  std::ostringstream out;
  out << "samples=" << n << "\nK=" << schema.K << "\nM=" << schema.M << "\nd_v=" << schema.d_v
      << "\nd_a_mod=" << schema.d_a_mod << "\nd_i=" << schema.d_i << "\nenv_digest=" << env_digest << '\n';
  return out.str();
}

GenerateSummary cmd_generate(const Context& ctx) {
  ctx.config.validate();
  const ewh::Dataset ds = generate(ctx.config.env, ctx.config.run);
  GenerateSummary s{dataset_path(ctx.out()), ds.size(), ds.schema, ds.env->digest()};
  ewh::serialize(ds, s.dataset_path);
  const fs::path summary = ctx.out() / "data" / "summary.kv";
  write_kv_file(summary, s.to_kv());
  record(ctx, "generate",
         {{s.dataset_path, std::nullopt},
          {ewh::env_sidecar_path(s.dataset_path, s.env_digest), std::nullopt},
          {summary, std::nullopt}});
  say(ctx, "generate: " + std::to_string(s.n) + " samples, K=" + std::to_string(s.schema.K) +
               " M=" + std::to_string(s.schema.M) + " dims " + std::to_string(s.schema.d_v) + "/" +
               std::to_string(s.schema.d_a_mod) + "/" + std::to_string(s.schema.d_i) + " -> " +
               s.dataset_path.string());
  return s;
}

namespace {

/// Loads the generated dataset and checks it against the config.
ewh::Dataset load_dataset(const Context& ctx) {
  const fs::path path = dataset_path(ctx.out());
  if (!fs::exists(path)) throw IoError("dataset not found at '" + path.string() + "' (run generate first)");
  ewh::Dataset ds = ewh::deserialize(path);
  const ewh::EnvOptions& e = ctx.config.env;
  const std::pair<const char*, std::pair<std::size_t, std::size_t>> dims[] = {
      {"d_v", {ds.schema.d_v, e.d_v}}, {"d_a_mod", {ds.schema.d_a_mod, e.d_a_mod}},
      {"d_i", {ds.schema.d_i, e.d_i}}, {"K", {ds.schema.K, e.K}}, {"M", {ds.schema.M, e.M}}};
  for (const auto& [name, v] : dims) {
    if (v.first != v.second) {
      throw SchemaError(std::string("dataset ") + name + " = " + std::to_string(v.first) + " but config expects " +
                        std::to_string(v.second));
    }
  }
  const std::string expected = ewh::make_env(e).digest();
  if (!ds.env || ds.env->digest() != expected) {
    throw SchemaError("dataset was not generated from the configured env (digest mismatch)");
  }
  return ds;
}

}  // namespace

std::vector<SeedRun> cmd_train(const Context& ctx) {
  const ExperimentConfig& cfg = ctx.config;
  cfg.validate();
  const ewh::Dataset ds = load_dataset(ctx);
  const ewh::Split sp = split_dataset(ds, cfg.run);
  std::vector<SeedRun> out;
  for (std::uint64_t seed : cfg.run.seeds) {
    const fs::path dir = seed_dir(ctx.out(), seed);
    const fs::path state = dir / "trainer_state.json";
    training::TrainHyper hyper = cfg.train;
    hyper.seed = seed;

    std::optional<training::Trainer> trainer;
    if (fs::exists(state)) {
      Json snap;
      try {
        snap = Json::parse(read_text_file(state));
      } catch (const Json::parse_error& e) {
        throw ParseError("trainer state '" + state.string() + "': " + e.what());
      }
      trainer.emplace(training::Trainer::restore(snap, sp.train, sp.val, hyper));
      say(ctx, "train seed " + std::to_string(seed) + ": resuming at step " + std::to_string(trainer->step()));
    } else {
      trainer.emplace(fresh_model(cfg.model, seed), sp.train, sp.val, hyper);
    }

    const std::size_t chunk = cfg.run.checkpoint_every ? cfg.run.checkpoint_every : hyper.max_steps;
    const std::size_t stop = ctx.interrupt_at.value_or(hyper.max_steps);
    while (!trainer->finished() && trainer->step() < stop) {
      const std::size_t target = std::min(stop, (trainer->step() / chunk + 1) * chunk);
      trainer->run(target);
      if (!trainer->finished()) write_text_file(state, trainer->snapshot().dump());
      const auto& rec = trainer->history().records;
      if (!rec.empty()) {
        say(ctx, "train seed " + std::to_string(seed) + ": step " + std::to_string(trainer->step()) + "/" +
                     std::to_string(hyper.max_steps) + " total=" + format_double(rec.back().total));
      }
    }

    SeedRun r{seed, trainer->finished(), trainer->step(), dir / "checkpoint.json"};
    if (!trainer->finished()) {
      say(ctx, "train seed " + std::to_string(seed) + ": interrupted at step " + std::to_string(trainer->step()));
      out.push_back(r);
      continue;
    }
    const training::TrainHistory& h = trainer->history();
    core::save_checkpoint(trainer->best_model(), r.checkpoint);
    write_text_file(dir / "history.csv", h.to_csv());
    std::string val = "step,total\n";
    for (const auto& v : h.validation) val += std::to_string(v.step) + ',' + format_double(v.total) + '\n';
    write_text_file(dir / "validation.csv", val);
    std::ostringstream summary;
    summary << "seed=" << seed << "\nsteps=" << trainer->step() << "\nbest_step=" << h.best_step
            << "\nbest_val=" << format_double(h.best_val) << "\nearly_stopped=" << (h.early_stopped ? 1 : 0) << '\n';
    write_kv_file(dir / "train_summary.kv", summary.str());
    fs::remove(state);
    record(ctx, "train",
           {{r.checkpoint, seed},
            {dir / "history.csv", seed},
            {dir / "validation.csv", seed},
            {dir / "train_summary.kv", seed}});
    say(ctx, "train seed " + std::to_string(seed) + ": done, best step " + std::to_string(h.best_step));
    out.push_back(r);
  }
  return out;
}

EvalReport cmd_eval(const Context& ctx, const std::optional<fs::path>& checkpoint) {
  const ExperimentConfig& cfg = ctx.config;
  cfg.validate();
  const ewh::Dataset ds = load_dataset(ctx);
  const ewh::Split sp = split_dataset(ds, cfg.run);
  const ewh::EnvSpec& env = *ds.env;
  EvalReport report;
  report.oracle = training::evaluate(training::oracle_predictor(env), sp.test, env);
  std::vector<std::pair<fs::path, std::optional<std::uint64_t>>> files;
  const fs::path oracle_path = ctx.out() / "eval" / "oracle_metrics.kv";
  write_kv_file(oracle_path, report.oracle.to_kv());
  files.push_back({oracle_path, std::nullopt});

  auto run_one = [&](const fs::path& ckpt, std::optional<std::uint64_t> seed, const fs::path& dest) {
    if (!fs::exists(ckpt)) throw IoError("checkpoint not found at '" + ckpt.string() + "'");
    const core::LewmModel model = core::load_checkpoint(ckpt, cfg.model);
    const training::EvalMetrics m = training::evaluate(model, sp.test, env);
    write_kv_file(dest, m.to_kv());
    files.push_back({dest, seed});
    report.runs.push_back({seed.value_or(0), m});
    say(ctx, "eval " + ckpt.string() + ": state_mse=" + format_double(m.state_mse) +
                 " emotion_accuracy=" + format_double(m.emotion_accuracy) +
                 " oracle_gap=" + format_double(m.oracle_gap));
  };
  if (checkpoint) {
    run_one(*checkpoint, std::nullopt, ctx.out() / "eval" / "metrics.kv");
  } else {
    for (std::uint64_t seed : cfg.run.seeds) {
      run_one(seed_dir(ctx.out(), seed) / "checkpoint.json", seed, seed_dir(ctx.out(), seed) / "metrics.kv");
    }
  }
  record(ctx, "eval", files);
  return report;
}

std::string_view ablation_model_name(AblationModel m) {
  switch (m) {
    case AblationModel::blind:
      return "blind";
    case AblationModel::lewm_beta0:
      return "lewm_beta0";
    case AblationModel::lewm:
      break;
  }
  return "lewm";
}

double sign_test(std::size_t wins, std::size_t n) {
  if (wins > n) throw ContractViolation("sign_test: wins exceeds n");
  if (n == 0) return 1.0;
  auto pmf = [n](std::size_t k) {
    return std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) -
                    static_cast<double>(n) * std::log(2.0));
  };
  double lower = 0.0, upper = 0.0;
  for (std::size_t k = 0; k <= wins; ++k) lower += pmf(k);
  for (std::size_t k = wins; k <= n; ++k) upper += pmf(k);
  return std::min(1.0, 2.0 * std::min(lower, upper));
}

const AblationRun& AblationResult::run(AblationModel m, double kappa, std::uint64_t seed) const {
  for (const AblationRun& r : runs) {
    if (r.model == m && r.kappa == kappa && r.seed == seed) return r;
  }
  throw ContractViolation("ablation run not found");
}

std::string AblationResult::table_csv() const {
  std::ostringstream out;
  out << "kappa,model,n,state_mse_mean,state_mse_std,emotion_accuracy_mean,emotion_accuracy_std,"
         "oracle_gap_mean,oracle_gap_std,sensitivity_mean\n";
  for (double kappa : kappas) {
    for (AblationModel m : {AblationModel::lewm, AblationModel::blind, AblationModel::lewm_beta0}) {
      std::vector<double> mse, acc, gap, sens;
      for (const AblationRun& r : runs) {
        if (r.model != m || r.kappa != kappa) continue;
        mse.push_back(r.metrics.state_mse);
        acc.push_back(r.metrics.emotion_accuracy);
        gap.push_back(r.metrics.oracle_gap);
        sens.push_back(r.sensitivity);
      }
      out << format_double(kappa) << ',' << ablation_model_name(m) << ',' << mse.size() << ','
          << format_double(mean(mse)) << ',' << format_double(sample_std(mse)) << ',' << format_double(mean(acc))
          << ',' << format_double(sample_std(acc)) << ',' << format_double(mean(gap)) << ','
          << format_double(sample_std(gap)) << ',' << format_double(mean(sens)) << '\n';
    }
  }
  return out.str();
}

std::string AblationResult::paired_csv() const {
  std::ostringstream out;
  out << "kappa,comparison,n,wins,sign_test_p,mean_mse_diff,mean_relative_diff,mean_abs_relative_diff,"
         "per_seed_relative_diff\n";
  for (const PairedComparison& p : paired) {
    std::vector<double> abs_rel;
    for (double d : p.relative_diff) abs_rel.push_back(std::abs(d));
    std::string per_seed;
    for (std::size_t i = 0; i < p.relative_diff.size(); ++i) {
      per_seed += (i ? " " : "") + format_double(p.relative_diff[i]);
    }
    out << format_double(p.kappa) << ',' << p.label << ',' << p.mse_diff.size() << ',' << p.wins << ','
        << format_double(p.sign_test_p) << ',' << format_double(mean(p.mse_diff)) << ','
        << format_double(mean(p.relative_diff)) << ',' << format_double(mean(abs_rel)) << ',' << per_seed << '\n';
  }
  return out.str();
}

AblationResult cmd_ablate(const Context& ctx) {
  const ExperimentConfig& cfg = ctx.config;
  cfg.validate();
  if (cfg.run.seeds.size() < 2) {
    throw ConfigError("ablate needs at least 2 seeds for a variance estimate (got " +
                      std::to_string(cfg.run.seeds.size()) + ")");
  }
  if (!(cfg.env.kappa > 0.0)) throw ConfigError("ablate needs [env] kappa > 0; the kappa = 0 env is added automatically");

  AblationResult result;
  result.kappas = {cfg.env.kappa, 0.0};
  core::ModelConfig model_cfg = cfg.model;
  model_cfg.blind = false;
  for (double kappa : result.kappas) {
    ewh::EnvOptions options = cfg.env;
    options.kappa = kappa;
    const ewh::Dataset ds = generate(options, cfg.run);
    const ewh::Split sp = split_dataset(ds, cfg.run);
    for (std::uint64_t seed : cfg.run.seeds) {
      for (AblationModel m : {AblationModel::lewm, AblationModel::blind, AblationModel::lewm_beta0}) {
        training::TrainHyper hyper = cfg.train;
        hyper.seed = seed;
        if (m == AblationModel::lewm_beta0) hyper.beta = 0.0;
        core::LewmModel init = m == AblationModel::blind ? training::build_blind_baseline(model_cfg, seed)
                                                         : core::LewmModel(model_cfg, seed);
        const training::TrainResult trained = training::train_lewm(std::move(init), sp.train, sp.val, hyper);
        AblationRun r{m, kappa, seed, training::evaluate(trained.model, sp.test, *ds.env),
                      training::emotion_sensitivity(trained.model, sp.test)};
        say(ctx, "ablate kappa=" + format_double(kappa) + " " + std::string(ablation_model_name(m)) + " seed " +
                     std::to_string(seed) + ": state_mse=" + format_double(r.metrics.state_mse) +
                     " oracle_gap=" + format_double(r.metrics.oracle_gap));
        result.runs.push_back(r);
      }
    }
  }
  for (double kappa : result.kappas) {
    for (AblationModel other : {AblationModel::blind, AblationModel::lewm_beta0}) {
      PairedComparison p;
      p.label = "lewm-" + std::string(ablation_model_name(other));
      p.kappa = kappa;
      for (std::uint64_t seed : cfg.run.seeds) {
        const double a = result.run(AblationModel::lewm, kappa, seed).metrics.state_mse;
        const double b = result.run(other, kappa, seed).metrics.state_mse;
        p.mse_diff.push_back(a - b);
        p.relative_diff.push_back((a - b) / b);
        if (a < b) ++p.wins;
      }
      p.sign_test_p = sign_test(p.wins, p.mse_diff.size());
      result.paired.push_back(std::move(p));
    }
  }

  std::ostringstream runs;
  runs << "kappa,model,seed,state_mse,emotion_accuracy,emotion_nll,oracle_mse,oracle_gap,sensitivity\n";
  for (const AblationRun& r : result.runs) {
    runs << format_double(r.kappa) << ',' << ablation_model_name(r.model) << ',' << r.seed << ','
         << format_double(r.metrics.state_mse) << ',' << format_double(r.metrics.emotion_accuracy) << ','
         << format_double(r.metrics.emotion_nll) << ',' << format_double(r.metrics.oracle_mse) << ','
         << format_double(r.metrics.oracle_gap) << ',' << format_double(r.sensitivity) << '\n';
  }
  const fs::path dir = ctx.out() / "ablation";
  write_text_file(dir / "runs.csv", runs.str());
  write_text_file(dir / "table.csv", result.table_csv());
  write_text_file(dir / "paired.csv", result.paired_csv());
  record(ctx, "ablate",
         {{dir / "runs.csv", std::nullopt}, {dir / "table.csv", std::nullopt}, {dir / "paired.csv", std::nullopt}});
  say(ctx, result.table_csv() + "\n" + result.paired_csv());
  return result;
}

std::string FilterReport::to_kv() const {
  std::ostringstream out;
  out << "classifier_accuracy=" << format_double(classifier_accuracy) << '\n'
      << "neutralize_exact=" << format_double(neutralize_exact) << '\n'
      << "idempotence=" << format_double(idempotence) << '\n'
      << "holdout_n=" << holdout_n << '\n'
      << probe.to_kv();
  return out.str();
}

FilterReport cmd_filter(const Context& ctx) {
  const ExperimentConfig& cfg = ctx.config;
  cfg.validate();
  const FilterSection& f = cfg.filter;
  Rng corpus_rng(f.corpus.seed);
  const std::vector<filter::FilterTriple> corpus = filter::gen_filter_corpus(f.corpus, corpus_rng);
  const fs::path dir = ctx.out() / "filter";
  filter::serialize_corpus(corpus, f.corpus.V, dir / "corpus.jsonl");

  const std::size_t n_hold =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f.holdout_fraction * corpus.size())));
  if (n_hold >= corpus.size()) throw ConfigError("[filter] holdout leaves no training samples");
  const std::span<const filter::FilterTriple> train(corpus.data(), corpus.size() - n_hold);
  const std::span<const filter::FilterTriple> hold(corpus.data() + train.size(), n_hold);

  filter::FilterModel model(f.model, f.hyper.seed);
  say(ctx, "filter: stage 1 on " + std::to_string(train.size()) + " samples");
  filter::FilterHistory history = filter::train_stage1(model, train, f.hyper);
  say(ctx, "filter: stage 2");
  const filter::FilterHistory second = filter::train_stage2(model, train, f.hyper);
  history.records.insert(history.records.end(), second.records.begin(), second.records.end());

  FilterReport report;
  report.holdout_n = hold.size();
  std::size_t correct = 0, exact = 0, stable = 0;
  for (const filter::FilterTriple& t : hold) {
    correct += (filter::classify(model, t.x) >= f.probe.threshold) == t.e ? 1 : 0;
    const filter::TokenSeq once = filter::filter_apply(model, t.x, f.probe.threshold);
    exact += once == t.y ? 1 : 0;
    stable += filter::filter_apply(model, once, f.probe.threshold) == once ? 1 : 0;
  }
  const double n = static_cast<double>(hold.size());
  report.classifier_accuracy = static_cast<double>(correct) / n;
  report.neutralize_exact = static_cast<double>(exact) / n;
  report.idempotence = static_cast<double>(stable) / n;
  say(ctx, "filter: probe");
  Rng probe_rng(f.probe_seed);
  report.probe = filter::validation_probe(model, f.corpus, f.probe, probe_rng);

  write_text_file(dir / "model.json", filter::filter_model_to_json(model).dump() + "\n");
  write_text_file(dir / "history.csv", history.to_csv());
  write_kv_file(dir / "report.kv", report.to_kv());
  record(ctx, "filter",
         {{dir / "corpus.jsonl", std::nullopt},
          {dir / "model.json", std::nullopt},
          {dir / "history.csv", std::nullopt},
          {dir / "report.kv", std::nullopt}});
  say(ctx, report.to_kv());
  return report;
}

VerifyReport cmd_verify(const fs::path& out_dir) {
  const fs::path path = out_dir / RunManifest::kFileName;
  if (!fs::exists(path)) throw IoError("no manifest at '" + path.string() + "'");
  RunManifest m;
  try {
    m = manifest_from_json(Json::parse(read_text_file(path)));
  } catch (const Json::parse_error& e) {
    throw ParseError("manifest '" + path.string() + "': " + e.what());
  }
  VerifyReport report;
  for (const ArtifactRecord& a : m.artifacts) {
    ++report.checked;
    const fs::path file = out_dir / a.path;
    if (!fs::exists(file)) {
      report.drift.push_back("missing " + a.path);
      continue;
    }
    const std::string found = sha256_file(file);
    if (found != a.sha256) report.drift.push_back("changed " + a.path + " (recorded " + a.sha256.substr(0, 12) +
                                                  ", found " + found.substr(0, 12) + ")");
  }
  return report;
}

}  // namespace lewm::harness
