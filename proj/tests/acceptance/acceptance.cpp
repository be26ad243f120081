// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. Arguments select a subset, e.g. "2 8".

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lewm/errors.hpp"
#include "lewm/filter.hpp"
#include "lewm/gradient_suite.hpp"
#include "lewm/harness.hpp"
#include "lewm/ops.hpp"
#include "lewm/training.hpp"

namespace fs = std::filesystem;
using namespace lewm;

namespace {

// Tolerances and thresholds.
constexpr double kGradTol = 1e-4;
constexpr double kGradEps = 1e-5;
constexpr int kGradSeeds = 10;
constexpr double kFactorizationTol = 1e-12;
constexpr int kFactorizationInstances = 100;
constexpr double kBetaHigh = 1.0;
constexpr std::size_t kSensitivityMinWins = 4;
constexpr double kMaxGapRatio = 0.5;
constexpr double kMaxParity = 0.05;
constexpr std::size_t kMinSeeds = 5;
constexpr std::size_t kOverfitSamples = 64;
constexpr std::size_t kOverfitSteps = 5000;
constexpr double kOverfitLoss = 1e-2;
constexpr double kMinPolarityDrop = 0.30;
constexpr double kMaxParityDrop = 0.05;
constexpr double kNllTol = 1e-9;
constexpr double kConvexTol = 1e-12;
constexpr double kAlphaFdTol = 1e-6;
constexpr std::size_t kRoundTripSamples = 1000;

// Runtime budgets in seconds.
constexpr double kBudget[10] = {0, 60, 10, 600, 1800, 1800, 300, 600, 10, 300};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

std::string fmt_list(const std::vector<double>& v, int precision = 3) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + fmt(v[i], precision);
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lewm_acceptance_" + name);
  fs::remove_all(p);
  return p;
}

harness::ExperimentConfig default_config() {
  harness::ExperimentConfig cfg = harness::load_config(LEWM_DEFAULT_CONFIG);
  cfg.run.out_dir = scratch("default");
  return cfg;
}

ewh::Split default_split(const harness::ExperimentConfig& cfg, ewh::EnvSpec* env) {
  *env = ewh::make_env(cfg.env);
  Rng rng(cfg.run.data_seed);
  const ewh::Dataset ds = ewh::generate_dataset(*env, cfg.run.data_samples, rng);
  Rng split_rng(mix_seed(cfg.run.data_seed, 1));
  return ewh::split(ds, cfg.run.split, split_rng);
}

// Shared by criteria 4 and 5.
const harness::AblationResult& ablation() {
  static const harness::AblationResult result = [] {
    harness::Context ctx{default_config()};
    return harness::cmd_ablate(ctx);
  }();
  return result;
}

Outcome gradients() {
  GradCheckOptions options;
  options.eps = kGradEps;
  options.tol = kGradTol;
  std::size_t checked = 0;
  double worst = 0.0;
  std::string failure;
  for (std::uint64_t seed = 1; seed <= kGradSeeds; ++seed) {
    std::vector<GradCase> cases = training::world_model_grad_cases(seed);
    std::vector<GradCase> filter_cases = filter::filter_grad_cases(seed);
    cases.insert(cases.end(), filter_cases.begin(), filter_cases.end());
    for (const GradSuiteResult& r : run_grad_suite(cases, options)) {
      ++checked;
      worst = std::max(worst, r.report.max_rel_error);
      if (!r.report.passed && failure.empty()) failure = "seed " + std::to_string(seed) + " " + r.report.failure;
    }
  }
  return {failure.empty(), std::to_string(checked) + " maps over " + std::to_string(kGradSeeds) +
                               " seeds, max rel error " + fmt(worst, 3) + (failure.empty() ? "" : "; " + failure)};
}

Outcome factorization() {
  ewh::EnvOptions options;
  const ewh::EnvSpec env = ewh::make_env(options);
  const core::ModelConfig cfg = core::ModelConfig::for_schema(env.schema);
  const double d_s = static_cast<double>(cfg.d_s());
  double worst = 0.0;
  for (int i = 0; i < kFactorizationInstances; ++i) {
    const core::LewmModel m(cfg, mix_seed(2024, i));
    Rng rng(mix_seed(7, i));
    const ewh::EwhSample s = ewh::sample_transition(env, rng);
    const Array h = m.encode(s.s0, s.e0, s.action).h;
    const Array logits = m.emotion_logits(h, nullptr);
    double peak = logits[0];
    for (double v : logits.values()) peak = std::max(peak, v);
    double z = 0.0;
    for (double v : logits.values()) z += std::exp(v - peak);
    const double emotion = logits[s.e1.category()] - peak - std::log(z);
    const Array mean = m.decode_state(m.transition_state(h, s.e1)).concat();
    const Array target = s.s1.concat();
    double sq = 0.0;
    for (std::size_t j = 0; j < target.size(); ++j) sq += (target[j] - mean[j]) * (target[j] - mean[j]);
    const double state = -0.5 * sq - 0.5 * d_s * std::log(2.0 * std::numbers::pi);
    worst = std::max(worst, std::abs(m.log_joint(s.s0, s.e0, s.action, s.s1, s.e1) - (emotion + state)));
  }
  return {worst <= kFactorizationTol,
          std::to_string(kFactorizationInstances) + " instances, max |diff| " + fmt(worst, 3)};
}

Outcome consistency() {
  const harness::ExperimentConfig cfg = default_config();
  ewh::EnvSpec env;
  const ewh::Split sp = default_split(cfg, &env);

  bool exact_zero = true;
  double witness = 0.0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const core::LewmModel m(cfg.model, mix_seed(99, i));
    const ewh::EwhSample& s = sp.test.samples[i];
    const Array h = m.encode(s.s0, s.e0, s.action).h;
    if (training::consistency_penalty(m, h, s.e1, s.e1) != 0.0) exact_zero = false;
    const std::size_t k = s.e1.category();
    const ewh::EmotionState other{ops::one_hot((k + 1) % cfg.env.K, cfg.env.K), nullptr};
    witness = std::max(witness, training::consistency_penalty(m, h, other, s.e1));
  }

  std::vector<double> high, zero;
  std::size_t wins = 0;
  for (std::uint64_t seed : cfg.run.seeds) {
    for (double beta : {kBetaHigh, 0.0}) {
      training::TrainHyper hyper = cfg.train;
      hyper.seed = seed;
      hyper.beta = beta;
      const training::TrainResult r =
          training::train_lewm(core::LewmModel(cfg.model, seed), sp.train, sp.val, hyper);
      (beta > 0.0 ? high : zero).push_back(training::emotion_sensitivity(r.model, sp.test));
    }
    if (high.back() < zero.back()) ++wins;
  }
  const bool pass = exact_zero && witness > 0.0 && cfg.run.seeds.size() >= kMinSeeds && wins >= kSensitivityMinWins;
  return {pass, std::string("C(E,E) == 0 ") + (exact_zero ? "yes" : "no") + ", witness C = " + fmt(witness) +
                    "; sensitivity beta=" + fmt(kBetaHigh) + " [" + fmt_list(high) + "] vs beta=0 [" +
                    fmt_list(zero) + "], smaller on " + std::to_string(wins) + "/" +
                    std::to_string(cfg.run.seeds.size())};
}

Outcome advantage() {
  const harness::ExperimentConfig cfg = default_config();
  const harness::AblationResult& ab = ablation();
  std::vector<double> ratios;
  std::size_t wins = 0;
  bool gaps_ok = true;
  for (std::uint64_t seed : cfg.run.seeds) {
    const auto& lewm = ab.run(harness::AblationModel::lewm, cfg.env.kappa, seed).metrics;
    const auto& blind = ab.run(harness::AblationModel::blind, cfg.env.kappa, seed).metrics;
    if (lewm.state_mse < blind.state_mse) ++wins;
    ratios.push_back(lewm.oracle_gap / blind.oracle_gap);
    if (!(blind.oracle_gap > 0.0) || ratios.back() > kMaxGapRatio) gaps_ok = false;
  }
  const std::size_t n = cfg.run.seeds.size();
  const bool pass = n >= kMinSeeds && wins == n && gaps_ok;
  return {pass, "kappa=" + fmt(cfg.env.kappa) + " sigma=" + fmt(cfg.env.sigma) + ": LEWM MSE lower on " +
                    std::to_string(wins) + "/" + std::to_string(n) + " seeds, oracle-gap ratio [" +
                    fmt_list(ratios) + "] (limit " + fmt(kMaxGapRatio) + " per seed)"};
}

Outcome parity() {
  const harness::ExperimentConfig cfg = default_config();
  const harness::AblationResult& ab = ablation();
  std::vector<double> rel;
  double sum = 0.0;
  for (std::uint64_t seed : cfg.run.seeds) {
    const double a = ab.run(harness::AblationModel::lewm, 0.0, seed).metrics.state_mse;
    const double b = ab.run(harness::AblationModel::blind, 0.0, seed).metrics.state_mse;
    rel.push_back((a - b) / b);
    sum += std::abs(rel.back());
  }
  const double mean_abs = sum / static_cast<double>(rel.size());
  return {rel.size() >= kMinSeeds && mean_abs <= kMaxParity,
          "kappa=0 relative MSE diff [" + fmt_list(rel) + "], mean |diff| " + fmt(mean_abs, 3) + " (limit " +
              fmt(kMaxParity) + ")"};
}

Outcome overfit() {
  const harness::ExperimentConfig cfg = default_config();
  ewh::EnvOptions options = cfg.env;
  options.sigma = 0.0;
  const ewh::EnvSpec env = ewh::make_env(options);
  Rng rng(11);
  const ewh::Dataset data = ewh::generate_dataset(env, kOverfitSamples, rng);
  training::TrainHyper hyper = cfg.train;
  hyper.seed = 1;
  hyper.max_steps = kOverfitSteps;
  const training::TrainResult r = training::train_lewm(core::LewmModel(cfg.model, 1), data, data, hyper);
  const training::LossBreakdown loss = training::total_objective(r.model, data.samples, hyper);
  std::size_t steps = r.history.records.empty() ? 0 : r.history.records.back().step;
  return {loss.l_state < kOverfitLoss && steps <= kOverfitSteps,
          std::to_string(kOverfitSamples) + " noise-free samples, L_state " + fmt(loss.l_state, 3) + " after " +
              std::to_string(steps) + " steps (limit " + fmt(kOverfitLoss) + ")"};
}

Outcome filter_probe() {
  harness::ExperimentConfig cfg = default_config();
  cfg.run.out_dir = scratch("filter");
  const harness::FilterReport report = harness::cmd_filter(harness::Context{cfg});
  const filter::ProbeReport& p = report.probe;
  const bool pass = p.polarity_drop() >= kMinPolarityDrop && p.parity_drop() <= kMaxParityDrop &&
                    p.polarity_drop() > p.parity_drop();
  return {pass, "polarity " + fmt(p.polarity_raw, 3) + " -> " + fmt(p.polarity_filtered, 3) + " (drop " +
                    fmt(p.polarity_drop(), 3) + ", need >= " + fmt(kMinPolarityDrop) + "), parity " +
                    fmt(p.parity_raw, 3) + " -> " + fmt(p.parity_filtered, 3) + " (drop " +
                    fmt(p.parity_drop(), 3) + ", limit " + fmt(kMaxParityDrop) + ")"};
}

Outcome filter_contracts() {
  filter::CorpusSpec spec;
  spec.n_samples = 400;
  Rng rng(3);
  const std::vector<filter::FilterTriple> corpus = filter::gen_filter_corpus(spec, rng);
  filter::FilterConfig config;
  config.d_embed = 8;
  config.hidden_cls = 12;
  config.hidden_gen = 12;

  double nll_err = 0.0;
  const filter::FilterModel fresh(config, 5);
  for (std::size_t i = 0; i < 100; ++i) {
    const filter::FilterTriple& t = corpus[i];
    const std::vector<Array> probs = filter::neutralize_step_probs(fresh, t.x, t.e, t.y);
    long double oracle = 0.0L;
    for (std::size_t s = 0; s < probs.size(); ++s) oracle -= std::log(static_cast<long double>(probs[s][t.y[s + 1]]));
    nll_err = std::max(nll_err, std::abs(filter::neutralize_nll(fresh, t.x, t.e, t.y) - static_cast<double>(oracle)));
  }

  filter::FilterModel trained(config, 6);
  filter::FilterHyper hyper;
  hyper.total_steps = 300;
  const filter::FilterHistory history = filter::train_filter(trained, corpus, hyper);
  bool alpha_ok = true;
  double convex_err = 0.0;
  for (const filter::FilterRecord& r : history.records) {
    if (!(r.alpha > 0.0 && r.alpha < 1.0)) alpha_ok = false;
    convex_err = std::max(convex_err, std::abs(r.total - (r.alpha * r.l_cls + (1.0 - r.alpha) * r.l_gen)));
  }

  const std::span<const filter::FilterTriple> batch(corpus.data(), 16);
  ParamStore grads = trained.params().zeros_like();
  filter::joint_objective(trained, batch, &grads);
  const double analytic = grads.get("alpha_raw")[0];
  Array& alpha_raw = *trained.params().find("alpha_raw");
  const double centre = alpha_raw[0];
  const double eps = 1e-5;
  alpha_raw.fill(centre + eps);
  const double up = filter::joint_objective(trained, batch).total;
  alpha_raw.fill(centre - eps);
  const double down = filter::joint_objective(trained, batch).total;
  alpha_raw.fill(centre);
  const double fd_err = std::abs((up - down) / (2 * eps) - analytic) / std::max(1.0, std::abs(analytic));

  const bool pass = nll_err <= kNllTol && alpha_ok && convex_err <= kConvexTol && fd_err <= kAlphaFdTol &&
                    !history.records.empty();
  return {pass, "NLL vs step sum " + fmt(nll_err, 3) + "; alpha in (0,1) at all " +
                    std::to_string(history.records.size()) + " logged steps: " + (alpha_ok ? "yes" : "no") +
                    ", convex-combination error " + fmt(convex_err, 3) + "; alpha_raw gradient vs differences " +
                    fmt(fd_err, 3)};
}

Outcome determinism() {
  harness::ExperimentConfig cfg = harness::load_config(LEWM_SMOKE_CONFIG);
  cfg.run.checkpoint_every = 40;
  auto pipeline = [&](const std::string& name, std::optional<std::size_t> interrupt) {
    harness::Context ctx{cfg};
    ctx.config.run.out_dir = scratch(name);
    harness::cmd_generate(ctx);
    if (interrupt) {
      harness::Context partial = ctx;
      partial.interrupt_at = interrupt;
      harness::cmd_train(partial);
    }
    harness::cmd_train(ctx);
    harness::cmd_eval(ctx);
    return ctx.config.run.out_dir;
  };
  const fs::path a = pipeline("det_a", std::nullopt);
  const fs::path b = pipeline("det_b", std::nullopt);
  const fs::path c = pipeline("det_resume", 70);

  const bool dataset_same = read_file(a / "data/dataset.jsonl") == read_file(b / "data/dataset.jsonl") &&
                            !read_file(a / "data/dataset.jsonl").empty();
  bool metrics_same = true, resume_same = true, reload_same = true;
  ewh::Dataset ds = ewh::deserialize(a / "data/dataset.jsonl");
  Rng split_rng(mix_seed(cfg.run.data_seed, 1));
  const ewh::Split sp = ewh::split(ds, cfg.run.split, split_rng);
  for (std::uint64_t seed : cfg.run.seeds) {
    const fs::path dir = fs::path("seeds") / std::to_string(seed);
    const std::string metrics = read_file(a / dir / "metrics.kv");
    if (metrics.empty() || metrics != read_file(b / dir / "metrics.kv")) metrics_same = false;
    if (metrics != read_file(c / dir / "metrics.kv") ||
        read_file(a / dir / "checkpoint.json") != read_file(c / dir / "checkpoint.json")) {
      resume_same = false;
    }
    const core::LewmModel loaded = core::load_checkpoint(a / dir / "checkpoint.json");
    const fs::path resaved = a / dir / "resaved.json";
    core::save_checkpoint(loaded, resaved);
    const training::EvalMetrics m1 = training::evaluate(loaded, sp.test, *ds.env);
    const training::EvalMetrics m2 = training::evaluate(core::load_checkpoint(resaved), sp.test, *ds.env);
    if (m1.to_kv() != m2.to_kv() || read_file(resaved) != read_file(a / dir / "checkpoint.json")) {
      reload_same = false;
    }
  }

  ewh::EnvOptions options;
  Rng rng(77);
  const ewh::Dataset big = ewh::generate_dataset(ewh::make_env(options), kRoundTripSamples, rng);
  const fs::path file = scratch("round_trip") / "dataset.jsonl";
  ewh::serialize(big, file);
  const ewh::Dataset back = ewh::deserialize(file);
  const bool round_trip = back == big && ewh::serialize_to_string(back) == ewh::serialize_to_string(big);

  const bool pass = dataset_same && metrics_same && resume_same && reload_same && round_trip;
  auto yn = [](bool v) { return v ? "yes" : "no"; };
  return {pass, std::string("dataset bytes identical ") + yn(dataset_same) + ", metrics identical " +
                    yn(metrics_same) + ", resume exact " + yn(resume_same) + ", checkpoint reload exact " +
                    yn(reload_same) + ", " + std::to_string(kRoundTripSamples) + "-sample round trip " +
                    yn(round_trip)};
}

struct Criterion {
  int id;
  const char* title;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", gradients},
      {2, "factorization identity", factorization},
      {3, "consistency regularizer", consistency},
      {4, "emotion-driven advantage", advantage},
      {5, "parity on kappa = 0", parity},
      {6, "overfit probe", overfit},
      {7, "filter probe", filter_probe},
      {8, "filter objective contracts", filter_contracts},
      {9, "determinism and persistence", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = seconds <= kBudget[c.id];
    const bool pass = o.pass && in_time;
    if (!pass) ++failures;
    std::printf("%s [%d] %s: %s (%.1f s, budget %.0f s%s)\n", pass ? "PASS" : "FAIL", c.id, c.title,
                o.detail.c_str(), seconds, kBudget[c.id], in_time ? "" : ", exceeded");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
