#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lewm/ewh.hpp"
#include "lewm/filter.hpp"
#include "lewm/model.hpp"
#include "lewm/training.hpp"

namespace lewm::harness {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr int kConfigVersion = 1;

struct RunSection {
  std::string name = "lewm";
  std::filesystem::path out_dir = "runs";
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t data_samples = 16000;
  std::uint64_t data_seed = 1;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  /// Trainer state is written every this many steps (0 disables).
  std::size_t checkpoint_every = 1000;
  bool operator==(const RunSection&) const = default;
};

struct FilterSection {
  filter::CorpusSpec corpus;
  filter::FilterConfig model;
  filter::FilterHyper hyper;
  filter::ProbeOptions probe;
  std::uint64_t probe_seed = 7;
  /// Share of the corpus held out for classifier and neutralization metrics.
  double holdout_fraction = 0.1;
};

/// Parsed experiment configuration. Dimension fields in [model] are optional;
/// when present they must agree with [env].
struct ExperimentConfig {
  ewh::EnvOptions env;
  core::ModelConfig model;
  training::TrainHyper train;
  FilterSection filter;
  RunSection run;

  /// Rejects cross-section inconsistencies before any work starts.
  void validate() const;
  /// Canonical text form; parse_config(to_ini()) reproduces the config.
  std::string to_ini() const;
  /// SHA-256 of to_ini().
  std::string digest() const;
};

/// Throws ConfigError (with the line when known) on malformed text, unknown
/// sections or keys, bad values and dimension mismatches.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

struct ArtifactRecord {
  std::string path;  // relative to the output directory
  std::string sha256;
  std::uintmax_t bytes = 0;
  std::string command;
  std::optional<std::uint64_t> seed;
};

struct RunManifest {
  std::string tool_version;
  std::string config_digest;
  std::string experiment;
  std::string created;
  std::string updated;
  std::vector<ArtifactRecord> artifacts;

  static constexpr const char* kFileName = "manifest.json";
};

Json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const Json& j);

struct Context {
  ExperimentConfig config;
  /// Progress lines go here; null silences them.
  std::ostream* log = nullptr;
  /// Stop each training run after this many steps, leaving resumable state.
  std::optional<std::size_t> interrupt_at;

  const std::filesystem::path& out() const noexcept { return config.run.out_dir; }
};

struct GenerateSummary {
  std::filesystem::path dataset_path;
  std::size_t n = 0;
  ewh::Schema schema;
  std::string env_digest;
  std::string to_kv() const;
};

GenerateSummary cmd_generate(const Context& ctx);

struct SeedRun {
  std::uint64_t seed = 0;
  bool finished = false;
  std::size_t steps = 0;
  std::filesystem::path checkpoint;
};

/// One run per configured seed. Resumes from saved trainer state when present.
std::vector<SeedRun> cmd_train(const Context& ctx);

struct SeedMetrics {
  std::uint64_t seed = 0;
  training::EvalMetrics metrics;
};

struct EvalReport {
  std::vector<SeedMetrics> runs;
  training::EvalMetrics oracle;
};

/// Evaluates the given checkpoint, or every seed's checkpoint when none is given.
EvalReport cmd_eval(const Context& ctx, const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

enum class AblationModel { lewm, blind, lewm_beta0 };
std::string_view ablation_model_name(AblationModel m);

struct AblationRun {
  AblationModel model = AblationModel::lewm;
  double kappa = 0.0;
  std::uint64_t seed = 0;
  training::EvalMetrics metrics;
  double sensitivity = 0.0;
};

struct PairedComparison {
  std::string label;  // e.g. "lewm-blind"
  double kappa = 0.0;
  std::vector<double> mse_diff;      // per seed, first minus second
  std::vector<double> relative_diff;  // mse_diff / second model MSE
  std::size_t wins = 0;               // seeds where the first model has lower MSE
  double sign_test_p = 1.0;           // two-sided
};

struct AblationResult {
  std::vector<AblationRun> runs;
  std::vector<PairedComparison> paired;
  std::vector<double> kappas;

  const AblationRun& run(AblationModel m, double kappa, std::uint64_t seed) const;
  std::string table_csv() const;
  std::string paired_csv() const;
};

/// Trains every model on the configured env and on its kappa = 0 counterpart.
AblationResult cmd_ablate(const Context& ctx);

struct FilterReport {
  double classifier_accuracy = 0.0;
  double neutralize_exact = 0.0;
  double idempotence = 0.0;
  std::size_t holdout_n = 0;
  filter::ProbeReport probe;
  std::string to_kv() const;
};

FilterReport cmd_filter(const Context& ctx);

struct VerifyReport {
  std::size_t checked = 0;
  std::vector<std::string> drift;  // one line per missing or changed artifact
  bool ok() const noexcept { return drift.empty(); }
};

VerifyReport cmd_verify(const std::filesystem::path& out_dir);

/// Two-sided binomial sign test of `wins` successes out of `n` at p = 1/2.
double sign_test(std::size_t wins, std::size_t n);

}  // namespace lewm::harness
