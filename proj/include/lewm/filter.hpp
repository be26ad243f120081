#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lewm/array.hpp"
#include "lewm/gradient_suite.hpp"
#include "lewm/io.hpp"
#include "lewm/rng.hpp"

namespace lewm::filter {

using Token = std::uint32_t;
using TokenSeq = std::vector<Token>;

inline constexpr Token kPad = 0;
inline constexpr Token kBos = 1;
inline constexpr Token kEos = 2;
inline constexpr Token kNeutralMask = 3;
inline constexpr Token kFirstFreeToken = 4;

enum class Polarity { none, positive, negative };

Polarity parse_polarity(std::string_view name);
std::string_view polarity_name(Polarity p);

/// How emotion tokens are neutralized in the target sequence.
enum class NeutralizeMode { remove, mask };

NeutralizeMode parse_neutralize_mode(std::string_view name);
std::string_view neutralize_mode_name(NeutralizeMode m);

struct FilterTriple {
  TokenSeq x;
  TokenSeq y;
  bool e = false;
  Polarity polarity = Polarity::none;
  bool operator==(const FilterTriple&) const = default;
};

struct CorpusSpec {
  std::size_t V = 24;
  std::size_t n_samples = 23790;
  std::vector<Token> positive_tokens{16, 17, 18, 19};
  std::vector<Token> negative_tokens{20, 21, 22, 23};
  /// Neutral content length is drawn uniformly from [min_content, max_content].
  std::size_t min_content = 3;
  std::size_t max_content = 8;
  /// Maximum number of emotion tokens inserted into an emotional sample.
  std::size_t max_emotion_tokens = 2;
  double emotional_fraction = 0.5;
  NeutralizeMode mode = NeutralizeMode::remove;
  std::uint64_t seed = 1;

  /// Ids not reserved and not emotion-marked.
  std::vector<Token> neutral_tokens() const;
  bool is_emotion_token(Token t) const;
  /// Longest sequence the generator can produce, BOS and EOS included.
  std::size_t max_length() const noexcept { return max_content + max_emotion_tokens + 2; }
  void validate() const;
  bool operator==(const CorpusSpec&) const = default;
};

std::vector<FilterTriple> gen_filter_corpus(const CorpusSpec& spec, Rng& rng);
/// Throws SchemaError naming the broken invariant.
void validate_triple(const CorpusSpec& spec, const FilterTriple& t);

void serialize_corpus(const std::vector<FilterTriple>& corpus, std::size_t V,
                      const std::filesystem::path& path);
std::vector<FilterTriple> deserialize_corpus(const std::filesystem::path& path, std::size_t* V = nullptr);

struct FilterConfig {
  std::size_t V = 24;
  std::size_t d_embed = 16;
  std::size_t hidden_cls = 32;
  std::size_t hidden_gen = 32;
  /// Longest sequence accepted by neutralize_nll.
  std::size_t max_len = 32;

  void validate() const;
  bool operator==(const FilterConfig&) const = default;
};

/// Affect classifier and neutralizing adapter over a shared token embedding,
/// with the learnable mixing weight alpha = sigmoid(alpha_raw).
class FilterModel {
 public:
  FilterModel(const FilterConfig& config, std::uint64_t init_seed);
  FilterModel(const FilterConfig& config, ParamStore params, bool stage1_done);

  const FilterConfig& config() const noexcept { return config_; }
  const ParamStore& params() const noexcept { return params_; }
  ParamStore& params() noexcept { return params_; }
  bool stage1_done() const noexcept { return stage1_done_; }
  void mark_stage1_done() noexcept { stage1_done_ = true; }
  double alpha() const;

  static std::vector<std::string> adapter_param_names();

 private:
  FilterConfig config_;
  ParamStore params_;
  bool stage1_done_ = false;
};

Json filter_model_to_json(const FilterModel& model);
FilterModel filter_model_from_json(const Json& j);

/// Probability that x is emotional.
double classify(const FilterModel& model, const TokenSeq& x);
/// Binary cross-entropy of classify(x) against e.
double classifier_loss(const FilterModel& model, const TokenSeq& x, bool e, ParamStore* grads = nullptr);

/// Teacher-forced negative log-likelihood of y (summed over the steps after
/// BOS) under the adapter conditioned on x and the flag e.
double neutralize_nll(const FilterModel& model, const TokenSeq& x, bool e, const TokenSeq& y,
                      ParamStore* grads = nullptr);
/// Per-step next-token distributions along y under teacher forcing.
std::vector<Array> neutralize_step_probs(const FilterModel& model, const TokenSeq& x, bool e,
                                         const TokenSeq& y);

struct DecodeResult {
  TokenSeq tokens;
  bool truncated = false;
};

/// Greedy decoding from BOS until EOS or max_len tokens. When `allowed` is
/// given, the argmax is restricted to those ids.
DecodeResult neutralize_decode(const FilterModel& model, const TokenSeq& x, bool e, std::size_t max_len,
                               const std::vector<Token>* allowed = nullptr);

struct JointLoss {
  double l_cls = 0.0;
  double l_gen = 0.0;
  double alpha = 0.0;
  double total = 0.0;
};

/// alpha * mean L_cls + (1 - alpha) * mean L_gen over the batch.
JointLoss joint_objective(const FilterModel& model, std::span<const FilterTriple> batch,
                          ParamStore* grads = nullptr);

struct FilterHyper {
  double lr = 1e-2;
  std::size_t batch_size = 32;
  std::size_t total_steps = 3000;
  double stage1_fraction = 0.3;
  std::uint64_t seed = 1;

  std::size_t stage1_steps() const;
  void validate() const;
  bool operator==(const FilterHyper&) const = default;
};

struct FilterRecord {
  std::size_t step = 0;
  int stage = 1;
  double l_cls = 0.0;
  double l_gen = 0.0;
  double alpha = 0.0;
  double total = 0.0;
};

struct FilterHistory {
  std::vector<FilterRecord> records;
  std::string to_csv() const;
};

/// Classifier-only training; adapter parameters and alpha stay frozen.
FilterHistory train_stage1(FilterModel& model, std::span<const FilterTriple> corpus, const FilterHyper& hyper);
/// Joint training of every parameter. Requires stage 1 (OrderingError).
FilterHistory train_stage2(FilterModel& model, std::span<const FilterTriple> corpus, const FilterHyper& hyper);
FilterHistory train_filter(FilterModel& model, std::span<const FilterTriple> corpus, const FilterHyper& hyper);

/// Neutralized x when classify(x) >= threshold, else x. Decoding is limited to
/// the ids of x plus EOS and NEUTRAL_MASK.
TokenSeq filter_apply(const FilterModel& model, const TokenSeq& x, double threshold = 0.5);

struct ProbeOptions {
  std::size_t n_samples = 4000;
  double train_fraction = 0.75;
  /// Token whose count parity is the emotion-independent label.
  Token parity_token = kFirstFreeToken;
  std::size_t d_embed = 8;
  std::size_t hidden = 16;
  std::size_t steps = 3000;
  std::size_t batch_size = 32;
  double lr = 1e-2;
  double threshold = 0.5;

  void validate() const;
};

struct ProbeReport {
  double polarity_raw = 0.0;
  double polarity_filtered = 0.0;
  double parity_raw = 0.0;
  double parity_filtered = 0.0;
  std::size_t polarity_test_n = 0;
  std::size_t parity_test_n = 0;

  double polarity_drop() const noexcept { return polarity_raw - polarity_filtered; }
  double parity_drop() const noexcept { return parity_raw - parity_filtered; }
  std::string to_kv() const;
};

/// Trains one small classifier per task on raw and on filtered inputs (same
/// initialisation) and reports held-out accuracies.
ProbeReport validation_probe(const FilterModel& model, const CorpusSpec& spec, const ProbeOptions& options,
                             Rng& rng);

/// Differentiable maps of the filter module at a random point.
std::vector<GradCase> filter_grad_cases(std::uint64_t seed);

}  // namespace lewm::filter
