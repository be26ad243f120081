#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lewm/array.hpp"
#include "lewm/io.hpp"
#include "lewm/rng.hpp"

namespace lewm::ewh {

/// Multimodal observable state: video, audio and image feature vectors.
struct ObservableState {
  Array video;
  Array audio;
  Array image;

  /// [video; audio; image]
  Array concat() const;
  static ObservableState split(const Array& flat, std::size_t d_v, std::size_t d_a_mod,
                               std::size_t d_i);
  bool operator==(const ObservableState&) const = default;
};

using CategoryNames = std::shared_ptr<const std::vector<std::string>>;

/// Probability vector over K emotion categories.
struct EmotionState {
  Array probs;
  CategoryNames names;

  static EmotionState one_hot(std::size_t category, CategoryNames names);
  std::size_t size() const noexcept { return probs.size(); }
  /// argmax with ties to the lowest index.
  std::size_t category() const;
  bool operator==(const EmotionState& other) const;
};

struct ActionLabel {
  std::size_t action_id = 0;
  std::string description;
  bool operator==(const ActionLabel&) const = default;
};

/// One <(S0, E0), A, (S1, E1)> transition.
struct EwhSample {
  std::string sample_id;
  ObservableState s0;
  EmotionState e0;
  ActionLabel action;
  ObservableState s1;
  EmotionState e1;
  bool operator==(const EwhSample&) const = default;
};

/// Dimensions shared by every sample of a dataset.
struct Schema {
  std::size_t d_v = 0;
  std::size_t d_a_mod = 0;
  std::size_t d_i = 0;
  std::size_t K = 0;
  std::size_t M = 0;
  CategoryNames category_names;

  std::size_t d_s() const noexcept { return d_v + d_a_mod + d_i; }
  bool operator==(const Schema& other) const;
};

/// Parameters of the synthetic emotion-modulated dynamics
///   s1 = s0 + U[a] + kappa * B[e1] s0 + sigma * noise,  e1 ~ P[e0, a, .]
struct EnvSpec {
  Schema schema;
  Array P;  // K x M x K, stochastic over the last axis
  Array U;  // M x d_s
  Array B;  // K x d_s x d_s
  double kappa = 0.0;
  double sigma = 0.0;
  double sharpness = 0.0;
  std::uint64_t seed = 0;

  double transition_prob(std::size_t e0, std::size_t a, std::size_t e1) const;
  /// s + U[a] + kappa * B[e1] s, noise-free.
  Array mean_next_state(const Array& s, std::size_t a, std::size_t e1) const;
  void validate() const;
  std::string digest() const;
  bool operator==(const EnvSpec& other) const;
};

Json env_to_json(const EnvSpec& env);
EnvSpec env_from_json(const Json& j);

struct EnvOptions {
  std::uint64_t seed = 1;
  std::size_t d_v = 4;
  std::size_t d_a_mod = 2;
  std::size_t d_i = 2;
  std::size_t K = 7;
  std::size_t M = 4;
  double kappa = 1.0;
  double sigma = 0.3;
  /// Scale of the Gaussian logits behind each P row; larger is more peaked.
  double sharpness = 5.0;
  /// Empty selects the defaults (six basic emotions plus neutral when K = 7).
  std::vector<std::string> category_names;
};

std::vector<std::string> default_category_names(std::size_t k);

EnvSpec make_env(const EnvOptions& options);

/// Draws one transition. Draw order: s0 (d_s normals), e0, a, e1, noise.
EwhSample sample_transition(const EnvSpec& env, Rng& rng);

struct Dataset {
  Schema schema;
  std::optional<EnvSpec> env;
  std::vector<EwhSample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool operator==(const Dataset&) const = default;
};

/// n samples; sample i uses Rng(mix_seed(base, i)) with base drawn from rng.
Dataset generate_dataset(const EnvSpec& env, std::size_t n, Rng& rng);

EmotionState oracle_emotion_posterior(const EnvSpec& env, std::size_t e0, std::size_t a);
/// sum_e1 P[e0,a,e1] (s0 + U[a] + kappa B[e1] s0)
Array oracle_expected_next_state(const EnvSpec& env, const ObservableState& s0, std::size_t e0,
                                 std::size_t a);

/// Throws SchemaError when the sample breaks a type invariant for `schema`.
void validate_sample(const Schema& schema, const EwhSample& sample);

/// Line-delimited JSON: header record, then one record per sample. When the
/// dataset carries an EnvSpec it is written next to the file as
/// "env-<digest prefix>.json".
void serialize(const Dataset& dataset, const std::filesystem::path& path);
std::string serialize_to_string(const Dataset& dataset);
Dataset deserialize(const std::filesystem::path& path);
Dataset deserialize_from_string(const std::string& text);
std::filesystem::path env_sidecar_path(const std::filesystem::path& data_path,
                                       const std::string& digest);

struct Split {
  Dataset train;
  Dataset val;
  Dataset test;
};

Split split(const Dataset& dataset, const std::array<double, 3>& fractions, Rng& rng);

}  // namespace lewm::ewh
