#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lewm/array.hpp"
#include "lewm/ewh.hpp"
#include "lewm/io.hpp"
#include "lewm/layers.hpp"

namespace lewm::core {

/// How the predicted next emotion is handed to the state head.
enum class EmotionFeedMode {
  soft,  // full probability vector
  hard,  // argmax one-hot forward, gradient passed straight through to the soft vector
};

EmotionFeedMode parse_feed_mode(std::string_view name);
std::string_view feed_mode_name(EmotionFeedMode mode);

struct ModelConfig {
  // Copied from the environment schema.
  std::size_t d_v = 0;
  std::size_t d_a_mod = 0;
  std::size_t d_i = 0;
  std::size_t K = 0;
  std::size_t M = 0;

  std::size_t d_z = 16;
  std::size_t d_e = 8;
  std::size_t d_a = 8;
  std::size_t hidden_state_encoder = 64;
  std::size_t hidden_emotion_encoder = 64;
  std::size_t hidden_emotion_head = 64;
  std::size_t hidden_state_head = 64;
  std::size_t hidden_decoder = 64;
  EmotionFeedMode feed_mode = EmotionFeedMode::soft;
  /// Emotion pathway disabled: zero emotion embedding, uniform emotion into T_S.
  bool blind = false;

  std::size_t d_s() const noexcept { return d_v + d_a_mod + d_i; }
  /// Width of the fused latent [z; a; e].
  std::size_t d_h() const noexcept { return d_z + d_a + d_e; }

  static ModelConfig for_schema(const ewh::Schema& schema);
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

Json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const Json& j);
/// One "field: expected X, found Y" line per differing field.
std::vector<std::string> config_diff(const ModelConfig& expected, const ModelConfig& found);

struct LatentState {
  Array z;
  Array a;
  Array e;
  Array h;
};

struct Prediction {
  ewh::EmotionState emotion_next;
  Array latent_next;
  ewh::ObservableState state_next;
};

/// Exact concatenation [z; a; e].
Array fuse(const Array& z, const Array& a, const Array& e);

/// Emotion-conditioned world model: encoders, fusion, emotion-first transition
/// heads and a multimodal decoder. Inference methods are const and safe to
/// call concurrently.
class LewmModel {
 public:
  struct HeadTrace {
    Array h;
    Array feed;
    Array pre;
    Array hidden;
  };

  /// Full forward pass intermediates for one sample.
  struct Trace {
    FeedForward::Trace enc_s;
    FeedForward::Trace enc_e;
    FeedForward::Trace head_e;
    FeedForward::Trace dec_s;
    HeadTrace head_s;
    std::size_t action = 0;
    LatentState latent;
    Array emotion_probs;
    Array latent_next;
    Array state_flat;
  };

  /// Random initialisation.
  LewmModel(const ModelConfig& config, std::uint64_t init_seed);
  /// Adopts existing parameters; shapes must match the config.
  LewmModel(const ModelConfig& config, ParamStore params);

  const ModelConfig& config() const noexcept { return config_; }
  const ParamStore& params() const noexcept { return params_; }
  ParamStore& params() noexcept { return params_; }
  void set_params(const ParamStore& params);

  Array encode_state(const ewh::ObservableState& s) const;
  Array encode_emotion(const ewh::EmotionState& e) const;
  Array encode_action(const ewh::ActionLabel& a) const;
  LatentState encode(const ewh::ObservableState& s, const ewh::EmotionState& e,
                     const ewh::ActionLabel& a) const;

  /// T_E: distribution over the next emotion.
  ewh::EmotionState transition_emotion(const Array& h) const;
  /// T_S: next latent state given the fused latent and an emotion. Hard mode
  /// requires a one-hot emotion.
  Array transition_state(const Array& h, const ewh::EmotionState& e_next) const;
  ewh::ObservableState decode_state(const Array& latent_next) const;

  Prediction predict(const ewh::ObservableState& s, const ewh::EmotionState& e,
                     const ewh::ActionLabel& a) const;

  struct LogJointTerms {
    double emotion = 0.0;
    double state = 0.0;
    double total() const noexcept { return emotion + state; }
  };
  /// log p(E'|h) + log p(S'|h, E') with E' the observed (one-hot) next emotion.
  double log_joint(const ewh::ObservableState& s, const ewh::EmotionState& e,
                   const ewh::ActionLabel& a, const ewh::ObservableState& s_next,
                   const ewh::EmotionState& e_next) const;
  LogJointTerms log_joint_terms(const ewh::ObservableState& s, const ewh::EmotionState& e,
                                const ewh::ActionLabel& a, const ewh::ObservableState& s_next,
                                const ewh::EmotionState& e_next) const;

  // Differentiable building blocks used by training and gradient checks.

  /// Vector actually fed to T_S for a given emotion distribution.
  Array emotion_feed(const Array& probs) const;
  Array head_s_forward(const Array& h, const Array& feed, HeadTrace* trace) const;
  void head_s_backward(const HeadTrace& trace, const Array& dout, ParamStore* grads, Array* dh,
                       Array* dfeed) const;
  Array encode_emotion_raw(const Array& probs, FeedForward::Trace* trace) const;
  /// Pre-softmax T_E output.
  Array emotion_logits(const Array& h, FeedForward::Trace* trace) const {
    return head_e_.forward(params_, h, trace);
  }
  Array decode_raw(const Array& latent_next, FeedForward::Trace* trace) const {
    return dec_s_.forward(params_, latent_next, trace);
  }
  Array emotion_head_backward(const FeedForward::Trace& trace, const Array& dlogits,
                              ParamStore* grads) const {
    return head_e_.backward(params_, trace, dlogits, grads);
  }
  Array decoder_backward(const FeedForward::Trace& trace, const Array& dout,
                         ParamStore* grads) const {
    return dec_s_.backward(params_, trace, dout, grads);
  }
  /// Runs the whole pipeline keeping intermediates.
  Trace forward(const Array& s_flat, const Array& e_probs, std::size_t action) const;
  /// Backpropagates gradients of the fused latent into the encoders.
  void encoders_backward(const Trace& trace, const Array& dh, ParamStore* grads,
                         Array* ds = nullptr, Array* de = nullptr) const;

  std::size_t parameter_count(bool trainable_only = false) const {
    return params_.scalar_count(trainable_only);
  }

 private:
  /// Glorot weights from `seed`, or all zeros when absent.
  void init_params(std::optional<std::uint64_t> seed);
  void apply_freezing();
  void check_state(const ewh::ObservableState& s, const char* what) const;

  ModelConfig config_;
  ParamStore params_;
  FeedForward enc_s_{"enc_s"};
  FeedForward enc_e_{"enc_e"};
  FeedForward head_e_{"head_e"};
  FeedForward dec_s_{"dec_s"};
};

/// Names of the parameters carrying the emotion pathway (frozen when blind).
std::vector<std::string> emotion_pathway_params();

void save_checkpoint(const LewmModel& model, const std::filesystem::path& path);
Json checkpoint_to_json(const LewmModel& model);
LewmModel load_checkpoint(const std::filesystem::path& path);
/// Rejects a checkpoint whose config differs from `expected` with a
/// field-level diff (ConfigError).
LewmModel load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);
LewmModel checkpoint_from_json(const Json& j);

}  // namespace lewm::core
