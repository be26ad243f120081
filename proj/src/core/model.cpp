#include "lewm/model.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>

#include "lewm/errors.hpp"
#include "lewm/ops.hpp"

namespace lewm::core {

namespace {

constexpr int kCheckpointVersion = 1;

bool is_one_hot(const Array& p) {
  std::size_t ones = 0;
  for (double v : p.values()) {
    if (v == 1.0) {
      ++ones;
    } else if (v != 0.0) {
      return false;
    }
  }
  return ones == 1;
}

}  // namespace

EmotionFeedMode parse_feed_mode(std::string_view name) {
  if (name == "soft") return EmotionFeedMode::soft;
  if (name == "hard") return EmotionFeedMode::hard;
  throw ConfigError("unknown emotion_feed_mode '" + std::string(name) + "'");
}

std::string_view feed_mode_name(EmotionFeedMode mode) {
  return mode == EmotionFeedMode::soft ? "soft" : "hard";
}

ModelConfig ModelConfig::for_schema(const ewh::Schema& schema) {
  ModelConfig c;
  c.d_v = schema.d_v;
  c.d_a_mod = schema.d_a_mod;
  c.d_i = schema.d_i;
  c.K = schema.K;
  c.M = schema.M;
  return c;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model: ") + name + " must be >= 1");
  };
  positive(d_v, "d_v");
  positive(d_a_mod, "d_a_mod");
  positive(d_i, "d_i");
  positive(M, "M");
  positive(d_z, "d_z");
  positive(d_e, "d_e");
  positive(d_a, "d_a");
  positive(hidden_state_encoder, "hidden_state_encoder");
  positive(hidden_emotion_encoder, "hidden_emotion_encoder");
  positive(hidden_emotion_head, "hidden_emotion_head");
  positive(hidden_state_head, "hidden_state_head");
  positive(hidden_decoder, "hidden_decoder");
  if (K < 2) throw ConfigError("model: K must be >= 2");
}

Json config_to_json(const ModelConfig& c) {
  return Json{{"d_v", c.d_v},
              {"d_a_mod", c.d_a_mod},
              {"d_i", c.d_i},
              {"K", c.K},
              {"M", c.M},
              {"d_z", c.d_z},
              {"d_e", c.d_e},
              {"d_a", c.d_a},
              {"hidden_state_encoder", c.hidden_state_encoder},
              {"hidden_emotion_encoder", c.hidden_emotion_encoder},
              {"hidden_emotion_head", c.hidden_emotion_head},
              {"hidden_state_head", c.hidden_state_head},
              {"hidden_decoder", c.hidden_decoder},
              {"emotion_feed_mode", feed_mode_name(c.feed_mode)},
              {"blind", c.blind}};
}

ModelConfig config_from_json(const Json& j) {
  ModelConfig c;
  try {
    c.d_v = j.at("d_v").get<std::size_t>();
    c.d_a_mod = j.at("d_a_mod").get<std::size_t>();
    c.d_i = j.at("d_i").get<std::size_t>();
    c.K = j.at("K").get<std::size_t>();
    c.M = j.at("M").get<std::size_t>();
    c.d_z = j.at("d_z").get<std::size_t>();
    c.d_e = j.at("d_e").get<std::size_t>();
    c.d_a = j.at("d_a").get<std::size_t>();
    c.hidden_state_encoder = j.at("hidden_state_encoder").get<std::size_t>();
    c.hidden_emotion_encoder = j.at("hidden_emotion_encoder").get<std::size_t>();
    c.hidden_emotion_head = j.at("hidden_emotion_head").get<std::size_t>();
    c.hidden_state_head = j.at("hidden_state_head").get<std::size_t>();
    c.hidden_decoder = j.at("hidden_decoder").get<std::size_t>();
    c.feed_mode = parse_feed_mode(j.at("emotion_feed_mode").get<std::string>());
    c.blind = j.at("blind").get<bool>();
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed model config: ") + e.what());
  }
  return c;
}

std::vector<std::string> config_diff(const ModelConfig& expected, const ModelConfig& found) {
  const Json a = config_to_json(expected);
  const Json b = config_to_json(found);
  std::vector<std::string> out;
  for (const auto& [key, value] : a.items()) {
    if (b.at(key) != value) {
      out.push_back(key + ": expected " + value.dump() + ", found " + b.at(key).dump());
    }
  }
  return out;
}

Array fuse(const Array& z, const Array& a, const Array& e) { return ops::concat({&z, &a, &e}); }

LewmModel::LewmModel(const ModelConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  init_params(init_seed);
  apply_freezing();
}

LewmModel::LewmModel(const ModelConfig& config, ParamStore params) : config_(config) {
  config_.validate();
  init_params(std::nullopt);
  for (const auto& [name, entry] : params_.entries()) {
    if (!params.contains(name)) throw SchemaError("parameter '" + name + "' missing");
    if (params.get(name).shape() != entry.value.shape()) {
      throw SchemaError("parameter '" + name + "' has shape " +
                        shape_string(params.get(name).shape()) + ", expected " +
                        shape_string(entry.value.shape()));
    }
  }
  if (params.size() != params_.size()) throw SchemaError("unexpected extra parameters");
  params_ = std::move(params);
  apply_freezing();
}

void LewmModel::set_params(const ParamStore& params) {
  for (const auto& [name, entry] : params.entries()) params_.assign(name, entry.value);
}

void LewmModel::init_params(std::optional<std::uint64_t> seed) {
  Rng rng(seed.value_or(0));
  const ModelConfig& c = config_;
  auto weights = [&](std::size_t out, std::size_t in) {
    return seed ? glorot(out, in, rng) : Array({out, in});
  };
  auto feed_forward = [&](const FeedForward& net, std::size_t in, std::size_t hidden, std::size_t out) {
    params_.add(net.w1(), weights(hidden, in));
    params_.add(net.b1(), Array({hidden}));
    params_.add(net.w2(), weights(out, hidden));
    params_.add(net.b2(), Array({out}));
  };
  params_ = ParamStore();
  feed_forward(enc_s_, c.d_s(), c.hidden_state_encoder, c.d_z);
  feed_forward(enc_e_, c.K, c.hidden_emotion_encoder, c.d_e);
  Array table({c.M, c.d_a});
  if (seed) {
    for (double& v : table.values()) v = rng.normal() * 0.5;
  }
  params_.add("enc_a.table", std::move(table));
  feed_forward(head_e_, c.d_h(), c.hidden_emotion_head, c.K);
  // First T_S layer over [h; feed], stored as separate latent and emotion column blocks.
  const Array joint = weights(c.hidden_state_head, c.d_h() + c.K);
  Array w_h({c.hidden_state_head, c.d_h()});
  Array w_e({c.hidden_state_head, c.K});
  for (std::size_t r = 0; r < c.hidden_state_head; ++r) {
    for (std::size_t j = 0; j < c.d_h(); ++j) w_h.at(r, j) = joint.at(r, j);
    for (std::size_t j = 0; j < c.K; ++j) w_e.at(r, j) = joint.at(r, c.d_h() + j);
  }
  params_.add("head_s.w_h", std::move(w_h));
  params_.add("head_s.w_e", std::move(w_e));
  params_.add("head_s.b1", Array({c.hidden_state_head}));
  params_.add("head_s.w2", weights(c.d_z, c.hidden_state_head));
  params_.add("head_s.b2", Array({c.d_z}));
  feed_forward(dec_s_, c.d_z, c.hidden_decoder, c.d_s());
}

std::vector<std::string> emotion_pathway_params() {
  return {"enc_e.w1", "enc_e.b1", "enc_e.w2", "enc_e.b2", "head_s.w_e"};
}

void LewmModel::apply_freezing() {
  for (const std::string& name : emotion_pathway_params()) {
    params_.set_trainable(name, !config_.blind);
  }
}

void LewmModel::check_state(const ewh::ObservableState& s, const char* what) const {
  if (s.video.size() != config_.d_v || s.audio.size() != config_.d_a_mod ||
      s.image.size() != config_.d_i) {
    throw ContractViolation(std::string(what) + ": modality dims (" +
                            std::to_string(s.video.size()) + ", " + std::to_string(s.audio.size()) +
                            ", " + std::to_string(s.image.size()) + ") do not match config (" +
                            std::to_string(config_.d_v) + ", " + std::to_string(config_.d_a_mod) +
                            ", " + std::to_string(config_.d_i) + ")");
  }
}

Array LewmModel::encode_state(const ewh::ObservableState& s) const {
  check_state(s, "encode_state");
  return enc_s_.forward(params_, s.concat());
}

Array LewmModel::encode_emotion_raw(const Array& probs, FeedForward::Trace* trace) const {
  if (config_.blind) return Array({config_.d_e});
  return enc_e_.forward(params_, probs, trace);
}

Array LewmModel::encode_emotion(const ewh::EmotionState& e) const {
  if (e.probs.size() != config_.K) throw ContractViolation("encode_emotion: expected K entries");
  if (!ops::on_simplex(e.probs)) throw ContractViolation("encode_emotion: input is not on the simplex");
  return encode_emotion_raw(e.probs, nullptr);
}

Array LewmModel::encode_action(const ewh::ActionLabel& a) const {
  if (a.action_id >= config_.M) {
    throw ContractViolation("encode_action: action_id " + std::to_string(a.action_id) +
                            " out of range for M=" + std::to_string(config_.M));
  }
  const Array& table = params_.get("enc_a.table");
  Array row({config_.d_a});
  for (std::size_t j = 0; j < config_.d_a; ++j) row[j] = table.at(a.action_id, j);
  return row;
}

LatentState LewmModel::encode(const ewh::ObservableState& s, const ewh::EmotionState& e,
                              const ewh::ActionLabel& a) const {
  LatentState out{encode_state(s), encode_action(a), encode_emotion(e), {}};
  out.h = fuse(out.z, out.a, out.e);
  return out;
}

ewh::EmotionState LewmModel::transition_emotion(const Array& h) const {
  if (h.size() != config_.d_h()) throw ContractViolation("transition_emotion: h has wrong size");
  return {ops::softmax(head_e_.forward(params_, h)), nullptr};
}

Array LewmModel::emotion_feed(const Array& probs) const {
  if (config_.blind) return Array({config_.K}, 1.0 / static_cast<double>(config_.K));
  if (config_.feed_mode == EmotionFeedMode::hard) return ops::one_hot(ops::argmax(probs), config_.K);
  return probs;
}

Array LewmModel::head_s_forward(const Array& h, const Array& feed, HeadTrace* trace) const {
  if (h.size() != config_.d_h() || feed.size() != config_.K) {
    throw ContractViolation("transition_state: inputs have wrong sizes");
  }
  Array pre = ops::affine(h, params_.get("head_s.w_h"), params_.get("head_s.b1"));
  const Array& we = params_.get("head_s.w_e");
  for (std::size_t r = 0; r < config_.hidden_state_head; ++r) {
    double acc = 0.0;
    for (std::size_t k = 0; k < config_.K; ++k) acc += we.at(r, k) * feed[k];
    pre[r] += acc;
  }
  Array hidden = ops::activate(pre, ops::Activation::tanh);
  Array out = ops::affine(hidden, params_.get("head_s.w2"), params_.get("head_s.b2"));
  if (trace) *trace = {h, feed, std::move(pre), std::move(hidden)};
  return out;
}

void LewmModel::head_s_backward(const HeadTrace& trace, const Array& dout, ParamStore* grads,
                                Array* dh, Array* dfeed) const {
  Array dhidden({config_.hidden_state_head});
  ops::affine_backward(trace.hidden, params_.get("head_s.w2"), dout, &dhidden,
                       grad_slot(grads, "head_s.w2"), grad_slot(grads, "head_s.b2"));
  const Array dpre = ops::activate_backward(trace.pre, trace.hidden, dhidden, ops::Activation::tanh);
  ops::affine_backward(trace.h, params_.get("head_s.w_h"), dpre, dh,
                       grad_slot(grads, "head_s.w_h"), grad_slot(grads, "head_s.b1"));
  Array* dwe = config_.blind ? nullptr : grad_slot(grads, "head_s.w_e");
  ops::affine_backward(trace.feed, params_.get("head_s.w_e"), dpre, dfeed, dwe, nullptr);
}

Array LewmModel::transition_state(const Array& h, const ewh::EmotionState& e_next) const {
  if (e_next.probs.size() != config_.K) throw ContractViolation("transition_state: expected K entries");
  if (!ops::on_simplex(e_next.probs)) throw ContractViolation("transition_state: emotion not on the simplex");
  if (config_.feed_mode == EmotionFeedMode::hard && !config_.blind && !is_one_hot(e_next.probs)) {
    throw ConfigError("transition_state: hard feed mode requires a one-hot emotion");
  }
  return head_s_forward(h, emotion_feed(e_next.probs), nullptr);
}

ewh::ObservableState LewmModel::decode_state(const Array& latent_next) const {
  if (latent_next.size() != config_.d_z) throw ContractViolation("decode_state: latent has wrong size");
  return ewh::ObservableState::split(dec_s_.forward(params_, latent_next), config_.d_v,
                                     config_.d_a_mod, config_.d_i);
}

Prediction LewmModel::predict(const ewh::ObservableState& s, const ewh::EmotionState& e,
                              const ewh::ActionLabel& a) const {
  const LatentState latent = encode(s, e, a);
  ewh::EmotionState emotion_next = transition_emotion(latent.h);
  emotion_next.names = e.names;
  Array latent_next = head_s_forward(latent.h, emotion_feed(emotion_next.probs), nullptr);
  ewh::ObservableState state_next = decode_state(latent_next);
  return {std::move(emotion_next), std::move(latent_next), std::move(state_next)};
}

LewmModel::Trace LewmModel::forward(const Array& s_flat, const Array& e_probs,
                                    std::size_t action) const {
  Trace t;
  t.action = action;
  t.latent.z = enc_s_.forward(params_, s_flat, &t.enc_s);
  t.latent.a = encode_action({action, ""});
  t.latent.e = encode_emotion_raw(e_probs, &t.enc_e);
  t.latent.h = fuse(t.latent.z, t.latent.a, t.latent.e);
  t.emotion_probs = ops::softmax(head_e_.forward(params_, t.latent.h, &t.head_e));
  t.latent_next = head_s_forward(t.latent.h, emotion_feed(t.emotion_probs), &t.head_s);
  t.state_flat = dec_s_.forward(params_, t.latent_next, &t.dec_s);
  return t;
}

void LewmModel::encoders_backward(const Trace& t, const Array& dh, ParamStore* grads, Array* ds,
                                  Array* de) const {
  const ModelConfig& c = config_;
  const Array dz = ops::slice(dh, 0, c.d_z);
  const Array dsx = enc_s_.backward(params_, t.enc_s, dz, grads);
  if (ds) ds->add_scaled(dsx);
  if (Array* table = grad_slot(grads, "enc_a.table")) {
    for (std::size_t j = 0; j < c.d_a; ++j) table->at(t.action, j) += dh[c.d_z + j];
  }
  if (!c.blind) {
    const Array dee = ops::slice(dh, c.d_z + c.d_a, c.d_e);
    const Array dex = enc_e_.backward(params_, t.enc_e, dee, grads);
    if (de) de->add_scaled(dex);
  }
}

LewmModel::LogJointTerms LewmModel::log_joint_terms(const ewh::ObservableState& s,
                                                    const ewh::EmotionState& e,
                                                    const ewh::ActionLabel& a,
                                                    const ewh::ObservableState& s_next,
                                                    const ewh::EmotionState& e_next) const {
  check_state(s_next, "log_joint");
  if (e_next.probs.size() != config_.K || !is_one_hot(e_next.probs)) {
    throw ContractViolation("log_joint: the observed next emotion must be one-hot over K");
  }
  const LatentState latent = encode(s, e, a);
  const Array probs = transition_emotion(latent.h).probs;
  const std::size_t observed = ops::argmax(e_next.probs);
  LogJointTerms terms;
  terms.emotion = std::log(std::max(probs[observed], ops::kLogClamp));
  const Array mean =
      dec_s_.forward(params_, head_s_forward(latent.h, emotion_feed(e_next.probs), nullptr));
  const Array target = s_next.concat();
  double sq = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = target[i] - mean[i];
    sq += d * d;
  }
  const double d_s = static_cast<double>(target.size());
  terms.state = -0.5 * sq - 0.5 * d_s * std::log(2.0 * std::numbers::pi);
  return terms;
}

double LewmModel::log_joint(const ewh::ObservableState& s, const ewh::EmotionState& e,
                            const ewh::ActionLabel& a, const ewh::ObservableState& s_next,
                            const ewh::EmotionState& e_next) const {
  return log_joint_terms(s, e, a, s_next, e_next).total();
}

Json checkpoint_to_json(const LewmModel& model) {
  return Json{{"format_version", kCheckpointVersion},
              {"config", config_to_json(model.config())},
              {"params", param_store_to_json(model.params())}};
}

void save_checkpoint(const LewmModel& model, const std::filesystem::path& path) {
  write_text_file(path, checkpoint_to_json(model).dump());
}

LewmModel checkpoint_from_json(const Json& j) {
  try {
    if (j.at("format_version").get<int>() != kCheckpointVersion) {
      throw SchemaError("unsupported checkpoint format_version");
    }
    return LewmModel(config_from_json(j.at("config")), param_store_from_json(j.at("params")));
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed checkpoint: ") + e.what());
  }
}

LewmModel load_checkpoint(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const Json::parse_error& e) {
    throw ParseError("checkpoint '" + path.string() + "': " + e.what());
  }
  return checkpoint_from_json(j);
}

LewmModel load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  LewmModel model = load_checkpoint(path);
  const auto diff = config_diff(expected, model.config());
  if (!diff.empty()) {
    std::ostringstream os;
    os << "checkpoint config does not match:";
    for (const auto& line : diff) os << "\n  " << line;
    throw ConfigError(os.str());
  }
  return model;
}

}  // namespace lewm::core
