#include "lewm/gradient_suite.hpp"

#include "lewm/errors.hpp"
#include "lewm/ewh.hpp"
#include "lewm/model.hpp"
#include "lewm/ops.hpp"
#include "lewm/training.hpp"

namespace lewm {

std::vector<GradSuiteResult> run_grad_suite(const std::vector<GradCase>& cases,
                                            const GradCheckOptions& options) {
  std::vector<GradSuiteResult> out;
  out.reserve(cases.size());
  for (const GradCase& c : cases) out.push_back({c.name, grad_check(*c.map, c.params, c.inputs, options)});
  return out;
}

namespace training {
namespace {

using core::LewmModel;
using core::ModelConfig;

Array random_array(Shape shape, Rng& rng, double scale = 1.0) {
  Array a(std::move(shape));
  for (double& v : a.values()) v = scale * rng.normal();
  return a;
}

Array random_simplex(std::size_t k, Rng& rng) {
  Array logits = random_array({k}, rng);
  return ops::softmax(logits);
}

double dot(const Array& a, const Array& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Copy of the model parameters with only the entries under `prefix` trainable.
ParamStore restricted(const ParamStore& params, const std::string& prefix) {
  ParamStore out = params;
  for (const std::string& name : out.names()) {
    out.set_trainable(name, name.rfind(prefix, 0) == 0 && params.trainable(name));
  }
  return out;
}

ParamStore single_input(const std::string& name, Array value) {
  ParamStore p;
  p.add(name, std::move(value));
  return p;
}

std::shared_ptr<const DifferentiableMap> make_map(LambdaMap::ValueFn value,
                                                  LambdaMap::GradientFn gradient) {
  return std::make_shared<LambdaMap>(std::move(value), std::move(gradient));
}

void add_op_cases(std::vector<GradCase>& cases, Rng& rng) {
  {
    const Array r = random_projection(5, rng);
    auto value = [r](const ParamStore& p, const ParamStore& in) {
      return dot(r, ops::affine(in.get("x"), p.get("W"), p.get("b")));
    };
    auto grad = [r, value](const ParamStore& p, const ParamStore& in, ParamStore& pg, ParamStore& ig) {
      ops::affine_backward(in.get("x"), p.get("W"), r, ig.find("x"), pg.find("W"), pg.find("b"));
      return value(p, in);
    };
    ParamStore params;
    params.add("W", random_array({5, 6}, rng));
    params.add("b", random_array({5}, rng));
    cases.push_back({"ops.affine", make_map(value, grad), params, single_input("x", random_array({6}, rng))});
  }
  for (ops::Activation kind : {ops::Activation::tanh, ops::Activation::relu}) {
    const Array r = random_projection(6, rng);
    auto value = [r, kind](const ParamStore&, const ParamStore& in) {
      return dot(r, ops::activate(in.get("x"), kind));
    };
    auto grad = [r, kind](const ParamStore&, const ParamStore& in, ParamStore&, ParamStore& ig) {
      const Array& x = in.get("x");
      const Array y = ops::activate(x, kind);
      ig.find("x")->add_scaled(ops::activate_backward(x, y, r, kind));
      return dot(r, y);
    };
    // Keep relu inputs away from the kink.
    Array x = random_array({6}, rng);
    for (double& v : x.values()) v += v >= 0.0 ? 0.1 : -0.1;
    cases.push_back({"ops." + std::string(ops::activation_name(kind)), make_map(value, grad), ParamStore{},
                     single_input("x", x)});
  }
  {
    const Array target = random_simplex(5, rng);
    auto value = [target](const ParamStore&, const ParamStore& in) {
      return ops::cross_entropy(ops::softmax(in.get("logits")), target);
    };
    auto grad = [target](const ParamStore&, const ParamStore& in, ParamStore&, ParamStore& ig) {
      const Array y = ops::softmax(in.get("logits"));
      ig.find("logits")->add_scaled(ops::softmax_backward(y, ops::cross_entropy_grad(y, target)));
      return ops::cross_entropy(y, target);
    };
    cases.push_back({"ops.softmax_cross_entropy", make_map(value, grad), ParamStore{},
                     single_input("logits", random_array({5}, rng))});
  }
  {
    const Array target = random_array({7}, rng);
    auto value = [target](const ParamStore&, const ParamStore& in) { return ops::mse(in.get("p"), target); };
    auto grad = [target](const ParamStore&, const ParamStore& in, ParamStore&, ParamStore& ig) {
      ig.find("p")->add_scaled(ops::mse_grad(in.get("p"), target));
      return ops::mse(in.get("p"), target);
    };
    cases.push_back({"ops.mse", make_map(value, grad), ParamStore{}, single_input("p", random_array({7}, rng))});
  }
}

void add_model_cases(std::vector<GradCase>& cases, const ModelConfig& cfg, std::uint64_t seed,
                     Rng& rng) {
  const LewmModel model(cfg, seed);
  const std::size_t action = rng.below(cfg.M);
  const Array s_point = random_array({cfg.d_s()}, rng);
  const Array e_point = random_simplex(cfg.K, rng);

  // Encoders: a projection of one slice of the fused latent.
  struct EncoderSlice {
    const char* name;
    const char* prefix;
    std::size_t offset;
    std::size_t width;
  };
  const EncoderSlice slices[] = {{"lewm.encode_state", "enc_s.", 0, cfg.d_z},
                                 {"lewm.encode_action", "enc_a.", cfg.d_z, cfg.d_a},
                                 {"lewm.encode_emotion", "enc_e.", cfg.d_z + cfg.d_a, cfg.d_e}};
  for (const EncoderSlice& slice : slices) {
    Array dh({cfg.d_h()});
    const Array r = random_projection(slice.width, rng);
    for (std::size_t i = 0; i < slice.width; ++i) dh[slice.offset + i] = r[i];
    auto value = [cfg, action, dh](const ParamStore& p, const ParamStore& in) {
      const LewmModel m(cfg, p);
      return dot(dh, m.forward(in.get("s"), in.get("e"), action).latent.h);
    };
    auto grad = [cfg, action, dh](const ParamStore& p, const ParamStore& in, ParamStore& pg,
                                  ParamStore& ig) {
      const LewmModel m(cfg, p);
      const LewmModel::Trace t = m.forward(in.get("s"), in.get("e"), action);
      m.encoders_backward(t, dh, &pg, ig.find("s"), ig.find("e"));
      return dot(dh, t.latent.h);
    };
    ParamStore inputs;
    inputs.add("s", s_point);
    inputs.add("e", e_point);
    cases.push_back({slice.name, make_map(value, grad), restricted(model.params(), slice.prefix), inputs});
  }

  {
    const Array target = ops::one_hot(rng.below(cfg.K), cfg.K);
    auto value = [cfg, target](const ParamStore& p, const ParamStore& in) {
      const LewmModel m(cfg, p);
      return ops::cross_entropy(ops::softmax(m.emotion_logits(in.get("h"), nullptr)), target);
    };
    auto grad = [cfg, target](const ParamStore& p, const ParamStore& in, ParamStore& pg, ParamStore& ig) {
      const LewmModel m(cfg, p);
      FeedForward::Trace t;
      const Array y = ops::softmax(m.emotion_logits(in.get("h"), &t));
      const Array dlogits = ops::softmax_backward(y, ops::cross_entropy_grad(y, target));
      ig.find("h")->add_scaled(m.emotion_head_backward(t, dlogits, &pg));
      return ops::cross_entropy(y, target);
    };
    cases.push_back({"lewm.transition_emotion", make_map(value, grad),
                     restricted(model.params(), "head_e."), single_input("h", random_array({cfg.d_h()}, rng))});
  }
  {
    const Array r = random_projection(cfg.d_z, rng);
    auto value = [cfg, r](const ParamStore& p, const ParamStore& in) {
      const LewmModel m(cfg, p);
      return dot(r, m.head_s_forward(in.get("h"), in.get("e_next"), nullptr));
    };
    auto grad = [cfg, r](const ParamStore& p, const ParamStore& in, ParamStore& pg, ParamStore& ig) {
      const LewmModel m(cfg, p);
      LewmModel::HeadTrace t;
      const Array y = m.head_s_forward(in.get("h"), in.get("e_next"), &t);
      m.head_s_backward(t, r, &pg, ig.find("h"), ig.find("e_next"));
      return dot(r, y);
    };
    ParamStore inputs;
    inputs.add("h", random_array({cfg.d_h()}, rng));
    inputs.add("e_next", random_simplex(cfg.K, rng));
    cases.push_back({"lewm.transition_state", make_map(value, grad), restricted(model.params(), "head_s."),
                     inputs});
  }
  {
    const Array r = random_projection(cfg.d_s(), rng);
    auto value = [cfg, r](const ParamStore& p, const ParamStore& in) {
      const LewmModel m(cfg, p);
      return dot(r, m.decode_raw(in.get("latent"), nullptr));
    };
    auto grad = [cfg, r](const ParamStore& p, const ParamStore& in, ParamStore& pg, ParamStore& ig) {
      const LewmModel m(cfg, p);
      FeedForward::Trace t;
      const Array y = m.decode_raw(in.get("latent"), &t);
      ig.find("latent")->add_scaled(m.decoder_backward(t, r, &pg));
      return dot(r, y);
    };
    cases.push_back({"lewm.decode_state", make_map(value, grad), restricted(model.params(), "dec_s."),
                     single_input("latent", random_array({cfg.d_z}, rng))});
  }
}

void add_objective_case(std::vector<GradCase>& cases, const std::string& name, const ModelConfig& cfg,
                        std::uint64_t seed, const ewh::EnvSpec& env, const TrainHyper& hyper, Rng& rng) {
  std::vector<ewh::EwhSample> batch;
  for (int i = 0; i < 2; ++i) batch.push_back(ewh::sample_transition(env, rng));
  auto value = [cfg, batch, hyper](const ParamStore& p, const ParamStore&) {
    return total_objective(LewmModel(cfg, p), batch, hyper).total;
  };
  auto grad = [cfg, batch, hyper](const ParamStore& p, const ParamStore&, ParamStore& pg, ParamStore&) {
    return total_objective(LewmModel(cfg, p), batch, hyper, &pg).total;
  };
  const LewmModel model(cfg, seed);
  cases.push_back({name, make_map(value, grad), model.params(), ParamStore{}});
}

}  // namespace

std::vector<GradCase> world_model_grad_cases(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x6772616463686bULL));
  std::vector<GradCase> cases;
  add_op_cases(cases, rng);

  ewh::EnvOptions env_options;
  env_options.seed = seed;
  const ewh::EnvSpec env = ewh::make_env(env_options);
  const ModelConfig cfg = ModelConfig::for_schema(env.schema);
  add_model_cases(cases, cfg, seed, rng);

  TrainHyper hyper;
  add_objective_case(cases, "training.total_objective", cfg, seed, env, hyper, rng);
  // Variants run at a narrower width to keep the suite fast.
  ModelConfig narrow = cfg;
  narrow.hidden_state_encoder = narrow.hidden_emotion_encoder = narrow.hidden_emotion_head =
      narrow.hidden_state_head = narrow.hidden_decoder = 16;
  TrainHyper heavy = hyper;
  heavy.lambda = 0.5;
  heavy.beta = 1.0;
  add_objective_case(cases, "training.total_objective.beta1", narrow, seed, env, heavy, rng);
  ModelConfig blind = narrow;
  blind.blind = true;
  add_objective_case(cases, "training.total_objective.blind", blind, seed, env, hyper, rng);
  return cases;
}

}  // namespace training
}  // namespace lewm
