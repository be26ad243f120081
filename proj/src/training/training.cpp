#include "lewm/training.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "lewm/errors.hpp"
#include "lewm/ops.hpp"

namespace lewm::training {

using core::LewmModel;
using ewh::Dataset;
using ewh::EwhSample;

void TrainHyper::validate() const {
  if (!std::isfinite(lambda) || lambda < 0.0) throw ConfigError("train: lambda must be finite and >= 0");
  if (!std::isfinite(beta) || beta < 0.0) throw ConfigError("train: beta must be finite and >= 0");
  if (!std::isfinite(lr) || lr <= 0.0) throw ConfigError("train: lr must be > 0");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (max_steps == 0) throw ConfigError("train: max_steps must be >= 1");
  if (patience == 0) throw ConfigError("train: patience must be >= 1");
  if (eval_every == 0) throw ConfigError("train: eval_every must be >= 1");
}

Json hyper_to_json(const TrainHyper& h) {
  return Json{{"lambda", h.lambda},
              {"beta", h.beta},
              {"lr", h.lr},
              {"optimizer", optimizer_kind_name(h.optimizer)},
              {"batch_size", h.batch_size},
              {"max_steps", h.max_steps},
              {"seed", h.seed},
              {"patience", h.patience},
              {"eval_every", h.eval_every},
              {"cosine_decay", h.cosine_decay},
              {"stop_gradient_prediction", h.stop_gradient_prediction}};
}

TrainHyper hyper_from_json(const Json& j) {
  TrainHyper h;
  try {
    h.lambda = j.at("lambda").get<double>();
    h.beta = j.at("beta").get<double>();
    h.lr = j.at("lr").get<double>();
    h.optimizer = parse_optimizer_kind(j.at("optimizer").get<std::string>());
    h.batch_size = j.at("batch_size").get<std::size_t>();
    h.max_steps = j.at("max_steps").get<std::size_t>();
    h.seed = j.at("seed").get<std::uint64_t>();
    h.patience = j.at("patience").get<std::size_t>();
    h.eval_every = j.at("eval_every").get<std::size_t>();
    h.cosine_decay = j.at("cosine_decay").get<bool>();
    h.stop_gradient_prediction = j.at("stop_gradient_prediction").get<bool>();
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed train hyperparameters: ") + e.what());
  }
  return h;
}

double loss_state(const ewh::ObservableState& truth, const ewh::ObservableState& pred) {
  return ops::mse(pred.concat(), truth.concat());
}

double loss_emotion(const ewh::EmotionState& truth, const ewh::EmotionState& pred) {
  if (truth.probs.size() != pred.probs.size()) {
    throw ContractViolation("loss_emotion: category counts differ (" +
                            std::to_string(truth.probs.size()) + " vs " +
                            std::to_string(pred.probs.size()) + ")");
  }
  return ops::cross_entropy(pred.probs, truth.probs);
}

double consistency_penalty(const LewmModel& model, const Array& h, const ewh::EmotionState& e_pred,
                           const ewh::EmotionState& e_true) {
  const Array a = model.head_s_forward(h, model.emotion_feed(e_pred.probs), nullptr);
  const Array b = model.head_s_forward(h, model.emotion_feed(e_true.probs), nullptr);
  Array diff = a;
  diff.add_scaled(b, -1.0);
  return ops::l2_norm(diff);
}

LossBreakdown total_objective(const LewmModel& model, std::span<const EwhSample> batch,
                              const TrainHyper& hyper, ParamStore* grads) {
  if (batch.empty()) throw ContractViolation("total_objective: empty batch");
  const core::ModelConfig& cfg = model.config();
  const double w = 1.0 / static_cast<double>(batch.size());
  LossBreakdown sum;
  for (const EwhSample& sample : batch) {
    const Array s0 = sample.s0.concat();
    const Array s1 = sample.s1.concat();
    if (s0.size() != cfg.d_s() || s1.size() != cfg.d_s() || sample.e0.probs.size() != cfg.K ||
        sample.e1.probs.size() != cfg.K || sample.action.action_id >= cfg.M) {
      throw ContractViolation("total_objective: sample '" + sample.sample_id +
                              "' is not dimension-consistent with the model");
    }
    const LewmModel::Trace t = model.forward(s0, sample.e0.probs, sample.action.action_id);
    const double ls = ops::mse(t.state_flat, s1);
    const double le = ops::cross_entropy(t.emotion_probs, sample.e1.probs);

    LewmModel::HeadTrace obs_trace;
    const Array latent_obs =
        model.head_s_forward(t.latent.h, model.emotion_feed(sample.e1.probs), &obs_trace);
    Array diff = t.latent_next;
    diff.add_scaled(latent_obs, -1.0);
    const double c = ops::l2_norm(diff);

    sum.l_state += ls;
    sum.l_emotion += le;
    sum.c += c;

    if (!grads) continue;
    Array d_state = ops::mse_grad(t.state_flat, s1);
    for (double& v : d_state.values()) v *= w;
    const Array d_latent = model.decoder_backward(t.dec_s, d_state, grads);

    Array d_latent_c({cfg.d_z});
    if (c > 0.0 && hyper.beta != 0.0) {
      d_latent_c = diff;
      for (double& v : d_latent_c.values()) v *= hyper.beta * w / c;
    }

    Array dh({cfg.d_h()});
    Array dfeed({cfg.K});
    if (hyper.stop_gradient_prediction) {
      model.head_s_backward(t.head_s, d_latent, grads, &dh, &dfeed);
      model.head_s_backward(t.head_s, d_latent_c, grads, &dh, nullptr);
    } else {
      Array d_pred = d_latent;
      d_pred.add_scaled(d_latent_c);
      model.head_s_backward(t.head_s, d_pred, grads, &dh, &dfeed);
    }
    Array d_obs = d_latent_c;
    for (double& v : d_obs.values()) v = -v;
    model.head_s_backward(obs_trace, d_obs, grads, &dh, nullptr);

    // Soft feed is the identity and hard feed is straight-through; a blind
    // model feeds a constant.
    Array d_probs({cfg.K});
    if (!cfg.blind) d_probs.add_scaled(dfeed);
    if (hyper.lambda != 0.0) {
      d_probs.add_scaled(ops::cross_entropy_grad(t.emotion_probs, sample.e1.probs), hyper.lambda * w);
    }
    const Array d_logits = ops::softmax_backward(t.emotion_probs, d_probs);
    dh.add_scaled(model.emotion_head_backward(t.head_e, d_logits, grads));
    model.encoders_backward(t, dh, grads);
  }
  sum.l_state *= w;
  sum.l_emotion *= w;
  sum.c *= w;
  sum.total = sum.l_state + hyper.lambda * sum.l_emotion + hyper.beta * sum.c;
  return sum;
}

std::string TrainHistory::to_csv() const {
  std::string out = "step,l_state,l_emotion,c,total\n";
  for (const HistoryRecord& r : records) {
    out += std::to_string(r.step) + ',' + format_double(r.l_state) + ',' +
           format_double(r.l_emotion) + ',' + format_double(r.c) + ',' + format_double(r.total) +
           '\n';
  }
  return out;
}

Trainer::Trainer(LewmModel model, const Dataset& train, const Dataset& val, const TrainHyper& hyper)
    : model_(std::move(model)),
      train_(&train),
      val_(&val),
      hyper_(hyper),
      optimizer_(OptimizerHyper{hyper.optimizer, hyper.lr}),
      rng_(hyper.seed),
      best_params_(model_.params()) {
  hyper_.validate();
  if (train.samples.empty()) throw ContractViolation("train_lewm: empty training set");
  if (val.samples.empty()) throw ContractViolation("train_lewm: empty validation set");
  history_.seed = hyper.seed;
}

std::vector<EwhSample> Trainer::next_batch() {
  const std::size_t n = train_->size();
  const std::size_t size = std::min(hyper_.batch_size, n);
  std::vector<EwhSample> batch;
  batch.reserve(size);
  while (batch.size() < size) {
    if (cursor_ >= order_.size()) {
      order_.resize(n);
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      for (std::size_t i = n; i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
      cursor_ = 0;
    }
    batch.push_back(train_->samples[order_[cursor_++]]);
  }
  return batch;
}

void Trainer::evaluate_validation() {
  const double val = total_objective(model_, val_->samples, hyper_).total;
  if (!std::isfinite(val)) throw DivergenceError("non-finite validation objective", step_);
  history_.validation.push_back({step_, val});
  if (val < history_.best_val) {
    history_.best_val = val;
    history_.best_step = step_;
    best_params_ = model_.params();
    evals_since_best_ = 0;
  } else if (++evals_since_best_ >= hyper_.patience) {
    finished_ = true;
    history_.early_stopped = true;
  }
  if (step_ >= hyper_.max_steps) finished_ = true;
}

bool Trainer::run(std::size_t stop_at_step, const std::function<void(const Trainer&)>& on_eval) {
  const auto start = std::chrono::steady_clock::now();
  while (!finished_ && step_ < stop_at_step) {
    const std::vector<EwhSample> batch = next_batch();
    ParamStore grads = model_.params().zeros_like();
    const LossBreakdown loss = total_objective(model_, batch, hyper_, &grads);
    if (!std::isfinite(loss.total)) throw DivergenceError("non-finite training objective", step_);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history_.records.push_back({step_, loss.l_state, loss.l_emotion, loss.c, loss.total, elapsed});
    if (hyper_.cosine_decay) {
      const double progress = static_cast<double>(step_) / static_cast<double>(hyper_.max_steps);
      optimizer_.set_lr(0.5 * hyper_.lr * (1.0 + std::cos(std::numbers::pi * progress)));
    }
    optimizer_.step(model_.params(), grads);
    ++step_;
    if (step_ % hyper_.eval_every == 0 || step_ >= hyper_.max_steps) {
      evaluate_validation();
      if (on_eval) on_eval(*this);
    }
  }
  return finished_;
}

LewmModel Trainer::best_model() const { return LewmModel(model_.config(), best_params_); }

namespace {

Json nullable(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace

Json Trainer::snapshot() const {
  Json records = Json::array();
  for (const HistoryRecord& r : history_.records) {
    records.push_back({r.step, r.l_state, r.l_emotion, r.c, r.total, r.wall_seconds});
  }
  Json validation = Json::array();
  for (const ValidationRecord& r : history_.validation) validation.push_back({r.step, r.total});
  return Json{
      {"format_version", 1},
      {"hyper", hyper_to_json(hyper_)},
      {"model", core::checkpoint_to_json(model_)},
      {"best_params", param_store_to_json(best_params_)},
      {"optimizer",
       {{"steps", optimizer_.steps()},
        {"m", param_store_to_json(optimizer_.first_moment())},
        {"v", param_store_to_json(optimizer_.second_moment())}}},
      {"rng", rng_.state()},
      {"step", step_},
      {"order", order_},
      {"cursor", cursor_},
      {"evals_since_best", evals_since_best_},
      {"finished", finished_},
      {"history",
       {{"seed", history_.seed},
        {"records", records},
        {"validation", validation},
        {"best_step", history_.best_step},
        {"best_val", nullable(history_.best_val)},
        {"early_stopped", history_.early_stopped}}}};
}

Trainer Trainer::restore(const Json& j, const Dataset& train, const Dataset& val,
                         const TrainHyper& hyper) {
  try {
    const TrainHyper saved = hyper_from_json(j.at("hyper"));
    if (!(saved == hyper)) throw ConfigError("resume: training hyperparameters changed since the snapshot");
    Trainer t(core::checkpoint_from_json(j.at("model")), train, val, hyper);
    t.best_params_ = param_store_from_json(j.at("best_params"));
    const Json& opt = j.at("optimizer");
    t.optimizer_.restore(opt.at("steps").get<std::size_t>(), param_store_from_json(opt.at("m")),
                         param_store_from_json(opt.at("v")));
    t.rng_.restore(j.at("rng").get<std::string>());
    t.step_ = j.at("step").get<std::size_t>();
    t.order_ = j.at("order").get<std::vector<std::size_t>>();
    t.cursor_ = j.at("cursor").get<std::size_t>();
    t.evals_since_best_ = j.at("evals_since_best").get<std::size_t>();
    t.finished_ = j.at("finished").get<bool>();
    const Json& h = j.at("history");
    t.history_.seed = h.at("seed").get<std::uint64_t>();
    for (const Json& r : h.at("records")) {
      t.history_.records.push_back({r[0].get<std::size_t>(), r[1].get<double>(), r[2].get<double>(),
                                    r[3].get<double>(), r[4].get<double>(), r[5].get<double>()});
    }
    for (const Json& r : h.at("validation")) {
      t.history_.validation.push_back({r[0].get<std::size_t>(), r[1].get<double>()});
    }
    t.history_.best_step = h.at("best_step").get<std::size_t>();
    t.history_.best_val = h.at("best_val").is_null() ? std::numeric_limits<double>::infinity()
                                                      : h.at("best_val").get<double>();
    t.history_.early_stopped = h.at("early_stopped").get<bool>();
    return t;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed training snapshot: ") + e.what());
  }
}

TrainResult train_lewm(LewmModel model, const Dataset& train, const Dataset& val,
                       const TrainHyper& hyper) {
  Trainer trainer(std::move(model), train, val, hyper);
  trainer.run();
  return {trainer.best_model(), trainer.history()};
}

LewmModel build_blind_baseline(const core::ModelConfig& config, std::uint64_t init_seed) {
  core::ModelConfig blind = config;
  blind.blind = true;
  return LewmModel(blind, init_seed);
}

std::string EvalMetrics::to_kv() const {
  std::ostringstream os;
  os << "n = " << n << '\n'
     << "state_mse = " << format_double(state_mse) << '\n'
     << "emotion_accuracy = " << format_double(emotion_accuracy) << '\n'
     << "emotion_nll = " << format_double(emotion_nll) << '\n'
     << "oracle_mse = " << format_double(oracle_mse) << '\n'
     << "oracle_gap = " << format_double(oracle_gap) << '\n'
     << "noise_bound = " << format_double(noise_bound) << '\n';
  return os.str();
}

PredictFn model_predictor(const LewmModel& model) {
  return [&model](const EwhSample& s) {
    const core::Prediction p = model.predict(s.s0, s.e0, s.action);
    return PointPrediction{p.state_next.concat(), p.emotion_next.probs};
  };
}

PredictFn oracle_predictor(const ewh::EnvSpec& env) {
  return [&env](const EwhSample& s) {
    const std::size_t e0 = s.e0.category();
    return PointPrediction{ewh::oracle_expected_next_state(env, s.s0, e0, s.action.action_id),
                           ewh::oracle_emotion_posterior(env, e0, s.action.action_id).probs};
  };
}

EvalMetrics evaluate(const PredictFn& predictor, const Dataset& test, const ewh::EnvSpec& env) {
  if (test.samples.empty()) throw ContractViolation("evaluate: empty test set");
  EvalMetrics m;
  m.n = test.size();
  const PredictFn oracle = oracle_predictor(env);
  std::vector<double> diffs;
  diffs.reserve(m.n);
  std::size_t correct = 0;
  for (const EwhSample& s : test.samples) {
    const Array truth = s.s1.concat();
    const PointPrediction p = predictor(s);
    const double se = ops::mse(p.state, truth);
    const double se_oracle = ops::mse(oracle(s).state, truth);
    m.state_mse += se;
    m.oracle_mse += se_oracle;
    diffs.push_back(se - se_oracle);
    if (ops::argmax(p.emotion_probs) == s.e1.category()) ++correct;
    m.emotion_nll += ops::cross_entropy(p.emotion_probs, s.e1.probs);
  }
  const double n = static_cast<double>(m.n);
  m.state_mse /= n;
  m.oracle_mse /= n;
  m.emotion_nll /= n;
  m.emotion_accuracy = static_cast<double>(correct) / n;
  m.oracle_gap = m.state_mse - m.oracle_mse;
  if (m.n > 1) {
    double var = 0.0;
    for (double d : diffs) var += (d - m.oracle_gap) * (d - m.oracle_gap);
    var /= (n - 1.0);
    m.noise_bound = 3.0 * std::sqrt(var / n);
  }
  return m;
}

EvalMetrics evaluate(const LewmModel& model, const Dataset& test, const ewh::EnvSpec& env) {
  return evaluate(model_predictor(model), test, env);
}

double emotion_sensitivity(const LewmModel& model, const Dataset& data, double delta_norm) {
  if (data.samples.empty()) throw ContractViolation("emotion_sensitivity: empty dataset");
  const std::size_t K = model.config().K;
  Array delta({K});
  for (std::size_t k = 0; k < K; ++k) delta[k] = static_cast<double>(k) - 0.5 * static_cast<double>(K - 1);
  const double norm = ops::l2_norm(delta);
  for (double& v : delta.values()) v *= delta_norm / norm;

  double total = 0.0;
  for (const EwhSample& s : data.samples) {
    const Array h = model.encode(s.s0, s.e0, s.action).h;
    const Array e = model.transition_emotion(h).probs;
    Array shifted = e;
    shifted.add_scaled(delta);
    Array diff = model.head_s_forward(h, shifted, nullptr);
    diff.add_scaled(model.head_s_forward(h, e, nullptr), -1.0);
    total += ops::l2_norm(diff);
  }
  return total / static_cast<double>(data.size());
}

}  // namespace lewm::training
