#include <gtest/gtest.h>

#include <cmath>

#include "lewm/errors.hpp"
#include "lewm/ops.hpp"
#include "lewm/training.hpp"

namespace lewm::training {
namespace {

using core::LewmModel;
using core::ModelConfig;

ewh::EnvSpec env_with(double kappa, double sigma = 0.1, std::uint64_t seed = 4) {
  ewh::EnvOptions o;
  o.seed = seed;
  o.K = 3;
  o.M = 2;
  o.kappa = kappa;
  o.sigma = sigma;
  return ewh::make_env(o);
}

ModelConfig narrow(const ewh::EnvSpec& env) {
  ModelConfig c = ModelConfig::for_schema(env.schema);
  c.hidden_state_encoder = c.hidden_emotion_encoder = c.hidden_emotion_head = c.hidden_state_head =
      c.hidden_decoder = 16;
  return c;
}

TrainHyper quick(std::uint64_t seed = 1) {
  TrainHyper h;
  h.seed = seed;
  h.max_steps = 150;
  h.eval_every = 50;
  return h;
}

ewh::Dataset data(const ewh::EnvSpec& env, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return ewh::generate_dataset(env, n, rng);
}

ewh::ObservableState state(std::initializer_list<double> v) {
  const Array flat = Array::vector(std::vector<double>(v));
  return ewh::ObservableState::split(flat, 2, 1, 1);
}

TEST(LossState, ValuesAndOracle) {
  const ewh::ObservableState a = state({1, 2, 3, 4});
  EXPECT_EQ(loss_state(a, a), 0.0);
  EXPECT_EQ(loss_state(a, state({1, 2, 5, 4})), 1.0);
  EXPECT_THROW(loss_state(a, ewh::ObservableState::split(Array::vector({1, 2, 3}), 1, 1, 1)),
               ContractViolation);
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    Array x({4}), y({4});
    for (double& v : x.values()) v = rng.normal();
    for (double& v : y.values()) v = rng.normal();
    double oracle = 0.0;
    for (std::size_t j = 0; j < 4; ++j) oracle += (x[j] - y[j]) * (x[j] - y[j]) / 4.0;
    EXPECT_NEAR(loss_state(ewh::ObservableState::split(x, 2, 1, 1), ewh::ObservableState::split(y, 2, 1, 1)),
                oracle, 1e-12);
  }
}

TEST(LossEmotion, ValuesAndOracle) {
  const ewh::EmotionState hot{ops::one_hot(3, 7), nullptr};
  EXPECT_EQ(loss_emotion(hot, hot), 0.0);
  EXPECT_NEAR(loss_emotion(hot, {Array({7}, 1.0 / 7.0), nullptr}), 1.945910, 1e-6);
  EXPECT_THROW(loss_emotion(hot, {Array({6}, 1.0 / 6.0), nullptr}), ContractViolation);
  const Array p = ops::softmax(Array::vector({0.3, -1.0, 2.0}));
  const Array t = Array::vector({0.2, 0.5, 0.3});
  double oracle = 0.0;
  for (std::size_t k = 0; k < 3; ++k) oracle -= t[k] * std::log(p[k]);
  EXPECT_NEAR(loss_emotion({t, nullptr}, {p, nullptr}), oracle, 1e-12);
}

TEST(Consistency, ZeroWhenEqualSymmetricAndWitness) {
  const ewh::EnvSpec env = env_with(1.0);
  const ModelConfig cfg = narrow(env);
  bool witness = false;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const LewmModel m(cfg, seed);
    Array h({cfg.d_h()}, 0.2);
    const ewh::EmotionState a{ops::one_hot(0, 3), nullptr};
    const ewh::EmotionState b{ops::one_hot(2, 3), nullptr};
    EXPECT_EQ(consistency_penalty(m, h, a, a), 0.0);
    const double c = consistency_penalty(m, h, a, b);
    EXPECT_GE(c, 0.0);
    EXPECT_EQ(c, consistency_penalty(m, h, b, a));
    witness |= c > 0.0;
  }
  EXPECT_TRUE(witness);
}

TEST(TotalObjective, WeightsBreakdownAndEmptyBatch) {
  const ewh::EnvSpec env = env_with(1.0);
  const ewh::Dataset ds = data(env, 8, 3);
  const LewmModel m(narrow(env), 3);
  TrainHyper h;
  h.lambda = 0.0;
  h.beta = 0.0;
  const LossBreakdown pure = total_objective(m, ds.samples, h);
  EXPECT_EQ(pure.total, pure.l_state);
  double mean_state = 0.0;
  for (const ewh::EwhSample& s : ds.samples) {
    mean_state += loss_state(s.s1, m.predict(s.s0, s.e0, s.action).state_next) / 8.0;
  }
  EXPECT_NEAR(pure.l_state, mean_state, 1e-12);

  h.lambda = 0.7;
  h.beta = 2.5;
  const LossBreakdown b = total_objective(m, ds.samples, h);
  EXPECT_NEAR(b.total, b.l_state + 0.7 * b.l_emotion + 2.5 * b.c, 1e-9);
  EXPECT_GT(b.c, 0.0);
  EXPECT_THROW(total_objective(m, std::span<const ewh::EwhSample>{}, h), ContractViolation);
}

TEST(Trainer, SameSeedSameResultAndAdditiveHistory) {
  const ewh::EnvSpec env = env_with(1.0);
  const ewh::Dataset train = data(env, 200, 1);
  const ewh::Dataset val = data(env, 50, 2);
  const TrainHyper h = quick();
  const TrainResult a = train_lewm(LewmModel(narrow(env), 1), train, val, h);
  const TrainResult b = train_lewm(LewmModel(narrow(env), 1), train, val, h);
  EXPECT_TRUE(a.model.params() == b.model.params());
  ASSERT_EQ(a.history.records.size(), b.history.records.size());
  EXPECT_EQ(a.history.records.back().total, b.history.records.back().total);
  for (const HistoryRecord& r : a.history.records) {
    EXPECT_NEAR(r.total, r.l_state + h.lambda * r.l_emotion + h.beta * r.c, 1e-9);
  }
  EXPECT_EQ(a.history.to_csv().substr(0, 30), "step,l_state,l_emotion,c,total");
  EXPECT_EQ(a.history.validation.size(), 3u);
}

TEST(Trainer, ReducesObjective) {
  const ewh::EnvSpec env = env_with(1.0);
  const ewh::Dataset train = data(env, 300, 1);
  TrainHyper h = quick();
  h.max_steps = 400;
  h.lr = 3e-3;
  const LewmModel start(narrow(env), 2);
  const TrainResult r = train_lewm(start, train, train, h);
  EXPECT_LT(total_objective(r.model, train.samples, h).total,
            0.5 * total_objective(start, train.samples, h).total);
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  const ewh::EnvSpec env = env_with(1.0);
  const ewh::Dataset train = data(env, 100, 1);
  const ewh::Dataset val = data(env, 30, 2);
  const TrainHyper h = quick(7);
  Trainer straight(LewmModel(narrow(env), 7), train, val, h);
  straight.run();

  Trainer first(LewmModel(narrow(env), 7), train, val, h);
  EXPECT_FALSE(first.run(73));
  const Json snap = Json::parse(first.snapshot().dump());
  Trainer resumed = Trainer::restore(snap, train, val, h);
  EXPECT_EQ(resumed.step(), 73u);
  resumed.run();
  EXPECT_TRUE(resumed.finished());
  EXPECT_TRUE(resumed.current_model().params() == straight.current_model().params());
  EXPECT_TRUE(resumed.best_model().params() == straight.best_model().params());
  EXPECT_EQ(resumed.history().to_csv(), straight.history().to_csv());

  TrainHyper changed = h;
  changed.lr = 1.0;
  EXPECT_THROW(Trainer::restore(snap, train, val, changed), ConfigError);
}

TEST(Trainer, EarlyStopsWithPatience) {
  const ewh::EnvSpec env = env_with(1.0);
  const ewh::Dataset train = data(env, 16, 1);
  const ewh::Dataset val = data(env, 200, 2);
  TrainHyper h = quick();
  h.max_steps = 20000;
  h.eval_every = 20;
  h.patience = 3;
  h.lr = 1e-2;
  h.cosine_decay = false;
  const TrainResult r = train_lewm(LewmModel(narrow(env), 1), train, val, h);
  EXPECT_TRUE(r.history.early_stopped);
  EXPECT_LT(r.history.records.size(), 20000u);
  EXPECT_EQ(r.history.validation.back().step, r.history.best_step + 3 * 20);
}

TEST(Trainer, DivergenceNamesTheStep) {
  const ewh::EnvSpec env = env_with(1.0);
  const ewh::Dataset train = data(env, 64, 1);
  TrainHyper h = quick();
  h.optimizer = OptimizerKind::sgd;
  h.lr = 1e200;
  h.cosine_decay = false;
  try {
    train_lewm(LewmModel(narrow(env), 1), train, train, h);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GT(e.step(), 0u);
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos) << e.what();
  }
}

TEST(Trainer, RejectsBadHyperAndEmptyData) {
  const ewh::EnvSpec env = env_with(1.0);
  const ewh::Dataset train = data(env, 10, 1);
  TrainHyper h = quick();
  h.beta = -1.0;
  EXPECT_THROW(train_lewm(LewmModel(narrow(env), 1), train, train, h), ConfigError);
  h = quick();
  h.lambda = std::nan("");
  EXPECT_THROW(h.validate(), ConfigError);
  ewh::Dataset empty = train;
  empty.samples.clear();
  EXPECT_THROW(train_lewm(LewmModel(narrow(env), 1), empty, train, quick()), ContractViolation);
}

TEST(Trainer, HyperJsonRoundTrip) {
  TrainHyper h = quick(9);
  h.stop_gradient_prediction = true;
  h.optimizer = OptimizerKind::sgd;
  EXPECT_TRUE(hyper_from_json(hyper_to_json(h)) == h);
}

TEST(Blind, TrainingLeavesEmotionPathwayUntouched) {
  const ewh::EnvSpec env = env_with(1.0);
  const ewh::Dataset train = data(env, 100, 1);
  const LewmModel blind = build_blind_baseline(narrow(env), 3);
  const TrainResult r = train_lewm(blind, train, train, quick());
  for (const std::string& name : core::emotion_pathway_params()) {
    EXPECT_EQ(r.model.params().get(name), blind.params().get(name)) << name;
  }
  EXPECT_FALSE(r.model.params().get("dec_s.w1") == blind.params().get("dec_s.w1"));
}

TEST(LambdaZero, EmotionNllStaysAtChanceWithoutCoupling) {
  const ewh::EnvSpec env = env_with(0.0);
  const ewh::Dataset train = data(env, 400, 1);
  const ewh::Dataset test = data(env, 2000, 2);
  TrainHyper h = quick();
  h.lambda = 0.0;
  h.beta = 0.0;
  h.max_steps = 600;
  const TrainResult r = train_lewm(LewmModel(narrow(env), 5), train, train, h);
  const EvalMetrics m = evaluate(r.model, test, env);
  EXPECT_GE(m.emotion_nll, std::log(3.0) - 0.02);

  h.lambda = 1.0;
  const TrainResult trained = train_lewm(LewmModel(narrow(env), 5), train, train, h);
  EXPECT_LT(evaluate(trained.model, test, env).emotion_nll, m.emotion_nll);
}

TEST(Evaluate, OracleHasZeroGapAndRandomGuessIsChance) {
  const ewh::EnvSpec env = env_with(1.0, 0.3);
  const ewh::Dataset test = data(env, 6000, 3);
  const EvalMetrics oracle = evaluate(oracle_predictor(env), test, env);
  EXPECT_EQ(oracle.oracle_gap, 0.0);
  EXPECT_GT(oracle.oracle_mse, 0.0);
  EXPECT_GE(oracle.oracle_gap, -oracle.noise_bound);

  auto rng = std::make_shared<Rng>(17);
  PredictFn guess = [&, rng](const ewh::EwhSample& s) {
    return PointPrediction{s.s0.concat(), ops::one_hot(rng->below(3), 3)};
  };
  const EvalMetrics g = evaluate(guess, test, env);
  const double se = std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / 6000.0);
  EXPECT_NEAR(g.emotion_accuracy, 1.0 / 3.0, 4.0 * se);
  EXPECT_GT(g.oracle_gap, 0.0);
}

TEST(Evaluate, ReproducibleAndAccuracyDefinition) {
  const ewh::EnvSpec env = env_with(1.0);
  const ewh::Dataset test = data(env, 300, 3);
  const LewmModel m(narrow(env), 4);
  const EvalMetrics a = evaluate(m, test, env);
  const EvalMetrics b = evaluate(m, test, env);
  EXPECT_EQ(a.to_kv(), b.to_kv());
  std::size_t hits = 0;
  for (const ewh::EwhSample& s : test.samples) {
    hits += ops::argmax(m.predict(s.s0, s.e0, s.action).emotion_next.probs) == s.e1.category();
  }
  EXPECT_DOUBLE_EQ(a.emotion_accuracy, static_cast<double>(hits) / 300.0);
  EXPECT_NE(a.to_kv().find("state_mse = "), std::string::npos);
}

TEST(Sensitivity, NonNegativeAndZeroForFrozenFeed) {
  const ewh::EnvSpec env = env_with(1.0);
  const ewh::Dataset test = data(env, 50, 3);
  ModelConfig cfg = narrow(env);
  LewmModel m(cfg, 4);
  EXPECT_GT(emotion_sensitivity(m, test), 0.0);
  m.params().find("head_s.w_e")->fill(0.0);
  EXPECT_EQ(emotion_sensitivity(m, test), 0.0);
}

}  // namespace
}  // namespace lewm::training
