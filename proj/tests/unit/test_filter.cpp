#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lewm/errors.hpp"
#include "lewm/filter.hpp"

namespace lewm::filter {
namespace {

std::vector<FilterTriple> corpus(std::size_t n, std::uint64_t seed, NeutralizeMode mode = NeutralizeMode::remove) {
  CorpusSpec spec;
  spec.n_samples = n;
  spec.mode = mode;
  Rng rng(seed);
  return gen_filter_corpus(spec, rng);
}

FilterConfig small_config() {
  FilterConfig c;
  c.d_embed = 6;
  c.hidden_cls = 8;
  c.hidden_gen = 10;
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("lewm_filter_" + name);
}

TEST(FilterCorpus, InvariantsHold) {
  const CorpusSpec spec;
  const auto c = corpus(3000, 3);
  std::size_t emotional = 0;
  for (const FilterTriple& t : c) {
    EXPECT_NO_THROW(validate_triple(spec, t));
    EXPECT_LE(t.x.size(), spec.max_length());
    emotional += t.e ? 1 : 0;
  }
  const double se = std::sqrt(0.25 / 3000.0);
  EXPECT_NEAR(static_cast<double>(emotional) / 3000.0, 0.5, 4 * se);
}

TEST(FilterCorpus, RemoveModeDeletesExactlyTheEmotionTokens) {
  const CorpusSpec spec;
  for (const FilterTriple& t : corpus(500, 4)) {
    TokenSeq expected;
    for (Token tok : t.x) {
      if (!spec.is_emotion_token(tok)) expected.push_back(tok);
    }
    EXPECT_EQ(t.y, expected);
  }
}

TEST(FilterCorpus, MaskModeReplacesInPlace) {
  const CorpusSpec spec;
  for (const FilterTriple& t : corpus(500, 4, NeutralizeMode::mask)) {
    ASSERT_EQ(t.y.size(), t.x.size());
    for (std::size_t i = 0; i < t.x.size(); ++i) {
      EXPECT_EQ(t.y[i], spec.is_emotion_token(t.x[i]) ? kNeutralMask : t.x[i]);
    }
  }
}

TEST(FilterCorpus, DeterministicAndDefaultSize) {
  EXPECT_EQ(corpus(200, 9), corpus(200, 9));
  EXPECT_NE(corpus(200, 9), corpus(200, 10));
  EXPECT_EQ(CorpusSpec{}.n_samples, 23790u);
}

TEST(FilterCorpus, InvalidSpecs) {
  CorpusSpec s;
  s.positive_tokens = {2};
  EXPECT_THROW(s.validate(), ConfigError);
  s = CorpusSpec{};
  s.negative_tokens = {16};
  EXPECT_THROW(s.validate(), ConfigError);
  s = CorpusSpec{};
  s.emotional_fraction = 1.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = CorpusSpec{};
  s.min_content = 9;
  EXPECT_THROW(s.validate(), ConfigError);
  s = CorpusSpec{};
  s.V = 6;
  s.positive_tokens = {4};
  s.negative_tokens = {5};
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(FilterCorpus, ValidateTripleRejectsLeaks) {
  const CorpusSpec spec;
  FilterTriple t{{kBos, 5, 16, kEos}, {kBos, 5, 16, kEos}, true, Polarity::positive};
  EXPECT_THROW(validate_triple(spec, t), SchemaError);
  t.y = {kBos, 5, kEos};
  EXPECT_NO_THROW(validate_triple(spec, t));
  t.polarity = Polarity::negative;
  EXPECT_THROW(validate_triple(spec, t), SchemaError);
  t = FilterTriple{{kBos, 5, 16, 20, kEos}, {kBos, 5, kEos}, true, Polarity::positive};
  EXPECT_THROW(validate_triple(spec, t), SchemaError);
}

TEST(FilterCorpus, SerializationRoundTrip) {
  const auto c = corpus(50, 5);
  const auto path = temp_path("roundtrip.jsonl");
  serialize_corpus(c, 24, path);
  std::size_t V = 0;
  EXPECT_EQ(deserialize_corpus(path, &V), c);
  EXPECT_EQ(V, 24u);
  std::filesystem::remove(path);
}

TEST(FilterCorpus, MalformedFilesAreRejected) {
  const auto path = temp_path("bad.jsonl");
  {
    std::ofstream out(path);
    out << R"({"format_version":1,"V":24})" << "\n"
        << R"({"x":[1,5,2],"y":[1,5,2],"e":0,"polarity":"none"})" << "\n"
        << R"({"x":[1,5,2],"y":)" << "\n";
  }
  try {
    deserialize_corpus(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  {
    std::ofstream out(path);
    out << R"({"format_version":1,"V":24})" << "\n" << R"({"x":[1,30,2],"y":[1,5,2],"e":0,"polarity":"none"})" << "\n";
  }
  EXPECT_THROW(deserialize_corpus(path), SchemaError);
  std::filesystem::remove(path);
  EXPECT_THROW(deserialize_corpus(path), IoError);
}

TEST(FilterModelTest, ZeroClassifierIsUndecided) {
  FilterModel m(small_config(), 1);
  m.params().find("cls.w2")->fill(0.0);
  const TokenSeq x{kBos, 5, 16, kEos};
  EXPECT_EQ(classify(m, x), 0.5);
  EXPECT_NEAR(classifier_loss(m, x, true), std::log(2.0), 1e-15);
  EXPECT_NEAR(classifier_loss(m, x, false), std::log(2.0), 1e-15);
}

TEST(FilterModelTest, UniformDecoderCostsLogVPerStep) {
  FilterModel m(small_config(), 2);
  m.params().find("gen.w_out")->fill(0.0);
  const TokenSeq x{kBos, 5, 16, 7, kEos};
  const TokenSeq y{kBos, 5, 7, kEos};
  EXPECT_NEAR(neutralize_nll(m, x, true, y), 3.0 * std::log(24.0), 1e-12);
}

TEST(FilterModelTest, NllIsTheSumOfStepLosses) {
  const FilterModel m(small_config(), 3);
  for (const FilterTriple& t : corpus(40, 6)) {
    const std::vector<Array> probs = neutralize_step_probs(m, t.x, t.e, t.y);
    ASSERT_EQ(probs.size(), t.y.size() - 1);
    long double oracle = 0.0L;
    for (std::size_t s = 0; s < probs.size(); ++s) {
      long double z = 0.0L;
      for (double p : probs[s].values()) z += p;
      EXPECT_NEAR(static_cast<double>(z), 1.0, 1e-12);
      oracle -= std::log(static_cast<long double>(probs[s][t.y[s + 1]]));
    }
    EXPECT_NEAR(neutralize_nll(m, t.x, t.e, t.y), static_cast<double>(oracle), 1e-9);
  }
}

TEST(FilterModelTest, RejectsBadSequences) {
  const FilterModel m(small_config(), 1);
  EXPECT_THROW(classify(m, {kBos, 40, kEos}), ContractViolation);
  EXPECT_THROW(neutralize_nll(m, {kBos, 5, kEos}, false, {5, kEos}), ContractViolation);
  EXPECT_THROW(neutralize_nll(m, {kBos, 5, kEos}, false, TokenSeq(40, 5)), ContractViolation);
  FilterConfig bad = small_config();
  bad.V = 3;
  EXPECT_THROW(FilterModel(bad, 1), ConfigError);
}

TEST(FilterModelTest, JointObjectiveMixesWithAlpha) {
  FilterModel m(small_config(), 4);
  EXPECT_EQ(m.alpha(), 0.5);
  const auto batch = corpus(6, 7);
  double l_cls = 0.0, l_gen = 0.0;
  for (const FilterTriple& t : batch) {
    l_cls += classifier_loss(m, t.x, t.e) / 6.0;
    l_gen += neutralize_nll(m, t.x, t.e, t.y) / 6.0;
  }
  m.params().find("alpha_raw")->fill(0.8);
  const JointLoss j = joint_objective(m, batch);
  const double a = 1.0 / (1.0 + std::exp(-0.8));
  EXPECT_NEAR(j.l_cls, l_cls, 1e-12);
  EXPECT_NEAR(j.l_gen, l_gen, 1e-12);
  EXPECT_NEAR(j.total, a * l_cls + (1 - a) * l_gen, 1e-12);
}

TEST(FilterModelTest, AlphaGradientMatchesClosedFormAndDifferences) {
  FilterModel m(small_config(), 5);
  const auto batch = corpus(4, 8);
  ParamStore grads = m.params().zeros_like();
  const JointLoss j = joint_objective(m, batch, &grads);
  const double closed = 0.25 * (j.l_cls - j.l_gen);
  EXPECT_NEAR(grads.get("alpha_raw")[0], closed, 1e-12);
  const double eps = 1e-5;
  m.params().find("alpha_raw")->fill(eps);
  const double up = joint_objective(m, batch).total;
  m.params().find("alpha_raw")->fill(-eps);
  const double down = joint_objective(m, batch).total;
  EXPECT_NEAR((up - down) / (2 * eps), closed, 1e-6 * std::max(1.0, std::abs(closed)));
}

TEST(FilterModelTest, GradientSuitePasses) {
  for (std::uint64_t seed : {1, 2, 3}) {
    for (const GradSuiteResult& r : run_grad_suite(filter_grad_cases(seed))) {
      EXPECT_TRUE(r.report.passed) << r.name << " seed " << seed << ": " << r.report.summary();
    }
  }
}

TEST(FilterModelTest, JsonRoundTrip) {
  FilterModel m(small_config(), 6);
  m.mark_stage1_done();
  const FilterModel back = filter_model_from_json(filter_model_to_json(m));
  EXPECT_EQ(back.config(), m.config());
  EXPECT_EQ(back.params(), m.params());
  EXPECT_TRUE(back.stage1_done());
  Json broken = filter_model_to_json(m);
  broken["params"].erase("gen.w_rec");
  EXPECT_THROW(filter_model_from_json(broken), SchemaError);
}

TEST(FilterDecode, RestrictedDecodeTruncates) {
  const FilterModel m(small_config(), 7);
  const std::vector<Token> only{5};
  const DecodeResult r = neutralize_decode(m, {kBos, 5, kEos}, true, 6, &only);
  EXPECT_TRUE(r.truncated);
  EXPECT_EQ(r.tokens, (TokenSeq{kBos, 5, 5, 5, 5, 5}));
}

TEST(FilterTraining, StageOneFreezesAdapterAndAlpha) {
  FilterModel m(small_config(), 8);
  const ParamStore before = m.params();
  FilterHyper h;
  h.total_steps = 40;
  train_stage1(m, corpus(200, 9), h);
  EXPECT_TRUE(m.stage1_done());
  for (const std::string& name : FilterModel::adapter_param_names()) {
    EXPECT_EQ(m.params().get(name), before.get(name)) << name;
  }
  EXPECT_EQ(m.params().get("alpha_raw"), before.get("alpha_raw"));
  EXPECT_NE(m.params().get("cls.w1"), before.get("cls.w1"));
  for (const std::string& name : m.params().names()) EXPECT_TRUE(m.params().trainable(name));
}

TEST(FilterTraining, StageTwoRequiresStageOne) {
  FilterModel m(small_config(), 8);
  EXPECT_THROW(train_stage2(m, corpus(20, 9), FilterHyper{}), OrderingError);
}

TEST(FilterTraining, DeterministicAndLogged) {
  const auto data = corpus(300, 10);
  FilterHyper h;
  h.total_steps = 30;
  FilterModel a(small_config(), 11), b(small_config(), 11);
  const FilterHistory ha = train_filter(a, data, h);
  train_filter(b, data, h);
  EXPECT_EQ(a.params(), b.params());
  ASSERT_EQ(ha.records.size(), 30u);
  EXPECT_EQ(ha.records[8].stage, 1);
  EXPECT_EQ(ha.records[9].stage, 2);
  for (const FilterRecord& r : ha.records) {
    EXPECT_GT(r.l_gen, 0.0);
    EXPECT_NEAR(r.total, r.alpha * r.l_cls + (1.0 - r.alpha) * r.l_gen, 1e-12);
  }
  EXPECT_EQ(ha.records[8].alpha, 0.5);
  EXPECT_EQ(ha.to_csv().substr(0, 35), "step,stage,l_cls,l_gen,alpha,total\n");
}

TEST(FilterTraining, BadHyperIsConfigError) {
  FilterHyper h;
  h.stage1_fraction = 1.0;
  EXPECT_THROW(h.validate(), ConfigError);
  h = FilterHyper{};
  h.total_steps = 1;
  EXPECT_THROW(h.validate(), ConfigError);
}

TEST(FilterTraining, OverfitsASinglePair) {
  const FilterTriple t{{kBos, 6, 17, 9, 11, kEos}, {kBos, 6, 9, 11, kEos}, true, Polarity::positive};
  FilterModel m(small_config(), 12);
  FilterHyper h;
  h.total_steps = 400;
  h.batch_size = 1;
  train_filter(m, std::vector<FilterTriple>{t}, h);
  EXPECT_EQ(neutralize_decode(m, t.x, true, 12).tokens, t.y);
}

class TrainedFilter : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    model_ = new FilterModel(FilterConfig{}, 1);
    FilterHyper h;
    h.total_steps = 2000;
    train_filter(*model_, corpus(6000, 20), h);
  }
  static void TearDownTestSuite() {
    delete model_;
    model_ = nullptr;
  }
  static FilterModel* model_;
};

FilterModel* TrainedFilter::model_ = nullptr;

TEST_F(TrainedFilter, ClassifiesHeldOutSamples) {
  std::size_t correct = 0;
  const auto test = corpus(1000, 21);
  for (const FilterTriple& t : test) correct += (classify(*model_, t.x) >= 0.5) == t.e ? 1 : 0;
  EXPECT_GT(static_cast<double>(correct) / 1000.0, 0.95);
}

TEST_F(TrainedFilter, ApplyIsIdempotentAndKeepsNeutralInputs) {
  std::size_t stable = 0;
  const auto test = corpus(500, 22);
  const CorpusSpec spec;
  for (const FilterTriple& t : test) {
    const TokenSeq once = filter_apply(*model_, t.x);
    stable += filter_apply(*model_, once) == once ? 1 : 0;
    for (Token tok : once) EXPECT_FALSE(spec.is_emotion_token(tok));
    if (!t.e) EXPECT_EQ(once, t.x);
  }
  EXPECT_GE(static_cast<double>(stable) / 500.0, 0.95);
  EXPECT_THROW(filter_apply(*model_, test[0].x, 1.0), ConfigError);
}

TEST_F(TrainedFilter, ProbeLosesPolarityButKeepsParity) {
  ProbeOptions o;
  o.n_samples = 1600;
  o.steps = 1000;
  Rng rng(23);
  const ProbeReport r = validation_probe(*model_, CorpusSpec{}, o, rng);
  EXPECT_GT(r.polarity_drop(), 0.3) << r.to_kv();
  EXPECT_LE(r.parity_drop(), 0.05) << r.to_kv();
  EXPECT_EQ(r.parity_test_n, 400u);
}

}  // namespace
}  // namespace lewm::filter
