#include <gtest/gtest.h>

#include <cmath>

#include "lewm/errors.hpp"
#include "lewm/grad_check.hpp"
#include "lewm/layers.hpp"
#include "lewm/ops.hpp"
#include "lewm/optimizer.hpp"
#include "lewm/rng.hpp"

namespace lewm {
namespace {

Array random_array(Shape shape, Rng& rng) {
  Array a(std::move(shape));
  for (double& v : a.values()) v = rng.normal();
  return a;
}

// Scalar map r . affine(x, W, b) with W, b as parameters and x as input.
LambdaMap affine_map(const Array& proj) {
  return LambdaMap(
      [proj](const ParamStore& p, const ParamStore& in) {
        const Array y = ops::affine(in.get("x"), p.get("W"), p.get("b"));
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += proj[i] * y[i];
        return s;
      },
      [proj](const ParamStore& p, const ParamStore& in, ParamStore& pg, ParamStore& ig) {
        const Array y = ops::affine(in.get("x"), p.get("W"), p.get("b"));
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += proj[i] * y[i];
        ops::affine_backward(in.get("x"), p.get("W"), proj, ig.find("x"), pg.find("W"), pg.find("b"));
        return s;
      });
}

TEST(Affine, IdentityAndHandArithmetic) {
  const Array eye = Array::matrix(2, 2, {1, 0, 0, 1});
  EXPECT_EQ(ops::affine(Array::vector({1, 2}), eye, Array::vector({0, 0})), Array::vector({1, 2}));
  const Array w = Array::matrix(2, 2, {1, 1, 2, 2});
  EXPECT_EQ(ops::affine(Array::vector({1, 1}), w, Array::vector({1, 0})), Array::vector({3, 4}));
}

TEST(Affine, ShapeMismatchNamesBothShapes) {
  try {
    ops::affine(Array::vector({1, 2, 3}), Array({2, 2}), Array({2}));
    FAIL() << "expected a contract violation";
  } catch (const ContractViolation& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[3]"), std::string::npos);
    EXPECT_NE(msg.find("[2x2]"), std::string::npos);
  }
}

TEST(Affine, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    ParamStore params;
    params.add("W", random_array({3, 4}, rng));
    params.add("b", random_array({3}, rng));
    ParamStore inputs;
    inputs.add("x", random_array({4}, rng));
    const GradCheckReport r = grad_check(affine_map(random_projection(3, rng)), params, inputs);
    EXPECT_TRUE(r.passed) << r.summary();
  }
}

TEST(Nonlinearity, Definitions) {
  EXPECT_EQ(ops::activate(Array::vector({0, 0}), ops::Activation::tanh), Array::vector({0, 0}));
  EXPECT_EQ(ops::activate(Array::vector({-1, 2}), ops::Activation::relu), Array::vector({0, 2}));
  EXPECT_THROW(ops::parse_activation("sigmoidish"), ConfigError);
}

TEST(Nonlinearity, GradientMatchesFiniteDifferences) {
  for (ops::Activation kind : {ops::Activation::tanh, ops::Activation::relu}) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      Rng rng(seed);
      const Array proj = random_projection(5, rng);
      LambdaMap map(
          [&](const ParamStore&, const ParamStore& in) {
            const Array y = ops::activate(in.get("x"), kind);
            double s = 0.0;
            for (std::size_t i = 0; i < 5; ++i) s += proj[i] * y[i];
            return s;
          },
          [&](const ParamStore&, const ParamStore& in, ParamStore&, ParamStore& ig) {
            const Array& x = in.get("x");
            const Array y = ops::activate(x, kind);
            ig.find("x")->add_scaled(ops::activate_backward(x, y, proj, kind));
            double s = 0.0;
            for (std::size_t i = 0; i < 5; ++i) s += proj[i] * y[i];
            return s;
          });
      ParamStore inputs;
      inputs.add("x", random_array({5}, rng));
      const GradCheckReport r = grad_check(map, ParamStore{}, inputs);
      EXPECT_TRUE(r.passed) << ops::activation_name(kind) << " seed " << seed << ": " << r.summary();
    }
  }
}

TEST(Softmax, SymmetryAndStability) {
  const Array u = ops::softmax(Array::vector({0, 0, 0}));
  for (double v : u.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  const Array big = ops::softmax(Array::vector({1000, 0}));
  EXPECT_TRUE(big.all_finite());
  EXPECT_NEAR(big[0], 1.0, 1e-15);
  EXPECT_NEAR(big[1], 0.0, 1e-15);
  EXPECT_THROW(ops::softmax(Array()), ContractViolation);
}

TEST(Softmax, AlwaysOnSimplex) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    Array x({1 + rng.below(12)});
    for (double& v : x.values()) v = 20.0 * rng.normal();
    const Array y = ops::softmax(x);
    double total = 0.0;
    for (double v : y.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(CrossEntropy, UniformPerfectAndSummationOracle) {
  const Array uniform({4}, 0.25);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(ops::cross_entropy(uniform, k), 1.386294, 1e-6);
  EXPECT_EQ(ops::cross_entropy(ops::one_hot(2, 4), ops::one_hot(2, 4)), 0.0);
  EXPECT_EQ(ops::cross_entropy(ops::one_hot(2, 4), std::size_t{2}), 0.0);

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Array logits = random_array({6}, rng);
    Array target_logits = random_array({6}, rng);
    const Array pred = ops::softmax(logits);
    const Array target = ops::softmax(target_logits);
    long double oracle = 0.0L;
    for (std::size_t k = 0; k < 6; ++k) {
      oracle -= static_cast<long double>(target[k]) * std::log(static_cast<long double>(pred[k]));
    }
    const double ce = ops::cross_entropy(pred, target);
    EXPECT_NEAR(ce, static_cast<double>(oracle), 1e-9);
    EXPECT_GE(ce, 0.0);
  }
  EXPECT_THROW(ops::cross_entropy(uniform, Array({3}, 1.0 / 3)), ContractViolation);
}

TEST(CrossEntropy, ClampKeepsLossFinite) {
  const Array pred = Array::vector({1.0, 0.0});
  EXPECT_NEAR(ops::cross_entropy(pred, std::size_t{1}), -std::log(1e-12), 1e-9);
}

TEST(Mse, ValuesAndGradient) {
  const Array x = Array::vector({1.5, -2.0});
  EXPECT_EQ(ops::mse(x, x), 0.0);
  EXPECT_EQ(ops::mse(Array::vector({0, 0}), Array::vector({1, 1})), 1.0);
  EXPECT_THROW(ops::mse(x, Array::vector({1, 2, 3})), ContractViolation);

  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const Array target = random_array({7}, rng);
    LambdaMap map(
        [&](const ParamStore&, const ParamStore& in) { return ops::mse(in.get("p"), target); },
        [&](const ParamStore&, const ParamStore& in, ParamStore&, ParamStore& ig) {
          ig.find("p")->add_scaled(ops::mse_grad(in.get("p"), target));
          return ops::mse(in.get("p"), target);
        });
    ParamStore inputs;
    inputs.add("p", random_array({7}, rng));
    EXPECT_TRUE(grad_check(map, ParamStore{}, inputs).passed);
  }
}

TEST(GradCheck, AffineTanhCompositePasses) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    FeedForward net("net");
    ParamStore params;
    net.add_params(params, 4, 6, 3, rng);
    for (double& v : params.values("net.b1")) v = 0.1 * rng.normal();
    const Array proj = random_projection(3, rng);
    LambdaMap map(
        [&](const ParamStore& p, const ParamStore& in) {
          const Array y = net.forward(p, in.get("x"));
          double s = 0;
          for (std::size_t i = 0; i < 3; ++i) s += proj[i] * y[i];
          return s;
        },
        [&](const ParamStore& p, const ParamStore& in, ParamStore& pg, ParamStore& ig) {
          FeedForward::Trace tr;
          const Array y = net.forward(p, in.get("x"), &tr);
          ig.find("x")->add_scaled(net.backward(p, tr, proj, &pg));
          double s = 0;
          for (std::size_t i = 0; i < 3; ++i) s += proj[i] * y[i];
          return s;
        });
    ParamStore inputs;
    inputs.add("x", random_array({4}, rng));
    const GradCheckReport r = grad_check(map, params, inputs);
    EXPECT_TRUE(r.passed) << r.summary();
  }
}

TEST(GradCheck, CorruptedGradientFailsAndNamesEntry) {
  Rng rng(11);
  ParamStore params;
  params.add("W", random_array({3, 4}, rng));
  params.add("b", random_array({3}, rng));
  ParamStore inputs;
  inputs.add("x", random_array({4}, rng));
  const Array proj = random_projection(3, rng);
  LambdaMap good = affine_map(proj);
  LambdaMap corrupted(
      [&](const ParamStore& p, const ParamStore& in) { return good.value(p, in); },
      [&](const ParamStore& p, const ParamStore& in, ParamStore& pg, ParamStore& ig) {
        const double v = good.gradient(p, in, pg, ig);
        pg.values("b")[1] += 0.5;
        return v;
      });
  const GradCheckReport r = grad_check(corrupted, params, inputs);
  EXPECT_FALSE(r.passed);
  EXPECT_NE(r.failure.find("'b'"), std::string::npos) << r.failure;
}

TEST(GradCheck, ZeroParameterMapPassesVacuously) {
  LambdaMap constant([](const ParamStore&, const ParamStore&) { return 3.0; },
                     [](const ParamStore&, const ParamStore&, ParamStore&, ParamStore&) { return 3.0; });
  const GradCheckReport r = grad_check(constant, ParamStore{}, ParamStore{});
  EXPECT_TRUE(r.passed);
  EXPECT_TRUE(r.entries.empty());
}

TEST(GradCheck, NonFiniteValuesAreReported) {
  ParamStore params;
  params.add("w", Array::vector({-1.0}));
  LambdaMap bad([](const ParamStore& p, const ParamStore&) { return std::sqrt(p.get("w")[0]); },
                [](const ParamStore& p, const ParamStore&, ParamStore&, ParamStore&) {
                  return std::sqrt(p.get("w")[0]);
                });
  const GradCheckReport r = grad_check(bad, params, ParamStore{});
  EXPECT_FALSE(r.passed);
  EXPECT_FALSE(r.failure.empty());
}

TEST(Optimizer, SgdStepDefinition) {
  ParamStore params;
  params.add("w", Array::vector({1.0}));
  ParamStore grads = params.zeros_like();
  grads.values("w")[0] = 2.0;
  Optimizer opt({OptimizerKind::sgd, 0.1});
  opt.step(params, grads);
  EXPECT_DOUBLE_EQ(params.get("w")[0], 0.8);
}

TEST(Optimizer, ZeroGradientIsFixedPoint) {
  for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    ParamStore params;
    params.add("w", Array::vector({1.25, -3.0}));
    const ParamStore before = params;
    Optimizer opt({kind, 0.1});
    opt.step(params, params.zeros_like());
    EXPECT_EQ(params, before);
  }
}

TEST(Optimizer, QuadraticBowlConverges) {
  ParamStore params;
  params.add("w", Array::vector({0.0}));
  Optimizer opt({OptimizerKind::sgd, 0.1});
  for (int i = 0; i < 200; ++i) {
    ParamStore g = params.zeros_like();
    g.values("w")[0] = 2.0 * (params.get("w")[0] - 3.0);
    opt.step(params, g);
  }
  EXPECT_LT(std::abs(params.get("w")[0] - 3.0), 1e-3);
}

TEST(Optimizer, FrozenEntriesUntouchedAndMissingGradientRejected) {
  ParamStore params;
  params.add("w", Array::vector({1.0}));
  params.add("frozen", Array::vector({5.0}), false);
  ParamStore grads;
  grads.add("w", Array::vector({1.0}));
  Optimizer opt({OptimizerKind::adam, 0.1});
  opt.step(params, grads);
  EXPECT_EQ(params.get("frozen")[0], 5.0);
  EXPECT_NE(params.get("w")[0], 1.0);

  ParamStore missing;
  EXPECT_THROW(opt.step(params, missing), ContractViolation);
}

TEST(Rng, SameSeedSameSequence) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const double x = a.normal();
    EXPECT_EQ(x, b.normal());
    differs |= x != c.normal();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, StateRoundTrip) {
  Rng a(9);
  for (int i = 0; i < 7; ++i) a.normal();
  Rng b(0);
  b.restore(a.state());
  EXPECT_TRUE(a == b);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(a.normal(), b.normal());
}

TEST(Rng, FirstDrawsArePinned) {
  // mt19937_64 with the default seed yields 14514284786278117030 on its
  // 1st call for seed 5489; the wrapper must not alter raw bits.
  Rng rng(5489);
  EXPECT_EQ(rng.next_u64(), 14514284786278117030ULL);
}

TEST(Rng, BelowIsInRange) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(rng.below(7), 7u);
  EXPECT_THROW(rng.below(0), ContractViolation);
}

TEST(ParamStore, NamesUniqueAndShapesImmutable) {
  ParamStore p;
  p.add("a", Array({2}));
  EXPECT_THROW(p.add("a", Array({2})), ContractViolation);
  EXPECT_THROW(p.assign("a", Array({3})), ContractViolation);
  EXPECT_EQ(p.scalar_count(), 2u);
}

}  // namespace
}  // namespace lewm
