#pragma once

#include <cstddef>
#include <string_view>

#include "lewm/array.hpp"

namespace lewm {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer_kind(std::string_view name);
std::string_view optimizer_kind_name(OptimizerKind kind);

struct OptimizerHyper {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First-order optimizer over a ParamStore. Frozen entries are never touched.
/// Not thread-safe: callers serialize step().
class Optimizer {
 public:
  explicit Optimizer(OptimizerHyper hyper = {}) : hyper_(hyper) {}

  void step(ParamStore& params, const ParamStore& grads);

  const OptimizerHyper& hyper() const noexcept { return hyper_; }
  void set_lr(double lr) noexcept { hyper_.lr = lr; }
  std::size_t steps() const noexcept { return steps_; }
  const ParamStore& first_moment() const noexcept { return m_; }
  const ParamStore& second_moment() const noexcept { return v_; }

  /// Reinstates state captured from a previous optimizer (checkpoint resume).
  void restore(std::size_t steps, ParamStore m, ParamStore v);

 private:
  OptimizerHyper hyper_;
  std::size_t steps_ = 0;
  ParamStore m_;
  ParamStore v_;
};

}  // namespace lewm
