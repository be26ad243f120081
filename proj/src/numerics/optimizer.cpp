#include "lewm/optimizer.hpp"

#include <cmath>
#include <string>

#include "lewm/errors.hpp"

namespace lewm {

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

std::string_view optimizer_kind_name(OptimizerKind kind) {
  return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

void Optimizer::step(ParamStore& params, const ParamStore& grads) {
  for (const auto& [name, entry] : params.entries()) {
    if (!entry.trainable) continue;
    if (!grads.contains(name)) {
      throw ContractViolation("optimizer_step: missing gradient for trainable entry '" + name + "'");
    }
    if (grads.get(name).shape() != entry.value.shape()) {
      throw ContractViolation("optimizer_step: gradient shape " +
                              shape_string(grads.get(name).shape()) + " for '" + name + "' " +
                              shape_string(entry.value.shape()));
    }
  }
  ++steps_;
  if (hyper_.kind == OptimizerKind::adam && m_.size() == 0) {
    m_ = params.zeros_like();
    v_ = params.zeros_like();
  }
  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(hyper_.beta1, t);
  const double correction2 = 1.0 - std::pow(hyper_.beta2, t);
  for (const std::string& name : params.names()) {
    if (!params.trainable(name)) continue;
    std::span<double> w = params.values(name);
    std::span<const double> g = grads.get(name).values();
    if (hyper_.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= hyper_.lr * g[i];
      continue;
    }
    std::span<double> m = m_.values(name);
    std::span<double> v = v_.values(name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = hyper_.beta1 * m[i] + (1.0 - hyper_.beta1) * g[i];
      v[i] = hyper_.beta2 * v[i] + (1.0 - hyper_.beta2) * g[i] * g[i];
      const double mhat = m[i] / correction1;
      const double vhat = v[i] / correction2;
      w[i] -= hyper_.lr * mhat / (std::sqrt(vhat) + hyper_.epsilon);
    }
  }
}

void Optimizer::restore(std::size_t steps, ParamStore m, ParamStore v) {
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace lewm
