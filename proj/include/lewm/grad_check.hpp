#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "lewm/array.hpp"
#include "lewm/rng.hpp"

namespace lewm {

/// A scalar-valued map of (parameters, continuous inputs) with an analytic
/// gradient. Discrete inputs (indices, tokens) are captured by the map itself.
class DifferentiableMap {
 public:
  virtual ~DifferentiableMap() = default;

  virtual double value(const ParamStore& params, const ParamStore& inputs) const = 0;

  /// Returns the value and accumulates gradients into `param_grads` and
  /// `input_grads`, which arrive zeroed with the layout of their sources.
  virtual double gradient(const ParamStore& params, const ParamStore& inputs,
                          ParamStore& param_grads, ParamStore& input_grads) const = 0;
};

/// DifferentiableMap built from two callables.
class LambdaMap final : public DifferentiableMap {
 public:
  using ValueFn = std::function<double(const ParamStore&, const ParamStore&)>;
  using GradientFn =
      std::function<double(const ParamStore&, const ParamStore&, ParamStore&, ParamStore&)>;

  LambdaMap(ValueFn value, GradientFn gradient)
      : value_(std::move(value)), gradient_(std::move(gradient)) {}

  double value(const ParamStore& params, const ParamStore& inputs) const override {
    return value_(params, inputs);
  }
  double gradient(const ParamStore& params, const ParamStore& inputs, ParamStore& param_grads,
                  ParamStore& input_grads) const override {
    return gradient_(params, inputs, param_grads, input_grads);
  }

 private:
  ValueFn value_;
  GradientFn gradient_;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor),
  /// so that near-zero gradients are judged on an absolute scale.
  double denom_floor = 1e-5;
  bool check_inputs = true;
};

struct GradCheckEntry {
  std::string name;
  bool is_input = false;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::vector<GradCheckEntry> entries;
  /// Names the offending entry when the check fails.
  std::string failure;

  std::string summary() const;
};

/// Central-difference check of every trainable parameter entry and (optionally)
/// every input entry.
GradCheckReport grad_check(const DifferentiableMap& map, const ParamStore& params,
                           const ParamStore& inputs, const GradCheckOptions& options = {});

/// Fixed random unit-norm direction, used to reduce a vector output to a scalar.
Array random_projection(std::size_t n, Rng& rng);

}  // namespace lewm
