#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "lewm/grad_check.hpp"

namespace lewm {

/// A differentiable map together with the point at which to check it.
struct GradCase {
  std::string name;
  std::shared_ptr<const DifferentiableMap> map;
  ParamStore params;
  ParamStore inputs;
};

struct GradSuiteResult {
  std::string name;
  GradCheckReport report;
};

std::vector<GradSuiteResult> run_grad_suite(const std::vector<GradCase>& cases,
                                            const GradCheckOptions& options = {});

namespace training {

/// Every differentiable building block of the world model and its training
/// objective, instantiated at a random point drawn from `seed`: elementwise
/// ops, the six model components, and total_objective on a 2-sample batch in
/// several configurations.
std::vector<GradCase> world_model_grad_cases(std::uint64_t seed);

}  // namespace training
}  // namespace lewm
