#include "lewm/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lewm/ops.hpp"

namespace lewm {

namespace {

void check_store(const DifferentiableMap& map, ParamStore& params, ParamStore& inputs,
                 bool perturb_inputs, const ParamStore& analytic, const GradCheckOptions& opt,
                 GradCheckReport& report) {
  ParamStore& target = perturb_inputs ? inputs : params;
  for (const std::string& name : target.names()) {
    if (!perturb_inputs && !target.trainable(name)) continue;
    GradCheckEntry entry;
    entry.name = name;
    entry.is_input = perturb_inputs;
    std::span<double> values = target.values(name);
    const Array& grad = analytic.get(name);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + opt.eps;
      const double up = map.value(params, inputs);
      values[i] = saved - opt.eps;
      const double down = map.value(params, inputs);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.eps);
      const double a = grad[i];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        report.passed = false;
        report.failure = "non-finite gradient in '" + name + "' at index " + std::to_string(i);
        entry.max_rel_error = INFINITY;
        entry.worst_index = i;
        report.entries.push_back(entry);
        return;
      }
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.denom_floor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > entry.max_rel_error || i == 0) {
        entry.max_rel_error = rel;
        entry.worst_index = i;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    if (entry.max_rel_error >= opt.tol && report.passed) {
      report.passed = false;
      std::ostringstream os;
      os << "gradient mismatch in '" << name << "' at index " << entry.worst_index
         << ": analytic " << entry.analytic << " vs numeric " << entry.numeric
         << " (rel " << entry.max_rel_error << ")";
      report.failure = os.str();
    }
    report.entries.push_back(entry);
  }
}

}  // namespace

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " max_rel_error=" << max_rel_error;
  if (!failure.empty()) os << " (" << failure << ")";
  return os.str();
}

GradCheckReport grad_check(const DifferentiableMap& map, const ParamStore& params,
                           const ParamStore& inputs, const GradCheckOptions& options) {
  GradCheckReport report;
  ParamStore p = params;
  ParamStore x = inputs;
  ParamStore pg = p.zeros_like();
  ParamStore xg = x.zeros_like();
  const double v = map.gradient(p, x, pg, xg);
  if (!std::isfinite(v)) {
    report.passed = false;
    report.failure = "non-finite map value";
    return report;
  }
  check_store(map, p, x, false, pg, options, report);
  if (report.passed && options.check_inputs) check_store(map, p, x, true, xg, options, report);
  return report;
}

Array random_projection(std::size_t n, Rng& rng) {
  Array r({n});
  for (double& v : r.values()) v = rng.normal();
  const double norm = ops::l2_norm(r);
  for (double& v : r.values()) v /= norm;
  return r;
}

}  // namespace lewm
