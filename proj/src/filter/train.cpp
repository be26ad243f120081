#include <cmath>
#include <sstream>

#include "lewm/errors.hpp"
#include "lewm/filter.hpp"
#include "lewm/optimizer.hpp"

namespace lewm::filter {

namespace {

std::vector<FilterTriple> draw_batch(std::span<const FilterTriple> corpus, std::size_t batch_size, Rng& rng) {
  std::vector<FilterTriple> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(corpus[rng.below(corpus.size())]);
  return batch;
}

void check_finite(double v, std::size_t step) {
  if (!std::isfinite(v)) throw DivergenceError("filter training diverged", step);
}

void check_corpus(const FilterModel& model, std::span<const FilterTriple> corpus) {
  if (corpus.empty()) throw ContractViolation("filter training: empty corpus");
  for (const FilterTriple& t : corpus) {
    if (t.y.size() > model.config().max_len) {
      throw ConfigError("filter training: sequence length " + std::to_string(t.y.size()) + " exceeds max_len " +
                        std::to_string(model.config().max_len));
    }
  }
}

}  // namespace

std::size_t FilterHyper::stage1_steps() const {
  return static_cast<std::size_t>(std::llround(stage1_fraction * static_cast<double>(total_steps)));
}

void FilterHyper::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("filter: lr must be positive");
  if (batch_size == 0) throw ConfigError("filter: batch_size must be >= 1");
  if (total_steps == 0) throw ConfigError("filter: total_steps must be >= 1");
  if (!(stage1_fraction > 0.0 && stage1_fraction < 1.0)) {
    throw ConfigError("filter: stage1_fraction must lie strictly between 0 and 1");
  }
  if (stage1_steps() == 0 || stage1_steps() == total_steps) {
    throw ConfigError("filter: both stages need at least one step");
  }
}

std::string FilterHistory::to_csv() const {
  std::ostringstream out;
  out << "step,stage,l_cls,l_gen,alpha,total\n";
  for (const FilterRecord& r : records) {
    out << r.step << ',' << r.stage << ',' << format_double(r.l_cls) << ',' << format_double(r.l_gen) << ','
        << format_double(r.alpha) << ',' << format_double(r.total) << '\n';
  }
  return out.str();
}

FilterHistory train_stage1(FilterModel& model, std::span<const FilterTriple> corpus, const FilterHyper& hyper) {
  hyper.validate();
  check_corpus(model, corpus);
  ParamStore& params = model.params();
  std::vector<std::string> frozen = FilterModel::adapter_param_names();
  frozen.push_back("alpha_raw");
  for (const std::string& name : frozen) params.set_trainable(name, false);

  Rng rng(mix_seed(hyper.seed, 1));
  Optimizer opt(OptimizerHyper{.kind = OptimizerKind::adam, .lr = hyper.lr});
  FilterHistory history;
  const std::size_t steps = hyper.stage1_steps();
  for (std::size_t step = 0; step < steps; ++step) {
    const std::vector<FilterTriple> batch = draw_batch(corpus, hyper.batch_size, rng);
    ParamStore grads = params.zeros_like();
    double loss = 0.0;
    for (const FilterTriple& t : batch) loss += classifier_loss(model, t.x, t.e, &grads);
    const double scale = 1.0 / static_cast<double>(batch.size());
    loss *= scale;
    for (const std::string& name : grads.names()) {
      for (double& v : grads.values(name)) v *= scale;
    }
    check_finite(loss, step);
    double l_gen = 0.0;
    for (const FilterTriple& t : batch) l_gen += neutralize_nll(model, t.x, t.e, t.y);
    l_gen *= scale;
    const double alpha = model.alpha();
    history.records.push_back({step, 1, loss, l_gen, alpha, alpha * loss + (1.0 - alpha) * l_gen});
    opt.step(params, grads);
  }
  for (const std::string& name : frozen) params.set_trainable(name, true);
  model.mark_stage1_done();
  return history;
}

FilterHistory train_stage2(FilterModel& model, std::span<const FilterTriple> corpus, const FilterHyper& hyper) {
  if (!model.stage1_done()) throw OrderingError("filter stage 2 requires a completed stage 1");
  hyper.validate();
  check_corpus(model, corpus);
  ParamStore& params = model.params();
  Rng rng(mix_seed(hyper.seed, 2));
  Optimizer opt(OptimizerHyper{.kind = OptimizerKind::adam, .lr = hyper.lr});
  FilterHistory history;
  const std::size_t first = hyper.stage1_steps();
  for (std::size_t step = first; step < hyper.total_steps; ++step) {
    const std::vector<FilterTriple> batch = draw_batch(corpus, hyper.batch_size, rng);
    ParamStore grads = params.zeros_like();
    const JointLoss loss = joint_objective(model, batch, &grads);
    check_finite(loss.total, step);
    opt.step(params, grads);
    history.records.push_back({step, 2, loss.l_cls, loss.l_gen, loss.alpha, loss.total});
  }
  return history;
}

FilterHistory train_filter(FilterModel& model, std::span<const FilterTriple> corpus, const FilterHyper& hyper) {
  FilterHistory history = train_stage1(model, corpus, hyper);
  FilterHistory second = train_stage2(model, corpus, hyper);
  history.records.insert(history.records.end(), second.records.begin(), second.records.end());
  return history;
}

}  // namespace lewm::filter
