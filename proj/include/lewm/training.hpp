#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lewm/ewh.hpp"
#include "lewm/model.hpp"
#include "lewm/optimizer.hpp"

namespace lewm::training {

struct TrainHyper {
  double lambda = 1.0;  // weight of the emotion loss
  double beta = 0.1;    // weight of the consistency penalty
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::size_t batch_size = 64;
  std::size_t max_steps = 10000;
  std::uint64_t seed = 0;
  std::size_t patience = 10;  // in validation evaluations
  std::size_t eval_every = 100;
  /// Cosine decay of the learning rate from lr to 0 over max_steps.
  bool cosine_decay = true;
  /// Treat the predicted emotion as a constant inside the consistency term.
  bool stop_gradient_prediction = false;

  void validate() const;
  bool operator==(const TrainHyper&) const = default;
};

Json hyper_to_json(const TrainHyper& h);
TrainHyper hyper_from_json(const Json& j);

struct LossBreakdown {
  double l_state = 0.0;
  double l_emotion = 0.0;
  double c = 0.0;
  double total = 0.0;
};

double loss_state(const ewh::ObservableState& truth, const ewh::ObservableState& pred);
double loss_emotion(const ewh::EmotionState& truth, const ewh::EmotionState& pred);

/// || T_S(h, E_pred) - T_S(h, E_true) ||_2, both emotions passed through the
/// model's feed mode.
double consistency_penalty(const core::LewmModel& model, const Array& h,
                           const ewh::EmotionState& e_pred, const ewh::EmotionState& e_true);

/// Batch mean of L_state + lambda L_emotion + beta C. When `grads` is non-null
/// (layout of model.params(), zeroed), accumulates the analytic gradient.
LossBreakdown total_objective(const core::LewmModel& model, std::span<const ewh::EwhSample> batch,
                              const TrainHyper& hyper, ParamStore* grads = nullptr);

struct HistoryRecord {
  std::size_t step = 0;
  double l_state = 0.0;
  double l_emotion = 0.0;
  double c = 0.0;
  double total = 0.0;
  double wall_seconds = 0.0;
};

struct ValidationRecord {
  std::size_t step = 0;
  double total = 0.0;
};

struct TrainHistory {
  std::uint64_t seed = 0;
  std::vector<HistoryRecord> records;
  std::vector<ValidationRecord> validation;
  std::size_t best_step = 0;
  double best_val = std::numeric_limits<double>::infinity();
  bool early_stopped = false;

  /// "step,l_state,l_emotion,c,total" rows; wall-clock is not exported.
  std::string to_csv() const;
};

/// Minibatch trainer with early stopping on the validation objective. Its full
/// state can be snapshotted and restored for bit-exact resumption.
class Trainer {
 public:
  Trainer(core::LewmModel model, const ewh::Dataset& train, const ewh::Dataset& val,
          const TrainHyper& hyper);

  /// Trains until max_steps, early stop, or until `stop_at_step` steps have
  /// been taken in total. Returns true when training is finished.
  /// `on_eval` runs after every validation evaluation.
  bool run(std::size_t stop_at_step = std::numeric_limits<std::size_t>::max(),
           const std::function<void(const Trainer&)>& on_eval = {});

  bool finished() const noexcept { return finished_; }
  std::size_t step() const noexcept { return step_; }
  const TrainHistory& history() const noexcept { return history_; }
  const core::LewmModel& current_model() const noexcept { return model_; }
  /// Model holding the best-validation parameters.
  core::LewmModel best_model() const;

  Json snapshot() const;
  static Trainer restore(const Json& snapshot, const ewh::Dataset& train, const ewh::Dataset& val,
                         const TrainHyper& hyper);

 private:
  std::vector<ewh::EwhSample> next_batch();
  void evaluate_validation();

  core::LewmModel model_;
  const ewh::Dataset* train_;
  const ewh::Dataset* val_;
  TrainHyper hyper_;
  Optimizer optimizer_;
  Rng rng_;
  std::size_t step_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  ParamStore best_params_;
  std::size_t evals_since_best_ = 0;
  bool finished_ = false;
  TrainHistory history_;
};

struct TrainResult {
  core::LewmModel model;
  TrainHistory history;
};

TrainResult train_lewm(core::LewmModel model, const ewh::Dataset& train, const ewh::Dataset& val,
                       const TrainHyper& hyper);

/// Same architecture with the emotion pathway blinded and frozen.
core::LewmModel build_blind_baseline(const core::ModelConfig& config, std::uint64_t init_seed);

struct EvalMetrics {
  std::size_t n = 0;
  double state_mse = 0.0;
  double emotion_accuracy = 0.0;
  double emotion_nll = 0.0;
  double oracle_mse = 0.0;
  /// state_mse - oracle_mse
  double oracle_gap = 0.0;
  /// Three standard errors of the paired per-sample squared-error difference.
  double noise_bound = 0.0;

  /// Flat "key = value" lines.
  std::string to_kv() const;
};

struct PointPrediction {
  Array state;          // concatenated next-state prediction
  Array emotion_probs;  // predicted next-emotion distribution
};

using PredictFn = std::function<PointPrediction(const ewh::EwhSample&)>;

PredictFn model_predictor(const core::LewmModel& model);
/// Bayes oracle: exact posterior row and expected next state.
PredictFn oracle_predictor(const ewh::EnvSpec& env);

EvalMetrics evaluate(const PredictFn& predictor, const ewh::Dataset& test,
                     const ewh::EnvSpec& env);
EvalMetrics evaluate(const core::LewmModel& model, const ewh::Dataset& test,
                     const ewh::EnvSpec& env);

/// Mean over samples of ||T_S(h, E + delta) - T_S(h, E)|| where E is the
/// model's predicted next emotion and delta is a fixed zero-sum perturbation of
/// norm `delta_norm`.
double emotion_sensitivity(const core::LewmModel& model, const ewh::Dataset& data,
                           double delta_norm = 0.05);

}  // namespace lewm::training
