#include "lewm/lewm.h"

#include <cstring>
#include <iostream>
#include <new>
#include <string>

#include "lewm/errors.hpp"
#include "lewm/filter.hpp"
#include "lewm/harness.hpp"

struct lewm_experiment {
  lewm::harness::ExperimentConfig config;
  bool quiet = false;
  std::size_t interrupt_at = 0;
};

struct lewm_model {
  lewm::core::LewmModel model;
};

struct lewm_filter {
  lewm::filter::FilterModel model;
};

namespace {

thread_local std::string g_last_error;

lewm_status fail(lewm_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename F>
lewm_status guarded(F&& body) {
  try {
    g_last_error.clear();
    body();
    return LEWM_OK;
  } catch (const lewm::DivergenceError& e) {
    return fail(LEWM_ERR_DIVERGENCE, e.what());
  } catch (const lewm::ConfigError& e) {
    return fail(LEWM_ERR_CONFIG, e.what());
  } catch (const lewm::SchemaError& e) {
    return fail(LEWM_ERR_CONFIG, e.what());
  } catch (const lewm::OrderingError& e) {
    return fail(LEWM_ERR_CONFIG, e.what());
  } catch (const lewm::IoError& e) {
    return fail(LEWM_ERR_IO, e.what());
  } catch (const lewm::ParseError& e) {
    return fail(LEWM_ERR_IO, e.what());
  } catch (const lewm::VerificationError& e) {
    return fail(LEWM_ERR_IO, e.what());
  } catch (const lewm::ContractViolation& e) {
    return fail(LEWM_ERR_ARGUMENT, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(LEWM_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(LEWM_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(LEWM_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(LEWM_ERR_INTERNAL, "unknown error");
  }
}

lewm::harness::Context context(const lewm_experiment* exp) {
  lewm::harness::Context ctx{exp->config, exp->quiet ? nullptr : &std::cout, std::nullopt};
  if (exp->interrupt_at) ctx.interrupt_at = exp->interrupt_at;
  return ctx;
}

#define LEWM_REQUIRE(cond, what) \
  if (!(cond)) return fail(LEWM_ERR_ARGUMENT, what)

}  // namespace

extern "C" {

const char* lewm_version(void) {
  static const std::string v(lewm::harness::kToolVersion);
  return v.c_str();
}

const char* lewm_last_error(void) { return g_last_error.c_str(); }

lewm_status lewm_experiment_load(const char* config_path, lewm_experiment** out) {
  LEWM_REQUIRE(config_path && out, "lewm_experiment_load: null argument");
  *out = nullptr;
  return guarded([&] { *out = new lewm_experiment{lewm::harness::load_config(config_path)}; });
}

lewm_status lewm_experiment_parse(const char* config_text, lewm_experiment** out) {
  LEWM_REQUIRE(config_text && out, "lewm_experiment_parse: null argument");
  *out = nullptr;
  return guarded([&] { *out = new lewm_experiment{lewm::harness::parse_config(config_text)}; });
}

void lewm_experiment_free(lewm_experiment* exp) { delete exp; }

lewm_status lewm_experiment_set_out_dir(lewm_experiment* exp, const char* dir) {
  LEWM_REQUIRE(exp && dir && *dir, "lewm_experiment_set_out_dir: null or empty argument");
  exp->config.run.out_dir = dir;
  return LEWM_OK;
}

lewm_status lewm_experiment_override_seed(lewm_experiment* exp, uint64_t seed) {
  LEWM_REQUIRE(exp, "lewm_experiment_override_seed: null handle");
  exp->config.run.seeds = {seed};
  return LEWM_OK;
}

lewm_status lewm_experiment_set_quiet(lewm_experiment* exp, int quiet) {
  LEWM_REQUIRE(exp, "lewm_experiment_set_quiet: null handle");
  exp->quiet = quiet != 0;
  return LEWM_OK;
}

lewm_status lewm_experiment_set_interrupt(lewm_experiment* exp, size_t steps) {
  LEWM_REQUIRE(exp, "lewm_experiment_set_interrupt: null handle");
  exp->interrupt_at = steps;
  return LEWM_OK;
}

lewm_status lewm_experiment_out_dir(const lewm_experiment* exp, char* buf, size_t cap) {
  LEWM_REQUIRE(exp && buf, "lewm_experiment_out_dir: null argument");
  const std::string dir = exp->config.run.out_dir.string();
  LEWM_REQUIRE(dir.size() < cap, "lewm_experiment_out_dir: buffer too small");
  std::memcpy(buf, dir.c_str(), dir.size() + 1);
  return LEWM_OK;
}

lewm_status lewm_generate(lewm_experiment* exp) {
  LEWM_REQUIRE(exp, "lewm_generate: null handle");
  return guarded([&] { lewm::harness::cmd_generate(context(exp)); });
}

lewm_status lewm_train(lewm_experiment* exp) {
  LEWM_REQUIRE(exp, "lewm_train: null handle");
  return guarded([&] { lewm::harness::cmd_train(context(exp)); });
}

lewm_status lewm_eval(lewm_experiment* exp, const char* checkpoint) {
  LEWM_REQUIRE(exp, "lewm_eval: null handle");
  return guarded([&] {
    lewm::harness::cmd_eval(context(exp),
                            checkpoint ? std::optional<std::filesystem::path>(checkpoint) : std::nullopt);
  });
}

lewm_status lewm_ablate(lewm_experiment* exp) {
  LEWM_REQUIRE(exp, "lewm_ablate: null handle");
  return guarded([&] { lewm::harness::cmd_ablate(context(exp)); });
}

lewm_status lewm_filter_run(lewm_experiment* exp) {
  LEWM_REQUIRE(exp, "lewm_filter_run: null handle");
  return guarded([&] { lewm::harness::cmd_filter(context(exp)); });
}

lewm_status lewm_verify(const char* out_dir, int quiet, size_t* checked, size_t* drift) {
  LEWM_REQUIRE(out_dir, "lewm_verify: null directory");
  return guarded([&] {
    const lewm::harness::VerifyReport r = lewm::harness::cmd_verify(out_dir);
    if (!quiet) {
      for (const std::string& line : r.drift) std::cout << line << '\n';
      std::cout << "verify: " << r.checked << " artifacts, " << r.drift.size() << " drifted\n";
    }
    if (checked) *checked = r.checked;
    if (drift) *drift = r.drift.size();
  });
}

lewm_status lewm_model_load(const char* checkpoint_path, lewm_model** out) {
  LEWM_REQUIRE(checkpoint_path && out, "lewm_model_load: null argument");
  *out = nullptr;
  return guarded([&] { *out = new lewm_model{lewm::core::load_checkpoint(checkpoint_path)}; });
}

void lewm_model_free(lewm_model* model) { delete model; }

lewm_status lewm_model_dims(const lewm_model* model, size_t* d_s, size_t* K, size_t* M) {
  LEWM_REQUIRE(model, "lewm_model_dims: null handle");
  const lewm::core::ModelConfig& c = model->model.config();
  if (d_s) *d_s = c.d_s();
  if (K) *K = c.K;
  if (M) *M = c.M;
  return LEWM_OK;
}

lewm_status lewm_model_predict(const lewm_model* model, const double* s0, const double* e0, size_t action,
                               double* state_out, double* emotion_out) {
  LEWM_REQUIRE(model && s0 && e0 && state_out && emotion_out, "lewm_model_predict: null argument");
  const lewm::core::ModelConfig& c = model->model.config();
  LEWM_REQUIRE(action < c.M, "lewm_model_predict: action out of range");
  return guarded([&] {
    const lewm::Array flat = lewm::Array::vector(std::vector<double>(s0, s0 + c.d_s()));
    const auto names = std::make_shared<const std::vector<std::string>>(lewm::ewh::default_category_names(c.K));
    const lewm::ewh::EmotionState e{lewm::Array::vector(std::vector<double>(e0, e0 + c.K)), names};
    const lewm::core::Prediction p = model->model.predict(
        lewm::ewh::ObservableState::split(flat, c.d_v, c.d_a_mod, c.d_i), e, lewm::ewh::ActionLabel{action, ""});
    const lewm::Array state = p.state_next.concat();
    std::copy(state.values().begin(), state.values().end(), state_out);
    std::copy(p.emotion_next.probs.values().begin(), p.emotion_next.probs.values().end(), emotion_out);
  });
}

lewm_status lewm_filter_load(const char* model_path, lewm_filter** out) {
  LEWM_REQUIRE(model_path && out, "lewm_filter_load: null argument");
  *out = nullptr;
  return guarded([&] {
    lewm::Json j;
    try {
      j = lewm::Json::parse(lewm::read_text_file(model_path));
    } catch (const lewm::Json::parse_error& e) {
      throw lewm::ParseError(std::string("filter model '") + model_path + "': " + e.what());
    }
    *out = new lewm_filter{lewm::filter::filter_model_from_json(j)};
  });
}

void lewm_filter_free(lewm_filter* filter) { delete filter; }

lewm_status lewm_filter_classify(const lewm_filter* filter, const uint32_t* tokens, size_t n, double* probability) {
  LEWM_REQUIRE(filter && tokens && probability && n > 0, "lewm_filter_classify: null or empty argument");
  return guarded([&] { *probability = lewm::filter::classify(filter->model, lewm::filter::TokenSeq(tokens, tokens + n)); });
}

lewm_status lewm_filter_apply(const lewm_filter* filter, const uint32_t* tokens, size_t n, double threshold,
                              uint32_t* out, size_t cap, size_t* out_len) {
  LEWM_REQUIRE(filter && tokens && out && out_len && n > 0, "lewm_filter_apply: null or empty argument");
  return guarded([&] {
    const lewm::filter::TokenSeq y =
        lewm::filter::filter_apply(filter->model, lewm::filter::TokenSeq(tokens, tokens + n), threshold);
    *out_len = y.size();
    if (y.size() > cap) throw lewm::ContractViolation("lewm_filter_apply: output buffer holds " + std::to_string(cap) +
                                                      " tokens, need " + std::to_string(y.size()));
    std::copy(y.begin(), y.end(), out);
  });
}

}  // extern "C"
