#include <algorithm>
#include <cmath>

#include "lewm/errors.hpp"
#include "lewm/filter.hpp"
#include "lewm/layers.hpp"

namespace lewm::filter {

namespace {

constexpr int kModelVersion = 1;

// out += W x for a row-major W of shape rows x cols.
void matvec_acc(const Array& W, const double* x, double* out) {
  const std::size_t rows = W.rows(), cols = W.cols();
  const double* w = W.raw().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* row = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    out[r] += acc;
  }
}

// dx += W^T dy; dW += dy x^T (either may be null).
void matvec_backward(const Array& W, const double* x, const double* dy, double* dx, Array* dW) {
  const std::size_t rows = W.rows(), cols = W.cols();
  const double* w = W.raw().data();
  double* dw = dW ? dW->values().data() : nullptr;
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    if (dx) {
      const double* row = w + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dx[c] += row[c] * g;
    }
    if (dw) {
      double* drow = dw + r * cols;
      for (std::size_t c = 0; c < cols; ++c) drow[c] += g * x[c];
    }
  }
}

double softplus(double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double ev = std::exp(v);
  return ev / (1.0 + ev);
}

void check_tokens(const FilterConfig& c, const TokenSeq& seq, const char* what) {
  if (seq.empty()) throw ContractViolation(std::string(what) + ": empty token sequence");
  for (Token t : seq) {
    if (t >= c.V) {
      throw ContractViolation(std::string(what) + ": token " + std::to_string(t) + " outside vocabulary of size " +
                              std::to_string(c.V));
    }
  }
}

const double* embedding(const ParamStore& p, std::size_t d, Token t) { return p.get("embed").raw().data() + t * d; }

// Mean of the embeddings of x.
std::vector<double> mean_pool(const ParamStore& p, std::size_t d, const TokenSeq& x) {
  std::vector<double> out(d, 0.0);
  for (Token t : x) {
    const double* e = embedding(p, d, t);
    for (std::size_t j = 0; j < d; ++j) out[j] += e[j];
  }
  for (double& v : out) v /= static_cast<double>(x.size());
  return out;
}

void mean_pool_backward(ParamStore* grads, std::size_t d, const TokenSeq& x, const double* dpool) {
  Array* g = grads ? grads->find("embed") : nullptr;
  if (!g) return;
  const double scale = 1.0 / static_cast<double>(x.size());
  for (Token t : x) {
    double* row = g->values().data() + t * d;
    for (std::size_t j = 0; j < d; ++j) row[j] += dpool[j] * scale;
  }
}

/// Pointer into x after emitting `token` from position p.
std::size_t advance_pointer(const TokenSeq& x, std::size_t p, Token token) {
  if (token == kNeutralMask) return p + 1;
  for (std::size_t i = p; i < x.size(); ++i) {
    if (x[i] == token) return i + 1;
  }
  return p + 1;
}

// Runs the adapter over a given prefix. Holds everything needed for BPTT.
struct AdapterRun {
  std::vector<double> ctx;                 // pooled x
  std::vector<std::vector<double>> hidden;  // h_0 .. h_T
  std::vector<std::size_t> pointer;         // window start for step t
  std::vector<std::vector<double>> probs;   // next-token distribution at step t
};

class Adapter {
 public:
  Adapter(const FilterModel& model, const TokenSeq& x, bool e)
      : c_(model.config()), p_(model.params()), x_(x), e_(e), ctx_(mean_pool(p_, c_.d_embed, x)) {
    const std::size_t H = c_.hidden_gen;
    static_in_.assign(H, 0.0);
    matvec_acc(p_.get("gen.w_ctx"), ctx_.data(), static_in_.data());
    const Array& flag = p_.get("gen.flag");
    const Array& b = p_.get("gen.b");
    for (std::size_t j = 0; j < H; ++j) static_in_[j] += flag.at(e ? 1 : 0, j) + b[j];
  }

  const std::vector<double>& context() const { return ctx_; }

  Token window_token(std::size_t i) const { return i < x_.size() ? x_[i] : kPad; }

  /// h_t from h_{t-1}, previous token and pointer; fills logits.
  void step(const std::vector<double>& h_prev, Token prev, std::size_t ptr, std::vector<double>& h,
            std::vector<double>& probs) const {
    const std::size_t H = c_.hidden_gen, d = c_.d_embed;
    std::vector<double> a = static_in_;
    matvec_acc(p_.get("gen.w_in"), embedding(p_, d, prev), a.data());
    matvec_acc(p_.get("gen.w_rec"), h_prev.data(), a.data());
    const std::vector<double> win = window(ptr);
    matvec_acc(p_.get("gen.w_win"), win.data(), a.data());
    h.resize(H);
    for (std::size_t j = 0; j < H; ++j) h[j] = std::tanh(a[j]);
    std::vector<double> logits(p_.get("gen.b_out").raw());
    matvec_acc(p_.get("gen.w_out"), h.data(), logits.data());
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& v : logits) {
      v = std::exp(v - mx);
      z += v;
    }
    probs.resize(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) probs[k] = logits[k] / z;
  }

  std::vector<double> window(std::size_t ptr) const {
    const std::size_t d = c_.d_embed;
    std::vector<double> win(3 * d);
    for (std::size_t k = 0; k < 3; ++k) {
      const double* e = embedding(p_, d, window_token(ptr + k));
      std::copy(e, e + d, win.begin() + static_cast<std::ptrdiff_t>(k * d));
    }
    return win;
  }

  /// Teacher-forced run over y; returns summed NLL.
  double teacher_forced(const TokenSeq& y, AdapterRun& run) const {
    const std::size_t T = y.size() - 1;
    run.hidden.assign(1, std::vector<double>(c_.hidden_gen, 0.0));
    run.pointer.clear();
    run.probs.clear();
    std::size_t ptr = 1;
    double nll = 0.0;
    for (std::size_t t = 1; t <= T; ++t) {
      std::vector<double> h, probs;
      step(run.hidden.back(), y[t - 1], ptr, h, probs);
      run.pointer.push_back(ptr);
      nll -= std::log(std::max(probs[y[t]], 1e-300));
      run.hidden.push_back(std::move(h));
      run.probs.push_back(std::move(probs));
      ptr = advance_pointer(x_, ptr, y[t]);
    }
    return nll;
  }

  void backward(const TokenSeq& y, const AdapterRun& run, double scale, ParamStore* grads) const {
    if (!grads) return;
    const std::size_t H = c_.hidden_gen, d = c_.d_embed, T = y.size() - 1;
    Array* g_embed = grads->find("embed");
    Array* g_in = grads->find("gen.w_in");
    Array* g_rec = grads->find("gen.w_rec");
    Array* g_win = grads->find("gen.w_win");
    Array* g_ctx = grads->find("gen.w_ctx");
    Array* g_flag = grads->find("gen.flag");
    Array* g_b = grads->find("gen.b");
    Array* g_out = grads->find("gen.w_out");
    Array* g_bout = grads->find("gen.b_out");
    std::vector<double> dh_next(H, 0.0);
    std::vector<double> da_sum(H, 0.0);
    for (std::size_t t = T; t >= 1; --t) {
      const std::vector<double>& h = run.hidden[t];
      const std::vector<double>& h_prev = run.hidden[t - 1];
      std::vector<double> dlogits = run.probs[t - 1];
      dlogits[y[t]] -= 1.0;
      for (double& v : dlogits) v *= scale;
      if (g_bout) {
        for (std::size_t k = 0; k < dlogits.size(); ++k) (*g_bout)[k] += dlogits[k];
      }
      std::vector<double> dh = dh_next;
      matvec_backward(p_.get("gen.w_out"), h.data(), dlogits.data(), dh.data(), g_out);
      std::vector<double> da(H);
      for (std::size_t j = 0; j < H; ++j) da[j] = dh[j] * (1.0 - h[j] * h[j]);
      for (std::size_t j = 0; j < H; ++j) da_sum[j] += da[j];

      std::vector<double> demb(d, 0.0);
      matvec_backward(p_.get("gen.w_in"), embedding(p_, d, y[t - 1]), da.data(), demb.data(), g_in);
      if (g_embed) {
        double* row = g_embed->values().data() + y[t - 1] * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += demb[j];
      }
      const std::vector<double> win = window(run.pointer[t - 1]);
      std::vector<double> dwin(3 * d, 0.0);
      matvec_backward(p_.get("gen.w_win"), win.data(), da.data(), dwin.data(), g_win);
      if (g_embed) {
        for (std::size_t k = 0; k < 3; ++k) {
          double* row = g_embed->values().data() + window_token(run.pointer[t - 1] + k) * d;
          for (std::size_t j = 0; j < d; ++j) row[j] += dwin[k * d + j];
        }
      }
      std::fill(dh_next.begin(), dh_next.end(), 0.0);
      matvec_backward(p_.get("gen.w_rec"), h_prev.data(), da.data(), dh_next.data(), g_rec);
    }
    // Step-invariant inputs: context, flag and bias.
    std::vector<double> dctx(d, 0.0);
    matvec_backward(p_.get("gen.w_ctx"), ctx_.data(), da_sum.data(), dctx.data(), g_ctx);
    mean_pool_backward(grads, d, x_, dctx.data());
    for (std::size_t j = 0; j < H; ++j) {
      if (g_flag) g_flag->at(e_ ? 1 : 0, j) += da_sum[j];
      if (g_b) (*g_b)[j] += da_sum[j];
    }
  }

 private:
  const FilterConfig& c_;
  const ParamStore& p_;
  const TokenSeq& x_;
  bool e_;
  std::vector<double> ctx_;
  std::vector<double> static_in_;
};

void check_target(const FilterConfig& c, const TokenSeq& y) {
  check_tokens(c, y, "neutralize_nll");
  if (y.size() < 2 || y.front() != kBos) throw ContractViolation("neutralize_nll: target must start with BOS and have a step");
  if (y.size() > c.max_len) {
    throw ContractViolation("neutralize_nll: target length " + std::to_string(y.size()) + " exceeds max_len " +
                            std::to_string(c.max_len));
  }
}

}  // namespace

void FilterConfig::validate() const {
  if (V <= kFirstFreeToken) throw ConfigError("filter: V must exceed the reserved ids");
  if (d_embed == 0 || hidden_cls == 0 || hidden_gen == 0) throw ConfigError("filter: widths must be >= 1");
  if (max_len < 2) throw ConfigError("filter: max_len must be >= 2");
}

FilterModel::FilterModel(const FilterConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  Rng rng(init_seed);
  const FilterConfig& c = config_;
  auto normal = [&](Shape shape, double scale) {
    Array a(std::move(shape));
    for (double& v : a.values()) v = scale * rng.normal();
    return a;
  };
  params_.add("embed", normal({c.V, c.d_embed}, 0.5));
  params_.add("cls.w1", glorot(c.hidden_cls, c.d_embed, rng));
  params_.add("cls.b1", Array({c.hidden_cls}));
  params_.add("cls.w2", glorot(1, c.hidden_cls, rng));
  params_.add("cls.b2", Array({1}));
  const std::size_t H = c.hidden_gen;
  params_.add("gen.w_in", glorot(H, c.d_embed, rng));
  params_.add("gen.w_rec", glorot(H, H, rng));
  params_.add("gen.w_win", glorot(H, 3 * c.d_embed, rng));
  params_.add("gen.w_ctx", glorot(H, c.d_embed, rng));
  params_.add("gen.flag", normal({2, H}, 0.1));
  params_.add("gen.b", Array({H}));
  params_.add("gen.w_out", glorot(c.V, H, rng));
  params_.add("gen.b_out", Array({c.V}));
  params_.add("alpha_raw", Array({1}));
}

FilterModel::FilterModel(const FilterConfig& config, ParamStore params, bool stage1_done)
    : FilterModel(config, 0) {
  for (const auto& [name, entry] : params_.entries()) {
    if (!params.contains(name)) throw SchemaError("filter parameter '" + name + "' missing");
    if (params.get(name).shape() != entry.value.shape()) {
      throw SchemaError("filter parameter '" + name + "' has shape " + shape_string(params.get(name).shape()));
    }
  }
  if (params.size() != params_.size()) throw SchemaError("unexpected extra filter parameters");
  params_ = std::move(params);
  stage1_done_ = stage1_done;
}

double FilterModel::alpha() const { return sigmoid(params_.get("alpha_raw")[0]); }

std::vector<std::string> FilterModel::adapter_param_names() {
  return {"gen.b", "gen.b_out", "gen.flag", "gen.w_ctx", "gen.w_in", "gen.w_out", "gen.w_rec", "gen.w_win"};
}

Json filter_model_to_json(const FilterModel& model) {
  const FilterConfig& c = model.config();
  return Json{{"format_version", kModelVersion},
              {"config",
               {{"V", c.V},
                {"d_embed", c.d_embed},
                {"hidden_cls", c.hidden_cls},
                {"hidden_gen", c.hidden_gen},
                {"max_len", c.max_len}}},
              {"stage1_done", model.stage1_done()},
              {"params", param_store_to_json(model.params())}};
}

FilterModel filter_model_from_json(const Json& j) {
  try {
    if (j.at("format_version").get<int>() != kModelVersion) throw SchemaError("unsupported filter model version");
    const Json& cj = j.at("config");
    FilterConfig c;
    c.V = cj.at("V").get<std::size_t>();
    c.d_embed = cj.at("d_embed").get<std::size_t>();
    c.hidden_cls = cj.at("hidden_cls").get<std::size_t>();
    c.hidden_gen = cj.at("hidden_gen").get<std::size_t>();
    c.max_len = cj.at("max_len").get<std::size_t>();
    ParamStore params = param_store_from_json(j.at("params"));
    for (const std::string& name : params.names()) params.set_trainable(name, true);
    return FilterModel(c, std::move(params), j.at("stage1_done").get<bool>());
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed filter model: ") + e.what());
  }
}

namespace {

struct ClassifierPass {
  std::vector<double> pool;
  std::vector<double> hidden;
  double logit = 0.0;
};

ClassifierPass classifier_forward(const FilterModel& model, const TokenSeq& x) {
  const FilterConfig& c = model.config();
  const ParamStore& p = model.params();
  check_tokens(c, x, "classify");
  ClassifierPass out;
  out.pool = mean_pool(p, c.d_embed, x);
  out.hidden.assign(p.get("cls.b1").raw().begin(), p.get("cls.b1").raw().end());
  matvec_acc(p.get("cls.w1"), out.pool.data(), out.hidden.data());
  for (double& v : out.hidden) v = std::tanh(v);
  out.logit = p.get("cls.b2")[0];
  matvec_acc(p.get("cls.w2"), out.hidden.data(), &out.logit);
  return out;
}

void classifier_backward(const FilterModel& model, const TokenSeq& x, const ClassifierPass& pass, double dlogit,
                         ParamStore* grads) {
  if (!grads) return;
  const FilterConfig& c = model.config();
  const ParamStore& p = model.params();
  if (Array* g = grads->find("cls.b2")) (*g)[0] += dlogit;
  std::vector<double> dhidden(c.hidden_cls, 0.0);
  matvec_backward(p.get("cls.w2"), pass.hidden.data(), &dlogit, dhidden.data(), grads->find("cls.w2"));
  for (std::size_t j = 0; j < c.hidden_cls; ++j) dhidden[j] *= 1.0 - pass.hidden[j] * pass.hidden[j];
  if (Array* g = grads->find("cls.b1")) {
    for (std::size_t j = 0; j < c.hidden_cls; ++j) (*g)[j] += dhidden[j];
  }
  std::vector<double> dpool(c.d_embed, 0.0);
  matvec_backward(p.get("cls.w1"), pass.pool.data(), dhidden.data(), dpool.data(), grads->find("cls.w1"));
  mean_pool_backward(grads, c.d_embed, x, dpool.data());
}

}  // namespace

double classify(const FilterModel& model, const TokenSeq& x) {
  return sigmoid(classifier_forward(model, x).logit);
}

double classifier_loss(const FilterModel& model, const TokenSeq& x, bool e, ParamStore* grads) {
  const ClassifierPass pass = classifier_forward(model, x);
  const double target = e ? 1.0 : 0.0;
  const double loss = softplus(pass.logit) - target * pass.logit;
  classifier_backward(model, x, pass, sigmoid(pass.logit) - target, grads);
  return loss;
}

double neutralize_nll(const FilterModel& model, const TokenSeq& x, bool e, const TokenSeq& y, ParamStore* grads) {
  check_tokens(model.config(), x, "neutralize_nll");
  check_target(model.config(), y);
  const Adapter adapter(model, x, e);
  AdapterRun run;
  const double nll = adapter.teacher_forced(y, run);
  adapter.backward(y, run, 1.0, grads);
  return nll;
}

std::vector<Array> neutralize_step_probs(const FilterModel& model, const TokenSeq& x, bool e, const TokenSeq& y) {
  check_tokens(model.config(), x, "neutralize_nll");
  check_target(model.config(), y);
  const Adapter adapter(model, x, e);
  AdapterRun run;
  adapter.teacher_forced(y, run);
  std::vector<Array> out;
  for (const auto& p : run.probs) out.push_back(Array::vector(p));
  return out;
}

DecodeResult neutralize_decode(const FilterModel& model, const TokenSeq& x, bool e, std::size_t max_len,
                               const std::vector<Token>* allowed) {
  if (max_len < 2) throw ContractViolation("neutralize_decode: max_len must be >= 2");
  check_tokens(model.config(), x, "neutralize_decode");
  const Adapter adapter(model, x, e);
  DecodeResult out;
  out.tokens.push_back(kBos);
  std::vector<double> h(model.config().hidden_gen, 0.0);
  std::size_t ptr = 1;
  while (out.tokens.size() < max_len) {
    std::vector<double> h_next, probs;
    adapter.step(h, out.tokens.back(), ptr, h_next, probs);
    std::size_t best = model.config().V;
    for (std::size_t k = 0; k < probs.size(); ++k) {
      if (allowed && std::find(allowed->begin(), allowed->end(), static_cast<Token>(k)) == allowed->end()) continue;
      if (best == model.config().V || probs[k] > probs[best]) best = k;
    }
    const Token tok = static_cast<Token>(best);
    out.tokens.push_back(tok);
    if (tok == kEos) return out;
    ptr = advance_pointer(x, ptr, tok);
    h = std::move(h_next);
  }
  out.truncated = true;
  return out;
}

JointLoss joint_objective(const FilterModel& model, std::span<const FilterTriple> batch, ParamStore* grads) {
  if (batch.empty()) throw ContractViolation("joint_objective: empty batch");
  const double raw = model.params().get("alpha_raw")[0];
  const double alpha = sigmoid(raw);
  const double w = 1.0 / static_cast<double>(batch.size());
  JointLoss out;
  out.alpha = alpha;
  for (const FilterTriple& t : batch) {
    const ClassifierPass pass = classifier_forward(model, t.x);
    const double target = t.e ? 1.0 : 0.0;
    out.l_cls += (softplus(pass.logit) - target * pass.logit) * w;
    classifier_backward(model, t.x, pass, (sigmoid(pass.logit) - target) * alpha * w, grads);

    check_target(model.config(), t.y);
    const Adapter adapter(model, t.x, t.e);
    AdapterRun run;
    out.l_gen += adapter.teacher_forced(t.y, run) * w;
    adapter.backward(t.y, run, (1.0 - alpha) * w, grads);
  }
  out.total = alpha * out.l_cls + (1.0 - alpha) * out.l_gen;
  if (grads) {
    if (Array* g = grads->find("alpha_raw")) (*g)[0] += alpha * (1.0 - alpha) * (out.l_cls - out.l_gen);
  }
  return out;
}

TokenSeq filter_apply(const FilterModel& model, const TokenSeq& x, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("filter_apply: threshold must lie in (0, 1)");
  if (classify(model, x) < threshold) return x;
  std::vector<Token> allowed(x.begin(), x.end());
  allowed.push_back(kEos);
  allowed.push_back(kNeutralMask);
  std::sort(allowed.begin(), allowed.end());
  allowed.erase(std::unique(allowed.begin(), allowed.end()), allowed.end());
  return neutralize_decode(model, x, true, std::max<std::size_t>(x.size() + 1, 2), &allowed).tokens;
}

}  // namespace lewm::filter
