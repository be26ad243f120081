#include <cmath>
#include <sstream>

#include "lewm/errors.hpp"
#include "lewm/filter.hpp"
#include "lewm/layers.hpp"
#include "lewm/optimizer.hpp"

namespace lewm::filter {

namespace {

struct Labeled {
  TokenSeq x;
  bool label = false;
};

// Sum-pooled embedding, one tanh layer, logistic output.
class ProbeClassifier {
 public:
  ProbeClassifier(std::size_t V, const ProbeOptions& o, std::uint64_t seed) : d_(o.d_embed), h_(o.hidden) {
    Rng rng(seed);
    Array embed({V, d_});
    for (double& v : embed.values()) v = 0.5 * rng.normal();
    params_.add("embed", std::move(embed));
    params_.add("w1", glorot(h_, d_, rng));
    params_.add("b1", Array({h_}));
    params_.add("w2", glorot(1, h_, rng));
    params_.add("b2", Array({1}));
  }

  double logit(const TokenSeq& x, std::vector<double>* pool_out = nullptr,
               std::vector<double>* hidden_out = nullptr) const {
    const Array& embed = params_.get("embed");
    std::vector<double> pool(d_, 0.0);
    for (Token t : x) {
      for (std::size_t j = 0; j < d_; ++j) pool[j] += embed.at(t, j);
    }
    const Array& w1 = params_.get("w1");
    std::vector<double> hidden(h_);
    for (std::size_t i = 0; i < h_; ++i) {
      double a = params_.get("b1")[i];
      for (std::size_t j = 0; j < d_; ++j) a += w1.at(i, j) * pool[j];
      hidden[i] = std::tanh(a);
    }
    double z = params_.get("b2")[0];
    for (std::size_t i = 0; i < h_; ++i) z += params_.get("w2")[i] * hidden[i];
    if (pool_out) *pool_out = std::move(pool);
    if (hidden_out) *hidden_out = std::move(hidden);
    return z;
  }

  void accumulate(const Labeled& s, double scale, ParamStore& g) const {
    std::vector<double> pool, hidden;
    const double z = logit(s.x, &pool, &hidden);
    const double p = 1.0 / (1.0 + std::exp(-z));
    const double dz = (p - (s.label ? 1.0 : 0.0)) * scale;
    (*g.find("b2"))[0] += dz;
    const Array& w1 = params_.get("w1");
    std::vector<double> dpool(d_, 0.0);
    for (std::size_t i = 0; i < h_; ++i) {
      (*g.find("w2"))[i] += dz * hidden[i];
      const double da = dz * params_.get("w2")[i] * (1.0 - hidden[i] * hidden[i]);
      (*g.find("b1"))[i] += da;
      for (std::size_t j = 0; j < d_; ++j) {
        g.find("w1")->at(i, j) += da * pool[j];
        dpool[j] += da * w1.at(i, j);
      }
    }
    Array* ge = g.find("embed");
    for (Token t : s.x) {
      for (std::size_t j = 0; j < d_; ++j) ge->at(t, j) += dpool[j];
    }
  }

  ParamStore& params() { return params_; }

 private:
  std::size_t d_;
  std::size_t h_;
  ParamStore params_;
};

double probe_accuracy(std::size_t V, const std::vector<Labeled>& train, const std::vector<Labeled>& test,
                      const ProbeOptions& o, std::uint64_t init_seed, std::uint64_t batch_seed) {
  ProbeClassifier clf(V, o, init_seed);
  Optimizer opt(OptimizerHyper{.kind = OptimizerKind::adam, .lr = o.lr});
  Rng rng(batch_seed);
  const double scale = 1.0 / static_cast<double>(o.batch_size);
  for (std::size_t step = 0; step < o.steps; ++step) {
    ParamStore grads = clf.params().zeros_like();
    for (std::size_t b = 0; b < o.batch_size; ++b) clf.accumulate(train[rng.below(train.size())], scale, grads);
    opt.step(clf.params(), grads);
  }
  std::size_t correct = 0;
  for (const Labeled& s : test) correct += (clf.logit(s.x) >= 0.0) == s.label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace

void ProbeOptions::validate() const {
  if (n_samples < 8) throw ConfigError("probe: n_samples must be >= 8");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("probe: train_fraction must lie in (0, 1)");
  if (d_embed == 0 || hidden == 0) throw ConfigError("probe: widths must be >= 1");
  if (steps == 0 || batch_size == 0) throw ConfigError("probe: steps and batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("probe: lr must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("probe: threshold must lie in (0, 1)");
}

std::string ProbeReport::to_kv() const {
  std::ostringstream out;
  out << "polarity_raw=" << format_double(polarity_raw) << '\n'
      << "polarity_filtered=" << format_double(polarity_filtered) << '\n'
      << "polarity_drop=" << format_double(polarity_drop()) << '\n'
      << "polarity_test_n=" << polarity_test_n << '\n'
      << "parity_raw=" << format_double(parity_raw) << '\n'
      << "parity_filtered=" << format_double(parity_filtered) << '\n'
      << "parity_drop=" << format_double(parity_drop()) << '\n'
      << "parity_test_n=" << parity_test_n << '\n';
  return out.str();
}

ProbeReport validation_probe(const FilterModel& model, const CorpusSpec& spec, const ProbeOptions& options,
                             Rng& rng) {
  options.validate();
  if (spec.V != model.config().V) throw ConfigError("probe: corpus V differs from the filter vocabulary");
  if (options.parity_token >= spec.V || spec.is_emotion_token(options.parity_token) ||
      options.parity_token < kFirstFreeToken) {
    throw ConfigError("probe: parity_token must be a neutral token");
  }
  CorpusSpec probe_spec = spec;
  probe_spec.n_samples = options.n_samples;
  const std::vector<FilterTriple> corpus = gen_filter_corpus(probe_spec, rng);
  const std::size_t n_train =
      static_cast<std::size_t>(std::llround(options.train_fraction * static_cast<double>(corpus.size())));
  if (n_train == 0 || n_train == corpus.size()) throw ConfigError("probe: split leaves an empty partition");

  std::vector<Labeled> pol_raw[2], pol_filt[2], par_raw[2], par_filt[2];
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const FilterTriple& t = corpus[i];
    const int part = i < n_train ? 0 : 1;
    const TokenSeq filtered = filter_apply(model, t.x, options.threshold);
    std::size_t count = 0;
    for (Token tok : t.x) count += tok == options.parity_token ? 1 : 0;
    const bool parity = count % 2 == 1;
    par_raw[part].push_back({t.x, parity});
    par_filt[part].push_back({filtered, parity});
    if (t.e) {
      const bool positive = t.polarity == Polarity::positive;
      pol_raw[part].push_back({t.x, positive});
      pol_filt[part].push_back({filtered, positive});
    }
  }
  if (pol_raw[0].empty() || pol_raw[1].empty()) throw ConfigError("probe: too few emotional samples");

  const std::uint64_t pol_init = rng.next_u64(), pol_batches = rng.next_u64();
  const std::uint64_t par_init = rng.next_u64(), par_batches = rng.next_u64();
  ProbeReport r;
  r.polarity_raw = probe_accuracy(spec.V, pol_raw[0], pol_raw[1], options, pol_init, pol_batches);
  r.polarity_filtered = probe_accuracy(spec.V, pol_filt[0], pol_filt[1], options, pol_init, pol_batches);
  r.parity_raw = probe_accuracy(spec.V, par_raw[0], par_raw[1], options, par_init, par_batches);
  r.parity_filtered = probe_accuracy(spec.V, par_filt[0], par_filt[1], options, par_init, par_batches);
  r.polarity_test_n = pol_raw[1].size();
  r.parity_test_n = par_raw[1].size();
  return r;
}

std::vector<GradCase> filter_grad_cases(std::uint64_t seed) {
  FilterConfig config;
  config.V = 10;
  config.d_embed = 3;
  config.hidden_cls = 4;
  config.hidden_gen = 5;
  config.max_len = 12;
  const FilterModel base(config, seed);
  Rng rng(mix_seed(seed, 7));
  // Perturb the zero-initialised entries so every path is exercised.
  ParamStore params = base.params();
  for (const char* name : {"cls.b1", "cls.b2", "gen.b", "gen.b_out", "alpha_raw"}) {
    for (double& v : params.values(name)) v = 0.3 * rng.normal();
  }
  const TokenSeq x{kBos, 5, 8, 6, 5, kEos};
  const TokenSeq y{kBos, 5, 6, 5, kEos};
  const TokenSeq y_mask{kBos, 5, kNeutralMask, 6, 5, kEos};
  const std::vector<FilterTriple> batch{{x, y, true, Polarity::positive}, {TokenSeq{kBos, 4, 7, kEos},
                                                                          TokenSeq{kBos, 4, 7, kEos}, false,
                                                                          Polarity::none}};

  auto rebuild = [config](const ParamStore& p) { return FilterModel(config, p, true); };
  auto make = [](LambdaMap::ValueFn v, LambdaMap::GradientFn g) {
    return std::make_shared<LambdaMap>(std::move(v), std::move(g));
  };
  std::vector<GradCase> cases;
  auto restrict_to = [](ParamStore p, const std::string& prefix) {
    for (const std::string& name : p.names()) {
      p.set_trainable(name, name.rfind(prefix, 0) == 0 || name == "embed");
    }
    return p;
  };

  cases.push_back({"filter.classifier_loss",
                   make([=](const ParamStore& p, const ParamStore&) { return classifier_loss(rebuild(p), x, true); },
                        [=](const ParamStore& p, const ParamStore&, ParamStore& pg, ParamStore&) {
                          return classifier_loss(rebuild(p), x, true, &pg);
                        }),
                   restrict_to(params, "cls."), ParamStore{}});
  for (const auto& [name, target] : {std::pair{"filter.neutralize_nll", y}, std::pair{"filter.neutralize_nll.mask", y_mask}}) {
    const TokenSeq tgt = target;
    cases.push_back({name,
                     make([=](const ParamStore& p, const ParamStore&) { return neutralize_nll(rebuild(p), x, true, tgt); },
                          [=](const ParamStore& p, const ParamStore&, ParamStore& pg, ParamStore&) {
                            return neutralize_nll(rebuild(p), x, true, tgt, &pg);
                          }),
                     restrict_to(params, "gen."), ParamStore{}});
  }
  cases.push_back({"filter.joint_objective",
                   make([=](const ParamStore& p, const ParamStore&) { return joint_objective(rebuild(p), batch).total; },
                        [=](const ParamStore& p, const ParamStore&, ParamStore& pg, ParamStore&) {
                          return joint_objective(rebuild(p), batch, &pg).total;
                        }),
                   params, ParamStore{}});
  return cases;
}

}  // namespace lewm::filter
