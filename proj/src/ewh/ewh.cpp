#include "lewm/ewh.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "lewm/errors.hpp"
#include "lewm/ops.hpp"

namespace lewm::ewh {

namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;

std::string index_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%06zu", prefix, i);
  return buf;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

Array ObservableState::concat() const { return ops::concat({&video, &audio, &image}); }

ObservableState ObservableState::split(const Array& flat, std::size_t d_v, std::size_t d_a_mod,
                                       std::size_t d_i) {
  if (flat.rank() != 1 || flat.size() != d_v + d_a_mod + d_i) {
    throw ContractViolation("cannot split " + shape_string(flat.shape()) + " into modalities (" +
                            std::to_string(d_v) + ", " + std::to_string(d_a_mod) + ", " +
                            std::to_string(d_i) + ")");
  }
  return {ops::slice(flat, 0, d_v), ops::slice(flat, d_v, d_a_mod),
          ops::slice(flat, d_v + d_a_mod, d_i)};
}

EmotionState EmotionState::one_hot(std::size_t category, CategoryNames names) {
  const std::size_t k = names ? names->size() : 0;
  return {ops::one_hot(category, k), std::move(names)};
}

std::size_t EmotionState::category() const { return ops::argmax(probs); }

bool EmotionState::operator==(const EmotionState& other) const {
  if (probs != other.probs) return false;
  if (names == other.names) return true;
  if (!names || !other.names) return false;
  return *names == *other.names;
}

bool Schema::operator==(const Schema& other) const {
  const bool same_names = (category_names == other.category_names) ||
                          (category_names && other.category_names &&
                           *category_names == *other.category_names);
  return d_v == other.d_v && d_a_mod == other.d_a_mod && d_i == other.d_i && K == other.K &&
         M == other.M && same_names;
}

double EnvSpec::transition_prob(std::size_t e0, std::size_t a, std::size_t e1) const {
  return P[(e0 * schema.M + a) * schema.K + e1];
}

Array EnvSpec::mean_next_state(const Array& s, std::size_t a, std::size_t e1) const {
  const std::size_t d = schema.d_s();
  Array out({d});
  const double* b = B.values().data() + e1 * d * d;
  for (std::size_t i = 0; i < d; ++i) {
    double mod = 0.0;
    for (std::size_t j = 0; j < d; ++j) mod += b[i * d + j] * s[j];
    out[i] = s[i] + U[a * d + i] + kappa * mod;
  }
  return out;
}

void EnvSpec::validate() const {
  const std::size_t K = schema.K;
  const std::size_t M = schema.M;
  const std::size_t d = schema.d_s();
  require(K >= 2, "env: K must be >= 2");
  require(M >= 1, "env: M must be >= 1");
  require(schema.d_v >= 1 && schema.d_a_mod >= 1 && schema.d_i >= 1,
          "env: modality dimensions must be >= 1");
  require(schema.category_names && schema.category_names->size() == K,
          "env: category_names must list K names");
  require(P.shape() == Shape{K, M, K}, "env: P must be K x M x K");
  require(U.shape() == Shape{M, d}, "env: U must be M x d_s");
  require(B.shape() == Shape{K, d, d}, "env: B must be K x d_s x d_s");
  require(std::isfinite(kappa) && kappa >= 0.0, "env: kappa must be finite and >= 0");
  require(std::isfinite(sigma) && sigma >= 0.0, "env: sigma must be finite and >= 0");
  for (std::size_t row = 0; row < K * M; ++row) {
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double p = P[row * K + k];
      require(p >= 0.0, "env: P has a negative entry");
      total += p;
    }
    require(std::abs(total - 1.0) <= 1e-9, "env: a P row does not sum to 1");
  }
}

std::string EnvSpec::digest() const { return sha256_hex(env_to_json(*this).dump()); }

bool EnvSpec::operator==(const EnvSpec& other) const {
  return schema == other.schema && P == other.P && U == other.U && B == other.B &&
         kappa == other.kappa && sigma == other.sigma && sharpness == other.sharpness &&
         seed == other.seed;
}

Json env_to_json(const EnvSpec& env) {
  return Json{{"format_version", kFormatVersion},
              {"d_v", env.schema.d_v},
              {"d_a_mod", env.schema.d_a_mod},
              {"d_i", env.schema.d_i},
              {"K", env.schema.K},
              {"M", env.schema.M},
              {"category_names", *env.schema.category_names},
              {"P", array_to_json(env.P)},
              {"U", array_to_json(env.U)},
              {"B", array_to_json(env.B)},
              {"kappa", env.kappa},
              {"sigma", env.sigma},
              {"sharpness", env.sharpness},
              {"seed", env.seed}};
}

EnvSpec env_from_json(const Json& j) {
  EnvSpec env;
  try {
    if (j.at("format_version").get<int>() != kFormatVersion) {
      throw SchemaError("unsupported env format_version");
    }
    env.schema.d_v = j.at("d_v").get<std::size_t>();
    env.schema.d_a_mod = j.at("d_a_mod").get<std::size_t>();
    env.schema.d_i = j.at("d_i").get<std::size_t>();
    env.schema.K = j.at("K").get<std::size_t>();
    env.schema.M = j.at("M").get<std::size_t>();
    env.schema.category_names = std::make_shared<const std::vector<std::string>>(
        j.at("category_names").get<std::vector<std::string>>());
    env.P = array_from_json(j.at("P"));
    env.U = array_from_json(j.at("U"));
    env.B = array_from_json(j.at("B"));
    env.kappa = j.at("kappa").get<double>();
    env.sigma = j.at("sigma").get<double>();
    env.sharpness = j.at("sharpness").get<double>();
    env.seed = j.at("seed").get<std::uint64_t>();
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed env record: ") + e.what());
  }
  try {
    env.validate();
  } catch (const ConfigError& e) {
    throw SchemaError(e.what());
  }
  return env;
}

std::vector<std::string> default_category_names(std::size_t k) {
  if (k == 7) return {"anger", "disgust", "fear", "happiness", "sadness", "surprise", "neutral"};
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) names.push_back("emotion_" + std::to_string(i));
  return names;
}

EnvSpec make_env(const EnvOptions& o) {
  require(o.K >= 2, "env: K must be >= 2");
  require(o.M >= 1, "env: M must be >= 1");
  require(o.d_v >= 1 && o.d_a_mod >= 1 && o.d_i >= 1, "env: modality dimensions must be >= 1");
  require(std::isfinite(o.kappa) && o.kappa >= 0.0, "env: kappa must be finite and >= 0");
  require(std::isfinite(o.sigma) && o.sigma >= 0.0, "env: sigma must be finite and >= 0");
  require(std::isfinite(o.sharpness) && o.sharpness >= 0.0,
          "env: sharpness must be finite and >= 0");
  require(o.category_names.empty() || o.category_names.size() == o.K,
          "env: category_names must be empty or list K names");

  EnvSpec env;
  env.schema = {o.d_v, o.d_a_mod, o.d_i, o.K, o.M,
                std::make_shared<const std::vector<std::string>>(
                    o.category_names.empty() ? default_category_names(o.K) : o.category_names)};
  env.kappa = o.kappa;
  env.sigma = o.sigma;
  env.sharpness = o.sharpness;
  env.seed = o.seed;

  Rng rng(o.seed);
  const std::size_t K = o.K;
  const std::size_t M = o.M;
  const std::size_t d = env.schema.d_s();

  env.P = Array({K, M, K});
  for (std::size_t row = 0; row < K * M; ++row) {
    Array logits({K});
    for (double& v : logits.values()) v = o.sharpness * rng.normal();
    const Array p = ops::softmax(logits);
    for (std::size_t k = 0; k < K; ++k) env.P[row * K + k] = p[k];
  }

  env.U = Array({M, d});
  for (std::size_t a = 0; a < M; ++a) {
    Array u({d});
    for (double& v : u.values()) v = rng.normal();
    const double norm = ops::l2_norm(u);
    for (std::size_t i = 0; i < d; ++i) env.U[a * d + i] = u[i] / norm;
  }

  // Frobenius normalisation bounds the spectral radius of every B[k] by 1.
  env.B = Array({K, d, d});
  for (std::size_t k = 0; k < K; ++k) {
    Array b({d * d});
    for (double& v : b.values()) v = rng.normal();
    const double norm = ops::l2_norm(b);
    for (std::size_t i = 0; i < d * d; ++i) env.B[k * d * d + i] = b[i] / norm;
  }
  env.validate();
  return env;
}

EwhSample sample_transition(const EnvSpec& env, Rng& rng) {
  const Schema& sc = env.schema;
  const std::size_t d = sc.d_s();
  Array s0({d});
  for (double& v : s0.values()) v = rng.normal();
  const std::size_t e0 = rng.below(sc.K);
  const std::size_t a = rng.below(sc.M);

  const double u = rng.uniform();
  std::size_t e1 = sc.K - 1;
  double cumulative = 0.0;
  for (std::size_t k = 0; k < sc.K; ++k) {
    cumulative += env.transition_prob(e0, a, k);
    if (u < cumulative) {
      e1 = k;
      break;
    }
  }
  // Guard against a last category with zero mass absorbing rounding slack.
  while (e1 > 0 && env.transition_prob(e0, a, e1) == 0.0) --e1;

  Array s1 = env.mean_next_state(s0, a, e1);
  for (double& v : s1.values()) v += env.sigma * rng.normal();

  EwhSample sample;
  sample.s0 = ObservableState::split(s0, sc.d_v, sc.d_a_mod, sc.d_i);
  sample.e0 = EmotionState::one_hot(e0, sc.category_names);
  sample.action = {a, ""};
  sample.s1 = ObservableState::split(s1, sc.d_v, sc.d_a_mod, sc.d_i);
  sample.e1 = EmotionState::one_hot(e1, sc.category_names);
  return sample;
}

Dataset generate_dataset(const EnvSpec& env, std::size_t n, Rng& rng) {
  if (n == 0) throw ConfigError("generate_dataset: n must be >= 1");
  Dataset ds;
  ds.schema = env.schema;
  ds.env = env;
  ds.samples.reserve(n);
  const std::uint64_t base = rng.next_u64();
  for (std::size_t i = 0; i < n; ++i) {
    Rng sample_rng(mix_seed(base, i));
    EwhSample s = sample_transition(env, sample_rng);
    s.sample_id = index_name("s", i);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

EmotionState oracle_emotion_posterior(const EnvSpec& env, std::size_t e0, std::size_t a) {
  const std::size_t K = env.schema.K;
  if (e0 >= K || a >= env.schema.M) {
    throw ContractViolation("oracle_emotion_posterior: index out of range (e0=" +
                            std::to_string(e0) + ", a=" + std::to_string(a) + ")");
  }
  Array row({K});
  for (std::size_t k = 0; k < K; ++k) row[k] = env.transition_prob(e0, a, k);
  return {row, env.schema.category_names};
}

Array oracle_expected_next_state(const EnvSpec& env, const ObservableState& s0, std::size_t e0,
                                 std::size_t a) {
  const std::size_t K = env.schema.K;
  if (e0 >= K || a >= env.schema.M) {
    throw ContractViolation("oracle_expected_next_state: index out of range");
  }
  const Array s = s0.concat();
  if (s.size() != env.schema.d_s()) throw ContractViolation("oracle_expected_next_state: bad s0");
  Array out({s.size()});
  for (std::size_t e1 = 0; e1 < K; ++e1) {
    const double p = env.transition_prob(e0, a, e1);
    if (p == 0.0) continue;
    out.add_scaled(env.mean_next_state(s, a, e1), p);
  }
  return out;
}

void validate_sample(const Schema& sc, const EwhSample& s) {
  auto fail = [&](const std::string& what) {
    throw SchemaError("sample '" + s.sample_id + "': " + what);
  };
  auto check_state = [&](const ObservableState& st, const char* which) {
    if (st.video.size() != sc.d_v || st.audio.size() != sc.d_a_mod || st.image.size() != sc.d_i) {
      fail(std::string(which) + " modality dimensions do not match the schema");
    }
    if (!st.video.all_finite() || !st.audio.all_finite() || !st.image.all_finite()) {
      fail(std::string(which) + " has non-finite entries");
    }
  };
  auto check_emotion = [&](const EmotionState& e, const char* which) {
    if (e.probs.size() != sc.K) fail(std::string(which) + " has the wrong category count");
    if (!ops::on_simplex(e.probs)) fail(std::string(which) + " is not on the simplex");
  };
  check_state(s.s0, "s0");
  check_state(s.s1, "s1");
  check_emotion(s.e0, "e0");
  check_emotion(s.e1, "e1");
  if (s.action.action_id >= sc.M) fail("action_id out of range");
}

namespace {

Json header_json(const Dataset& ds) {
  return Json{{"format_version", kFormatVersion},
              {"d_v", ds.schema.d_v},
              {"d_a_mod", ds.schema.d_a_mod},
              {"d_i", ds.schema.d_i},
              {"K", ds.schema.K},
              {"M", ds.schema.M},
              {"category_names", *ds.schema.category_names},
              {"env_digest", ds.env ? Json(ds.env->digest()) : Json(nullptr)}};
}

Json sample_json(const EwhSample& s) {
  return Json{{"sample_id", s.sample_id},
              {"s0.video", s.s0.video.raw()},
              {"s0.audio", s.s0.audio.raw()},
              {"s0.image", s.s0.image.raw()},
              {"e0.probs", s.e0.probs.raw()},
              {"action_id", s.action.action_id},
              {"action_text", s.action.description},
              {"s1.video", s.s1.video.raw()},
              {"s1.audio", s.s1.audio.raw()},
              {"s1.image", s.s1.image.raw()},
              {"e1.probs", s.e1.probs.raw()}};
}

Array vec_field(const Json& j, const char* key) {
  const auto values = j.at(key).get<std::vector<double>>();
  if (values.empty()) throw SchemaError(std::string("field '") + key + "' is empty");
  return Array::vector(values);
}

struct Parsed {
  Dataset ds;
  std::string env_digest;
};

Parsed parse_text(const std::string& text) {
  Parsed out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw ParseError("empty record", line_no);
    }
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(std::string("malformed record: ") + e.what(), line_no);
    }
    if (!have_header) {
      try {
        if (j.at("format_version").get<int>() != kFormatVersion) {
          throw ParseError("unsupported format_version", line_no);
        }
        Schema& sc = out.ds.schema;
        sc.d_v = j.at("d_v").get<std::size_t>();
        sc.d_a_mod = j.at("d_a_mod").get<std::size_t>();
        sc.d_i = j.at("d_i").get<std::size_t>();
        sc.K = j.at("K").get<std::size_t>();
        sc.M = j.at("M").get<std::size_t>();
        sc.category_names = std::make_shared<const std::vector<std::string>>(
            j.at("category_names").get<std::vector<std::string>>());
        if (sc.category_names->size() != sc.K) {
          throw SchemaError("line 1: category_names does not list K names");
        }
        if (j.contains("env_digest") && j["env_digest"].is_string()) {
          out.env_digest = j["env_digest"].get<std::string>();
        }
      } catch (const Json::exception& e) {
        throw ParseError(std::string("malformed header: ") + e.what(), line_no);
      }
      have_header = true;
      continue;
    }
    EwhSample s;
    try {
      s.sample_id = j.at("sample_id").get<std::string>();
      s.s0 = {vec_field(j, "s0.video"), vec_field(j, "s0.audio"), vec_field(j, "s0.image")};
      s.e0 = {vec_field(j, "e0.probs"), out.ds.schema.category_names};
      s.action.action_id = j.at("action_id").get<std::size_t>();
      s.action.description = j.value("action_text", std::string());
      s.s1 = {vec_field(j, "s1.video"), vec_field(j, "s1.audio"), vec_field(j, "s1.image")};
      s.e1 = {vec_field(j, "e1.probs"), out.ds.schema.category_names};
    } catch (const Json::exception& e) {
      throw ParseError(std::string("malformed sample: ") + e.what(), line_no);
    }
    try {
      validate_sample(out.ds.schema, s);
    } catch (const SchemaError& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    }
    out.ds.samples.push_back(std::move(s));
  }
  if (!have_header) throw ParseError("missing header record", line_no + 1);
  return out;
}

}  // namespace

std::string serialize_to_string(const Dataset& ds) {
  std::string out = header_json(ds).dump();
  out += '\n';
  for (const EwhSample& s : ds.samples) {
    out += sample_json(s).dump();
    out += '\n';
  }
  return out;
}

fs::path env_sidecar_path(const fs::path& data_path, const std::string& digest) {
  return data_path.parent_path() / ("env-" + digest.substr(0, 16) + ".json");
}

void serialize(const Dataset& ds, const fs::path& path) {
  write_text_file(path, serialize_to_string(ds));
  if (ds.env) {
    write_text_file(env_sidecar_path(path, ds.env->digest()), env_to_json(*ds.env).dump(1));
  }
}

Dataset deserialize_from_string(const std::string& text) { return parse_text(text).ds; }

Dataset deserialize(const fs::path& path) {
  Parsed parsed = parse_text(read_text_file(path));
  if (!parsed.env_digest.empty()) {
    const fs::path sidecar = env_sidecar_path(path, parsed.env_digest);
    if (fs::exists(sidecar)) {
      Json j;
      try {
        j = Json::parse(read_text_file(sidecar));
      } catch (const Json::parse_error& e) {
        throw ParseError("env sidecar '" + sidecar.string() + "': " + e.what());
      }
      EnvSpec env = env_from_json(j);
      if (env.digest() != parsed.env_digest) {
        throw SchemaError("env sidecar digest does not match the dataset header");
      }
      if (!(env.schema == parsed.ds.schema)) {
        throw SchemaError("env sidecar dimensions do not match the dataset header");
      }
      parsed.ds.env = std::move(env);
      parsed.ds.schema.category_names = parsed.ds.env->schema.category_names;
      for (EwhSample& s : parsed.ds.samples) {
        s.e0.names = parsed.ds.schema.category_names;
        s.e1.names = parsed.ds.schema.category_names;
      }
    }
  }
  return std::move(parsed.ds);
}

Split split(const Dataset& ds, const std::array<double, 3>& fractions, Rng& rng) {
  double total = 0.0;
  for (double f : fractions) {
    if (!std::isfinite(f) || f < 0.0) throw ConfigError("split fractions must be >= 0");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  const std::size_t n = ds.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  const auto n_train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(fractions[0] * n)));
  const auto n_val =
      std::min<std::size_t>(n - n_train, static_cast<std::size_t>(std::llround(fractions[1] * n)));

  Split out;
  for (Dataset* part : {&out.train, &out.val, &out.test}) {
    part->schema = ds.schema;
    part->env = ds.env;
  }
  for (std::size_t i = 0; i < n; ++i) {
    Dataset& dst = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
    dst.samples.push_back(ds.samples[order[i]]);
  }
  return out;
}

}  // namespace lewm::ewh
