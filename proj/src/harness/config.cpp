#include <algorithm>
#include <charconv>
#include <functional>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "lewm/errors.hpp"
#include "lewm/harness.hpp"

namespace lewm::harness {

namespace {

namespace pt = boost::property_tree;

std::vector<std::string> split_list(const std::string& text) {
  std::string normalized = text;
  std::replace(normalized.begin(), normalized.end(), ',', ' ');
  std::istringstream in(normalized);
  std::vector<std::string> out;
  for (std::string item; in >> item;) out.push_back(item);
  return out;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size() || s.empty()) {
    throw ConfigError("expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

std::size_t to_size(const std::string& s) { return static_cast<std::size_t>(to_u64(s)); }

double to_double(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("expected a number, got '" + s + "'");
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

std::string to_text(const std::string& s) { return s; }

template <typename F>
auto to_list(F convert) {
  return [convert](const std::string& s) {
    std::vector<decltype(convert(s))> out;
    for (const std::string& item : split_list(s)) out.push_back(convert(item));
    return out;
  };
}

std::string show(std::size_t v) { return std::to_string(v); }
std::string show(filter::Token v) { return std::to_string(v); }
std::string show(double v) { return format_double(v); }
std::string show(bool v) { return v ? "true" : "false"; }
std::string show(const std::string& v) { return v; }

template <typename T>
std::string show(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? " " : "") + show(values[i]);
  return out;
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

struct Section {
  std::string name;
  std::vector<Field> fields;
};

template <typename Get, typename Parse>
Field field(std::string key, Get member, Parse parse) {
  return Field{std::move(key),
               [member, parse](ExperimentConfig& c, const std::string& v) { member(c) = parse(v); },
               [member](const ExperimentConfig& c) {
                 return show(member(const_cast<ExperimentConfig&>(c)));
               }};
}

#define LEWM_M(expr) [](ExperimentConfig& c) -> auto& { return expr; }

const std::vector<Section>& schema() {
  static const std::vector<Section> sections = [] {
    std::vector<Section> s;
    s.push_back({"run",
                 {field("name", LEWM_M(c.run.name), to_text),
                  Field{"out_dir", [](ExperimentConfig& c, const std::string& v) { c.run.out_dir = v; },
                        [](const ExperimentConfig& c) { return c.run.out_dir.string(); }},
                  field("seeds", LEWM_M(c.run.seeds), to_list(to_u64)),
                  field("data_samples", LEWM_M(c.run.data_samples), to_size),
                  field("data_seed", LEWM_M(c.run.data_seed), to_u64),
                  Field{"split",
                        [](ExperimentConfig& c, const std::string& v) {
                          const std::vector<double> f = to_list(to_double)(v);
                          if (f.size() != 3) throw ConfigError("split needs three fractions (train val test)");
                          c.run.split = {f[0], f[1], f[2]};
                        },
                        [](const ExperimentConfig& c) {
                          return show(std::vector<double>(c.run.split.begin(), c.run.split.end()));
                        }},
                  field("checkpoint_every", LEWM_M(c.run.checkpoint_every), to_size)}});
    s.push_back({"env",
                 {field("seed", LEWM_M(c.env.seed), to_u64), field("d_v", LEWM_M(c.env.d_v), to_size),
                  field("d_a_mod", LEWM_M(c.env.d_a_mod), to_size), field("d_i", LEWM_M(c.env.d_i), to_size),
                  field("K", LEWM_M(c.env.K), to_size), field("M", LEWM_M(c.env.M), to_size),
                  field("kappa", LEWM_M(c.env.kappa), to_double), field("sigma", LEWM_M(c.env.sigma), to_double),
                  field("sharpness", LEWM_M(c.env.sharpness), to_double),
                  field("category_names", LEWM_M(c.env.category_names), to_list(to_text))}});
    s.push_back(
        {"model",
         {field("d_v", LEWM_M(c.model.d_v), to_size), field("d_a_mod", LEWM_M(c.model.d_a_mod), to_size),
          field("d_i", LEWM_M(c.model.d_i), to_size), field("K", LEWM_M(c.model.K), to_size),
          field("M", LEWM_M(c.model.M), to_size), field("d_z", LEWM_M(c.model.d_z), to_size),
          field("d_e", LEWM_M(c.model.d_e), to_size), field("d_a", LEWM_M(c.model.d_a), to_size),
          field("hidden_state_encoder", LEWM_M(c.model.hidden_state_encoder), to_size),
          field("hidden_emotion_encoder", LEWM_M(c.model.hidden_emotion_encoder), to_size),
          field("hidden_emotion_head", LEWM_M(c.model.hidden_emotion_head), to_size),
          field("hidden_state_head", LEWM_M(c.model.hidden_state_head), to_size),
          field("hidden_decoder", LEWM_M(c.model.hidden_decoder), to_size),
          Field{"feed_mode",
                [](ExperimentConfig& c, const std::string& v) { c.model.feed_mode = core::parse_feed_mode(v); },
                [](const ExperimentConfig& c) { return std::string(core::feed_mode_name(c.model.feed_mode)); }},
          field("blind", LEWM_M(c.model.blind), to_bool)}});
    s.push_back(
        {"train",
         {field("lambda", LEWM_M(c.train.lambda), to_double), field("beta", LEWM_M(c.train.beta), to_double),
          field("lr", LEWM_M(c.train.lr), to_double),
          Field{"optimizer",
                [](ExperimentConfig& c, const std::string& v) { c.train.optimizer = parse_optimizer_kind(v); },
                [](const ExperimentConfig& c) { return std::string(optimizer_kind_name(c.train.optimizer)); }},
          field("batch_size", LEWM_M(c.train.batch_size), to_size),
          field("max_steps", LEWM_M(c.train.max_steps), to_size),
          field("patience", LEWM_M(c.train.patience), to_size),
          field("eval_every", LEWM_M(c.train.eval_every), to_size),
          field("cosine_decay", LEWM_M(c.train.cosine_decay), to_bool),
          field("stop_gradient_prediction", LEWM_M(c.train.stop_gradient_prediction), to_bool)}});
    s.push_back(
        {"filter",
         {field("V", LEWM_M(c.filter.corpus.V), to_size),
          field("corpus_samples", LEWM_M(c.filter.corpus.n_samples), to_size),
          field("corpus_seed", LEWM_M(c.filter.corpus.seed), to_u64),
          field("positive_tokens", LEWM_M(c.filter.corpus.positive_tokens),
                to_list([](const std::string& v) { return static_cast<filter::Token>(to_u64(v)); })),
          field("negative_tokens", LEWM_M(c.filter.corpus.negative_tokens),
                to_list([](const std::string& v) { return static_cast<filter::Token>(to_u64(v)); })),
          field("min_content", LEWM_M(c.filter.corpus.min_content), to_size),
          field("max_content", LEWM_M(c.filter.corpus.max_content), to_size),
          field("max_emotion_tokens", LEWM_M(c.filter.corpus.max_emotion_tokens), to_size),
          field("emotional_fraction", LEWM_M(c.filter.corpus.emotional_fraction), to_double),
          Field{"mode",
                [](ExperimentConfig& c, const std::string& v) {
                  c.filter.corpus.mode = filter::parse_neutralize_mode(v);
                },
                [](const ExperimentConfig& c) {
                  return std::string(filter::neutralize_mode_name(c.filter.corpus.mode));
                }},
          field("model_V", LEWM_M(c.filter.model.V), to_size),
          field("d_embed", LEWM_M(c.filter.model.d_embed), to_size),
          field("hidden_cls", LEWM_M(c.filter.model.hidden_cls), to_size),
          field("hidden_gen", LEWM_M(c.filter.model.hidden_gen), to_size),
          field("max_len", LEWM_M(c.filter.model.max_len), to_size),
          field("lr", LEWM_M(c.filter.hyper.lr), to_double),
          field("batch_size", LEWM_M(c.filter.hyper.batch_size), to_size),
          field("total_steps", LEWM_M(c.filter.hyper.total_steps), to_size),
          field("stage1_fraction", LEWM_M(c.filter.hyper.stage1_fraction), to_double),
          field("seed", LEWM_M(c.filter.hyper.seed), to_u64),
          field("holdout_fraction", LEWM_M(c.filter.holdout_fraction), to_double),
          field("probe_samples", LEWM_M(c.filter.probe.n_samples), to_size),
          field("probe_train_fraction", LEWM_M(c.filter.probe.train_fraction), to_double),
          field("probe_parity_token", LEWM_M(c.filter.probe.parity_token),
                [](const std::string& v) { return static_cast<filter::Token>(to_u64(v)); }),
          field("probe_d_embed", LEWM_M(c.filter.probe.d_embed), to_size),
          field("probe_hidden", LEWM_M(c.filter.probe.hidden), to_size),
          field("probe_steps", LEWM_M(c.filter.probe.steps), to_size),
          field("probe_batch_size", LEWM_M(c.filter.probe.batch_size), to_size),
          field("probe_lr", LEWM_M(c.filter.probe.lr), to_double),
          field("probe_threshold", LEWM_M(c.filter.probe.threshold), to_double),
          field("probe_seed", LEWM_M(c.filter.probe_seed), to_u64)}});
    return s;
  }();
  return sections;
}

#undef LEWM_M

ExperimentConfig defaults() {
  ExperimentConfig c;
  c.model = core::ModelConfig::for_schema(ewh::Schema{c.env.d_v, c.env.d_a_mod, c.env.d_i, c.env.K, c.env.M, {}});
  return c;
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    ewh::make_env(env);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const std::pair<const char*, std::pair<std::size_t, std::size_t>> dims[] = {
      {"d_v", {model.d_v, env.d_v}}, {"d_a_mod", {model.d_a_mod, env.d_a_mod}}, {"d_i", {model.d_i, env.d_i}},
      {"K", {model.K, env.K}},       {"M", {model.M, env.M}}};
  for (const auto& [name, values] : dims) {
    if (values.first != values.second) {
      throw ConfigError(std::string("[model] ") + name + " = " + std::to_string(values.first) + " but [env] " + name +
                        " = " + std::to_string(values.second));
    }
  }
  model.validate();
  train.validate();

  if (run.seeds.empty()) throw ConfigError("[run] seeds must list at least one seed");
  if (std::set<std::uint64_t>(run.seeds.begin(), run.seeds.end()).size() != run.seeds.size()) {
    throw ConfigError("[run] seeds must be distinct");
  }
  if (run.name.empty()) throw ConfigError("[run] name must not be empty");
  if (run.out_dir.empty()) throw ConfigError("[run] out_dir must not be empty");
  double total = 0.0;
  for (double f : run.split) {
    if (!(f > 0.0)) throw ConfigError("[run] split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("[run] split fractions must sum to 1");
  for (double f : run.split) {
    if (f * static_cast<double>(run.data_samples) < 1.0) {
      throw ConfigError("[run] data_samples too small for the split (every partition needs a sample)");
    }
  }
  if (train.batch_size > static_cast<std::size_t>(run.split[0] * static_cast<double>(run.data_samples))) {
    throw ConfigError("[train] batch_size exceeds the training partition");
  }

  filter.corpus.validate();
  filter.model.validate();
  filter.hyper.validate();
  filter.probe.validate();
  if (filter.model.V != filter.corpus.V) {
    throw ConfigError("[filter] model_V = " + std::to_string(filter.model.V) + " but V = " +
                      std::to_string(filter.corpus.V));
  }
  if (filter.model.max_len < filter.corpus.max_length()) {
    throw ConfigError("[filter] max_len = " + std::to_string(filter.model.max_len) +
                      " is shorter than the longest corpus sequence (" + std::to_string(filter.corpus.max_length()) +
                      ")");
  }
  const filter::Token parity = filter.probe.parity_token;
  if (parity < filter::kFirstFreeToken || parity >= filter.corpus.V || filter.corpus.is_emotion_token(parity)) {
    throw ConfigError("[filter] probe_parity_token must be a neutral token");
  }
  if (!(filter.holdout_fraction > 0.0 && filter.holdout_fraction < 1.0)) {
    throw ConfigError("[filter] holdout_fraction must lie in (0, 1)");
  }
}

std::string ExperimentConfig::to_ini() const {
  std::ostringstream out;
  out << "format_version = " << kConfigVersion << '\n';
  for (const Section& section : schema()) {
    out << '\n' << '[' << section.name << "]\n";
    for (const Field& f : section.fields) {
      const std::string value = f.get(*this);
      if (value.empty()) continue;
      out << f.key << " = " << value << '\n';
    }
  }
  return out.str();
}

std::string ExperimentConfig::digest() const { return sha256_hex(to_ini()); }

ExperimentConfig parse_config(std::string_view text) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }

  ExperimentConfig config = defaults();
  std::set<std::string> model_dims_given;
  bool version_seen = false;
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      if (name != "format_version") throw ConfigError("config: key '" + name + "' outside any section");
      if (node.data() != std::to_string(kConfigVersion)) {
        throw ConfigError("config: unsupported format_version '" + node.data() + "'");
      }
      version_seen = true;
      continue;
    }
    const auto section = std::find_if(schema().begin(), schema().end(),
                                      [&](const Section& s) { return s.name == name; });
    if (section == schema().end()) throw ConfigError("config: unknown section [" + name + "]");
    for (const auto& [key, value] : node) {
      const auto f = std::find_if(section->fields.begin(), section->fields.end(),
                                  [&](const Field& fld) { return fld.key == key; });
      if (f == section->fields.end()) throw ConfigError("config: unknown key '" + key + "' in [" + name + "]");
      if (!value.empty()) throw ConfigError("config: nested value under '" + key + "'");
      try {
        f->set(config, value.data());
      } catch (const ConfigError& e) {
        throw ConfigError("config [" + name + "] " + key + ": " + e.what());
      }
      if (name == "model") model_dims_given.insert(key);
    }
  }
  if (!version_seen) throw ConfigError("config: missing format_version");

  auto fill = [&](const char* key, std::size_t& model_value, std::size_t env_value) {
    if (!model_dims_given.count(key)) model_value = env_value;
  };
  fill("d_v", config.model.d_v, config.env.d_v);
  fill("d_a_mod", config.model.d_a_mod, config.env.d_a_mod);
  fill("d_i", config.model.d_i, config.env.d_i);
  fill("K", config.model.K, config.env.K);
  fill("M", config.model.M, config.env.M);
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_text_file(path));
}

}  // namespace lewm::harness
