#include <algorithm>
#include <set>
#include <sstream>

#include "lewm/errors.hpp"
#include "lewm/filter.hpp"

namespace lewm::filter {

namespace {

constexpr int kCorpusVersion = 1;

}  // namespace

Polarity parse_polarity(std::string_view name) {
  if (name == "none") return Polarity::none;
  if (name == "positive") return Polarity::positive;
  if (name == "negative") return Polarity::negative;
  throw ConfigError("unknown polarity '" + std::string(name) + "'");
}

std::string_view polarity_name(Polarity p) {
  switch (p) {
    case Polarity::positive:
      return "positive";
    case Polarity::negative:
      return "negative";
    case Polarity::none:
      break;
  }
  return "none";
}

NeutralizeMode parse_neutralize_mode(std::string_view name) {
  if (name == "remove") return NeutralizeMode::remove;
  if (name == "mask") return NeutralizeMode::mask;
  throw ConfigError("unknown neutralize mode '" + std::string(name) + "' (expected remove or mask)");
}

std::string_view neutralize_mode_name(NeutralizeMode m) {
  return m == NeutralizeMode::mask ? "mask" : "remove";
}

std::vector<Token> CorpusSpec::neutral_tokens() const {
  std::vector<Token> out;
  for (Token t = kFirstFreeToken; t < V; ++t) {
    if (!is_emotion_token(t)) out.push_back(t);
  }
  return out;
}

bool CorpusSpec::is_emotion_token(Token t) const {
  return std::find(positive_tokens.begin(), positive_tokens.end(), t) != positive_tokens.end() ||
         std::find(negative_tokens.begin(), negative_tokens.end(), t) != negative_tokens.end();
}

void CorpusSpec::validate() const {
  if (n_samples == 0) throw ConfigError("filter corpus: n_samples must be >= 1");
  if (!(emotional_fraction > 0.0 && emotional_fraction < 1.0)) {
    throw ConfigError("filter corpus: emotional_fraction must lie strictly between 0 and 1");
  }
  if (positive_tokens.empty() || negative_tokens.empty()) {
    throw ConfigError("filter corpus: both polarities need at least one token");
  }
  std::set<Token> seen;
  for (const auto* group : {&positive_tokens, &negative_tokens}) {
    for (Token t : *group) {
      if (t < kFirstFreeToken) throw ConfigError("filter corpus: emotion token " + std::to_string(t) + " is reserved");
      if (t >= V) throw ConfigError("filter corpus: emotion token " + std::to_string(t) + " is outside the vocabulary");
      if (!seen.insert(t).second) throw ConfigError("filter corpus: emotion token " + std::to_string(t) + " listed twice");
    }
  }
  if (neutral_tokens().empty()) throw ConfigError("filter corpus: no neutral tokens left in the vocabulary");
  if (min_content == 0 || min_content > max_content) {
    throw ConfigError("filter corpus: need 1 <= min_content <= max_content");
  }
  if (max_emotion_tokens == 0) throw ConfigError("filter corpus: max_emotion_tokens must be >= 1");
}

std::vector<FilterTriple> gen_filter_corpus(const CorpusSpec& spec, Rng& rng) {
  spec.validate();
  const std::vector<Token> neutral = spec.neutral_tokens();
  const std::uint64_t base = rng.next_u64();
  std::vector<FilterTriple> out;
  out.reserve(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    Rng r(mix_seed(base, i));
    const std::size_t len = spec.min_content + r.below(spec.max_content - spec.min_content + 1);
    TokenSeq content;
    for (std::size_t j = 0; j < len; ++j) content.push_back(neutral[r.below(neutral.size())]);

    FilterTriple t;
    t.e = r.uniform() < spec.emotional_fraction;
    TokenSeq body = content;
    if (t.e) {
      t.polarity = r.below(2) == 0 ? Polarity::positive : Polarity::negative;
      const auto& pool = t.polarity == Polarity::positive ? spec.positive_tokens : spec.negative_tokens;
      const std::size_t n_emo = 1 + r.below(spec.max_emotion_tokens);
      for (std::size_t k = 0; k < n_emo; ++k) {
        const Token tok = pool[r.below(pool.size())];
        body.insert(body.begin() + static_cast<std::ptrdiff_t>(r.below(body.size() + 1)), tok);
      }
    }
    t.x.push_back(kBos);
    t.x.insert(t.x.end(), body.begin(), body.end());
    t.x.push_back(kEos);
    if (!t.e) {
      t.y = t.x;
    } else if (spec.mode == NeutralizeMode::remove) {
      t.y.push_back(kBos);
      t.y.insert(t.y.end(), content.begin(), content.end());
      t.y.push_back(kEos);
    } else {
      t.y = t.x;
      for (Token& tok : t.y) {
        if (spec.is_emotion_token(tok)) tok = kNeutralMask;
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

void validate_triple(const CorpusSpec& spec, const FilterTriple& t) {
  auto fail = [](const std::string& what) { throw SchemaError("filter triple: " + what); };
  for (const TokenSeq* seq : {&t.x, &t.y}) {
    if (seq->size() < 2 || seq->front() != kBos || seq->back() != kEos) fail("sequence is not BOS ... EOS");
    for (Token tok : *seq) {
      if (tok >= spec.V) fail("token " + std::to_string(tok) + " outside the vocabulary");
    }
  }
  const auto count_emotion = [&](const TokenSeq& seq, Polarity* seen) {
    std::size_t n = 0;
    for (Token tok : seq) {
      if (!spec.is_emotion_token(tok)) continue;
      ++n;
      const bool pos = std::find(spec.positive_tokens.begin(), spec.positive_tokens.end(), tok) !=
                       spec.positive_tokens.end();
      const Polarity p = pos ? Polarity::positive : Polarity::negative;
      if (seen && *seen != Polarity::none && *seen != p) fail("mixed polarities in one sample");
      if (seen) *seen = p;
    }
    return n;
  };
  if (!t.e) {
    if (t.y != t.x) fail("neutral sample must be its own neutralization");
    if (count_emotion(t.x, nullptr) != 0) fail("neutral sample contains emotion tokens");
    if (t.polarity != Polarity::none) fail("neutral sample carries a polarity");
    return;
  }
  Polarity seen = Polarity::none;
  if (count_emotion(t.x, &seen) == 0) fail("emotional sample has no emotion token");
  if (count_emotion(t.y, nullptr) != 0) fail("neutralized sequence still contains emotion tokens");
  if (seen != t.polarity) fail("polarity label does not match the emotion tokens");
}

void serialize_corpus(const std::vector<FilterTriple>& corpus, std::size_t V,
                      const std::filesystem::path& path) {
  std::string out = Json{{"format_version", kCorpusVersion}, {"V", V}}.dump();
  out += '\n';
  for (const FilterTriple& t : corpus) {
    out += Json{{"x", t.x}, {"y", t.y}, {"e", t.e ? 1 : 0}, {"polarity", polarity_name(t.polarity)}}.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

std::vector<FilterTriple> deserialize_corpus(const std::filesystem::path& path, std::size_t* V_out) {
  std::istringstream in(read_text_file(path));
  std::string line;
  std::size_t line_no = 0;
  std::size_t V = 0;
  std::vector<FilterTriple> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const Json j = Json::parse(line);
      if (line_no == 1) {
        if (j.at("format_version").get<int>() != kCorpusVersion) {
          throw ParseError("unsupported corpus format_version", line_no);
        }
        V = j.at("V").get<std::size_t>();
        continue;
      }
      FilterTriple t;
      t.x = j.at("x").get<TokenSeq>();
      t.y = j.at("y").get<TokenSeq>();
      t.e = j.at("e").get<int>() != 0;
      t.polarity = parse_polarity(j.at("polarity").get<std::string>());
      for (const TokenSeq* seq : {&t.x, &t.y}) {
        for (Token tok : *seq) {
          if (tok >= V) throw SchemaError("line " + std::to_string(line_no) + ": token outside the vocabulary");
        }
      }
      out.push_back(std::move(t));
    } catch (const Json::exception& e) {
      throw ParseError(std::string("malformed corpus record: ") + e.what(), line_no);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  if (V == 0) throw ParseError("missing corpus header", 1);
  if (V_out) *V_out = V;
  return out;
}

}  // namespace lewm::filter
