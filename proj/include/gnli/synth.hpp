#pragma once

// Rule-generated NLI corpus with a matching pretrained-vector file.
//
// Sentences read "DET ADJ NOUN VERB [near DET PLACE]". Each noun, adjective
// and verb concept has several unrelated surface spellings that share almost
// the same pretrained vector; adjectives come in antonym pairs whose vectors
// are negatives of each other. The label depends only on concepts:
//   entailment     same adjective, same noun
//   contradiction  antonym adjective, same noun
//   neutral        same adjective, different noun
// Training pairs use only the first `forms - held_out_forms` spellings; the
// hypotheses of dev pairs use only the held-out spellings, so generalizing to
// dev needs the pretrained vectors rather than the spellings.

#include <cstdint>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnli/data.hpp"
#include "gnli/model.hpp"

namespace gnli {

struct SynthConfig {
  std::size_t nouns = 6;
  std::size_t adjective_pairs = 3;
  std::size_t verbs = 3;
  std::size_t places = 3;
  std::size_t forms = 3;           // spellings per concept
  std::size_t held_out_forms = 1;  // reserved for dev hypotheses
  std::size_t word_dim = 16;
  Real synonym_noise = 0.05;
  std::uint64_t seed = 7;

  void validate() const {
    if (nouns < 2 || adjective_pairs < 1 || verbs < 1 || places < 1)
      throw ConfigError("synth: need at least 2 nouns, 1 adjective pair, 1 verb, 1 place");
    if (forms < 1 || held_out_forms >= forms) throw ConfigError("synth: held_out_forms must be below forms");
    if (word_dim == 0) throw ConfigError("synth: word_dim must be positive");
  }
};

struct SynthCorpus {
  std::vector<NLIExample> train;
  std::vector<NLIExample> dev;
  std::vector<std::pair<std::string, std::vector<Real>>> vectors;  // one entry per spelling

  /// Vocabulary over both splits, so held-out spellings still reach their pretrained rows.
  Vocab vocab() const {
    std::vector<NLIExample> all = train;
    all.insert(all.end(), dev.begin(), dev.end());
    return build_vocab(all);
  }

  void write_vectors(std::ostream& out) const {
    for (const auto& [word, v] : vectors) {
      out << word;
      for (Real x : v) out << ' ' << format_real(x);
      out << '\n';
    }
  }

  WordVectors word_vectors(const Vocab& vocab, std::uint64_t seed) const {
    std::stringstream text;
    write_vectors(text);
    return parse_word_vectors(text, vocab, vectors.empty() ? 0 : vectors.front().second.size(), seed);
  }
};

namespace detail {

struct SynthConcept {
  std::vector<std::string> forms;
};

class SynthLexicon {
 public:
  SynthLexicon(const SynthConfig& cfg, std::mt19937_64& rng) : cfg_(cfg), rng_(rng) {}

  std::string fresh_word() {
    std::uniform_int_distribution<int> len(3, 6), letter(0, 25);
    for (;;) {
      std::string w;
      for (int k = len(rng_); k > 0; --k) w += static_cast<char>('a' + letter(rng_));
      if (used_.insert(w).second) return w;
    }
  }

  std::vector<Real> random_direction() {
    std::normal_distribution<Real> g(0.0, 1.0);
    std::vector<Real> v(cfg_.word_dim);
    for (auto& x : v) x = g(rng_);
    return v;
  }

  SynthConcept concept_with(const std::vector<Real>& centre, std::vector<std::pair<std::string, std::vector<Real>>>& out) {
    std::normal_distribution<Real> noise(0.0, cfg_.synonym_noise);
    SynthConcept c;
    for (std::size_t f = 0; f < cfg_.forms; ++f) {
      c.forms.push_back(fresh_word());
      std::vector<Real> v = centre;
      for (auto& x : v) x += noise(rng_);
      out.emplace_back(c.forms.back(), std::move(v));
    }
    return c;
  }

 private:
  const SynthConfig& cfg_;
  std::mt19937_64& rng_;
  std::set<std::string> used_{"near", "the", "a"};
};

}  // namespace detail

/// `n_train` and `n_dev` pairs with labels cycling entailment, neutral, contradiction.
inline SynthCorpus make_synthetic_corpus(const SynthConfig& cfg, std::size_t n_train, std::size_t n_dev) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  SynthCorpus corpus;
  detail::SynthLexicon lex(cfg, rng);

  std::vector<detail::SynthConcept> nouns, adjectives, verbs, places;
  for (std::size_t k = 0; k < cfg.nouns; ++k) nouns.push_back(lex.concept_with(lex.random_direction(), corpus.vectors));
  for (std::size_t k = 0; k < cfg.adjective_pairs; ++k) {
    auto dir = lex.random_direction();
    adjectives.push_back(lex.concept_with(dir, corpus.vectors));
    for (auto& x : dir) x = -x;
    adjectives.push_back(lex.concept_with(dir, corpus.vectors));  // antonym of the previous one
  }
  for (std::size_t k = 0; k < cfg.verbs; ++k) verbs.push_back(lex.concept_with(lex.random_direction(), corpus.vectors));
  for (std::size_t k = 0; k < cfg.places; ++k) places.push_back(lex.concept_with(lex.random_direction(), corpus.vectors));
  for (const char* w : {"the", "a", "near"}) corpus.vectors.emplace_back(w, lex.random_direction());

  const std::size_t seen_forms = cfg.forms - cfg.held_out_forms;
  const auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  const auto spelling = [&](const detail::SynthConcept& c, bool held_out) {
    return held_out ? c.forms[seen_forms + pick(cfg.held_out_forms)] : c.forms[pick(seen_forms)];
  };
  const auto sentence = [&](std::size_t adj, std::size_t noun, bool held_out) {
    std::vector<std::string> s{pick(2) ? "the" : "a", spelling(adjectives[adj], held_out),
                               spelling(nouns[noun], held_out), spelling(verbs[pick(verbs.size())], held_out)};
    if (pick(2)) {
      s.push_back("near");
      s.push_back(pick(2) ? "the" : "a");
      s.push_back(spelling(places[pick(places.size())], held_out));
    }
    return s;
  };
  const auto generate = [&](std::size_t count, bool held_out_hypothesis, std::vector<NLIExample>& out) {
    for (std::size_t i = 0; i < count; ++i) {
      const auto label = static_cast<Label>(i % kNumClasses);
      const std::size_t adj = pick(adjectives.size()), noun = pick(nouns.size());
      std::size_t h_adj = adj, h_noun = noun;
      if (label == Label::contradiction) h_adj = adj ^ 1;
      if (label == Label::neutral) h_noun = (noun + 1 + pick(nouns.size() - 1)) % nouns.size();
      out.push_back({sentence(adj, noun, false), sentence(h_adj, h_noun, held_out_hypothesis), label, "synthetic"});
    }
  };
  generate(n_train, false, corpus.train);
  generate(n_dev, cfg.held_out_forms > 0, corpus.dev);
  return corpus;
}

/// Writes examples as SNLI-style JSONL (sentence1, sentence2, gold_label, genre).
inline void write_jsonl(std::ostream& out, std::span<const NLIExample> examples) {
  const auto join = [](const std::vector<std::string>& toks) {
    std::string s;
    for (const auto& t : toks) s += (s.empty() ? "" : " ") + t;
    return s;
  };
  for (const auto& ex : examples) {
    nlohmann::json obj{{"sentence1", join(ex.premise)},
                       {"sentence2", join(ex.hypothesis)},
                       {"gold_label", std::string(to_string(ex.label))}};
    if (ex.genre) obj["genre"] = *ex.genre;
    out << obj.dump() << '\n';
  }
}

}  // namespace gnli
