#pragma once

// Corpus ingestion, vocabulary, pretrained word vectors and padded batches.

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "gnli/tensor.hpp"

namespace gnli {

enum class Label : std::uint8_t { entailment = 0, neutral = 1, contradiction = 2 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<std::string_view, kNumClasses> kLabelNames{"entailment", "neutral", "contradiction"};

inline std::string_view to_string(Label label) { return kLabelNames[static_cast<std::size_t>(label)]; }

inline std::optional<Label> parse_label(std::string_view text) {
  for (std::size_t k = 0; k < kNumClasses; ++k)
    if (kLabelNames[k] == text) return static_cast<Label>(k);
  return std::nullopt;
}

struct NLIExample {
  std::vector<std::string> premise;
  std::vector<std::string> hypothesis;
  Label label = Label::neutral;
  std::optional<std::string> genre;
};

// ---------------------------------------------------------------------------
// Tokenization

inline std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

/// Leaves of a bracketed binary parse such as "( ( The cat ) ( sat . ) )".
inline std::vector<std::string> tokens_from_parse(std::string_view parse) {
  std::vector<std::string> out;
  for (auto& tok : split_whitespace(parse))
    if (tok != "(" && tok != ")") out.push_back(std::move(tok));
  return out;
}

/// Splits UTF-8 text into code points, each kept as its byte sequence.
/// Invalid lead bytes are emitted as single-byte characters.
inline std::vector<std::string_view> utf8_chars(std::string_view word) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const auto lead = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if (lead >= 0xF0 && lead < 0xF8) len = 4;
    else if (lead >= 0xE0) len = lead < 0xF0 ? 3 : 1;
    else if (lead >= 0xC0) len = 2;
    if (i + len > word.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k)
      if ((static_cast<unsigned char>(word[i + k]) & 0xC0) != 0x80) len = 1;
    out.push_back(word.substr(i, len));
    i += len;
  }
  return out;
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// ---------------------------------------------------------------------------
// Corpus

enum class CorpusFormat { jsonl };

struct CorpusReport {
  std::size_t lines = 0;
  std::size_t loaded = 0;
  std::size_t skipped_unlabeled = 0;  // gold label absent or "-"
  std::size_t malformed = 0;
  std::vector<std::string> warnings;
};

struct Corpus {
  std::vector<NLIExample> examples;
  CorpusReport report;
};

namespace detail {

inline std::vector<std::string> sentence_tokens(const nlohmann::json& obj, const char* parse_key,
                                                const char* text_key) {
  if (auto it = obj.find(parse_key); it != obj.end() && it->is_string()) {
    auto toks = tokens_from_parse(it->get<std::string>());
    if (!toks.empty()) return toks;
  }
  if (auto it = obj.find(text_key); it != obj.end() && it->is_string()) return split_whitespace(it->get<std::string>());
  return {};
}

}  // namespace detail

/// Reads SNLI/MultiNLI-style JSONL (sentence1, sentence2, gold_label and the
/// optional *_binary_parse and genre fields). Unlabeled records are skipped and
/// counted; malformed records are skipped unless they exceed 10% of the lines.
/// With `require_label` false, unlabeled pairs are kept with a placeholder
/// entailment label (for prediction).
inline Corpus parse_corpus(std::istream& in, std::string_view source = "<stream>", bool require_label = true) {
  Corpus corpus;
  auto& rep = corpus.report;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++rep.lines;
    nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) {
      ++rep.malformed;
      continue;
    }
    const auto gold = obj.find("gold_label");
    const bool unlabeled =
        gold == obj.end() || gold->is_null() || (gold->is_string() && gold->get<std::string>() == "-");
    if (unlabeled && require_label) {
      ++rep.skipped_unlabeled;
      continue;
    }
    const auto label = unlabeled          ? std::optional<Label>(Label::entailment)
                       : gold->is_string() ? parse_label(gold->get<std::string>())
                                           : std::nullopt;
    NLIExample ex;
    ex.premise = detail::sentence_tokens(obj, "sentence1_binary_parse", "sentence1");
    ex.hypothesis = detail::sentence_tokens(obj, "sentence2_binary_parse", "sentence2");
    if (!label || ex.premise.empty() || ex.hypothesis.empty()) {
      ++rep.malformed;
      continue;
    }
    ex.label = *label;
    if (auto g = obj.find("genre"); g != obj.end() && g->is_string()) ex.genre = g->get<std::string>();
    corpus.examples.push_back(std::move(ex));
  }
  rep.loaded = corpus.examples.size();
  if (rep.lines == 0) rep.warnings.push_back(std::string(source) + ": empty corpus");
  if (rep.malformed * 10 > rep.lines) {
    throw DataError(std::string(source) + ": " + std::to_string(rep.malformed) + " of " + std::to_string(rep.lines) +
                    " lines malformed (limit 10%)");
  }
  if (rep.malformed > 0) rep.warnings.push_back(std::string(source) + ": skipped " + std::to_string(rep.malformed) +
                                                " malformed lines");
  return corpus;
}

inline Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format = CorpusFormat::jsonl,
                          bool require_label = true) {
  (void)format;
  std::ifstream in(path);
  if (!in) throw DataError("cannot read corpus " + path.string());
  return parse_corpus(in, path.string(), require_label);
}

// ---------------------------------------------------------------------------
// Vocabulary

/// Word- and character-level id maps. Id 0 is padding and id 1 the unknown
/// symbol at both levels; the rest are dense and ordered by descending
/// frequency, ties broken lexicographically.
class Vocab {
 public:
  static constexpr std::int64_t pad_id = 0;
  static constexpr std::int64_t unk_id = 1;
  static constexpr std::string_view pad_token = "<pad>";
  static constexpr std::string_view unk_token = "<unk>";

  Vocab() : words_{std::string(pad_token), std::string(unk_token)}, chars_(words_) { reindex(); }

  /// Rebuilds a vocabulary from id-ordered lists (checkpoint restore).
  static Vocab from_lists(std::vector<std::string> words, std::vector<std::string> chars) {
    for (const auto* list : {&words, &chars}) {
      if (list->size() < 2 || (*list)[0] != pad_token || (*list)[1] != unk_token)
        throw DataError("vocab: lists must start with <pad>, <unk>");
    }
    Vocab v;
    v.words_ = std::move(words);
    v.chars_ = std::move(chars);
    v.reindex();
    return v;
  }

  std::int64_t word_id(std::string_view w) const {
    auto it = word_index_.find(std::string(w));
    return it == word_index_.end() ? unk_id : it->second;
  }
  std::int64_t char_id(std::string_view c) const {
    auto it = char_index_.find(std::string(c));
    return it == char_index_.end() ? unk_id : it->second;
  }
  const std::string& word(std::int64_t id) const { return words_.at(static_cast<std::size_t>(id)); }
  const std::string& character(std::int64_t id) const { return chars_.at(static_cast<std::size_t>(id)); }
  std::size_t word_count() const { return words_.size(); }
  std::size_t char_count() const { return chars_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  const std::vector<std::string>& chars() const { return chars_; }

  bool operator==(const Vocab& other) const { return words_ == other.words_ && chars_ == other.chars_; }

 private:
  void reindex() {
    word_index_.clear();
    char_index_.clear();
    for (std::size_t i = 0; i < words_.size(); ++i) word_index_.emplace(words_[i], static_cast<std::int64_t>(i));
    for (std::size_t i = 0; i < chars_.size(); ++i) char_index_.emplace(chars_[i], static_cast<std::int64_t>(i));
  }

  std::vector<std::string> words_;
  std::vector<std::string> chars_;
  std::unordered_map<std::string, std::int64_t> word_index_;
  std::unordered_map<std::string, std::int64_t> char_index_;
};

/// Words seen at least `min_count` times get ids; every observed character gets one.
inline Vocab build_vocab(std::span<const NLIExample> examples, std::size_t min_count = 1) {
  std::map<std::string, std::size_t> word_freq;
  std::map<std::string, std::size_t> char_freq;
  for (const auto& ex : examples)
    for (const auto* side : {&ex.premise, &ex.hypothesis})
      for (const auto& w : *side) {
        ++word_freq[w];
        for (auto c : utf8_chars(w)) ++char_freq[std::string(c)];
      }
  const auto ranked = [](const std::map<std::string, std::size_t>& freq, std::size_t cutoff) {
    std::vector<std::pair<std::string, std::size_t>> items;
    for (const auto& [tok, n] : freq)
      if (n >= cutoff && tok != Vocab::pad_token && tok != Vocab::unk_token) items.emplace_back(tok, n);
    // map iteration is already lexicographic; stable sort keeps that order within ties
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    return items;
  };
  std::vector<std::string> words{std::string(Vocab::pad_token), std::string(Vocab::unk_token)};
  std::vector<std::string> chars = words;
  for (auto& [w, n] : ranked(word_freq, std::max<std::size_t>(min_count, 1))) words.push_back(w);
  for (auto& [c, n] : ranked(char_freq, 1)) chars.push_back(c);
  return Vocab::from_lists(std::move(words), std::move(chars));
}

// ---------------------------------------------------------------------------
// Pretrained word vectors

struct WordVectorReport {
  std::size_t lines = 0;
  std::size_t exact_hits = 0;
  std::size_t lowercase_hits = 0;
  std::size_t misses = 0;  // vocab words (excluding padding) given Gaussian rows
};

struct WordVectors {
  Tensor table;  // [word_count, dim], requires_grad = false
  WordVectorReport report;
};

inline constexpr Real kOovStddev = 0.1;

/// Builds the frozen word table for `vocab` from whitespace-separated
/// `token v1 ... v_dim` lines. Each vocabulary word takes the row of its exact
/// token, else of its lowercased form, else a seeded N(0, sigma^2) sample.
/// The padding row is zero.
inline WordVectors parse_word_vectors(std::istream& in, const Vocab& vocab, std::size_t dim, std::uint64_t seed,
                                      Real sigma = kOovStddev, std::string_view source = "<stream>") {
  const std::size_t rows = vocab.word_count();
  std::unordered_map<std::string, std::vector<std::size_t>> by_lower;
  for (std::size_t id = 2; id < rows; ++id) by_lower[ascii_lower(vocab.word(static_cast<std::int64_t>(id)))].push_back(id);

  std::vector<Real> data(rows * dim, Real{0});
  std::vector<std::uint8_t> exact(rows, 0), lower(rows, 0);
  WordVectors out;
  std::string line;
  std::size_t line_no = 0;
  std::vector<Real> values(dim);
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    ++out.report.lines;
    const auto fields = split_whitespace(line);
    if (fields.size() != dim + 1) {
      throw DataError(std::string(source) + ": line " + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                      " values, got " + std::to_string(fields.size() - 1));
    }
    for (std::size_t k = 0; k < dim; ++k) {
      const std::string& f = fields[k + 1];
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), values[k]);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        throw DataError(std::string(source) + ": line " + std::to_string(line_no) + ": bad number '" + f + "'");
      }
    }
    const std::string& token = fields[0];
    const auto id = vocab.word_id(token);
    if (id >= 2 && !exact[static_cast<std::size_t>(id)]) {
      exact[static_cast<std::size_t>(id)] = 1;
      std::copy(values.begin(), values.end(), data.begin() + static_cast<std::ptrdiff_t>(id * dim));
    }
    // A file token equal to a word's lowercased form backs that word unless an exact row shows up.
    if (auto it = by_lower.find(token); it != by_lower.end()) {
      for (std::size_t w : it->second) {
        if (exact[w] || lower[w]) continue;
        lower[w] = 1;
        std::copy(values.begin(), values.end(), data.begin() + static_cast<std::ptrdiff_t>(w * dim));
      }
    }
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> gauss(0.0, sigma);
  for (std::size_t id = 1; id < rows; ++id) {
    if (exact[id]) {
      ++out.report.exact_hits;
    } else if (lower[id]) {
      ++out.report.lowercase_hits;
    } else {
      ++out.report.misses;
      for (std::size_t k = 0; k < dim; ++k) data[id * dim + k] = gauss(rng);
    }
  }
  out.table = Tensor::from({rows, dim}, std::move(data), false);
  return out;
}

inline WordVectors load_word_vectors(const std::filesystem::path& path, const Vocab& vocab, std::size_t dim,
                                     std::uint64_t seed, Real sigma = kOovStddev) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read word vectors " + path.string());
  return parse_word_vectors(in, vocab, dim, seed, sigma, path.string());
}

/// Word table with every non-padding row drawn from N(0, sigma^2); used when no vector file is given.
inline WordVectors random_word_vectors(const Vocab& vocab, std::size_t dim, std::uint64_t seed,
                                       Real sigma = kOovStddev) {
  std::istringstream empty;
  return parse_word_vectors(empty, vocab, dim, seed, sigma);
}

// ---------------------------------------------------------------------------
// Batches

inline constexpr std::size_t kMaxWordChars = 20;

/// One side (premise or hypothesis) of a batch, row-major over (example, position[, char]).
struct SideBatch {
  std::size_t batch = 0;
  std::size_t max_len = 0;
  std::size_t max_chars = 0;
  std::vector<std::int64_t> word_ids;      // batch * max_len
  std::vector<std::int64_t> char_ids;      // batch * max_len * max_chars
  std::vector<std::size_t> word_lengths;   // characters per token after clipping; 0 at padding
  std::vector<Real> mask;                  // 1 at real tokens, 0 at padding
  std::vector<std::size_t> lengths;        // tokens per sentence

  std::size_t at(std::size_t b, std::size_t t) const { return b * max_len + t; }
};

struct Batch {
  SideBatch premise;
  SideBatch hypothesis;
  std::vector<Label> labels;
  std::vector<std::size_t> source;  // index of each row in the originating example list
  std::size_t size() const { return labels.size(); }
};

inline SideBatch encode_side(const std::vector<const std::vector<std::string>*>& sentences, const Vocab& vocab,
                             std::size_t char_clip = kMaxWordChars) {
  SideBatch s;
  s.batch = sentences.size();
  for (const auto* sent : sentences) {
    s.max_len = std::max(s.max_len, sent->size());
    for (const auto& w : *sent) s.max_chars = std::max(s.max_chars, std::min(utf8_chars(w).size(), char_clip));
  }
  s.max_chars = std::max<std::size_t>(s.max_chars, 1);
  s.word_ids.assign(s.batch * s.max_len, Vocab::pad_id);
  s.char_ids.assign(s.batch * s.max_len * s.max_chars, Vocab::pad_id);
  s.word_lengths.assign(s.batch * s.max_len, 0);
  s.mask.assign(s.batch * s.max_len, Real{0});
  s.lengths.resize(s.batch);
  for (std::size_t b = 0; b < s.batch; ++b) {
    const auto& sent = *sentences[b];
    s.lengths[b] = sent.size();
    for (std::size_t t = 0; t < sent.size(); ++t) {
      const std::size_t pos = s.at(b, t);
      s.word_ids[pos] = vocab.word_id(sent[t]);
      s.mask[pos] = 1;
      const auto chars = utf8_chars(sent[t]);
      const std::size_t n = std::min(chars.size(), char_clip);
      s.word_lengths[pos] = n;
      for (std::size_t c = 0; c < n; ++c) s.char_ids[pos * s.max_chars + c] = vocab.char_id(chars[c]);
    }
  }
  return s;
}

inline Batch make_batch(std::span<const NLIExample> examples, std::span<const std::size_t> rows, const Vocab& vocab) {
  Batch batch;
  std::vector<const std::vector<std::string>*> prem, hyp;
  for (std::size_t r : rows) {
    const auto& ex = examples[r];
    prem.push_back(&ex.premise);
    hyp.push_back(&ex.hypothesis);
    batch.labels.push_back(ex.label);
    batch.source.push_back(r);
  }
  batch.premise = encode_side(prem, vocab);
  batch.hypothesis = encode_side(hyp, vocab);
  return batch;
}

/// Splits `examples` into padded batches of at most `batch_size`, in an order
/// shuffled by `seed` (or the original order when `shuffle` is false).
inline std::vector<Batch> batchify(std::span<const NLIExample> examples, std::size_t batch_size, const Vocab& vocab,
                                   std::uint64_t seed, bool shuffle = true) {
  if (batch_size == 0) throw ConfigError("batchify: batch_size must be >= 1");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    std::mt19937_64 rng(seed);
    // Fisher-Yates with explicit draws so the order does not depend on the standard library.
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  }
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.push_back(make_batch(examples, std::span<const std::size_t>(order).subspan(start, end - start), vocab));
  }
  return out;
}

/// Tokens of row `b`, mapped back through the vocabulary (unknown words become "<unk>").
inline std::vector<std::string> detokenize(const SideBatch& side, std::size_t b, const Vocab& vocab) {
  std::vector<std::string> out;
  for (std::size_t t = 0; t < side.lengths[b]; ++t) out.push_back(vocab.word(side.word_ids[side.at(b, t)]));
  return out;
}

}  // namespace gnli
