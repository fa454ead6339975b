#pragma once

// Token embeddings e_t = [c_t; w_t]: a character CNN with max-over-positions
// pooling concatenated with a frozen pretrained word vector.

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "gnli/data.hpp"
#include "gnli/tensor.hpp"

namespace gnli {

struct EmbedConfig {
  std::size_t char_dim = 15;
  std::vector<std::size_t> filter_widths{1, 3, 5};
  std::size_t filters_per_width = 100;
  std::size_t word_dim = 300;
  bool use_char = true;
  bool use_word = true;

  std::size_t char_output_dim() const { return filter_widths.size() * filters_per_width; }
  std::size_t output_dim() const { return (use_char ? char_output_dim() : 0) + (use_word ? word_dim : 0); }
  std::size_t max_width() const {
    return filter_widths.empty() ? 1 : *std::max_element(filter_widths.begin(), filter_widths.end());
  }
};

struct CharFilter {
  std::size_t width = 1;
  Tensor weight;  // [width * char_dim, filters]; window rows are laid out position-major
  Tensor bias;    // [filters]
};

struct EmbedParams {
  Tensor char_table;  // [char_count, char_dim]; row 0 (padding) stays zero
  std::vector<CharFilter> filters;
  Tensor word_table;  // [word_count, word_dim]; frozen
};

inline EmbedParams init_embed(const EmbedConfig& cfg, std::size_t char_count, Tensor word_table,
                              std::mt19937_64& rng) {
  EmbedParams p;
  std::normal_distribution<Real> gauss(0.0, 1.0);
  std::vector<Real> table(char_count * cfg.char_dim);
  for (std::size_t k = cfg.char_dim; k < table.size(); ++k) table[k] = 0.1 * gauss(rng);
  p.char_table = Tensor::from({char_count, cfg.char_dim}, std::move(table), true);
  for (std::size_t width : cfg.filter_widths) {
    const std::size_t fan_in = width * cfg.char_dim;
    const Real stddev = 1.0 / std::sqrt(static_cast<Real>(fan_in));
    std::vector<Real> w(fan_in * cfg.filters_per_width);
    for (auto& x : w) x = stddev * gauss(rng);
    p.filters.push_back({width, Tensor::from({fan_in, cfg.filters_per_width}, std::move(w), true),
                         Tensor::zeros({cfg.filters_per_width}, true)});
  }
  p.word_table = std::move(word_table);
  p.word_table.set_requires_grad(false);
  return p;
}

/// Character composition for `words` words stored row-major in `char_ids`
/// ([words, max_chars], padding id beyond each word's length). Returns
/// [words, widths * filters]. Windows are taken only where they start inside
/// the word; a word shorter than a filter gets one window zero-padded on the
/// right. Characters past `lengths[w]` are ignored.
inline Tensor char_compose_words(const EmbedParams& params, std::span<const std::int64_t> char_ids,
                                 std::span<const std::size_t> lengths, std::size_t max_chars) {
  const std::size_t words = lengths.size();
  if (char_ids.size() != words * max_chars) throw ShapeError("char_compose: char id count does not match lengths");
  if (params.filters.empty()) throw ConfigError("char_compose: no filters configured");
  const std::size_t char_dim = params.char_table.dim(1);
  std::size_t span = max_chars;
  for (const auto& f : params.filters) span = std::max(span, f.width);

  std::vector<std::int64_t> ids(words * span, Vocab::pad_id);
  std::vector<Real> char_mask(words * span, Real{0});
  for (std::size_t w = 0; w < words; ++w)
    for (std::size_t c = 0; c < std::min(lengths[w], max_chars); ++c) {
      ids[w * span + c] = char_ids[w * max_chars + c];
      char_mask[w * span + c] = 1;
    }
  Tensor chars = gather_rows(params.char_table, ids);
  chars = mul(chars, Tensor::from({words * span, 1}, std::move(char_mask)));
  chars = reshape(chars, {words, span, char_dim});

  std::vector<Tensor> pooled;
  for (const auto& f : params.filters) {
    const std::size_t windows = span - f.width + 1;
    std::vector<Tensor> shifted;
    for (std::size_t j = 0; j < f.width; ++j) shifted.push_back(slice(chars, 1, j, j + windows));
    Tensor unfolded = f.width == 1 ? shifted.front() : concat(shifted, 2);
    unfolded = reshape(unfolded, {words * windows, f.width * char_dim});
    Tensor act = relu(add(matmul(unfolded, f.weight), f.bias));
    std::vector<Real> valid(words * windows, Real{0});
    for (std::size_t w = 0; w < words; ++w) {
      const std::size_t n = lengths[w] >= f.width ? lengths[w] - f.width + 1 : 1;
      for (std::size_t p = 0; p < std::min(n, windows); ++p) valid[w * windows + p] = 1;
    }
    // Post-ReLU values are >= 0 and window 0 is always valid, so zeroed windows never win the max.
    act = mul(act, Tensor::from({words * windows, 1}, std::move(valid)));
    pooled.push_back(max(reshape(act, {words, windows, act.dim(1)}), 1));
  }
  return pooled.size() == 1 ? pooled.front() : concat(pooled, 1);
}

/// Character composition of a single word. Trailing padding ids are ignored.
inline Tensor char_compose(const EmbedParams& params, std::span<const std::int64_t> word_chars) {
  std::size_t length = 0;
  while (length < word_chars.size() && word_chars[length] != Vocab::pad_id) ++length;
  if (length == 0) throw ShapeError("char_compose: empty word");
  const std::vector<std::size_t> lengths{length};
  const Tensor out = char_compose_words(params, word_chars.first(length), lengths, length);
  return reshape(out, {out.dim(1)});
}

/// Embeddings of one sentence: [n, d_w].
inline Tensor embed_sentence(const EmbedParams& params, const EmbedConfig& cfg,
                             std::span<const std::int64_t> word_ids,
                             const std::vector<std::vector<std::int64_t>>& char_ids) {
  if (word_ids.empty()) throw ShapeError("embed_sentence: empty sentence");
  if (char_ids.size() != word_ids.size()) throw ShapeError("embed_sentence: one char sequence per word required");
  std::vector<Tensor> parts;
  if (cfg.use_char) {
    std::size_t max_chars = 1;
    for (const auto& w : char_ids) max_chars = std::max(max_chars, w.size());
    std::vector<std::int64_t> flat(word_ids.size() * max_chars, Vocab::pad_id);
    std::vector<std::size_t> lengths(word_ids.size());
    for (std::size_t t = 0; t < char_ids.size(); ++t) {
      if (char_ids[t].empty()) throw ShapeError("embed_sentence: empty word at position " + std::to_string(t));
      std::copy(char_ids[t].begin(), char_ids[t].end(), flat.begin() + static_cast<std::ptrdiff_t>(t * max_chars));
      lengths[t] = char_ids[t].size();
    }
    parts.push_back(char_compose_words(params, flat, lengths, max_chars));
  }
  if (cfg.use_word) parts.push_back(gather_rows(params.word_table, word_ids));
  if (parts.empty()) throw ConfigError("embed: both character and word embeddings disabled");
  return parts.size() == 1 ? parts.front() : concat(parts, 1);
}

/// Embeddings of one batch side in time-major layout: [max_len, batch, d_w].
/// Padded positions produce rows the encoder masks out.
inline Tensor embed_side(const EmbedParams& params, const EmbedConfig& cfg, const SideBatch& side) {
  const std::size_t steps = side.max_len, batch = side.batch;
  std::vector<std::int64_t> word_ids(steps * batch);
  std::vector<std::int64_t> char_ids(steps * batch * side.max_chars);
  std::vector<std::size_t> lengths(steps * batch);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t src = side.at(b, t), dst = t * batch + b;
      word_ids[dst] = side.word_ids[src];
      lengths[dst] = side.word_lengths[src];
      std::copy_n(side.char_ids.begin() + static_cast<std::ptrdiff_t>(src * side.max_chars), side.max_chars,
                  char_ids.begin() + static_cast<std::ptrdiff_t>(dst * side.max_chars));
    }
  std::vector<Tensor> parts;
  if (cfg.use_char) parts.push_back(char_compose_words(params, char_ids, lengths, side.max_chars));
  if (cfg.use_word) parts.push_back(gather_rows(params.word_table, word_ids));
  if (parts.empty()) throw ConfigError("embed: both character and word embeddings disabled");
  const Tensor flat = parts.size() == 1 ? parts.front() : concat(parts, 1);
  return reshape(flat, {steps, batch, flat.dim(1)});
}

}  // namespace gnli
