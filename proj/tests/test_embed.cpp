#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "gnli/embed.hpp"
#include "test_util.hpp"

using namespace gnli;
using fixtures::random_tensor;

namespace {

EmbedParams random_params(std::size_t chars, std::size_t char_dim, std::vector<std::size_t> widths, std::size_t filters,
                          std::mt19937_64& rng) {
  EmbedParams p;
  p.char_table = random_tensor({chars, char_dim}, rng, -1, 1, true);
  auto d = p.char_table.mutable_data();
  std::fill(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(char_dim), Real{0});
  for (auto w : widths)
    p.filters.push_back({w, random_tensor({w * char_dim, filters}, rng, -1, 1, true), random_tensor({filters}, rng, -0.5, 0.5, true)});
  p.word_table = random_tensor({5, 3}, rng);
  return p;
}

// Direct enumeration: every window that starts inside the word, characters
// beyond the word read as zero vectors, ReLU, then the maximum over windows.
std::vector<Real> brute_force_compose(const EmbedParams& p, const std::vector<std::int64_t>& word) {
  const std::size_t dim = p.char_table.dim(1);
  std::vector<Real> out;
  for (const auto& f : p.filters) {
    const std::size_t n = f.bias.size();
    const std::size_t windows = word.size() >= f.width ? word.size() - f.width + 1 : 1;
    for (std::size_t ch = 0; ch < n; ++ch) {
      Real best = -1;
      for (std::size_t s = 0; s < windows; ++s) {
        Real z = f.bias[ch];
        for (std::size_t j = 0; j < f.width; ++j) {
          if (s + j >= word.size()) continue;
          const auto id = static_cast<std::size_t>(word[s + j]);
          for (std::size_t k = 0; k < dim; ++k) z += p.char_table[id * dim + k] * f.weight[(j * dim + k) * n + ch];
        }
        best = std::max(best, std::max(z, Real{0}));
      }
      out.push_back(best);
    }
  }
  return out;
}

std::vector<std::int64_t> random_word(std::size_t len, std::size_t chars, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::int64_t> id(2, static_cast<std::int64_t>(chars) - 1);
  std::vector<std::int64_t> w(len);
  for (auto& c : w) c = id(rng);
  return w;
}

}  // namespace

TEST(CharCompose, SingleCharWithZeroWeightsGivesReluOfBias) {
  EmbedParams p;
  p.char_table = Tensor::zeros({4, 3});
  const std::vector<Real> bias{0.7, -0.2, 0.0, 1.5};
  for (std::size_t w : {1, 3, 5}) p.filters.push_back({w, Tensor::zeros({w * 3, 4}), Tensor::from({4}, bias)});
  const std::vector<std::int64_t> word{2};
  const Tensor c = char_compose(p, word);
  ASSERT_EQ(c.size(), 12u);
  for (std::size_t k = 0; k < 12; ++k) EXPECT_EQ(c[k], std::max(bias[k % 4], 0.0));
}

TEST(CharCompose, MatchesBruteForceWindowEnumeration) {
  std::mt19937_64 rng(11);
  const EmbedParams p = random_params(9, 3, {1, 3, 5}, 4, rng);
  for (std::size_t len = 1; len <= 8; ++len) {
    const auto word = random_word(len, 9, rng);
    const Tensor c = char_compose(p, word);
    const auto expected = brute_force_compose(p, word);
    for (std::size_t k = 0; k < expected.size(); ++k) EXPECT_NEAR(c[k], expected[k], 1e-12) << "len " << len;
  }
}

TEST(CharCompose, TrailingPaddingChangesNothing) {
  std::mt19937_64 rng(12);
  const EmbedParams p = random_params(9, 3, {1, 3, 5}, 4, rng);
  for (std::size_t len : {1, 2, 4}) {
    auto word = random_word(len, 9, rng);
    const Tensor plain = char_compose(p, word);
    word.resize(len + 6, Vocab::pad_id);
    EXPECT_EQ(fixtures::values(char_compose(p, word)), fixtures::values(plain));
  }
}

TEST(CharCompose, BatchedWordsMatchOneAtATime) {
  std::mt19937_64 rng(13);
  const EmbedParams p = random_params(9, 3, {1, 2, 4}, 3, rng);
  const std::vector<std::size_t> lengths{3, 1, 6};
  std::vector<std::int64_t> ids(3 * 6, Vocab::pad_id);
  std::vector<std::vector<std::int64_t>> words;
  for (std::size_t w = 0; w < 3; ++w) {
    words.push_back(random_word(lengths[w], 9, rng));
    std::copy(words[w].begin(), words[w].end(), ids.begin() + static_cast<std::ptrdiff_t>(w * 6));
  }
  const Tensor all = char_compose_words(p, ids, lengths, 6);
  ASSERT_EQ(all.shape(), (Shape{3, 9}));
  for (std::size_t w = 0; w < 3; ++w) {
    const Tensor one = char_compose(p, words[w]);
    for (std::size_t k = 0; k < 9; ++k) EXPECT_EQ(all[w * 9 + k], one[k]);
  }
}

TEST(CharCompose, EmptyWordIsAnError) {
  std::mt19937_64 rng(14);
  const EmbedParams p = random_params(5, 2, {1}, 2, rng);
  EXPECT_THROW(char_compose(p, std::vector<std::int64_t>{}), ShapeError);
  EXPECT_THROW(char_compose(p, std::vector<std::int64_t>{Vocab::pad_id, Vocab::pad_id}), ShapeError);
}

TEST(CharCompose, WidthOneIgnoresCharacterOrderWiderWidthsDoNot) {
  std::mt19937_64 rng(15);
  const EmbedParams narrow = random_params(12, 3, {1}, 6, rng);
  const EmbedParams wide = random_params(12, 3, {3}, 6, rng);
  const std::vector<std::int64_t> word{2, 5, 7, 9, 11};
  const std::vector<std::int64_t> shuffled{11, 7, 2, 9, 5};
  EXPECT_EQ(fixtures::values(char_compose(narrow, word)), fixtures::values(char_compose(narrow, shuffled)));
  EXPECT_NE(fixtures::values(char_compose(wide, word)), fixtures::values(char_compose(wide, shuffled)));
}

TEST(CharCompose, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(16);
  const EmbedParams p = random_params(8, 3, {1, 3, 5}, 3, rng);
  const auto word = random_word(4, 8, rng);
  std::vector<Tensor> wrt{p.char_table};
  for (const auto& f : p.filters) wrt.insert(wrt.end(), {f.weight, f.bias});
  const Tensor w = random_tensor({9}, rng, 0.5, 1.5);
  EXPECT_LT(grad_check([&] { return sum(mul(char_compose(p, word), w)); }, wrt), 1e-5);
}

TEST(EmbedSentence, ShapesFollowAblationFlags) {
  std::mt19937_64 rng(17);
  EmbedConfig cfg;
  const Tensor table = random_tensor({6, cfg.word_dim}, rng);
  const EmbedParams p = init_embed(cfg, 10, table, rng);
  const std::vector<std::int64_t> ids{3};
  const std::vector<std::vector<std::int64_t>> chars{{2, 4}};
  EXPECT_EQ(embed_sentence(p, cfg, ids, chars).shape(), (Shape{1, 600}));

  EmbedConfig no_char = cfg;
  no_char.use_char = false;
  const Tensor e = embed_sentence(p, no_char, ids, chars);
  ASSERT_EQ(e.shape(), (Shape{1, 300}));
  for (std::size_t k = 0; k < 300; ++k) EXPECT_EQ(e[k], table[3 * 300 + k]);

  EmbedConfig no_word = cfg;
  no_word.use_word = false;
  EXPECT_EQ(embed_sentence(p, no_word, ids, chars).shape(), (Shape{1, 300}));
}

TEST(EmbedSentence, SharedTokenGivesIdenticalRows) {
  std::mt19937_64 rng(18);
  EmbedConfig cfg;
  cfg.char_dim = 3;
  cfg.filters_per_width = 4;
  cfg.word_dim = 5;
  const EmbedParams p = init_embed(cfg, 10, random_tensor({8, 5}, rng), rng);
  const std::vector<std::int64_t> a_ids{4, 6}, b_ids{7, 5, 4};
  const std::vector<std::vector<std::int64_t>> a_chars{{2, 3, 4}, {5}}, b_chars{{9}, {8, 8}, {2, 3, 4}};
  const Tensor a = embed_sentence(p, cfg, a_ids, a_chars);
  const Tensor b = embed_sentence(p, cfg, b_ids, b_chars);
  const std::size_t d = cfg.output_dim();
  for (std::size_t k = 0; k < d; ++k) EXPECT_EQ(a[k], b[2 * d + k]);
}

TEST(EmbedSentence, OutOfRangeIdIsAnError) {
  std::mt19937_64 rng(19);
  EmbedConfig cfg;
  cfg.word_dim = 4;
  cfg.filters_per_width = 2;
  const EmbedParams p = init_embed(cfg, 6, random_tensor({5, 4}, rng), rng);
  const std::vector<std::int64_t> bad_word{9};
  EXPECT_THROW(embed_sentence(p, cfg, bad_word, {{2}}), ShapeError);
  const std::vector<std::int64_t> ok_word{2};
  EXPECT_THROW(embed_sentence(p, cfg, ok_word, {{40}}), ShapeError);
}

TEST(EmbedParams, InitializationContract) {
  std::mt19937_64 rng(20);
  EmbedConfig cfg;
  const EmbedParams p = init_embed(cfg, 30, random_tensor({7, 300}, rng, -1, 1, true), rng);
  EXPECT_FALSE(p.word_table.requires_grad());
  EXPECT_TRUE(p.char_table.requires_grad());
  EXPECT_EQ(p.char_table.shape(), (Shape{30, 15}));
  ASSERT_EQ(p.filters.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(p.filters[k].width, cfg.filter_widths[k]);
    EXPECT_EQ(p.filters[k].weight.shape(), (Shape{cfg.filter_widths[k] * 15, 100}));
    EXPECT_TRUE(p.filters[k].weight.requires_grad());
    EXPECT_TRUE(p.filters[k].bias.requires_grad());
  }
  for (std::size_t k = 0; k < 15; ++k) EXPECT_EQ(p.char_table[k], 0.0);
  EXPECT_EQ(cfg.output_dim(), 600u);
}

TEST(EmbedParams, WordTableReceivesNoGradient) {
  std::mt19937_64 rng(21);
  EmbedConfig cfg;
  cfg.char_dim = 3;
  cfg.filters_per_width = 2;
  cfg.word_dim = 4;
  const EmbedParams p = init_embed(cfg, 8, random_tensor({6, 4}, rng), rng);
  const std::vector<std::int64_t> ids{2, 3};
  backward(sum(embed_sentence(p, cfg, ids, {{2, 3}, {4}})));
  EXPECT_FALSE(p.word_table.has_grad());
  EXPECT_TRUE(p.char_table.has_grad());
}

TEST(EmbedSide, RowsMatchPerSentenceEmbedding) {
  std::mt19937_64 rng(22);
  EmbedConfig cfg;
  cfg.char_dim = 3;
  cfg.filters_per_width = 2;
  cfg.word_dim = 4;
  const std::vector<NLIExample> ex{{{"ab", "c"}, {"x"}, Label::neutral, {}}, {{"abc", "de", "f"}, {"y"}, Label::neutral, {}}};
  const Vocab vocab = build_vocab(ex);
  const EmbedParams p = init_embed(cfg, vocab.char_count(), random_tensor({vocab.word_count(), 4}, rng), rng);
  const Batch batch = make_batch(ex, std::vector<std::size_t>{0, 1}, vocab);
  const Tensor e = embed_side(p, cfg, batch.premise);
  ASSERT_EQ(e.shape(), (Shape{3, 2, cfg.output_dim()}));
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<std::int64_t> ids;
    std::vector<std::vector<std::int64_t>> chars;
    for (const auto& w : ex[b].premise) {
      ids.push_back(vocab.word_id(w));
      chars.emplace_back();
      for (auto c : utf8_chars(w)) chars.back().push_back(vocab.char_id(c));
    }
    const Tensor s = embed_sentence(p, cfg, ids, chars);
    const std::size_t d = cfg.output_dim();
    for (std::size_t t = 0; t < ids.size(); ++t)
      for (std::size_t k = 0; k < d; ++k) EXPECT_EQ(e[(t * 2 + b) * d + k], s[t * d + k]);
  }
}
