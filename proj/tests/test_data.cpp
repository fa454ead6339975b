#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "gnli/data.hpp"
#include "test_util.hpp"

using namespace gnli;
using gnli::fixtures::words;

namespace {

Corpus parse(const std::string& text) {
  std::istringstream in(text);
  return parse_corpus(in);
}

NLIExample pair(const std::string& p, const std::string& h, Label l = Label::neutral) { return {words(p), words(h), l, {}}; }

}  // namespace

TEST(Corpus, LabeledLineBecomesExample) {
  const auto c = parse(R"j({"sentence1": "A man sleeps .", "sentence2": "A person rests .", "gold_label": "entailment"})j"
                       "\n");
  ASSERT_EQ(c.examples.size(), 1u);
  EXPECT_EQ(c.examples[0].label, Label::entailment);
  EXPECT_EQ(c.examples[0].premise, words("A man sleeps ."));
  EXPECT_EQ(c.examples[0].hypothesis, words("A person rests ."));
  EXPECT_EQ(c.report.loaded, 1u);
}

TEST(Corpus, DashLabelIsSkippedAndCounted) {
  const auto c = parse(
      R"j({"sentence1": "a", "sentence2": "b", "gold_label": "-"})j"
      "\n"
      R"j({"sentence1": "a", "sentence2": "b", "gold_label": "neutral"})j"
      "\n"
      R"j({"sentence1": "a", "sentence2": "b"})j"
      "\n");
  EXPECT_EQ(c.examples.size(), 1u);
  EXPECT_EQ(c.report.skipped_unlabeled, 2u);
  EXPECT_EQ(c.report.malformed, 0u);
}

TEST(Corpus, EmptyFileGivesEmptyListAndWarning) {
  const auto c = parse("");
  EXPECT_TRUE(c.examples.empty());
  ASSERT_EQ(c.report.warnings.size(), 1u);
  EXPECT_NE(c.report.warnings[0].find("empty"), std::string::npos);
}

TEST(Corpus, BinaryParseIsPreferredOverRawSentence) {
  const auto c = parse(
      R"j({"sentence1": "Two dogs run.", "sentence1_binary_parse": "( ( Two dogs ) ( run . ) )",)j"
      R"j( "sentence2": "Animals move.", "gold_label": "contradiction", "genre": "fiction"})j"
      "\n");
  ASSERT_EQ(c.examples.size(), 1u);
  EXPECT_EQ(c.examples[0].premise, words("Two dogs run ."));
  EXPECT_EQ(c.examples[0].hypothesis, words("Animals move."));
  EXPECT_EQ(c.examples[0].label, Label::contradiction);
  EXPECT_EQ(c.examples[0].genre, "fiction");
}

TEST(Corpus, FewMalformedLinesAreSkipped) {
  std::string text;
  for (int i = 0; i < 10; ++i) text += R"j({"sentence1": "a b", "sentence2": "c", "gold_label": "entailment"})j" "\n";
  text += "{not json\n";
  const auto c = parse(text);
  EXPECT_EQ(c.examples.size(), 10u);
  EXPECT_EQ(c.report.malformed, 1u);
}

TEST(Corpus, TooManyMalformedLinesIsAnError) {
  std::string text;
  for (int i = 0; i < 8; ++i) text += R"j({"sentence1": "a b", "sentence2": "c", "gold_label": "entailment"})j" "\n";
  text += "{not json\n[1, 2]\n";
  EXPECT_THROW(parse(text), DataError);
}

TEST(Corpus, UnknownLabelAndEmptySentenceAreMalformed) {
  std::string text;
  for (int i = 0; i < 18; ++i) text += R"j({"sentence1": "a", "sentence2": "c", "gold_label": "neutral"})j" "\n";
  text += R"j({"sentence1": "a", "sentence2": "c", "gold_label": "maybe"})j" "\n";
  text += R"j({"sentence1": "", "sentence2": "c", "gold_label": "neutral"})j" "\n";
  const auto c = parse(text);
  EXPECT_EQ(c.examples.size(), 18u);
  EXPECT_EQ(c.report.malformed, 2u);
}

TEST(Corpus, UnlabeledPairsKeptWhenLabelsNotRequired) {
  std::istringstream in(R"j({"sentence1": "a", "sentence2": "b"})j" "\n");
  const auto c = parse_corpus(in, "<test>", false);
  EXPECT_EQ(c.examples.size(), 1u);
}

TEST(Corpus, UnreadableFileIsAnError) {
  EXPECT_THROW(load_corpus("/nonexistent/corpus.jsonl"), DataError);
}

TEST(Vocab, MinCountFiltersRareWords) {
  const std::vector<NLIExample> ex{pair("a a b", "a")};
  const Vocab v = build_vocab(ex, 2);
  EXPECT_EQ(v.words(), (std::vector<std::string>{"<pad>", "<unk>", "a"}));
  EXPECT_EQ(v.word_id("b"), Vocab::unk_id);
}

TEST(Vocab, MinCountOneKeepsEveryWord) {
  const std::vector<NLIExample> ex{pair("x y", "x")};
  const Vocab v = build_vocab(ex, 1);
  EXPECT_NE(v.word_id("x"), Vocab::unk_id);
  EXPECT_NE(v.word_id("y"), Vocab::unk_id);
}

TEST(Vocab, IdsOrderedByFrequencyThenLexicographically) {
  const std::vector<NLIExample> ex{pair("c b a c", "b d")};
  const Vocab v = build_vocab(ex);
  EXPECT_EQ(v.words(), (std::vector<std::string>{"<pad>", "<unk>", "b", "c", "a", "d"}));
}

TEST(Vocab, DeterministicAndDense) {
  const std::vector<NLIExample> ex{pair("the cat sat", "a dog ran"), pair("the dog", "cats sat")};
  const Vocab a = build_vocab(ex), b = build_vocab(ex);
  EXPECT_EQ(a, b);
  EXPECT_NE(Vocab::pad_id, Vocab::unk_id);
  for (std::size_t id = 0; id < a.word_count(); ++id) EXPECT_EQ(a.word_id(a.word(static_cast<std::int64_t>(id))), static_cast<std::int64_t>(id));
  for (std::size_t id = 0; id < a.char_count(); ++id) EXPECT_EQ(a.char_id(a.character(static_cast<std::int64_t>(id))), static_cast<std::int64_t>(id));
  EXPECT_EQ(a.word_id("zebra"), Vocab::unk_id);
  EXPECT_EQ(a.char_id("#"), Vocab::unk_id);
}

TEST(Vocab, CharactersAreCodePoints) {
  const std::vector<NLIExample> ex{pair("café", "naïve")};
  const Vocab v = build_vocab(ex);
  EXPECT_NE(v.char_id("é"), Vocab::unk_id);
  EXPECT_NE(v.char_id("ï"), Vocab::unk_id);
  EXPECT_EQ(utf8_chars("café").size(), 4u);
}

TEST(Vocab, FromListsRejectsMissingReservedEntries) {
  EXPECT_THROW(Vocab::from_lists({"a", "b"}, {"<pad>", "<unk>"}), DataError);
}

TEST(WordVectors, FileRowsCopiedBitForBit) {
  const std::vector<NLIExample> ex{pair("cat dog", "bird")};
  const Vocab v = build_vocab(ex);
  std::istringstream in("cat 0.1 -2.5e-3 3\ndog 1e-300 7.25 -0\nother 1 1 1\n");
  const auto wv = parse_word_vectors(in, v, 3, 1);
  const std::size_t cat = static_cast<std::size_t>(v.word_id("cat"));
  const std::size_t dog = static_cast<std::size_t>(v.word_id("dog"));
  EXPECT_EQ(wv.table[cat * 3 + 0], std::strtod("0.1", nullptr));
  EXPECT_EQ(wv.table[cat * 3 + 1], std::strtod("-2.5e-3", nullptr));
  EXPECT_EQ(wv.table[cat * 3 + 2], 3.0);
  EXPECT_EQ(wv.table[dog * 3 + 0], std::strtod("1e-300", nullptr));
  EXPECT_EQ(wv.report.exact_hits, 2u);
  EXPECT_EQ(wv.report.misses, 2u);  // bird and <unk>
  EXPECT_FALSE(wv.table.requires_grad());
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(wv.table[k], 0.0);  // padding row
}

TEST(WordVectors, LowercaseFallbackAndExactPreference) {
  const std::vector<NLIExample> ex{pair("Paris Rome", "rome")};
  const Vocab v = build_vocab(ex);
  std::istringstream in("paris 1 2\nRome 5 6\nrome 3 4\n");
  const auto wv = parse_word_vectors(in, v, 2, 1);
  const auto row = [&](const char* w) {
    const std::size_t id = static_cast<std::size_t>(v.word_id(w));
    return std::vector<Real>{wv.table[id * 2], wv.table[id * 2 + 1]};
  };
  EXPECT_EQ(row("Paris"), (std::vector<Real>{1, 2}));
  EXPECT_EQ(row("Rome"), (std::vector<Real>{5, 6}));
  EXPECT_EQ(row("rome"), (std::vector<Real>{3, 4}));
  EXPECT_EQ(wv.report.lowercase_hits, 1u);
  EXPECT_EQ(wv.report.exact_hits, 2u);
}

TEST(WordVectors, MissingWordsGetSeededGaussianRows) {
  std::vector<NLIExample> ex;
  for (int i = 0; i < 200; ++i) ex.push_back(pair("w" + std::to_string(i), "x"));
  const Vocab v = build_vocab(ex);
  std::istringstream a, b, c;
  const auto first = parse_word_vectors(a, v, 50, 42);
  const auto again = parse_word_vectors(b, v, 50, 42);
  const auto other = parse_word_vectors(c, v, 50, 43);
  EXPECT_EQ(fixtures::values(first.table), fixtures::values(again.table));
  EXPECT_NE(fixtures::values(first.table), fixtures::values(other.table));
  Real sum = 0, sq = 0;
  std::size_t n = 0;
  for (std::size_t k = 50; k < first.table.size(); ++k, ++n) {
    sum += first.table[k];
    sq += first.table[k] * first.table[k];
  }
  const Real mean = sum / static_cast<Real>(n);
  const Real sd = std::sqrt(sq / static_cast<Real>(n) - mean * mean);
  EXPECT_NEAR(mean, 0.0, 0.005);
  EXPECT_NEAR(sd, kOovStddev, 0.005);
}

TEST(WordVectors, WrongDimensionNamesTheLine) {
  const std::vector<NLIExample> ex{pair("a", "b")};
  const Vocab v = build_vocab(ex);
  std::istringstream in("a 1 2 3\nb 1 2\n");
  try {
    parse_word_vectors(in, v, 3, 1, kOovStddev, "vec.txt");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  std::istringstream bad("a 1 x 3\n");
  EXPECT_THROW(parse_word_vectors(bad, v, 3, 1), DataError);
}

TEST(Batchify, SizesFollowBatchSize) {
  std::vector<NLIExample> ex;
  for (int i = 0; i < 10; ++i) ex.push_back(pair("a b", "c"));
  const Vocab v = build_vocab(ex);
  const auto batches = batchify(ex, 4, v, 1);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].size(), 4u);
  EXPECT_EQ(batches[1].size(), 4u);
  EXPECT_EQ(batches[2].size(), 2u);
  EXPECT_THROW(batchify(ex, 0, v, 1), ConfigError);
}

TEST(Batchify, MaskMarksTrueLength) {
  const std::vector<NLIExample> ex{pair("a b c", "x"), pair("a b c d e", "x y")};
  const Vocab v = build_vocab(ex);
  const auto batches = batchify(ex, 2, v, 1, false);
  const SideBatch& p = batches[0].premise;
  ASSERT_EQ(p.max_len, 5u);
  const std::vector<Real> row(p.mask.begin(), p.mask.begin() + 5);
  EXPECT_EQ(row, (std::vector<Real>{1, 1, 1, 0, 0}));
  for (std::size_t t = 3; t < 5; ++t) {
    EXPECT_EQ(p.word_ids[p.at(0, t)], Vocab::pad_id);
    EXPECT_EQ(p.word_lengths[p.at(0, t)], 0u);
    for (std::size_t c = 0; c < p.max_chars; ++c) EXPECT_EQ(p.char_ids[p.at(0, t) * p.max_chars + c], Vocab::pad_id);
  }
}

TEST(Batchify, SameSeedSameOrder) {
  std::vector<NLIExample> ex;
  for (int i = 0; i < 40; ++i) ex.push_back(pair("w" + std::to_string(i), "x"));
  const Vocab v = build_vocab(ex);
  const auto order = [&](std::uint64_t seed) {
    std::vector<std::size_t> o;
    for (const auto& b : batchify(ex, 8, v, seed)) o.insert(o.end(), b.source.begin(), b.source.end());
    return o;
  };
  EXPECT_EQ(order(5), order(5));
  EXPECT_NE(order(5), order(6));
  auto sorted = order(5);
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Batchify, CharactersClippedAtTwenty) {
  const std::string longword(30, 'q');
  const std::vector<NLIExample> ex{pair(longword + " ab", "abc")};
  const Vocab v = build_vocab(ex);
  const auto b = batchify(ex, 1, v, 1).front();
  EXPECT_EQ(b.premise.max_chars, kMaxWordChars);
  EXPECT_EQ(b.premise.word_lengths[0], kMaxWordChars);
  EXPECT_EQ(b.hypothesis.max_chars, 3u);  // longest word in that side
}

TEST(Batchify, DetokenizeRoundTripsInVocabularyText) {
  const std::vector<NLIExample> ex{pair("the quick fox", "a lazy dog sleeps"), pair("hello", "world")};
  const Vocab v = build_vocab(ex);
  for (const auto& b : batchify(ex, 2, v, 9)) {
    for (std::size_t r = 0; r < b.size(); ++r) {
      EXPECT_EQ(detokenize(b.premise, r, v), ex[b.source[r]].premise);
      EXPECT_EQ(detokenize(b.hypothesis, r, v), ex[b.source[r]].hypothesis);
    }
  }
  const std::vector<NLIExample> unseen{pair("the zebra", "fox")};
  const auto b = batchify(unseen, 1, v, 1).front();
  EXPECT_EQ(detokenize(b.premise, 0, v), (std::vector<std::string>{"the", "<unk>"}));
}

TEST(Pipeline, LoadBuildBatchifyIsPureInItsInputs) {
  const auto dir = std::filesystem::temp_directory_path() / "gnli_test_data";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "c.jsonl");
    for (int i = 0; i < 30; ++i)
      f << R"({"sentence1": "s)" << i << R"( a b", "sentence2": "t c", "gold_label": ")" << kLabelNames[i % 3]
        << "\"}\n";
  }
  const auto run = [&] {
    const auto c = load_corpus(dir / "c.jsonl");
    const Vocab v = build_vocab(c.examples);
    std::vector<std::int64_t> ids;
    for (const auto& b : batchify(c.examples, 7, v, 3)) ids.insert(ids.end(), b.premise.word_ids.begin(), b.premise.word_ids.end());
    return ids;
  };
  EXPECT_EQ(run(), run());
  std::filesystem::remove_all(dir);
}
