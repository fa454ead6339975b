#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gnli/encoder.hpp"
#include "test_util.hpp"

using namespace gnli;
using fixtures::random_tensor;

namespace {

LstmParams random_lstm(std::size_t k, std::size_t d, std::mt19937_64& rng, Real scale = 0.5) {
  return {random_tensor({k, 4 * d}, rng, -scale, scale, true), random_tensor({d, 4 * d}, rng, -scale, scale, true),
          random_tensor({4 * d}, rng, -scale, scale, true)};
}

Real sigmoid_ref(Real z) { return 1.0 / (1.0 + std::exp(-z)); }

// Scalar LSTM over one unbatched sequence; returns h per step.
std::vector<std::vector<Real>> naive_direction(const std::vector<std::vector<Real>>& xs, const LstmParams& p) {
  const std::size_t k = p.input_dim(), d = p.hidden();
  std::vector<Real> h(d, 0), c(d, 0);
  std::vector<std::vector<Real>> out;
  for (const auto& x : xs) {
    std::vector<Real> z(4 * d);
    for (std::size_t g = 0; g < 4 * d; ++g) {
      Real acc = p.b[g];
      for (std::size_t a = 0; a < k; ++a) acc += x[a] * p.W[a * 4 * d + g];
      for (std::size_t a = 0; a < d; ++a) acc += h[a] * p.U[a * 4 * d + g];
      z[g] = acc;
    }
    for (std::size_t j = 0; j < d; ++j) {
      const Real i = sigmoid_ref(z[j]), f = sigmoid_ref(z[d + j]), u = std::tanh(z[2 * d + j]),
                 o = sigmoid_ref(z[3 * d + j]);
      c[j] = f * c[j] + i * u;
      h[j] = o * std::tanh(c[j]);
    }
    out.push_back(h);
  }
  return out;
}

Tensor ones_mask(std::size_t steps, std::size_t batch) { return Tensor::full({steps, batch}, 1.0); }

Tensor lengths_mask(const std::vector<std::size_t>& lengths, std::size_t steps) {
  std::vector<Real> m(steps * lengths.size(), 0);
  for (std::size_t b = 0; b < lengths.size(); ++b)
    for (std::size_t t = 0; t < lengths[b]; ++t) m[t * lengths.size() + b] = 1;
  return Tensor::from({steps, lengths.size()}, std::move(m));
}

Real at3(const Tensor& t, std::size_t i, std::size_t j, std::size_t k) { return t[(i * t.dim(1) + j) * t.dim(2) + k]; }

}  // namespace

TEST(LstmCell, ZeroParametersGiveHalfGatesAndZeroState) {
  const LstmParams p{Tensor::zeros({3, 8}), Tensor::zeros({2, 8}), Tensor::zeros({8})};
  const LstmStep s = lstm_cell(Tensor::full({1, 3}, 0.7), Tensor::zeros({1, 2}), Tensor::zeros({1, 2}), p);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_EQ(s.i[j], 0.5);
    EXPECT_EQ(s.f[j], 0.5);
    EXPECT_EQ(s.o[j], 0.5);
    EXPECT_EQ(s.c[j], 0.0);
    EXPECT_EQ(s.h[j], 0.0);
  }
}

TEST(LstmCell, SaturatedForgetAndClosedInputCarryTheCell) {
  std::vector<Real> b(8, 0);
  b[0] = b[1] = -50;  // input gate closed
  b[2] = b[3] = 50;   // forget gate open
  const LstmParams p{Tensor::zeros({3, 8}), Tensor::zeros({2, 8}), Tensor::from({8}, b)};
  const Tensor c_prev = Tensor::from({1, 2}, {0.3, -1.2});
  const LstmStep s = lstm_cell(Tensor::full({1, 3}, 2.0), Tensor::zeros({1, 2}), c_prev, p);
  EXPECT_NEAR(s.c[0], 0.3, 1e-12);
  EXPECT_NEAR(s.c[1], -1.2, 1e-12);
}

TEST(LstmCell, MatchesScalarReference) {
  std::mt19937_64 rng(31);
  const LstmParams p = random_lstm(4, 3, rng);
  std::vector<std::vector<Real>> xs{{0.1, -0.4, 0.9, 0.2}, {-0.3, 0.5, 0.0, 0.8}};
  const auto expected = naive_direction(xs, p);
  Tensor h = Tensor::zeros({1, 3}), c = Tensor::zeros({1, 3});
  for (std::size_t t = 0; t < 2; ++t) {
    const LstmStep s = lstm_cell(Tensor::from({1, 4}, xs[t]), h, c, p);
    h = s.h;
    c = s.c;
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(h[j], expected[t][j], 1e-12);
  }
}

TEST(LstmCell, GatesStayInsideOpenUnitInterval) {
  std::mt19937_64 rng(32);
  const LstmParams p = random_lstm(5, 4, rng, 2.0);
  const LstmStep s = lstm_cell(random_tensor({6, 5}, rng, -3, 3), random_tensor({6, 4}, rng), random_tensor({6, 4}, rng), p);
  for (const Tensor* g : {&s.i, &s.f, &s.o})
    for (Real v : g->data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
}

TEST(LstmCell, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(33);
  const LstmParams p = random_lstm(3, 3, rng);
  const Tensor x = random_tensor({2, 3}, rng, -1, 1, true);
  const Tensor h = random_tensor({2, 3}, rng, -1, 1, true);
  const Tensor c = random_tensor({2, 3}, rng, -1, 1, true);
  const Tensor w1 = random_tensor({2, 3}, rng, 0.5, 1.5), w2 = random_tensor({2, 3}, rng, 0.5, 1.5);
  const Real err = grad_check(
      [&] {
        const LstmStep s = lstm_cell(x, h, c, p);
        return add(sum(mul(s.h, w1)), sum(mul(s.c, w2)));
      },
      {x, h, c, p.W, p.U, p.b});
  EXPECT_LT(err, 1e-5);
}

TEST(LstmCell, RejectsMismatchedShapes) {
  std::mt19937_64 rng(34);
  const LstmParams p = random_lstm(3, 2, rng);
  EXPECT_THROW(lstm_cell(Tensor::zeros({1, 4}), Tensor::zeros({1, 2}), Tensor::zeros({1, 2}), p), ShapeError);
  EXPECT_THROW(lstm_cell(Tensor::zeros({1, 3}), Tensor::zeros({1, 3}), Tensor::zeros({1, 3}), p), ShapeError);
  EXPECT_THROW(lstm_cell(Tensor::zeros({1, 3}), Tensor::zeros({1, 2}), Tensor::zeros({2, 2}), p), ShapeError);
}

TEST(BiLstm, MatchesScalarReferenceInBothDirections) {
  std::mt19937_64 rng(35);
  const LstmParams fwd = random_lstm(3, 2, rng), bwd = random_lstm(3, 2, rng);
  const std::vector<std::size_t> lengths{4, 2};
  const Tensor x = random_tensor({4, 2, 3}, rng);
  const EncodedSentence e = bilstm(x, lengths_mask(lengths, 4), fwd, bwd);
  ASSERT_EQ(e.h.shape(), (Shape{4, 2, 4}));
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<std::vector<Real>> xs;
    for (std::size_t t = 0; t < lengths[b]; ++t) xs.push_back({at3(x, t, b, 0), at3(x, t, b, 1), at3(x, t, b, 2)});
    const auto hf = naive_direction(xs, fwd);
    const auto hb = naive_direction({xs.rbegin(), xs.rend()}, bwd);
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t j = 0; j < 2; ++j) {
        const bool valid = t < lengths[b];
        EXPECT_NEAR(at3(e.h, t, b, j), valid ? hf[t][j] : 0.0, 1e-12);
        EXPECT_NEAR(at3(e.h, t, b, 2 + j), valid ? hb[lengths[b] - 1 - t][j] : 0.0, 1e-12);
      }
  }
}

TEST(BiLstm, SingleTokenSentence) {
  std::mt19937_64 rng(36);
  const LstmParams fwd = random_lstm(3, 2, rng), bwd = random_lstm(3, 2, rng);
  const EncodedSentence e = bilstm(random_tensor({1, 1, 3}, rng), ones_mask(1, 1), fwd, bwd);
  EXPECT_EQ(e.h.shape(), (Shape{1, 1, 4}));
  EXPECT_EQ(e.gate_f.shape(), (Shape{1, 1, 4}));
}

TEST(BiLstm, ReversingInputAndSwappingDirectionsMirrorsOutput) {
  std::mt19937_64 rng(37);
  const LstmParams a = random_lstm(3, 2, rng), b = random_lstm(3, 2, rng);
  const std::size_t n = 5;
  const Tensor x = random_tensor({n, 1, 3}, rng);
  std::vector<Real> rev(x.size());
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t k = 0; k < 3; ++k) rev[t * 3 + k] = x[(n - 1 - t) * 3 + k];
  const EncodedSentence e1 = bilstm(x, ones_mask(n, 1), a, b);
  const EncodedSentence e2 = bilstm(Tensor::from({n, 1, 3}, rev), ones_mask(n, 1), b, a);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_EQ(at3(e1.h, t, 0, j), at3(e2.h, n - 1 - t, 0, 2 + j));
      EXPECT_EQ(at3(e1.h, t, 0, 2 + j), at3(e2.h, n - 1 - t, 0, j));
    }
}

TEST(BiLstm, ExtraPaddingLeavesValidPositionsBitIdentical) {
  std::mt19937_64 rng(38);
  const LstmParams fwd = random_lstm(3, 2, rng), bwd = random_lstm(3, 2, rng);
  const Tensor x = random_tensor({3, 1, 3}, rng);
  const EncodedSentence plain = bilstm(x, ones_mask(3, 1), fwd, bwd);
  std::vector<Real> padded(fixtures::values(x));
  for (int k = 0; k < 9; ++k) padded.push_back(7.5);  // garbage in padding must not matter
  const EncodedSentence ext = bilstm(Tensor::from({6, 1, 3}, padded), lengths_mask({3}, 6), fwd, bwd);
  for (std::size_t k = 0; k < plain.h.size(); ++k) EXPECT_EQ(ext.h[k], plain.h[k]);
  for (std::size_t k = plain.h.size(); k < ext.h.size(); ++k) EXPECT_EQ(ext.h[k], 0.0);
}

TEST(BiLstm, BatchRowsAreIndependent) {
  std::mt19937_64 rng(39);
  const LstmParams fwd = random_lstm(3, 2, rng), bwd = random_lstm(3, 2, rng);
  const Tensor x = random_tensor({4, 3, 3}, rng);
  const Tensor mask = lengths_mask({4, 2, 3}, 4);
  const EncodedSentence all = bilstm(x, mask, fwd, bwd);
  for (std::size_t b = 0; b < 3; ++b) {
    std::vector<Real> row, m;
    for (std::size_t t = 0; t < 4; ++t) {
      for (std::size_t k = 0; k < 3; ++k) row.push_back(at3(x, t, b, k));
      m.push_back(mask[t * 3 + b]);
    }
    const EncodedSentence one = bilstm(Tensor::from({4, 1, 3}, row), Tensor::from({4, 1}, m), fwd, bwd);
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(at3(all.h, t, b, j), at3(one.h, t, 0, j));
  }
}

TEST(BiLstm, FullyMaskedSequenceIsAnError) {
  std::mt19937_64 rng(40);
  const LstmParams fwd = random_lstm(3, 2, rng), bwd = random_lstm(3, 2, rng);
  EXPECT_THROW(bilstm(random_tensor({3, 2, 3}, rng), lengths_mask({2, 0}, 3), fwd, bwd), ShapeError);
  EXPECT_THROW(bilstm(random_tensor({3, 2, 3}, rng), ones_mask(2, 2), fwd, bwd), ShapeError);
}

TEST(BiLstm, GatesAreZeroAtPaddingAndInsideUnitIntervalElsewhere) {
  std::mt19937_64 rng(41);
  const LstmParams fwd = random_lstm(3, 2, rng, 2), bwd = random_lstm(3, 2, rng, 2);
  const EncodedSentence e = bilstm(random_tensor({3, 2, 3}, rng, -2, 2), lengths_mask({3, 1}, 3), fwd, bwd);
  for (const Tensor* g : {&e.gate_i, &e.gate_f, &e.gate_o})
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t j = 0; j < 4; ++j) {
          const Real v = at3(*g, t, b, j);
          if (e.mask[t * 2 + b] == 0) {
            EXPECT_EQ(v, 0.0);
          } else {
            EXPECT_GT(v, 0.0);
            EXPECT_LT(v, 1.0);
          }
        }
}

TEST(StackedEncoder, OneLayerEqualsBiLstm) {
  std::mt19937_64 rng(42);
  const std::vector<BiLstmParams> layers{{random_lstm(3, 2, rng), random_lstm(3, 2, rng)}};
  const Tensor x = random_tensor({3, 2, 3}, rng);
  const Tensor mask = lengths_mask({3, 2}, 3);
  EXPECT_EQ(fixtures::values(stacked_encode(x, mask, layers).h),
            fixtures::values(bilstm(x, mask, layers[0].fwd, layers[0].bwd).h));
}

TEST(StackedEncoder, HigherLayersReadEmbeddingsAndPreviousStates) {
  std::mt19937_64 rng(43);
  const std::size_t dw = 3, d = 2;
  std::vector<BiLstmParams> layers;
  for (std::size_t l = 0; l < 3; ++l) {
    const std::size_t k = layer_input_dim(l, dw, d);
    layers.push_back({random_lstm(k, d, rng), random_lstm(k, d, rng)});
  }
  const Tensor x = random_tensor({4, 1, dw}, rng);
  const Tensor mask = ones_mask(4, 1);
  EncodedSentence manual = bilstm(x, mask, layers[0].fwd, layers[0].bwd);
  for (std::size_t l = 1; l < 3; ++l) manual = bilstm(concat({x, manual.h}, 2), mask, layers[l].fwd, layers[l].bwd);
  EXPECT_EQ(fixtures::values(stacked_encode(x, mask, layers).h), fixtures::values(manual.h));
  EXPECT_THROW(stacked_encode(x, mask, {}), ConfigError);
}

TEST(StackedEncoder, LayerInputWidthsAtFullSize) {
  EXPECT_EQ(layer_input_dim(0, 600, 600), 600u);
  EXPECT_EQ(layer_input_dim(1, 600, 600), 1800u);
  EXPECT_EQ(layer_input_dim(2, 600, 600), 1800u);
}

TEST(StackedEncoder, TwoLayerGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(44);
  std::vector<BiLstmParams> layers;
  for (std::size_t l = 0; l < 2; ++l) {
    const std::size_t k = layer_input_dim(l, 3, 2);
    layers.push_back({random_lstm(k, 2, rng), random_lstm(k, 2, rng)});
  }
  const Tensor x = random_tensor({3, 2, 3}, rng, -1, 1, true);
  const Tensor mask = lengths_mask({3, 2}, 3);
  const Tensor w = random_tensor({3, 2, 4}, rng, 0.5, 1.5);
  std::vector<Tensor> wrt{x};
  for (const auto& l : layers)
    for (const auto* p : {&l.fwd, &l.bwd}) wrt.insert(wrt.end(), {p->W, p->U, p->b});
  EXPECT_LT(grad_check([&] { return sum(mul(stacked_encode(x, mask, layers).h, w)); }, wrt), 1e-4);
}

TEST(StackedEncoder, DropoutIsIdentityWithoutGenerator) {
  std::mt19937_64 rng(45);
  const Tensor x = random_tensor({2, 3}, rng);
  EXPECT_EQ(fixtures::values(apply_dropout(x, {0.5, nullptr})), fixtures::values(x));
  std::mt19937_64 drop(1);
  const Tensor y = apply_dropout(x, {0.5, &drop});
  for (std::size_t k = 0; k < x.size(); ++k) EXPECT_TRUE(y[k] == 0.0 || std::abs(y[k] - 2 * x[k]) < 1e-15);
}

TEST(LstmInit, ForgetBiasAndSpread) {
  std::mt19937_64 rng(46);
  const LstmParams p = init_lstm(200, 50, rng);
  for (std::size_t k = 0; k < 200; ++k) EXPECT_EQ(p.b[k], k >= 50 && k < 100 ? 1.0 : 0.0);
  Real sq = 0;
  for (Real v : p.W.data()) sq += v * v;
  EXPECT_NEAR(std::sqrt(sq / static_cast<Real>(p.W.size())), 0.01, 0.0005);
}
