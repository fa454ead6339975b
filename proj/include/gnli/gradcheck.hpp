#pragma once

// Finite-difference checks of every network module at toy sizes. Parameters
// are drawn at unit scale so gradients stay well above the relative-error
// floor, and each scalar objective is a fixed random weighting of the module
// output so no coordinate can hide behind symmetric cancellation.

#include <chrono>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gnli/classify.hpp"
#include "gnli/compose.hpp"
#include "gnli/embed.hpp"
#include "gnli/encoder.hpp"
#include "gnli/model.hpp"
#include "gnli/tensor.hpp"

namespace gnli {

struct ModuleCheck {
  std::string module;
  Real max_relative_error = 0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<ModuleCheck> checks;
  double seconds = 0;

  bool passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return !checks.empty();
  }
  Real worst() const {
    Real w = 0;
    for (const auto& c : checks) w = std::max(w, c.max_relative_error);
    return w;
  }
};

namespace detail {

inline Tensor uniform_tensor(Shape shape, std::mt19937_64& rng, Real lo, Real hi, bool requires_grad = true) {
  std::uniform_real_distribution<Real> u(lo, hi);
  std::vector<Real> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// sum(y * w) for fixed weights w with |w| in [0.5, 1.5] and random signs, so
/// the objective stays near zero and its rounding error stays small.
inline Tensor random_projection(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> mag(0.5, 1.5);
  std::vector<Real> w(y.size());
  for (auto& x : w) x = (rng() & 1 ? 1 : -1) * mag(rng);
  return sum(mul(y, Tensor::from(y.shape(), std::move(w))));
}

/// Redraws every trainable tensor of `model` at fan-in scale; biases become
/// small positive values so no ReLU starts out dead.
inline void rescale_for_check(Model& model, std::mt19937_64& rng) {
  for (auto& [name, t] : model.named_tensors()) {
    if (!t.requires_grad()) continue;
    Tensor x = t;
    auto d = x.mutable_data();
    if (x.rank() == 1) {
      std::uniform_real_distribution<Real> u(0.1, 0.5);
      for (auto& v : d) v = u(rng);
      continue;
    }
    const Real a = name == "embed.char_table" ? 1.0 : 1.5 / std::sqrt(static_cast<Real>(x.dim(0)));
    std::uniform_real_distribution<Real> u(-a, a);
    for (auto& v : d) v = u(rng);
    if (name == "embed.char_table")
      for (std::size_t k = 0; k < x.dim(1); ++k) d[k] = 0;
  }
}

inline LstmParams unit_lstm(std::size_t in, std::size_t d, std::mt19937_64& rng) {
  return {uniform_tensor({in, 4 * d}, rng, -0.8, 0.8), uniform_tensor({d, 4 * d}, rng, -0.8, 0.8),
          uniform_tensor({4 * d}, rng, -0.5, 0.5)};
}

/// Time-major mask with the given per-row lengths.
inline Tensor lengths_mask(std::size_t steps, const std::vector<std::size_t>& lengths) {
  std::vector<Real> m(steps * lengths.size(), Real{0});
  for (std::size_t b = 0; b < lengths.size(); ++b)
    for (std::size_t t = 0; t < lengths[b]; ++t) m[t * lengths.size() + b] = 1;
  return Tensor::from({steps, lengths.size()}, std::move(m));
}

/// An encoder output with free-standing leaves: gates strictly inside (0, 1).
inline EncodedSentence random_encoding(std::size_t steps, std::size_t width, const std::vector<std::size_t>& lengths,
                                       std::mt19937_64& rng) {
  const std::size_t batch = lengths.size();
  EncodedSentence enc;
  enc.mask = lengths_mask(steps, lengths);
  const Tensor m = reshape(enc.mask, {steps, batch, 1});
  enc.h = uniform_tensor({steps, batch, width}, rng, -1, 1);
  enc.gate_i = uniform_tensor({steps, batch, width}, rng, 0.05, 0.95);
  enc.gate_f = uniform_tensor({steps, batch, width}, rng, 0.05, 0.95);
  enc.gate_o = uniform_tensor({steps, batch, width}, rng, 0.05, 0.95);
  return enc;
}

}  // namespace detail

/// Runs every module check; a module passes when its worst relative error is below `tolerance`.
inline GradCheckReport run_gradchecks(std::uint64_t seed = 1, Real tolerance = 1e-4, Real eps = 1e-5) {
  const auto start = std::chrono::steady_clock::now();
  GradCheckReport report;
  std::mt19937_64 rng(seed);
  const auto record = [&](std::string name, Real err) {
    report.checks.push_back({std::move(name), err, err < tolerance});
  };

  // Character CNN: two words of different lengths, one shorter than the widest filter.
  {
    EmbedParams p;
    p.char_table = detail::uniform_tensor({7, 3}, rng, -1, 1);
    for (std::size_t w : {1, 2, 3}) {
      p.filters.push_back({w, detail::uniform_tensor({w * 3, 4}, rng, -1, 1), detail::uniform_tensor({4}, rng, -0.3, 0.3)});
    }
    const std::vector<std::int64_t> ids{2, 3, 4, 5, 6, 0, 0, 0};
    const std::vector<std::size_t> lengths{5, 2};
    std::vector<Tensor> wrt{p.char_table};
    for (const auto& f : p.filters) {
      wrt.push_back(f.weight);
      wrt.push_back(f.bias);
    }
    record("char_cnn", grad_check([&] { return detail::random_projection(char_compose_words(p, ids, lengths, 4), seed); },
                                  wrt, eps));
  }

  // LSTM cell, d = 3.
  {
    const LstmParams p = detail::unit_lstm(4, 3, rng);
    const Tensor x = detail::uniform_tensor({2, 4}, rng, -1, 1);
    const Tensor h = detail::uniform_tensor({2, 3}, rng, -1, 1);
    const Tensor c = detail::uniform_tensor({2, 3}, rng, -1, 1);
    record("lstm_cell", grad_check([&] {
             const LstmStep s = lstm_cell(x, h, c, p);
             return add(detail::random_projection(s.h, seed), detail::random_projection(s.c, seed + 1));
           },
                                   {x, h, c, p.W, p.U, p.b}, eps));
  }

  // Stacked encoder: d_w = 8, d = 4, n = 3, two layers, second row padded.
  {
    std::vector<BiLstmParams> layers;
    for (std::size_t l = 0; l < 2; ++l) {
      const std::size_t in = layer_input_dim(l, 8, 4);
      layers.push_back({detail::unit_lstm(in, 4, rng), detail::unit_lstm(in, 4, rng)});
    }
    const Tensor e = detail::uniform_tensor({3, 2, 8}, rng, -1, 1);
    const Tensor mask = detail::lengths_mask(3, {3, 2});
    std::vector<Tensor> wrt{e};
    for (const auto& l : layers)
      for (const auto* p : {&l.fwd, &l.bwd}) wrt.insert(wrt.end(), {p->W, p->U, p->b});
    record("stacked_encoder", grad_check([&] {
             const EncodedSentence enc = stacked_encode(e, mask, layers);
             return add(add(detail::random_projection(enc.h, seed), detail::random_projection(enc.gate_i, seed + 1)),
                        add(detail::random_projection(enc.gate_f, seed + 2), detail::random_projection(enc.gate_o, seed + 3)));
           },
                                         wrt, eps));
  }

  // Gated attention, one check per gate kind.
  for (GateKind kind : {GateKind::input, GateKind::forget, GateKind::output}) {
    const EncodedSentence enc = detail::random_encoding(4, 6, {4, 2}, rng);
    record("gated_attention_" + std::string(to_string(kind)),
           grad_check([&] { return detail::random_projection(gated_attention_pool(enc, kind), seed); },
                      {enc.h, enc.gate_i, enc.gate_f, enc.gate_o}, eps));
  }

  // Average and max pooling, and the full composition.
  {
    const EncodedSentence enc = detail::random_encoding(4, 6, {4, 3}, rng);
    record("pooling", grad_check([&] {
             return add(detail::random_projection(avg_pool(enc), seed), detail::random_projection(max_pool(enc), seed + 1));
           },
                                 {enc.h}, eps));
    record("compose", grad_check([&] { return detail::random_projection(compose(enc, GateKind::input).v, seed); },
                                 {enc.h, enc.gate_i}, eps));
  }

  // Matching features, shortcut MLP and cross-entropy.
  {
    const Tensor vp = detail::uniform_tensor({3, 4}, rng, -1, 1);
    const Tensor vh = detail::uniform_tensor({3, 4}, rng, -1, 1);
    MlpParams p = init_mlp(16, 5, true, rng);
    for (auto* d : {&p.hidden1, &p.hidden2, &p.output}) d->b = detail::uniform_tensor(d->b.shape(), rng, 0.1, 0.5);
    const std::vector<Label> labels{Label::entailment, Label::contradiction, Label::neutral};
    record("classifier", grad_check([&] { return cross_entropy(mlp_forward(matching_features(vp, vh), p), labels); },
                                    {vp, vh, p.hidden1.W, p.hidden1.b, p.hidden2.W, p.hidden2.b, p.output.W, p.output.b},
                                    eps));
  }

  // Whole network: d = 4, sentences of up to three tokens, ten-word vocabulary.
  {
    Vocab vocab = Vocab::from_lists({"<pad>", "<unk>", "a", "b", "c", "d", "e", "f", "g", "h"},
                                    {"<pad>", "<unk>", "a", "b", "c", "d", "e", "f", "g", "h"});
    ModelConfig cfg;
    cfg.embed.char_dim = 3;
    cfg.embed.filter_widths = {1, 2};
    cfg.embed.filters_per_width = 2;
    cfg.embed.word_dim = 4;
    cfg.hidden = 4;
    cfg.layers = 1;
    cfg.mlp_hidden = 5;
    std::mt19937_64 table_rng(seed + 17);
    Model model = Model::init(cfg, vocab.char_count(),
                              detail::uniform_tensor({vocab.word_count(), 4}, table_rng, -1, 1, false), seed);
    detail::rescale_for_check(model, rng);
    const std::vector<NLIExample> examples{{{"ab", "c", "defg"}, {"h", "ba"}, Label::neutral, {}},
                                           {{"gh"}, {"a", "bb", "c"}, Label::contradiction, {}}};
    const Batch batch = make_batch(examples, std::vector<std::size_t>{0, 1}, vocab);
    record("end_to_end", grad_check([&] { return model.loss(batch); }, model.trainable(), eps));
  }

  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace gnli
