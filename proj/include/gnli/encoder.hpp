#pragma once

// Stacked bidirectional LSTM with shortcut connections. Layer 1 reads the
// token embeddings; every higher layer reads [embeddings; previous layer's
// states]. The top layer's input, forget and output gates are returned with
// its states so the composition layer can pool over them.

#include <random>
#include <vector>

#include "gnli/data.hpp"
#include "gnli/tensor.hpp"

namespace gnli {

/// Weights of one LSTM direction. Gate blocks along the 4d axis are ordered [i; f; u; o].
/// W is stored input-major ([input_dim, 4d]) so a step is x W + h U + b.
struct LstmParams {
  Tensor W;  // [input_dim, 4d]
  Tensor U;  // [d, 4d]
  Tensor b;  // [4d]

  std::size_t hidden() const { return U.dim(0); }
  std::size_t input_dim() const { return W.dim(0); }
};

struct BiLstmParams {
  LstmParams fwd;
  LstmParams bwd;
};

/// W, U ~ N(0, stddev^2); b = 0 except the forget block, which starts at `forget_bias`.
inline LstmParams init_lstm(std::size_t input_dim, std::size_t hidden, std::mt19937_64& rng, Real stddev = 0.01,
                            Real forget_bias = 1.0) {
  std::normal_distribution<Real> gauss(0.0, stddev);
  std::vector<Real> w(input_dim * 4 * hidden), u(hidden * 4 * hidden), b(4 * hidden, Real{0});
  for (auto& x : w) x = gauss(rng);
  for (auto& x : u) x = gauss(rng);
  for (std::size_t k = hidden; k < 2 * hidden; ++k) b[k] = forget_bias;
  return {Tensor::from({input_dim, 4 * hidden}, std::move(w), true),
          Tensor::from({hidden, 4 * hidden}, std::move(u), true), Tensor::from({4 * hidden}, std::move(b), true)};
}

struct LstmStep {
  Tensor h, c;        // [batch, d]
  Tensor i, f, u, o;  // [batch, d]
};

/// One step: [i; f; u; o] = [sigma; sigma; tanh; sigma](x W + h_prev U + b),
/// c = f * c_prev + i * u, h = o * tanh(c).
inline LstmStep lstm_cell(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev, const LstmParams& p) {
  const std::size_t d = p.hidden();
  if (x.rank() != 2 || x.dim(1) != p.input_dim())
    throw ShapeError("lstm_cell: input " + to_string(x.shape()) + " does not match W " + to_string(p.W.shape()));
  if (h_prev.shape() != Shape{x.dim(0), d} || c_prev.shape() != h_prev.shape())
    throw ShapeError("lstm_cell: state " + to_string(h_prev.shape()) + "/" + to_string(c_prev.shape()) +
                     " does not match hidden size " + std::to_string(d));
  const Tensor z = add(add(matmul(x, p.W), matmul(h_prev, p.U)), p.b);
  LstmStep s;
  s.i = sigmoid(slice(z, 1, 0, d));
  s.f = sigmoid(slice(z, 1, d, 2 * d));
  s.u = tanh(slice(z, 1, 2 * d, 3 * d));
  s.o = sigmoid(slice(z, 1, 3 * d, 4 * d));
  s.c = add(mul(s.f, c_prev), mul(s.i, s.u));
  s.h = mul(s.o, tanh(s.c));
  return s;
}

/// Top-layer encoder output in time-major layout.
struct EncodedSentence {
  Tensor h;       // [steps, batch, 2d]; zero at padded positions
  Tensor gate_i;  // [steps, batch, 2d], forward half first
  Tensor gate_f;
  Tensor gate_o;
  Tensor mask;    // [steps, batch], constant 0/1

  std::size_t steps() const { return h.dim(0); }
  std::size_t batch() const { return h.dim(1); }
  std::size_t width() const { return h.dim(2); }
};

/// Time-major [steps, batch] mask of a batch side.
inline Tensor time_major_mask(const SideBatch& side) {
  std::vector<Real> m(side.max_len * side.batch);
  for (std::size_t t = 0; t < side.max_len; ++t)
    for (std::size_t b = 0; b < side.batch; ++b) m[t * side.batch + b] = side.mask[side.at(b, t)];
  return Tensor::from({side.max_len, side.batch}, std::move(m));
}

namespace detail {

inline Tensor stack_steps(const std::vector<Tensor>& steps) {
  std::vector<Tensor> rows;
  rows.reserve(steps.size());
  for (const auto& s : steps) rows.push_back(reshape(s, {1, s.dim(0), s.dim(1)}));
  return rows.size() == 1 ? rows.front() : concat(rows, 0);
}

struct DirectionRun {
  std::vector<Tensor> h, i, f, o;
};

// Runs one direction. States are multiplied by the step mask, so a padded
// step neither emits anything nor disturbs the state carried to valid steps.
inline DirectionRun run_direction(const Tensor& inputs, const Tensor& mask, const LstmParams& p, bool reverse) {
  const std::size_t steps = inputs.dim(0), batch = inputs.dim(1), k = inputs.dim(2), d = p.hidden();
  DirectionRun run;
  run.h.resize(steps);
  run.i.resize(steps);
  run.f.resize(steps);
  run.o.resize(steps);
  Tensor h = Tensor::zeros({batch, d});
  Tensor c = Tensor::zeros({batch, d});
  for (std::size_t n = 0; n < steps; ++n) {
    const std::size_t t = reverse ? steps - 1 - n : n;
    const Tensor x = reshape(slice(inputs, 0, t, t + 1), {batch, k});
    const Tensor m = reshape(slice(mask, 0, t, t + 1), {batch, 1});
    const LstmStep s = lstm_cell(x, h, c, p);
    h = mul(s.h, m);
    c = mul(s.c, m);
    run.h[t] = h;
    run.i[t] = mul(s.i, m);
    run.f[t] = mul(s.f, m);
    run.o[t] = mul(s.o, m);
  }
  return run;
}

}  // namespace detail

/// Bidirectional pass over [steps, batch, k] inputs with a [steps, batch] mask.
/// The forward direction scans left to right from zero state; the backward
/// direction scans right to left and starts from zero state at each row's last
/// valid position. Gates are indexed by original position in both directions.
inline EncodedSentence bilstm(const Tensor& inputs, const Tensor& mask, const LstmParams& fwd,
                              const LstmParams& bwd) {
  if (inputs.rank() != 3) throw ShapeError("bilstm: inputs must be [steps, batch, k], got " + to_string(inputs.shape()));
  if (mask.shape() != Shape{inputs.dim(0), inputs.dim(1)})
    throw ShapeError("bilstm: mask " + to_string(mask.shape()) + " does not match inputs " + to_string(inputs.shape()));
  for (std::size_t b = 0; b < inputs.dim(1); ++b) {
    bool any = false;
    for (std::size_t t = 0; t < inputs.dim(0) && !any; ++t) any = mask[t * inputs.dim(1) + b] != 0;
    if (!any) throw ShapeError("bilstm: sequence " + std::to_string(b) + " has no valid positions");
  }
  const auto f = detail::run_direction(inputs, mask, fwd, false);
  const auto r = detail::run_direction(inputs, mask, bwd, true);
  std::vector<Tensor> h, gi, gf, go;
  for (std::size_t t = 0; t < inputs.dim(0); ++t) {
    h.push_back(concat({f.h[t], r.h[t]}, 1));
    gi.push_back(concat({f.i[t], r.i[t]}, 1));
    gf.push_back(concat({f.f[t], r.f[t]}, 1));
    go.push_back(concat({f.o[t], r.o[t]}, 1));
  }
  return {detail::stack_steps(h), detail::stack_steps(gi), detail::stack_steps(gf), detail::stack_steps(go), mask};
}

/// Dropout applied to layer inputs above the first; disabled when rate is 0 or rng is null.
struct LayerDropout {
  Real rate = 0;
  std::mt19937_64* rng = nullptr;
};

inline Tensor apply_dropout(const Tensor& x, const LayerDropout& dropout) {
  if (dropout.rate <= 0 || dropout.rng == nullptr) return x;
  std::bernoulli_distribution keep(1.0 - dropout.rate);
  std::vector<Real> m(x.size());
  const Real s = 1.0 / (1.0 - dropout.rate);
  for (auto& v : m) v = keep(*dropout.rng) ? s : Real{0};
  return mul(x, Tensor::from(x.shape(), std::move(m)));
}

/// Stacked encoder over [steps, batch, d_w] embeddings.
inline EncodedSentence stacked_encode(const Tensor& embeddings, const Tensor& mask,
                                      const std::vector<BiLstmParams>& layers, const LayerDropout& dropout = {}) {
  if (layers.empty()) throw ConfigError("stacked_encode: at least one layer required");
  EncodedSentence out = bilstm(embeddings, mask, layers[0].fwd, layers[0].bwd);
  for (std::size_t l = 1; l < layers.size(); ++l) {
    const Tensor input = apply_dropout(concat({embeddings, out.h}, 2), dropout);
    out = bilstm(input, mask, layers[l].fwd, layers[l].bwd);
  }
  return out;
}

/// Input width of layer `layer` (0-based) given embedding width d_w and hidden size d.
inline std::size_t layer_input_dim(std::size_t layer, std::size_t embed_dim, std::size_t hidden) {
  return layer == 0 ? embed_dim : embed_dim + 2 * hidden;
}

}  // namespace gnli
