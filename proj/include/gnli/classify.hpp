#pragma once

// Matching features and the MLP softmax classifier.

#include <random>
#include <span>
#include <vector>

#include "gnli/data.hpp"
#include "gnli/tensor.hpp"

namespace gnli {

/// [v_p; v_h; |v_p - v_h|; v_p * v_h] along the last axis, or [v_p; v_h] when
/// `with_difference_product` is false.
inline Tensor matching_features(const Tensor& v_p, const Tensor& v_h, bool with_difference_product = true) {
  if (v_p.shape() != v_h.shape())
    throw ShapeError("matching_features: " + to_string(v_p.shape()) + " vs " + to_string(v_h.shape()));
  const std::size_t axis = v_p.rank() - 1;
  if (!with_difference_product) return concat({v_p, v_h}, axis);
  return concat({v_p, v_h, abs(sub(v_p, v_h)), mul(v_p, v_h)}, axis);
}

struct DenseLayer {
  Tensor W;  // [in, out]
  Tensor b;  // [out]

  Tensor operator()(const Tensor& x) const { return add(matmul(x, W), b); }
};

inline DenseLayer init_dense(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  // Glorot-uniform weights, zero bias.
  const Real limit = std::sqrt(6.0 / static_cast<Real>(in + out));
  std::uniform_real_distribution<Real> u(-limit, limit);
  std::vector<Real> w(in * out);
  for (auto& x : w) x = u(rng);
  return {Tensor::from({in, out}, std::move(w), true), Tensor::zeros({out}, true)};
}

/// Two ReLU hidden layers and a softmax output over the three classes. With
/// shortcuts on, the second hidden layer reads [v_inp; hidden1].
struct MlpParams {
  DenseLayer hidden1;
  DenseLayer hidden2;
  DenseLayer output;
  bool shortcut = true;
};

inline MlpParams init_mlp(std::size_t input_dim, std::size_t hidden, bool shortcut, std::mt19937_64& rng) {
  MlpParams p;
  p.shortcut = shortcut;
  p.hidden1 = init_dense(input_dim, hidden, rng);
  p.hidden2 = init_dense(shortcut ? input_dim + hidden : hidden, hidden, rng);
  p.output = init_dense(hidden, kNumClasses, rng);
  return p;
}

struct MlpDropout {
  Real rate = 0;
  std::mt19937_64* rng = nullptr;
};

namespace detail {
inline Tensor drop(const Tensor& x, const MlpDropout& d) {
  if (d.rate <= 0 || d.rng == nullptr) return x;
  std::bernoulli_distribution keep(1.0 - d.rate);
  std::vector<Real> m(x.size());
  for (auto& v : m) v = keep(*d.rng) ? 1.0 / (1.0 - d.rate) : 0.0;
  return mul(x, Tensor::from(x.shape(), std::move(m)));
}
}  // namespace detail

/// Pre-softmax scores [batch, 3].
inline Tensor mlp_logits(const Tensor& v_inp, const MlpParams& p, const MlpDropout& dropout = {}) {
  if (v_inp.rank() != 2 || v_inp.dim(1) != p.hidden1.W.dim(0))
    throw ShapeError("mlp: input " + to_string(v_inp.shape()) + " does not match first layer " +
                     to_string(p.hidden1.W.shape()));
  const Tensor h1 = detail::drop(relu(p.hidden1(v_inp)), dropout);
  const Tensor h2 = detail::drop(relu(p.hidden2(p.shortcut ? concat({v_inp, h1}, 1) : h1)), dropout);
  return p.output(h2);
}

inline Tensor mlp_forward(const Tensor& v_inp, const MlpParams& p, const MlpDropout& dropout = {}) {
  return softmax(mlp_logits(v_inp, p, dropout));
}

inline constexpr Real kProbabilityFloor = 1e-12;

/// Mean over the batch of -log p[label], with p clamped below at 1e-12.
inline Tensor cross_entropy(const Tensor& probs, std::span<const Label> labels) {
  if (probs.rank() != 2 || probs.dim(1) != kNumClasses || probs.dim(0) != labels.size())
    throw ShapeError("cross_entropy: probabilities " + to_string(probs.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  std::vector<Real> onehot(probs.size(), Real{0});
  for (std::size_t b = 0; b < labels.size(); ++b) onehot[b * kNumClasses + static_cast<std::size_t>(labels[b])] = 1;
  const Tensor picked = sum(mul(log(clamp_min(probs, kProbabilityFloor)), Tensor::from(probs.shape(), std::move(onehot))));
  return scale(picked, -1.0 / static_cast<Real>(labels.size()));
}

}  // namespace gnli
