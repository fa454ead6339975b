#pragma once

// Fixed-length sentence vectors from encoder states: gated-attention pooling,
// average pooling and max pooling over valid positions, v = [v_g; v_a; v_m].

#include <optional>
#include <string_view>
#include <vector>

#include "gnli/encoder.hpp"
#include "gnli/tensor.hpp"

namespace gnli {

enum class GateKind { input, forget, output };

inline std::string_view to_string(GateKind kind) {
  switch (kind) {
    case GateKind::input: return "input";
    case GateKind::forget: return "forget";
    case GateKind::output: return "output";
  }
  return "input";
}

inline std::optional<GateKind> parse_gate_kind(std::string_view s) {
  if (s == "input") return GateKind::input;
  if (s == "forget") return GateKind::forget;
  if (s == "output") return GateKind::output;
  return std::nullopt;
}

inline constexpr Real kAttentionEpsilon = 1e-12;

/// Per-position attention weights [steps, batch]: the l2 norm of the chosen
/// gate (1 - f for the forget variant) normalized over valid positions.
/// A row whose valid norms all fall below 1e-12 gets uniform weights.
inline Tensor gate_attention_weights(const EncodedSentence& enc, GateKind kind) {
  Tensor gate;
  switch (kind) {
    case GateKind::input: gate = enc.gate_i; break;
    case GateKind::forget: gate = sub(Tensor::scalar(1), enc.gate_f); break;
    case GateKind::output: gate = enc.gate_o; break;
  }
  const Tensor scores = mul(l2norm(gate, 2), enc.mask);
  const std::size_t steps = enc.steps(), batch = enc.batch();
  std::vector<Real> keep(batch, Real{0});
  bool fallback = false;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t)
      if (scores[t * batch + b] >= kAttentionEpsilon) keep[b] = 1;
    fallback = fallback || keep[b] == 0;
  }
  Tensor weights = scores;
  if (fallback) {
    const Tensor keep_t = Tensor::from({batch}, keep);
    std::vector<Real> drop(batch);
    for (std::size_t b = 0; b < batch; ++b) drop[b] = 1 - keep[b];
    weights = add(mul(scores, keep_t), mul(enc.mask, Tensor::from({batch}, std::move(drop))));
  }
  return div(weights, sum(weights, 0));
}

/// v_g = sum_t weight_t h_t, [batch, 2d]. Gradients flow through both the weights and h.
inline Tensor gated_attention_pool(const EncodedSentence& enc, GateKind kind) {
  const Tensor w = gate_attention_weights(enc, kind);
  return sum(mul(reshape(w, {enc.steps(), enc.batch(), 1}), enc.h), 0);
}

/// Mean of h over valid positions, [batch, 2d].
inline Tensor avg_pool(const EncodedSentence& enc) {
  const std::size_t steps = enc.steps(), batch = enc.batch();
  std::vector<Real> counts(batch, Real{0});
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t b = 0; b < batch; ++b) counts[b] += enc.mask[t * batch + b];
  const Tensor m = reshape(enc.mask, {steps, batch, 1});
  return div(sum(mul(enc.h, m), 0), Tensor::from({batch, 1}, std::move(counts)));
}

/// Coordinatewise max of h over valid positions, [batch, 2d].
inline Tensor max_pool(const EncodedSentence& enc) {
  const std::size_t steps = enc.steps(), batch = enc.batch();
  std::vector<Real> penalty(steps * batch);
  for (std::size_t k = 0; k < penalty.size(); ++k) penalty[k] = enc.mask[k] != 0 ? Real{0} : Real{-1e300};
  return max(add(enc.h, Tensor::from({steps, batch, 1}, std::move(penalty))), 0);
}

struct SentenceVector {
  std::optional<Tensor> v_g;  // absent when gated attention is ablated
  Tensor v_a;
  Tensor v_m;
  Tensor v;  // [v_g; v_a; v_m], or [v_a; v_m] without gated attention
};

inline SentenceVector compose(const EncodedSentence& enc, GateKind kind, bool use_gated_attention = true) {
  SentenceVector s;
  s.v_a = avg_pool(enc);
  s.v_m = max_pool(enc);
  if (use_gated_attention) {
    s.v_g = gated_attention_pool(enc, kind);
    s.v = concat({*s.v_g, s.v_a, s.v_m}, 1);
  } else {
    s.v = concat({s.v_a, s.v_m}, 1);
  }
  return s;
}

}  // namespace gnli
