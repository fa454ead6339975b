#pragma once

// Adam, the minibatch training loop with dev-set model selection, evaluation
// and probability-averaging ensembles.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gnli/checkpoint.hpp"
#include "gnli/data.hpp"
#include "gnli/kv.hpp"
#include "gnli/model.hpp"

namespace gnli {

struct TrainConfig {
  Real learning_rate = 4e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  Real clip_norm = 10;  // <= 0 disables clipping
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real adam_epsilon = 1e-8;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("train.learning_rate must be positive");
    if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (epochs == 0) throw ConfigError("train.epochs must be >= 1");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must be in [0, 1)");
    if (!(adam_epsilon > 0)) throw ConfigError("train.adam_epsilon must be positive");
  }

  void write(KeyValues& kv) const {
    kv.set("train.learning_rate", format_real(learning_rate));
    kv.set("train.batch_size", std::to_string(batch_size));
    kv.set("train.epochs", std::to_string(epochs));
    kv.set("train.clip_norm", format_real(clip_norm));
    kv.set("train.beta1", format_real(beta1));
    kv.set("train.beta2", format_real(beta2));
    kv.set("train.adam_epsilon", format_real(adam_epsilon));
    kv.set("seed", std::to_string(seed));
  }

  static TrainConfig read(const KeyValues& kv) {
    TrainConfig c;
    c.learning_rate = kv.get_number<Real>("train.learning_rate", c.learning_rate);
    c.batch_size = kv.get_number<std::size_t>("train.batch_size", c.batch_size);
    c.epochs = kv.get_number<std::size_t>("train.epochs", c.epochs);
    c.clip_norm = kv.get_number<Real>("train.clip_norm", c.clip_norm);
    c.beta1 = kv.get_number<Real>("train.beta1", c.beta1);
    c.beta2 = kv.get_number<Real>("train.beta2", c.beta2);
    c.adam_epsilon = kv.get_number<Real>("train.adam_epsilon", c.adam_epsilon);
    c.seed = kv.get_number<std::uint64_t>("seed", c.seed);
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Adam

/// Adam with bias-corrected moments over a fixed list of parameters. A
/// parameter without a gradient is treated as having a zero gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, Real learning_rate, Real beta1 = 0.9, Real beta2 = 0.999, Real epsilon = 1e-8)
      : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
    for (const auto& p : params_) {
      if (!p.requires_grad()) throw ConfigError("Adam: parameter does not require gradients (frozen tensors are excluded)");
      m_.emplace_back(p.size(), Real{0});
      v_.emplace_back(p.size(), Real{0});
    }
  }

  /// Applies one update from the parameters' current gradients. Throws
  /// NumericError, leaving parameters and state untouched, if any gradient is not finite.
  void step() {
    for (std::size_t j = 0; j < params_.size(); ++j)
      for (Real g : params_[j].grad())
        if (!std::isfinite(g)) throw NumericError("Adam: non-finite gradient in parameter " + std::to_string(j));
    ++t_;
    const Real c1 = 1 - std::pow(beta1_, static_cast<Real>(t_));
    const Real c2 = 1 - std::pow(beta2_, static_cast<Real>(t_));
    for (std::size_t j = 0; j < params_.size(); ++j) {
      Tensor p = params_[j];
      const auto g = p.grad();
      auto x = p.mutable_data();
      auto& m = m_[j];
      auto& v = v_[j];
      for (std::size_t k = 0; k < x.size(); ++k) {
        const Real gk = g.empty() ? Real{0} : g[k];
        m[k] = beta1_ * m[k] + (1 - beta1_) * gk;
        v[k] = beta2_ * v[k] + (1 - beta2_) * gk * gk;
        x[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t steps() const { return t_; }
  const std::vector<std::vector<Real>>& first_moments() const { return m_; }
  const std::vector<std::vector<Real>>& second_moments() const { return v_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<Real>> m_, v_;
  Real lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

/// Rescales gradients so their global l2 norm is at most `max_norm`; returns the norm before clipping.
inline Real clip_grad_norm(std::vector<Tensor>& params, Real max_norm) {
  Real sq = 0;
  for (const auto& p : params)
    for (Real g : p.grad()) sq += g * g;
  const Real norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const Real s = max_norm / norm;
    for (auto& p : params)
      for (auto& g : p.mutable_grad()) g *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  Real accuracy = 0;
  std::size_t total = 0;
  std::size_t correct = 0;
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};  // [gold][predicted]
  std::vector<Label> predictions;
  std::vector<std::array<Real, kNumClasses>> probabilities;
};

/// Class probabilities for every example, in input order.
inline std::vector<std::array<Real, kNumClasses>> predict_probabilities(const Model& model, const Vocab& vocab,
                                                                       std::span<const NLIExample> examples,
                                                                       std::size_t batch_size = 64) {
  NoGradGuard no_grad;
  std::vector<std::array<Real, kNumClasses>> out(examples.size());
  for (const auto& batch : batchify(examples, batch_size, vocab, 0, false)) {
    const Tensor p = model.probabilities(batch);
    for (std::size_t r = 0; r < batch.size(); ++r)
      for (std::size_t c = 0; c < kNumClasses; ++c) out[batch.source[r]][c] = p[r * kNumClasses + c];
  }
  return out;
}

inline Label argmax_label(const std::array<Real, kNumClasses>& p) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumClasses; ++c)
    if (p[c] > p[best]) best = c;
  return static_cast<Label>(best);
}

inline EvalResult score_predictions(std::span<const NLIExample> examples,
                                    std::vector<std::array<Real, kNumClasses>> probs) {
  if (examples.empty()) throw DataError("evaluate: empty dataset");
  EvalResult r;
  r.total = examples.size();
  r.probabilities = std::move(probs);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Label pred = argmax_label(r.probabilities[i]);
    r.predictions.push_back(pred);
    ++r.confusion[static_cast<std::size_t>(examples[i].label)][static_cast<std::size_t>(pred)];
    if (pred == examples[i].label) ++r.correct;
  }
  r.accuracy = static_cast<Real>(r.correct) / static_cast<Real>(r.total);
  return r;
}

inline EvalResult evaluate(const Model& model, const Vocab& vocab, std::span<const NLIExample> examples,
                           std::size_t batch_size = 64) {
  if (examples.empty()) throw DataError("evaluate: empty dataset");
  return score_predictions(examples, predict_probabilities(model, vocab, examples, batch_size));
}

inline EvalResult evaluate(const Checkpoint& ckpt, std::span<const NLIExample> examples, std::size_t batch_size = 64) {
  return evaluate(ckpt.model(), ckpt.vocab, examples, batch_size);
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;
  Real train_loss = 0;
  Real dev_accuracy = 0;
};

struct TrainResult {
  Checkpoint best;                 // highest dev accuracy (first epoch reaching it)
  std::vector<EpochRecord> history;
  std::vector<Real> step_losses;   // every minibatch loss, in order
  bool diverged = false;
  std::string diagnostic;
};

/// Trains a freshly initialized model. After every epoch the dev set is scored
/// and the best model so far is kept. A non-finite loss or gradient stops
/// training with `diverged` set and the last good checkpoint retained.
inline TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const Vocab& vocab,
                         const Tensor& word_table, std::span<const NLIExample> train_set,
                         std::span<const NLIExample> dev_set,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  model_cfg.validate();
  cfg.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  if (dev_set.empty()) throw DataError("train: empty development set");

  KeyValues snapshot;
  cfg.write(snapshot);
  Model model = Model::init(model_cfg, vocab.char_count(), word_table, cfg.seed);
  std::vector<Tensor> params = model.trainable();
  Adam adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  const ForwardOptions opt{model_cfg.dropout > 0 ? &dropout_rng : nullptr};

  TrainResult result;
  result.best = Checkpoint::capture(model, vocab, snapshot, {0, 0, cfg.seed});
  bool have_best = false;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Real loss_sum = 0;
    std::size_t seen = 0;
    try {
      for (const auto& batch : batchify(train_set, cfg.batch_size, vocab, cfg.seed + epoch)) {
        adam.zero_grad();
        const Tensor loss = model.loss(batch, opt);
        const Real value = loss.item();
        if (!std::isfinite(value)) throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
        backward(loss);
        clip_grad_norm(params, cfg.clip_norm);
        adam.step();
        result.step_losses.push_back(value);
        loss_sum += value * static_cast<Real>(batch.size());
        seen += batch.size();
      }
    } catch (const NumericError& e) {
      result.diverged = true;
      result.diagnostic = e.what();
      return result;
    }
    EpochRecord rec{epoch, loss_sum / static_cast<Real>(seen), evaluate(model, vocab, dev_set).accuracy};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (!have_best || rec.dev_accuracy > result.best.meta.dev_accuracy) {
      result.best = Checkpoint::capture(model, vocab, snapshot, {epoch, rec.dev_accuracy, cfg.seed});
      have_best = true;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Ensembles

/// A model together with the vocabulary its inputs are indexed by.
struct Predictor {
  Model model;
  Vocab vocab;

  static Predictor from(const Checkpoint& ckpt) { return {ckpt.model(), ckpt.vocab}; }
};

using ClassProbabilities = std::array<Real, kNumClasses>;

/// Mean over members of per-example class probabilities, members[m][i]. Each
/// coordinate is accumulated as min + sum(x - min) / k over the sorted values,
/// so the result does not depend on member order and k identical members
/// reproduce that member exactly.
inline std::vector<ClassProbabilities> average_probabilities(const std::vector<std::vector<ClassProbabilities>>& members) {
  if (members.empty()) throw ConfigError("ensemble: at least one model required");
  const std::size_t n = members.front().size();
  for (const auto& m : members)
    if (m.size() != n) throw ShapeError("ensemble: members scored different numbers of examples");
  std::vector<ClassProbabilities> out(n);
  std::vector<Real> column(members.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      for (std::size_t m = 0; m < members.size(); ++m) column[m] = members[m][i][c];
      std::sort(column.begin(), column.end());
      Real spread = 0;
      for (Real x : column) spread += x - column.front();
      out[i][c] = column.front() + spread / static_cast<Real>(members.size());
    }
  return out;
}

/// Mean of the members' class probabilities for each example.
inline std::vector<ClassProbabilities> ensemble_probabilities(std::span<const Predictor> members,
                                                              std::span<const NLIExample> examples) {
  if (members.empty()) throw ConfigError("ensemble: at least one model required");
  for (const auto& m : members)
    if (!(m.model.config() == members.front().model.config()))
      throw ConfigError("ensemble: member configurations differ");
  std::vector<std::vector<ClassProbabilities>> scored;
  for (const auto& m : members) scored.push_back(predict_probabilities(m.model, m.vocab, examples));
  return average_probabilities(scored);
}

inline Label ensemble_predict(std::span<const Predictor> members, const NLIExample& example) {
  return argmax_label(ensemble_probabilities(members, std::span<const NLIExample>(&example, 1)).front());
}

inline EvalResult ensemble_evaluate(std::span<const Predictor> members, std::span<const NLIExample> examples) {
  if (examples.empty()) throw DataError("evaluate: empty dataset");
  return score_predictions(examples, ensemble_probabilities(members, examples));
}

}  // namespace gnli
