#pragma once

// The full sentence-encoder NLI network: shared embedding and encoder for both
// sentences, per-sentence composition, matching features and MLP classifier.

#include <charconv>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gnli/classify.hpp"
#include "gnli/compose.hpp"
#include "gnli/data.hpp"
#include "gnli/embed.hpp"
#include "gnli/encoder.hpp"
#include "gnli/kv.hpp"
#include "gnli/tensor.hpp"

namespace gnli {

/// Shortest decimal form that parses back to the same double.
inline std::string format_real(Real x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

struct ModelConfig {
  EmbedConfig embed;
  std::size_t hidden = 600;
  std::size_t layers = 3;
  std::size_t mlp_hidden = 600;
  bool mlp_shortcut = true;
  GateKind gate = GateKind::input;
  bool use_gated_attention = true;
  bool use_difference_product = true;
  Real dropout = 0;
  Real lstm_init_stddev = 0.01;
  Real forget_bias = 1.0;

  std::size_t sentence_dim() const { return (use_gated_attention ? 3 : 2) * 2 * hidden; }
  std::size_t classifier_input_dim() const { return (use_difference_product ? 4 : 2) * sentence_dim(); }

  void validate() const {
    if (!embed.use_char && !embed.use_word) throw ConfigError("no_char and no_word cannot both be set");
    if (hidden == 0 || layers == 0 || mlp_hidden == 0) throw ConfigError("model dimensions must be positive");
    if (embed.use_char) {
      if (embed.char_dim == 0 || embed.filters_per_width == 0 || embed.filter_widths.empty())
        throw ConfigError("character CNN dimensions must be positive");
      for (std::size_t k = 0; k < embed.filter_widths.size(); ++k) {
        if (embed.filter_widths[k] == 0) throw ConfigError("filter widths must be positive");
        for (std::size_t j = 0; j < k; ++j)
          if (embed.filter_widths[j] == embed.filter_widths[k]) throw ConfigError("filter widths must be distinct");
      }
    }
    if (embed.use_word && embed.word_dim == 0) throw ConfigError("word_dim must be positive");
    if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must be in [0, 1)");
  }

  void write(KeyValues& kv) const {
    std::string widths;
    for (std::size_t k = 0; k < embed.filter_widths.size(); ++k)
      widths += (k ? ", " : "") + std::to_string(embed.filter_widths[k]);
    kv.set("model.char_dim", std::to_string(embed.char_dim));
    kv.set("model.filter_widths", "[" + widths + "]");
    kv.set("model.filters_per_width", std::to_string(embed.filters_per_width));
    kv.set("model.word_dim", std::to_string(embed.word_dim));
    kv.set("model.hidden", std::to_string(hidden));
    kv.set("model.layers", std::to_string(layers));
    kv.set("model.mlp_hidden", std::to_string(mlp_hidden));
    kv.set("model.mlp_shortcut", mlp_shortcut ? "true" : "false");
    kv.set("model.gate", std::string(to_string(gate)));
    kv.set("model.dropout", format_real(dropout));
    kv.set("model.lstm_init_stddev", format_real(lstm_init_stddev));
    kv.set("model.forget_bias", format_real(forget_bias));
    kv.set("ablation.no_char", embed.use_char ? "false" : "true");
    kv.set("ablation.no_word", embed.use_word ? "false" : "true");
    kv.set("ablation.no_gated_att", use_gated_attention ? "false" : "true");
    kv.set("ablation.no_absdiff_product", use_difference_product ? "false" : "true");
  }

  static ModelConfig read(const KeyValues& kv) {
    ModelConfig c;
    c.embed.char_dim = kv.get_number<std::size_t>("model.char_dim", c.embed.char_dim);
    c.embed.filter_widths = kv.get_list<std::size_t>("model.filter_widths", c.embed.filter_widths);
    c.embed.filters_per_width = kv.get_number<std::size_t>("model.filters_per_width", c.embed.filters_per_width);
    c.embed.word_dim = kv.get_number<std::size_t>("model.word_dim", c.embed.word_dim);
    c.hidden = kv.get_number<std::size_t>("model.hidden", c.hidden);
    c.layers = kv.get_number<std::size_t>("model.layers", c.layers);
    c.mlp_hidden = kv.get_number<std::size_t>("model.mlp_hidden", c.mlp_hidden);
    c.mlp_shortcut = kv.get_bool("model.mlp_shortcut", c.mlp_shortcut);
    const std::string gate = kv.get_string("model.gate", "input");
    const auto kind = parse_gate_kind(gate);
    if (!kind) throw ConfigError("model.gate: expected input, forget or output, got '" + gate + "'");
    c.gate = *kind;
    c.dropout = kv.get_number<Real>("model.dropout", c.dropout);
    c.lstm_init_stddev = kv.get_number<Real>("model.lstm_init_stddev", c.lstm_init_stddev);
    c.forget_bias = kv.get_number<Real>("model.forget_bias", c.forget_bias);
    c.embed.use_char = !kv.get_bool("ablation.no_char", false);
    c.embed.use_word = !kv.get_bool("ablation.no_word", false);
    c.use_gated_attention = !kv.get_bool("ablation.no_gated_att", false);
    c.use_difference_product = !kv.get_bool("ablation.no_absdiff_product", false);
    c.validate();
    return c;
  }

  bool operator==(const ModelConfig& other) const {
    KeyValues a, b;
    write(a);
    other.write(b);
    return a == b;
  }
};

/// Forward-pass options. Dropout is active only when `rng` is set.
struct ForwardOptions {
  std::mt19937_64* rng = nullptr;
};

class Model {
 public:
  /// Fresh parameters for `char_count` characters around a given frozen word table.
  static Model init(const ModelConfig& cfg, std::size_t char_count, Tensor word_table, std::uint64_t seed) {
    cfg.validate();
    if (word_table.rank() != 2 || word_table.dim(1) != cfg.embed.word_dim)
      throw ConfigError("word table " + to_string(word_table.shape()) + " does not match word_dim " +
                        std::to_string(cfg.embed.word_dim));
    Model m;
    m.config_ = cfg;
    std::mt19937_64 rng(seed);
    EmbedConfig embed_cfg = cfg.embed;
    if (!cfg.embed.use_char) embed_cfg.filter_widths.clear();
    m.embed_ = init_embed(embed_cfg, char_count, std::move(word_table), rng);
    const std::size_t d_w = cfg.embed.output_dim();
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::size_t in = layer_input_dim(l, d_w, cfg.hidden);
      BiLstmParams layer;
      layer.fwd = init_lstm(in, cfg.hidden, rng, cfg.lstm_init_stddev, cfg.forget_bias);
      layer.bwd = init_lstm(in, cfg.hidden, rng, cfg.lstm_init_stddev, cfg.forget_bias);
      m.encoder_.push_back(std::move(layer));
    }
    m.mlp_ = init_mlp(cfg.classifier_input_dim(), cfg.mlp_hidden, cfg.mlp_shortcut, rng);
    return m;
  }

  const ModelConfig& config() const { return config_; }
  const EmbedParams& embed() const { return embed_; }
  const std::vector<BiLstmParams>& encoder() const { return encoder_; }
  const MlpParams& mlp() const { return mlp_; }

  /// Every tensor under a stable name, frozen word table included.
  std::vector<std::pair<std::string, Tensor>> named_tensors() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embed.word_table", embed_.word_table);
    out.emplace_back("embed.char_table", embed_.char_table);
    for (const auto& f : embed_.filters) {
      const std::string base = "embed.conv" + std::to_string(f.width);
      out.emplace_back(base + ".weight", f.weight);
      out.emplace_back(base + ".bias", f.bias);
    }
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
      for (const auto& [dir, p] : {std::pair<const char*, const LstmParams*>{"fwd", &encoder_[l].fwd},
                                   std::pair<const char*, const LstmParams*>{"bwd", &encoder_[l].bwd}}) {
        const std::string base = "encoder.layer" + std::to_string(l) + "." + dir;
        out.emplace_back(base + ".W", p->W);
        out.emplace_back(base + ".U", p->U);
        out.emplace_back(base + ".b", p->b);
      }
    }
    out.emplace_back("classifier.hidden1.W", mlp_.hidden1.W);
    out.emplace_back("classifier.hidden1.b", mlp_.hidden1.b);
    out.emplace_back("classifier.hidden2.W", mlp_.hidden2.W);
    out.emplace_back("classifier.hidden2.b", mlp_.hidden2.b);
    out.emplace_back("classifier.output.W", mlp_.output.W);
    out.emplace_back("classifier.output.b", mlp_.output.b);
    return out;
  }

  /// Learnable tensors in named_tensors() order (the word table is excluded).
  std::vector<Tensor> trainable() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_tensors())
      if (t.requires_grad()) out.push_back(t);
    return out;
  }

  /// Independent copy of every parameter value.
  Model clone() const {
    Model m = *this;
    auto copy = [](Tensor& t) { t = Tensor::from(t.shape(), {t.data().begin(), t.data().end()}, t.requires_grad()); };
    copy(m.embed_.word_table);
    copy(m.embed_.char_table);
    for (auto& f : m.embed_.filters) {
      copy(f.weight);
      copy(f.bias);
    }
    for (auto& layer : m.encoder_)
      for (auto* p : {&layer.fwd, &layer.bwd}) {
        copy(p->W);
        copy(p->U);
        copy(p->b);
      }
    for (auto* d : {&m.mlp_.hidden1, &m.mlp_.hidden2, &m.mlp_.output}) {
      copy(d->W);
      copy(d->b);
    }
    return m;
  }

  /// Copies values into the existing parameters by name; every name must be present with its exact shape.
  void load_values(const std::vector<std::pair<std::string, Tensor>>& values) {
    for (auto& [name, target] : named_tensors()) {
      auto it = std::find_if(values.begin(), values.end(), [&](const auto& v) { return v.first == name; });
      if (it == values.end()) throw DataError("missing tensor '" + name + "'");
      if (it->second.shape() != target.shape())
        throw DataError("tensor '" + name + "' has shape " + to_string(it->second.shape()) + ", expected " +
                        to_string(target.shape()));
      Tensor dst = target;
      std::copy(it->second.data().begin(), it->second.data().end(), dst.mutable_data().begin());
    }
  }

  EncodedSentence encode(const SideBatch& side, const ForwardOptions& opt = {}) const {
    const Tensor e = embed_side(embed_, config_.embed, side);
    return stacked_encode(e, time_major_mask(side), encoder_, {config_.dropout, opt.rng});
  }

  SentenceVector sentence_vector(const SideBatch& side, const ForwardOptions& opt = {}) const {
    return compose(encode(side, opt), config_.gate, config_.use_gated_attention);
  }

  /// Pre-softmax class scores [batch, 3].
  Tensor logits(const Batch& batch, const ForwardOptions& opt = {}) const {
    const Tensor v_p = sentence_vector(batch.premise, opt).v;
    const Tensor v_h = sentence_vector(batch.hypothesis, opt).v;
    const Tensor v_inp = matching_features(v_p, v_h, config_.use_difference_product);
    return mlp_logits(v_inp, mlp_, {config_.dropout, opt.rng});
  }

  Tensor probabilities(const Batch& batch, const ForwardOptions& opt = {}) const {
    return softmax(logits(batch, opt));
  }

  Tensor loss(const Batch& batch, const ForwardOptions& opt = {}) const {
    return cross_entropy(probabilities(batch, opt), batch.labels);
  }

 private:
  ModelConfig config_;
  EmbedParams embed_;
  std::vector<BiLstmParams> encoder_;
  MlpParams mlp_;
};

/// Index of the largest entry in each row of a [rows, 3] tensor (first on ties).
inline std::vector<Label> argmax_labels(const Tensor& probs) {
  std::vector<Label> out;
  for (std::size_t r = 0; r < probs.dim(0); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < kNumClasses; ++c)
      if (probs[r * kNumClasses + c] > probs[r * kNumClasses + best]) best = c;
    out.push_back(static_cast<Label>(best));
  }
  return out;
}

}  // namespace gnli
