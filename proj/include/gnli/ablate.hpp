#pragma once

// The ablation table: the full model and one run per removed component.

#include <ostream>
#include <string>
#include <vector>

#include "gnli/model.hpp"
#include "gnli/train.hpp"

namespace gnli {

struct AblationVariant {
  std::string name;
  ModelConfig config;
};

/// full, -gated_att, -char_cnn, -word_embedding, -absdiff_product, in that order.
inline std::vector<AblationVariant> ablation_variants(const ModelConfig& base) {
  ModelConfig full = base;
  full.embed.use_char = full.embed.use_word = true;
  full.use_gated_attention = full.use_difference_product = true;
  std::vector<AblationVariant> out{{"full", full}};
  out.push_back({"-gated_att", full});
  out.back().config.use_gated_attention = false;
  out.push_back({"-char_cnn", full});
  out.back().config.embed.use_char = false;
  out.push_back({"-word_embedding", full});
  out.back().config.embed.use_word = false;
  out.push_back({"-absdiff_product", full});
  out.back().config.use_difference_product = false;
  return out;
}

struct AblationRow {
  std::string name;
  Real dev_accuracy = 0;
  bool diverged = false;
};

/// Trains every variant with identical data, optimizer settings and seed.
inline std::vector<AblationRow> run_ablation(const ModelConfig& base, const TrainConfig& train_cfg, const Vocab& vocab,
                                             const Tensor& word_table, std::span<const NLIExample> train_set,
                                             std::span<const NLIExample> dev_set) {
  std::vector<AblationRow> rows;
  for (const auto& v : ablation_variants(base)) {
    const TrainResult r = train(v.config, train_cfg, vocab, word_table, train_set, dev_set);
    rows.push_back({v.name, r.best.meta.dev_accuracy, r.diverged});
  }
  return rows;
}

inline void write_ablation_tsv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "config\tdev_accuracy\n";
  for (const auto& r : rows) out << r.name << '\t' << format_real(r.dev_accuracy) << '\n';
}

}  // namespace gnli
