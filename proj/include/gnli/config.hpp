#pragma once

// Resolved run configuration: data paths, model dimensions, ablation flags,
// optimizer settings and seed, read from flat key-value text plus overrides.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gnli/kv.hpp"
#include "gnli/model.hpp"
#include "gnli/train.hpp"

namespace gnli {

struct DataPaths {
  std::optional<std::filesystem::path> train;
  std::optional<std::filesystem::path> dev;
  std::optional<std::filesystem::path> test;
  std::optional<std::filesystem::path> vectors;  // random N(0, 0.1^2) rows when absent
  std::filesystem::path checkpoint_dir = "checkpoints";
};

struct RunConfig {
  DataPaths paths;
  ModelConfig model;
  TrainConfig train;
  std::size_t min_count = 1;

  std::uint64_t seed() const { return train.seed; }

  static RunConfig from(const KeyValues& kv) {
    for (const auto& [key, value] : kv.values())
      if (!known_key(key)) throw ConfigError("unknown configuration key '" + key + "'");
    RunConfig c;
    const auto path = [&](const char* key) -> std::optional<std::filesystem::path> {
      const std::string v = kv.get_string(key, "");
      if (v.empty()) return std::nullopt;
      return std::filesystem::path(v);
    };
    c.paths.train = path("data.train");
    c.paths.dev = path("data.dev");
    c.paths.test = path("data.test");
    c.paths.vectors = path("data.vectors");
    c.paths.checkpoint_dir = kv.get_string("data.checkpoint_dir", c.paths.checkpoint_dir.string());
    c.min_count = kv.get_number<std::size_t>("data.min_count", c.min_count);
    if (c.min_count == 0) throw ConfigError("data.min_count must be >= 1");
    c.model = ModelConfig::read(kv);
    c.train = TrainConfig::read(kv);
    return c;
  }

  static RunConfig load(const std::filesystem::path& file, const std::vector<std::string>& overrides = {}) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read config file " + file.string());
    KeyValues kv = KeyValues::parse(in, file.string());
    for (const auto& o : overrides) kv.apply_override(o);
    return from(kv);
  }

  KeyValues to_kv() const {
    KeyValues kv;
    const auto put = [&](const char* key, const std::optional<std::filesystem::path>& p) {
      if (p) kv.set(key, p->string());
    };
    put("data.train", paths.train);
    put("data.dev", paths.dev);
    put("data.test", paths.test);
    put("data.vectors", paths.vectors);
    kv.set("data.checkpoint_dir", paths.checkpoint_dir.string());
    kv.set("data.min_count", std::to_string(min_count));
    model.write(kv);
    train.write(kv);
    return kv;
  }

  /// Header logged before every command: the command, the seed and every resolved setting.
  std::string banner(std::string_view command) const {
    return "# gnli " + std::string(command) + " seed=" + std::to_string(seed()) + "\n" + to_kv().to_text();
  }

  static bool known_key(std::string_view key) {
    static constexpr std::string_view keys[] = {
        "data.train", "data.dev", "data.test", "data.vectors", "data.checkpoint_dir", "data.min_count",
        "model.char_dim", "model.filter_widths", "model.filters_per_width", "model.word_dim", "model.hidden",
        "model.layers", "model.mlp_hidden", "model.mlp_shortcut", "model.gate", "model.dropout",
        "model.lstm_init_stddev", "model.forget_bias", "ablation.no_char", "ablation.no_word",
        "ablation.no_gated_att", "ablation.no_absdiff_product", "train.learning_rate", "train.batch_size",
        "train.epochs", "train.clip_norm", "train.beta1", "train.beta2", "train.adam_epsilon", "seed"};
    for (auto k : keys)
      if (k == key) return true;
    return false;
  }
};

}  // namespace gnli
