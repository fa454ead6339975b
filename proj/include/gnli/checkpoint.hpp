#pragma once

// Binary checkpoint container.
//
// Layout (all integers little-endian):
//   magic   8 bytes  "GNLICKPT"
//   version u32      currently 1
//   count   u32      number of records
//   record  name_len u32, name bytes, dtype u8 (0 = float64, 1 = utf-8 text),
//           rank u32, dims u64 * rank, payload_len u64, payload bytes
// Text records are named with a leading '@' (@config, @meta, @vocab.words,
// @vocab.chars); every other record is a float64 tensor.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "gnli/data.hpp"
#include "gnli/kv.hpp"
#include "gnli/model.hpp"

namespace gnli {

inline constexpr std::array<char, 8> kCheckpointMagic{'G', 'N', 'L', 'I', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainingMeta {
  std::size_t epoch = 0;
  Real dev_accuracy = 0;
  std::uint64_t seed = 0;

  bool operator==(const TrainingMeta&) const = default;
};

struct Checkpoint {
  KeyValues config;  // model.* / ablation.* / train.* snapshot
  Vocab vocab;
  std::vector<std::pair<std::string, Tensor>> tensors;
  TrainingMeta meta;

  static Checkpoint capture(const Model& model, const Vocab& vocab, KeyValues config, TrainingMeta meta) {
    model.config().write(config);
    Checkpoint c{std::move(config), vocab, {}, meta};
    for (const auto& [name, t] : model.named_tensors()) c.tensors.emplace_back(name, t.detach());
    return c;
  }

  ModelConfig model_config() const { return ModelConfig::read(config); }

  /// Rebuilds the network with these parameter values.
  Model model() const {
    const ModelConfig cfg = model_config();
    Model m = Model::init(cfg, vocab.char_count(), Tensor::zeros({vocab.word_count(), cfg.embed.word_dim}), 0);
    m.load_values(tensors);
    return m;
  }

  const Tensor& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw DataError("checkpoint has no tensor '" + name + "'");
  }
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.put(static_cast<char>((v >> (8 * k)) & 0xFF));
}
inline void put_u64(std::ostream& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.put(static_cast<char>((v >> (8 * k)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  std::uint64_t uint(int bytes) {
    std::uint64_t v = 0;
    for (int k = 0; k < bytes; ++k) {
      const int c = in_.get();
      if (c == std::char_traits<char>::eof()) throw DataError("checkpoint: truncated file");
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * k);
    }
    return v;
  }
  std::string bytes(std::uint64_t n) {
    if (n > (std::uint64_t{1} << 40)) throw DataError("checkpoint: implausible record length");
    std::string s(n, '\0');
    if (n && !in_.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("checkpoint: truncated file");
    return s;
  }

 private:
  std::istream& in_;
};

inline void write_record(std::ostream& out, const std::string& name, std::uint8_t dtype, const Shape& shape,
                         const std::string& payload) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  out.put(static_cast<char>(dtype));
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put_u64(out, d);
  put_u64(out, payload.size());
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

inline std::string join_lines(const std::vector<std::string>& items) {
  std::string s;
  for (const auto& i : items) s += i + '\n';
  return s;
}

inline std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto nl = text.find('\n', start);
    out.push_back(text.substr(start, nl - start));
    start = nl == std::string::npos ? text.size() : nl + 1;
  }
  return out;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(4 + ckpt.tensors.size()));
  KeyValues meta;
  meta.set("epoch", std::to_string(ckpt.meta.epoch));
  meta.set("dev_accuracy", format_real(ckpt.meta.dev_accuracy));
  meta.set("seed", std::to_string(ckpt.meta.seed));
  detail::write_record(out, "@config", 1, {}, ckpt.config.to_text());
  detail::write_record(out, "@meta", 1, {}, meta.to_text());
  detail::write_record(out, "@vocab.words", 1, {}, detail::join_lines(ckpt.vocab.words()));
  detail::write_record(out, "@vocab.chars", 1, {}, detail::join_lines(ckpt.vocab.chars()));
  for (const auto& [name, t] : ckpt.tensors) {
    std::string payload(t.size() * 8, '\0');
    for (std::size_t k = 0; k < t.size(); ++k) {
      const auto bits = std::bit_cast<std::uint64_t>(t[k]);
      for (int b = 0; b < 8; ++b) payload[k * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
    detail::write_record(out, name, 0, t.shape(), payload);
  }
  if (!out) throw DataError("checkpoint: write failed");
}

inline Checkpoint read_checkpoint(std::istream& in) {
  detail::Reader r(in);
  if (r.bytes(kCheckpointMagic.size()) != std::string(kCheckpointMagic.data(), kCheckpointMagic.size()))
    throw DataError("checkpoint: bad magic");
  const auto version = r.uint(4);
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = r.uint(4);
  Checkpoint ckpt;
  std::vector<std::string> words, chars;
  bool have_config = false;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.uint(4));
    const auto dtype = r.uint(1);
    const auto rank = r.uint(4);
    if (rank > 16) throw DataError("checkpoint: record '" + name + "' has implausible rank");
    Shape shape;
    for (std::uint64_t k = 0; k < rank; ++k) shape.push_back(r.uint(8));
    const std::string payload = r.bytes(r.uint(8));
    if (dtype == 1) {
      if (name == "@config") {
        ckpt.config = KeyValues::parse(payload);
        have_config = true;
      } else if (name == "@meta") {
        const auto meta = KeyValues::parse(payload);
        ckpt.meta.epoch = meta.get_number<std::size_t>("epoch", 0);
        ckpt.meta.dev_accuracy = meta.get_number<Real>("dev_accuracy", 0);
        ckpt.meta.seed = meta.get_number<std::uint64_t>("seed", 0);
      } else if (name == "@vocab.words") {
        words = detail::split_lines(payload);
      } else if (name == "@vocab.chars") {
        chars = detail::split_lines(payload);
      }
      continue;
    }
    if (dtype != 0) throw DataError("checkpoint: record '" + name + "' has unknown dtype");
    if (payload.size() != numel(shape) * 8) throw DataError("checkpoint: record '" + name + "' payload size mismatch");
    std::vector<Real> values(numel(shape));
    for (std::size_t k = 0; k < values.size(); ++k) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(payload[k * 8 + b])) << (8 * b);
      values[k] = std::bit_cast<Real>(bits);
    }
    ckpt.tensors.emplace_back(name, Tensor::from(std::move(shape), std::move(values)));
  }
  if (!have_config) throw DataError("checkpoint: missing @config record");
  ckpt.vocab = Vocab::from_lists(std::move(words), std::move(chars));
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  write_checkpoint(out, ckpt);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace gnli
