#pragma once

// The `gnli` command line: train, eval, predict, ensemble-eval, ablate,
// gradcheck and synth. Exit codes: 0 success, 1 usage, 2 data error,
// 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gnli/ablate.hpp"
#include "gnli/checkpoint.hpp"
#include "gnli/config.hpp"
#include "gnli/data.hpp"
#include "gnli/gradcheck.hpp"
#include "gnli/synth.hpp"
#include "gnli/train.hpp"

namespace gnli::cli {

enum ExitCode : int { kSuccess = 0, kUsage = 1, kDataError = 2, kNumericFailure = 3 };

namespace detail {

struct Loaded {
  std::vector<NLIExample> train, dev, test;
  Vocab vocab;
  WordVectors vectors;
};

inline std::vector<NLIExample> read_split(const std::optional<std::filesystem::path>& path, const char* name,
                                          std::ostream& err) {
  if (!path) return {};
  Corpus c = load_corpus(*path);
  err << "# " << name << ": " << c.report.loaded << " examples, " << c.report.skipped_unlabeled << " unlabeled skipped, "
      << c.report.malformed << " malformed\n";
  for (const auto& w : c.report.warnings) err << "warning: " << w << '\n';
  return std::move(c.examples);
}

/// Reads every configured split and builds the vocabulary over all of them, so
/// that words seen only in dev or test still get their pretrained vectors.
inline Loaded load_data(const RunConfig& cfg, std::ostream& err) {
  Loaded d;
  d.train = read_split(cfg.paths.train, "train", err);
  d.dev = read_split(cfg.paths.dev, "dev", err);
  d.test = read_split(cfg.paths.test, "test", err);
  std::vector<NLIExample> all = d.train;
  all.insert(all.end(), d.dev.begin(), d.dev.end());
  all.insert(all.end(), d.test.begin(), d.test.end());
  if (all.empty()) throw DataError("no examples loaded");
  d.vocab = build_vocab(all, cfg.min_count);
  if (cfg.paths.vectors) {
    d.vectors = load_word_vectors(*cfg.paths.vectors, d.vocab, cfg.model.embed.word_dim, cfg.seed());
  } else {
    d.vectors = random_word_vectors(d.vocab, cfg.model.embed.word_dim, cfg.seed());
  }
  const auto& r = d.vectors.report;
  err << "# vocab: " << d.vocab.word_count() << " words, " << d.vocab.char_count() << " chars; vectors: "
      << r.exact_hits << " exact, " << r.lowercase_hits << " lowercase, " << r.misses << " random\n";
  return d;
}

inline void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

inline void print_eval(std::ostream& out, const EvalResult& r) {
  out << "accuracy " << format_real(r.accuracy) << " (" << r.correct << "/" << r.total << ")\n";
  out << "confusion (rows gold, columns predicted: entailment neutral contradiction)\n";
  for (std::size_t g = 0; g < kNumClasses; ++g) {
    out << std::left << std::setw(14) << kLabelNames[g];
    for (std::size_t p = 0; p < kNumClasses; ++p) out << ' ' << r.confusion[g][p];
    out << '\n';
  }
}

inline std::vector<NLIExample> eval_split(const std::string& data, const RunConfig& cfg, std::ostream& err) {
  if (!data.empty()) return read_split(std::filesystem::path(data), "eval", err);
  if (cfg.paths.test) return read_split(cfg.paths.test, "test", err);
  if (cfg.paths.dev) return read_split(cfg.paths.dev, "dev", err);
  throw ConfigError("no evaluation data: pass --data or set data.test");
}

}  // namespace detail

/// Runs the command line with the given streams; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Gated-attention BiLSTM sentence encoders for natural language inference", "gnli"};
  app.require_subcommand(1);
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  app.add_option("-c,--config", config_file, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("-s,--set", overrides, "override a configuration key (key=value); repeatable");
  app.add_option("--seed", seed, "random seed (overrides the configuration)");

  std::string train_path, dev_path, vectors_path, out_path, history_path, data_path, input_path;
  std::vector<std::string> checkpoints;
  const auto existing = CLI::ExistingFile;

  auto* train_cmd = app.add_subcommand("train", "train a model and keep the best dev checkpoint");
  train_cmd->add_option("--train", train_path, "training corpus (JSONL)")->check(existing);
  train_cmd->add_option("--dev", dev_path, "development corpus (JSONL)")->check(existing);
  train_cmd->add_option("--vectors", vectors_path, "pretrained word vectors (text)")->check(existing);
  train_cmd->add_option("-o,--out", out_path, "checkpoint path (default <checkpoint_dir>/model.ckpt)");
  train_cmd->add_option("--history", history_path, "history CSV path (default <checkpoint_dir>/history.csv)");

  auto* eval_cmd = app.add_subcommand("eval", "accuracy and confusion matrix of a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoints, "checkpoint file")->required()->expected(1)->check(existing);
  eval_cmd->add_option("--data", data_path, "corpus to score (default data.test, then data.dev)")->check(existing);

  auto* predict_cmd = app.add_subcommand("predict", "JSONL predictions for premise/hypothesis pairs");
  predict_cmd->add_option("--checkpoint", checkpoints, "checkpoint file")->required()->expected(1)->check(existing);
  predict_cmd->add_option("--input", input_path, "pairs to label (JSONL)")->required()->check(existing);
  predict_cmd->add_option("-o,--output", out_path, "output file (default stdout)");

  auto* ensemble_cmd = app.add_subcommand("ensemble-eval", "accuracy of the probability average of several checkpoints");
  ensemble_cmd->add_option("--checkpoint", checkpoints, "member checkpoint; repeatable")->required()->check(existing);
  ensemble_cmd->add_option("--data", data_path, "corpus to score (default data.test, then data.dev)")->check(existing);

  auto* ablate_cmd = app.add_subcommand("ablate", "dev accuracy of the full model and each ablation (TSV)");
  ablate_cmd->add_option("--train", train_path, "training corpus (JSONL)")->check(existing);
  ablate_cmd->add_option("--dev", dev_path, "development corpus (JSONL)")->check(existing);
  ablate_cmd->add_option("--vectors", vectors_path, "pretrained word vectors (text)")->check(existing);
  ablate_cmd->add_option("-o,--output", out_path, "output file (default stdout)");

  Real tolerance = 1e-4, eps = 1e-5;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every module at toy sizes");
  grad_cmd->add_option("--tolerance", tolerance, "maximum relative error")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--eps", eps, "central-difference step")->check(CLI::PositiveNumber);

  std::string synth_dir;
  std::size_t synth_train = 200, synth_dev = 150;
  auto* synth_cmd = app.add_subcommand("synth", "write a rule-generated toy corpus, vectors and config");
  synth_cmd->add_option("--out-dir", synth_dir, "output directory")->required();
  synth_cmd->add_option("--train-size", synth_train, "training pairs")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--dev-size", synth_dev, "development pairs")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kSuccess : kUsage;
  }

  try {
    KeyValues kv;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      kv = KeyValues::parse(in, config_file);
    }
    for (const auto& o : overrides) kv.apply_override(o);
    if (seed) kv.set("seed", std::to_string(*seed));
    if (!train_path.empty()) kv.set("data.train", train_path);
    if (!dev_path.empty()) kv.set("data.dev", dev_path);
    if (!vectors_path.empty()) kv.set("data.vectors", vectors_path);
    const RunConfig cfg = RunConfig::from(kv);
    for (const auto& p : {cfg.paths.train, cfg.paths.dev, cfg.paths.test, cfg.paths.vectors})
      if (p && !std::filesystem::exists(*p)) throw ConfigError("file not found: " + p->string());

    const std::string command = app.get_subcommands().front()->get_name();
    err << cfg.banner(command);

    if (command == "train") {
      detail::require(cfg.paths.train && cfg.paths.dev, "train needs data.train and data.dev (--train, --dev)");
      const auto data = detail::load_data(cfg, err);
      std::filesystem::create_directories(cfg.paths.checkpoint_dir);
      const std::filesystem::path ckpt_path = out_path.empty() ? cfg.paths.checkpoint_dir / "model.ckpt" : std::filesystem::path(out_path);
      const std::filesystem::path hist_path =
          history_path.empty() ? cfg.paths.checkpoint_dir / "history.csv" : std::filesystem::path(history_path);
      std::ofstream history(hist_path);
      if (!history) throw DataError("cannot write " + hist_path.string());
      history << "epoch,train_loss,dev_acc\n";
      const TrainResult result = train(cfg.model, cfg.train, data.vocab, data.vectors.table, data.train, data.dev,
                                       [&](const EpochRecord& r) {
                                         history << r.epoch << ',' << format_real(r.train_loss) << ','
                                                 << format_real(r.dev_accuracy) << '\n';
                                         out << "epoch " << r.epoch << " train_loss " << format_real(r.train_loss)
                                             << " dev_acc " << format_real(r.dev_accuracy) << '\n';
                                       });
      save_checkpoint(result.best, ckpt_path);
      out << "best epoch " << result.best.meta.epoch << " dev_acc " << format_real(result.best.meta.dev_accuracy)
          << " saved " << ckpt_path.string() << '\n';
      if (result.diverged) {
        err << "error: training diverged: " << result.diagnostic << " (last good checkpoint saved)\n";
        return kNumericFailure;
      }
      return kSuccess;
    }

    if (command == "eval") {
      const Checkpoint ckpt = load_checkpoint(checkpoints.front());
      const auto examples = detail::eval_split(data_path, cfg, err);
      detail::print_eval(out, evaluate(ckpt, examples));
      return kSuccess;
    }

    if (command == "predict") {
      const Checkpoint ckpt = load_checkpoint(checkpoints.front());
      const Corpus pairs = load_corpus(input_path, CorpusFormat::jsonl, false);
      const Model model = ckpt.model();
      const auto probs = predict_probabilities(model, ckpt.vocab, pairs.examples);
      std::ofstream file;
      if (!out_path.empty()) {
        file.open(out_path);
        if (!file) throw DataError("cannot write " + out_path);
      }
      std::ostream& sink = out_path.empty() ? out : file;
      for (std::size_t i = 0; i < probs.size(); ++i) {
        const auto& ex = pairs.examples[i];
        nlohmann::json row{{"label", std::string(to_string(argmax_label(probs[i])))},
                           {"probs", std::vector<Real>(probs[i].begin(), probs[i].end())},
                           {"premise_len", ex.premise.size()},
                           {"hypothesis_len", ex.hypothesis.size()}};
        sink << row.dump() << '\n';
      }
      return kSuccess;
    }

    if (command == "ensemble-eval") {
      std::vector<Predictor> members;
      for (const auto& path : checkpoints) members.push_back(Predictor::from(load_checkpoint(path)));
      const auto examples = detail::eval_split(data_path, cfg, err);
      out << "members " << members.size() << '\n';
      detail::print_eval(out, ensemble_evaluate(members, examples));
      return kSuccess;
    }

    if (command == "ablate") {
      detail::require(cfg.paths.train && cfg.paths.dev, "ablate needs data.train and data.dev (--train, --dev)");
      const auto data = detail::load_data(cfg, err);
      const auto rows = run_ablation(cfg.model, cfg.train, data.vocab, data.vectors.table, data.train, data.dev);
      std::ofstream file;
      if (!out_path.empty()) {
        file.open(out_path);
        if (!file) throw DataError("cannot write " + out_path);
      }
      write_ablation_tsv(out_path.empty() ? out : file, rows);
      for (const auto& r : rows)
        if (r.diverged) {
          err << "error: ablation '" << r.name << "' diverged\n";
          return kNumericFailure;
        }
      return kSuccess;
    }

    if (command == "gradcheck") {
      const GradCheckReport report = run_gradchecks(cfg.seed(), tolerance, eps);
      for (const auto& c : report.checks)
        out << (c.passed ? "PASS " : "FAIL ") << std::left << std::setw(24) << c.module << " max_rel_error "
            << c.max_relative_error << '\n';
      out << (report.passed() ? "PASS" : "FAIL") << " all modules, worst " << report.worst() << ", "
          << report.seconds << " s\n";
      return report.passed() ? kSuccess : kNumericFailure;
    }

    if (command == "synth") {
      SynthConfig sc;
      sc.seed = cfg.seed();
      const SynthCorpus corpus = make_synthetic_corpus(sc, synth_train, synth_dev);
      const std::filesystem::path dir(synth_dir);
      std::filesystem::create_directories(dir);
      const auto write = [&](const std::filesystem::path& p, const auto& fn) {
        std::ofstream f(p);
        if (!f) throw DataError("cannot write " + p.string());
        fn(f);
      };
      write(dir / "train.jsonl", [&](std::ostream& f) { write_jsonl(f, corpus.train); });
      write(dir / "dev.jsonl", [&](std::ostream& f) { write_jsonl(f, corpus.dev); });
      write(dir / "vectors.txt", [&](std::ostream& f) { corpus.write_vectors(f); });
      write(dir / "toy.conf", [&](std::ostream& f) {
        f << "# toy model for the synthetic corpus\nseed = " << sc.seed << "\n\n[data]\ntrain = "
          << (dir / "train.jsonl").string() << "\ndev = " << (dir / "dev.jsonl").string()
          << "\nvectors = " << (dir / "vectors.txt").string() << "\ncheckpoint_dir = " << (dir / "checkpoints").string()
          << "\n\n[model]\nchar_dim = 4\nfilter_widths = [1, 3]\nfilters_per_width = 4\nword_dim = " << sc.word_dim
          << "\nhidden = 8\nlayers = 1\nmlp_hidden = 16\n\n[train]\nlearning_rate = 0.005\nbatch_size = 32\nepochs = 30\n";
      });
      out << "wrote " << corpus.train.size() << " train and " << corpus.dev.size() << " dev pairs to " << dir.string()
          << '\n';
      return kSuccess;
    }
    return kUsage;
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const Error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  }
}

}  // namespace gnli::cli
