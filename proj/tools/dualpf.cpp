// dualpf: data generation, training, translation, evaluation and gradient checks.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include "dualpf/checkpoint.hpp"
#include "dualpf/config.hpp"
#include "dualpf/data.hpp"
#include "dualpf/errors.hpp"
#include "dualpf/eval.hpp"
#include "dualpf/grad_suite.hpp"
#include "dualpf/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitIntegrity = 3;

using namespace dualpf;

int gen_data(const SyntheticTaskSpec& spec, const std::string& out) {
  const ParallelCorpus corpus = generate(spec);
  save_corpus(corpus, out);
  std::cout << "wrote " << corpus.size() << " pairs to " << out << ".src/.tgt\n";
  return kExitOk;
}

int train(const std::string& config_path, const std::string& mode, const std::string& out_dir) {
  TrainConfig cfg = TrainConfig::load(config_path);
  if (!mode.empty()) cfg.mode = parse_mode(mode);
  Trainer trainer(cfg);
  const TrainResult r = trainer.run(out_dir, &std::cerr);
  const auto& last = r.history.back();
  std::cout << last.line() << "\n";
  return kExitOk;
}

const TranslationModel& pick(const LoadedModels& m, const std::string& direction) {
  if (direction == "fwd") return *m.fwd;
  if (!m.bwd) throw ConfigError("checkpoint holds no backward model (baseline mode)");
  return *m.bwd;
}

int translate(const std::string& ckpt_path, const std::string& input, const std::string& direction) {
  const LoadedModels m = load_models(load_checkpoint(ckpt_path));
  const bool fwd = direction == "fwd";
  std::vector<Sentence> src;
  if (input == "-") {
    std::string line;
    while (std::getline(std::cin, line)) src.push_back(tokenize(line));
  } else {
    src = load_sentences(input);
  }
  const auto out = translate_all(pick(m, direction), fwd ? m.src_vocab : m.tgt_vocab,
                                 fwd ? m.tgt_vocab : m.src_vocab, src, m.config.model.max_len - 1);
  for (const auto& s : out) std::cout << join(s) << "\n";
  return kExitOk;
}

int evaluate(const std::string& ckpt_path, const std::string& src_path, const std::string& ref_path,
             const std::string& direction) {
  const LoadedModels m = load_models(load_checkpoint(ckpt_path));
  const bool fwd = direction == "fwd";
  const auto src = load_sentences(src_path);
  const auto ref = load_sentences(ref_path);
  if (src.size() != ref.size()) throw ConfigError("source and reference line counts differ");
  const auto hyp = translate_all(pick(m, direction), fwd ? m.src_vocab : m.tgt_vocab,
                                 fwd ? m.tgt_vocab : m.src_vocab, src, m.config.model.max_len - 1);
  const auto rates = adequacy_proxy(hyp, ref);
  std::printf("bleu=%.4f under=%.6f over=%.6f sentences=%zu\n", bleu4(hyp, ref), rates.under, rates.over,
              src.size());
  return kExitOk;
}

int gradcheck(std::size_t op_seeds, std::size_t composite_seeds) {
  bool ok = true;
  run_gradient_suite(op_seeds, composite_seeds, [&](const GradCaseResult& r) {
    std::printf("%-18s %s max_rel=%.3e coords=%zu worst=%s (%.1fs)\n", r.name.c_str(), r.passed() ? "ok  " : "FAIL",
                r.worst.max_rel_error, r.worst.coordinates, r.worst.worst.c_str(), r.seconds);
    std::fflush(stdout);
    ok = ok && r.passed();
  });
  std::printf("%s\n", ok ? "gradient suite passed" : "gradient suite FAILED");
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual Past-Future transformer for toy translation tasks"};
  app.require_subcommand(1);

  SyntheticTaskSpec spec;
  std::string task = "copy", out;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic parallel corpus");
  gen->add_option("--task", task, "copy | reverse | mapped")->capture_default_str();
  gen->add_option("--vocab", spec.vocab, "Number of distinct tokens")->capture_default_str();
  gen->add_option("--min-len", spec.min_len)->capture_default_str();
  gen->add_option("--max-len", spec.max_len)->capture_default_str();
  gen->add_option("--size", spec.size, "Number of pairs")->capture_default_str();
  gen->add_option("--window", spec.window, "Mapped task: shuffle window")->capture_default_str();
  gen->add_option("--seed", spec.seed)->capture_default_str();
  gen->add_option("--out", out, "Output prefix (writes <out>.src and <out>.tgt)")->required();

  std::string config_path, mode, out_dir;
  auto* tr = app.add_subcommand("train", "Train a baseline or dual model pair");
  tr->add_option("--config", config_path, "key = value config file")->required();
  tr->add_option("--mode", mode, "baseline | dual | dual-pretrain (overrides the config)");
  tr->add_option("--out-dir", out_dir, "Directory for metrics.log and checkpoint.bin")->required();

  std::string ckpt, input = "-", direction = "fwd";
  auto* tl = app.add_subcommand("translate", "Greedy-decode sentences with a checkpoint");
  tl->add_option("--ckpt", ckpt)->required();
  tl->add_option("--input", input, "Tokenized sentences, one per line ('-' for stdin)")->capture_default_str();
  tl->add_option("--direction", direction)->check(CLI::IsMember({"fwd", "bwd"}))->capture_default_str();

  std::string src_path, ref_path;
  auto* ev = app.add_subcommand("eval", "BLEU-4 and adequacy rates of a checkpoint");
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--src", src_path)->required();
  ev->add_option("--ref", ref_path)->required();
  ev->add_option("--direction", direction)->check(CLI::IsMember({"fwd", "bwd"}))->capture_default_str();

  std::size_t op_seeds = 10, composite_seeds = 1;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op and the dual loss");
  gc->add_option("--seeds", op_seeds, "Random inputs per op")->capture_default_str();
  gc->add_option("--model-seeds", composite_seeds, "Random inits per whole-model check")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      spec.kind = parse_task(task);
      return gen_data(spec, out);
    }
    if (tr->parsed()) return train(config_path, mode, out_dir);
    if (tl->parsed()) return translate(ckpt, input, direction);
    if (ev->parsed()) return evaluate(ckpt, src_path, ref_path, direction);
    if (gc->parsed()) return gradcheck(op_seeds, composite_seeds);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return kExitIntegrity;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
