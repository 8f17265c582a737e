#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dualpf/checkpoint.hpp"
#include "dualpf/config.hpp"
#include "dualpf/data.hpp"
#include "dualpf/dual.hpp"
#include "dualpf/eval.hpp"
#include "dualpf/model.hpp"
#include "dualpf/optimizer.hpp"

namespace dualpf {

// One evaluation point. Fields that do not apply to the mode are absent
// from the formatted line.
struct MetricsRecord {
  std::size_t step = 0;
  std::string phase;        // pretrain | train | final
  double lr = 0.0;
  double train_loss = 0.0;  // mean total loss since the previous record
  double ce_fwd = 0.0;      // dev-batch losses, no dropout, every step paired
  double ce_bwd = 0.0;
  double lp = 0.0;
  double lf = 0.0;
  double bleu_fwd = 0.0;
  double bleu_bwd = 0.0;
  double under = 0.0;  // forward direction
  double over = 0.0;
  std::size_t sentences = 0;
  bool dual = false;

  // "key=value key=value ..." with fixed precision.
  std::string line() const;
};

struct TrainResult {
  std::size_t steps = 0;
  bool early_stopped = false;
  std::vector<MetricsRecord> history;  // periodic records, then the final one
};

// Builds a model of the configured shape for the given vocabulary sizes.
TranslationModel make_model(const TrainConfig& cfg, std::size_t src_vocab, std::size_t tgt_vocab, std::uint64_t seed);

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  const TrainConfig& config() const { return cfg_; }
  const Vocabulary& src_vocab() const { return src_vocab_; }
  const Vocabulary& tgt_vocab() const { return tgt_vocab_; }
  const std::vector<EncodedPair>& pairs() const { return pairs_; }
  const std::vector<std::size_t>& train_ids() const { return train_ids_; }
  const std::vector<std::size_t>& heldout_ids() const { return heldout_ids_; }
  TranslationModel& forward_model() { return *fwd_; }
  TranslationModel* backward_model() { return bwd_.get(); }

  // Runs the schedule, writing metrics.log, checkpoint.bin, the vocabularies
  // and the effective config into `out_dir`. Progress (with wall times) goes
  // to `progress` when non-null.
  TrainResult run(const std::filesystem::path& out_dir, std::ostream* progress = nullptr);

  // Decodes `ids` of the held-out pairs in both available directions.
  MetricsRecord evaluate(std::span<const std::size_t> ids, std::size_t step, const std::string& phase);

  Checkpoint checkpoint(std::size_t step) const;

 private:
  TrainConfig cfg_;
  Vocabulary src_vocab_, tgt_vocab_;
  std::vector<EncodedPair> pairs_;
  std::vector<std::size_t> train_ids_, heldout_ids_;
  std::unique_ptr<TranslationModel> fwd_, bwd_;
  std::unique_ptr<Adam> adam_f_, adam_b_;
  std::optional<DualBatch> dev_batch_;
};

// Models restored from a checkpoint for translation or evaluation.
struct LoadedModels {
  TrainConfig config;
  Vocabulary src_vocab, tgt_vocab;
  std::unique_ptr<TranslationModel> fwd, bwd;  // bwd is null for baseline checkpoints
};

LoadedModels load_models(const Checkpoint& ckpt);

// Greedy-decodes every sentence (in parallel, order preserved).
std::vector<Sentence> translate_all(const TranslationModel& model, const Vocabulary& src_vocab,
                                    const Vocabulary& tgt_vocab, std::span<const Sentence> sources,
                                    std::size_t max_len);

}  // namespace dualpf
