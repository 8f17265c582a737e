#include "dualpf/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "dualpf/errors.hpp"

namespace dualpf {

namespace {

constexpr std::size_t kDevBatchSize = 16;

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// Decoding budget for a source of `len` tokens.
std::size_t decode_budget(std::size_t len, std::size_t cap) { return std::min(cap, 2 * len + 4); }

}  // namespace

std::string MetricsRecord::line() const {
  std::string s = "step=" + std::to_string(step) + " phase=" + phase + " lr=" + fixed(lr, 8) +
                  " train_loss=" + fixed(train_loss) + " ce_fwd=" + fixed(ce_fwd);
  if (dual) s += " ce_bwd=" + fixed(ce_bwd) + " lp=" + fixed(lp) + " lf=" + fixed(lf);
  s += " bleu_fwd=" + fixed(bleu_fwd, 4);
  if (dual) s += " bleu_bwd=" + fixed(bleu_bwd, 4);
  s += " under=" + fixed(under) + " over=" + fixed(over) + " sentences=" + std::to_string(sentences);
  return s;
}

TranslationModel make_model(const TrainConfig& cfg, std::size_t src_vocab, std::size_t tgt_vocab, std::uint64_t seed) {
  ModelConfig m = cfg.model;
  m.src_vocab = src_vocab;
  m.tgt_vocab = tgt_vocab;
  m.validate();
  return TranslationModel(m, cfg.capsules, cfg.use_capsules, seed);
}

namespace {

std::uint64_t model_seed(std::uint64_t seed, int direction) { return hash_combine(seed, 0x6d6f64656cULL, direction); }

}  // namespace

Trainer::Trainer(TrainConfig cfg) : cfg_(cfg.effective()) {
  cfg_.validate();
  ParallelCorpus corpus = cfg_.corpus.empty() ? generate(cfg_.task) : load_corpus(cfg_.corpus);
  src_vocab_ = Vocabulary::build(corpus.src);
  tgt_vocab_ = Vocabulary::build(corpus.tgt);
  pairs_ = encode_corpus(corpus, src_vocab_, tgt_vocab_);
  for (std::size_t i = 0; i < pairs_.size(); ++i) (is_heldout(cfg_.task.seed, i) ? heldout_ids_ : train_ids_).push_back(i);
  if (train_ids_.empty() || heldout_ids_.empty())
    throw ConfigError("corpus of " + std::to_string(pairs_.size()) + " pairs is too small for a held-out split");

  fwd_ = std::make_unique<TranslationModel>(
      make_model(cfg_, src_vocab_.size(), tgt_vocab_.size(), model_seed(cfg_.seed, 0)));
  adam_f_ = std::make_unique<Adam>(fwd_->params(), cfg_.adam);
  if (cfg_.mode != TrainMode::Baseline) {
    bwd_ = std::make_unique<TranslationModel>(
        make_model(cfg_, tgt_vocab_.size(), src_vocab_.size(), model_seed(cfg_.seed, 1)));
    adam_b_ = std::make_unique<Adam>(bwd_->params(), cfg_.adam);
  }

  std::vector<std::size_t> dev;
  for (auto i : heldout_ids_) {
    if (dev.size() == kDevBatchSize) break;
    if (pairs_[i].src.size() < cfg_.model.max_len && pairs_[i].tgt.size() < cfg_.model.max_len) dev.push_back(i);
  }
  if (!dev.empty()) dev_batch_ = make_dual_batch(pairs_, dev);
}

MetricsRecord Trainer::evaluate(std::span<const std::size_t> ids, std::size_t step, const std::string& phase) {
  MetricsRecord r;
  r.step = step;
  r.phase = phase;
  r.dual = bwd_ != nullptr;
  r.sentences = ids.size();
  const std::size_t cap = cfg_.model.max_len - 1;

  std::vector<Sentence> src, tgt;
  for (auto i : ids) {
    src.push_back(src_vocab_.decode(pairs_[i].src));
    tgt.push_back(tgt_vocab_.decode(pairs_[i].tgt));
  }
  const auto hyp_f = translate_all(*fwd_, src_vocab_, tgt_vocab_, src, cap);
  r.bleu_fwd = bleu4(hyp_f, tgt);
  const auto rates = adequacy_proxy(hyp_f, tgt);
  r.under = rates.under;
  r.over = rates.over;
  if (bwd_) r.bleu_bwd = bleu4(translate_all(*bwd_, tgt_vocab_, src_vocab_, tgt, cap), src);

  if (dev_batch_) {
    Tape tape(false);
    if (bwd_) {
      DualLossConfig probe = cfg_.dual;
      probe.subsample = 1.0;
      if (fwd_->has_capsules()) probe.lambda_past = probe.lambda_future = 1.0;
      else probe.lambda_past = probe.lambda_future = 0.0;
      DualLosses parts;
      dual_loss(tape, *dev_batch_, *fwd_, *bwd_, probe, 0, &parts);
      r.ce_fwd = parts.ce_fwd;
      r.ce_bwd = parts.ce_bwd;
      r.lp = parts.past;
      r.lf = parts.future;
    } else {
      r.ce_fwd = baseline_loss(tape, dev_batch_->fwd, *fwd_).item();
    }
  }
  return r;
}

Checkpoint Trainer::checkpoint(std::size_t step) const {
  Checkpoint c;
  c.mode = cfg_.mode;
  c.config_text = cfg_.to_text();
  c.step = step;
  c.rng_key = cfg_.seed;
  c.rng_counter = step;
  c.src_vocab = src_vocab_.tokens();
  c.tgt_vocab = tgt_vocab_.tokens();
  c.models.push_back(capture_model(*fwd_, adam_f_.get()));
  if (bwd_) c.models.push_back(capture_model(*bwd_, adam_b_.get()));
  return c;
}

TrainResult Trainer::run(const std::filesystem::path& out_dir, std::ostream* progress) {
  namespace fs = std::filesystem;
  using clock = std::chrono::steady_clock;
  fs::create_directories(out_dir);
  src_vocab_.save(out_dir / "src.vocab");
  tgt_vocab_.save(out_dir / "tgt.vocab");
  {
    std::ofstream cfg_out(out_dir / "config.txt");
    cfg_out << cfg_.to_text();
  }
  std::ofstream log(out_dir / "metrics.log", std::ios::trunc);
  if (!log) throw IntegrityError("cannot write " + (out_dir / "metrics.log").string());
  const fs::path ckpt_path = out_dir / "checkpoint.bin";
  save_checkpoint(checkpoint(0), ckpt_path);

  TrainResult result;
  const std::size_t total = cfg_.total_steps();
  const auto start = clock::now();
  auto emit = [&](const MetricsRecord& r) {
    log << r.line() << '\n';
    log.flush();
    if (!log) throw IntegrityError("failed writing metrics.log (disk full?); last checkpoint kept");
    result.history.push_back(r);
    if (progress) {
      const double secs = std::chrono::duration<double>(clock::now() - start).count();
      *progress << "[" << fixed(secs, 1) << "s] " << r.line() << std::endl;
    }
  };

  std::vector<std::size_t> dev_ids(heldout_ids_.begin(),
                                   heldout_ids_.begin() + static_cast<std::ptrdiff_t>(
                                                              cfg_.eval_size == 0
                                                                  ? heldout_ids_.size()
                                                                  : std::min(cfg_.eval_size, heldout_ids_.size())));
  DualLossConfig no_dual = cfg_.dual;
  no_dual.lambda_past = no_dual.lambda_future = 0.0;

  std::vector<DualBatch> batches;
  std::size_t cursor = 0, epoch = 0, since = 0, step = 0;
  double loss_sum = 0.0;
  BatchingStats stats;
  while (step < total) {
    if (cursor == batches.size()) {
      batches = make_batches(pairs_, train_ids_, cfg_.batch_size, cfg_.model.max_len,
                             hash_combine(cfg_.seed, 0xba7c4, epoch++), &stats);
      cursor = 0;
      if (batches.empty()) throw ConfigError("no training pair fits within max_len");
      if (progress && epoch == 1 && stats.dropped)
        *progress << "dropped " << stats.dropped << " over-long pairs" << std::endl;
    }
    const DualBatch& batch = batches[cursor++];
    ++step;
    const bool pretrain = step <= cfg_.pretrain_steps;
    StepOptions opts{cfg_.model.dropout, hash_combine(cfg_.seed, 0x57e9, step)};

    fwd_->params().zero_grad();
    double loss = 0.0;
    if (bwd_) {
      bwd_->params().zero_grad();
      loss = dual_step(batch, *fwd_, *bwd_, pretrain ? no_dual : cfg_.dual, opts).total;
      check_finite_grads(bwd_->params(), "backward model");
    } else {
      loss = baseline_step(batch.fwd, *fwd_, opts);
    }
    check_finite_grads(fwd_->params(), "forward model");
    adam_f_->step(fwd_->params());
    if (bwd_) adam_b_->step(bwd_->params());
    loss_sum += loss;
    ++since;

    const bool last = step == total;
    if (step % cfg_.eval_interval == 0 || last) {
      MetricsRecord r = evaluate(dev_ids, step, pretrain ? "pretrain" : "train");
      r.lr = adam_f_->scheduled_lr(step);
      r.train_loss = loss_sum / static_cast<double>(since);
      loss_sum = 0.0;
      since = 0;
      emit(r);
      if (!pretrain && cfg_.target_bleu > 0.0 && r.bleu_fwd >= cfg_.target_bleu) {
        result.early_stopped = !last;
        break;
      }
    }
    if (cfg_.checkpoint_interval && step % cfg_.checkpoint_interval == 0) save_checkpoint(checkpoint(step), ckpt_path);
  }
  result.steps = step;

  MetricsRecord final = evaluate(heldout_ids_, step, "final");
  final.lr = step ? adam_f_->scheduled_lr(step) : 0.0;
  emit(final);
  save_checkpoint(checkpoint(step), ckpt_path);
  return result;
}

LoadedModels load_models(const Checkpoint& ckpt) {
  LoadedModels out;
  out.config = TrainConfig::parse(ckpt.config_text).effective();
  out.src_vocab = Vocabulary(ckpt.src_vocab);
  out.tgt_vocab = Vocabulary(ckpt.tgt_vocab);
  const std::size_t expected = ckpt.mode == TrainMode::Baseline ? 1 : 2;
  if (ckpt.models.size() != expected)
    throw IntegrityError("checkpoint: " + mode_name(ckpt.mode) + " mode with " + std::to_string(ckpt.models.size()) +
                         " models");
  out.fwd = std::make_unique<TranslationModel>(
      make_model(out.config, out.src_vocab.size(), out.tgt_vocab.size(), model_seed(out.config.seed, 0)));
  restore_model(ckpt.models[0], *out.fwd, nullptr);
  if (expected == 2) {
    out.bwd = std::make_unique<TranslationModel>(
        make_model(out.config, out.tgt_vocab.size(), out.src_vocab.size(), model_seed(out.config.seed, 1)));
    restore_model(ckpt.models[1], *out.bwd, nullptr);
  }
  return out;
}

std::vector<Sentence> translate_all(const TranslationModel& model, const Vocabulary& src_vocab,
                                    const Vocabulary& tgt_vocab, std::span<const Sentence> sources,
                                    std::size_t max_len) {
  std::vector<Sentence> out(sources.size());
  const long n = static_cast<long>(sources.size());
  std::vector<std::exception_ptr> errors(sources.size());
#pragma omp parallel for schedule(dynamic)
  for (long k = 0; k < n; ++k) {
    try {
      std::vector<int> ids = src_vocab.encode(sources[k]);
      const std::size_t budget = decode_budget(ids.size(), max_len);
      ids.push_back(kEos);
      if (ids.size() > model.config().max_len)
        throw ContractError("source sentence " + std::to_string(k) + " exceeds max_len");
      out[k] = tgt_vocab.decode(greedy_decode(model, ids, budget));
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace dualpf
