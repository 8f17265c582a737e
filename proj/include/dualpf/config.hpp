#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "dualpf/capsule.hpp"
#include "dualpf/data.hpp"
#include "dualpf/dual.hpp"
#include "dualpf/optimizer.hpp"
#include "dualpf/transformer.hpp"

namespace dualpf {

enum class TrainMode { Baseline, Dual, DualPretrain };

TrainMode parse_mode(const std::string& name);
std::string mode_name(TrainMode mode);

struct TrainConfig {
  TrainMode mode = TrainMode::Dual;
  std::uint64_t seed = 7;

  // Training data: a `<corpus>.src/.tgt` pair, or the synthetic task below
  // when `corpus` is empty.
  std::string corpus;
  SyntheticTaskSpec task;

  ModelConfig model;  // vocabulary sizes are taken from the data
  bool use_capsules = true;
  CapsuleConfig capsules;
  DualLossConfig dual;
  AdamConfig adam;

  std::size_t batch_size = 32;
  std::size_t pretrain_steps = 0;  // dual-pretrain only: CE-only steps first
  std::size_t steps = 2000;
  std::size_t eval_interval = 200;
  std::size_t eval_size = 100;           // held-out sentences decoded per periodic eval; 0 = all
  std::size_t checkpoint_interval = 0;   // 0: only the final checkpoint
  double target_bleu = 0.0;              // stop once dev BLEU (forward) reaches it; 0 disables

  // Mode-dependent adjustments: baseline forces both weights to zero.
  TrainConfig effective() const;
  std::size_t total_steps() const;
  void validate() const;

  // Flat `key = value` lines in a fixed key order.
  std::string to_text() const;
  // Unknown keys, malformed lines and bad values raise ConfigError.
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
};

}  // namespace dualpf
