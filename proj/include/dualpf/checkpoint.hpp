#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dualpf/config.hpp"
#include "dualpf/model.hpp"
#include "dualpf/optimizer.hpp"

namespace dualpf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct ModelState {
  std::vector<TensorRecord> params;
  std::vector<TensorRecord> first_moments;
  std::vector<TensorRecord> second_moments;
  std::uint64_t adam_steps = 0;
};

// Everything needed to resume training or translate. Baseline checkpoints
// hold one model; dual ones hold forward then backward.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  TrainMode mode = TrainMode::Dual;
  std::string config_text;
  std::uint64_t step = 0;
  std::uint64_t rng_key = 0;
  std::uint64_t rng_counter = 0;
  std::vector<std::string> src_vocab;
  std::vector<std::string> tgt_vocab;
  std::vector<ModelState> models;
};

// Parameters in name order; moments are empty when `adam` is null.
ModelState capture_model(const TranslationModel& model, const Adam* adam);
// Copies parameters (and moments when `adam` is given) into a model built
// from the same configuration. Name or shape disagreement is an IntegrityError.
void restore_model(const ModelState& state, TranslationModel& model, Adam* adam);

// Binary little-endian layout with a trailing FNV-1a checksum. The write
// goes to a temporary file that is renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
// IntegrityError on a bad magic, version, length or checksum.
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Throws ModeMismatchError unless the checkpoint was written by `expected`.
void require_mode(const Checkpoint& ckpt, TrainMode expected);

}  // namespace dualpf
