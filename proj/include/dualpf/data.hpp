#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dualpf/transformer.hpp"

namespace dualpf {

using Sentence = std::vector<std::string>;

// Splits on ASCII whitespace.
Sentence tokenize(const std::string& line);
std::string join(const Sentence& tokens);

// Token <-> id map. Ids 0..3 are PAD, SOS, EOS, UNK; the rest follow in
// the order of tokens().
class Vocabulary {
 public:
  Vocabulary() = default;
  // Tokens given in id order (reserved ids excluded). Duplicates are an error.
  explicit Vocabulary(std::vector<std::string> tokens);

  // Frequency descending, ties broken lexicographically.
  static Vocabulary build(std::span<const Sentence> sentences);
  // One token per line; line n gets id n + 4.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size() + kReservedTokens; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  // UNK for unknown tokens.
  int id(const std::string& token) const;
  const std::string& token(int id) const;

  std::vector<int> encode(const Sentence& tokens) const;
  // Reserved ids are skipped; decoding stops at the first EOS.
  Sentence decode(std::span<const int> ids) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct ParallelCorpus {
  std::vector<Sentence> src;
  std::vector<Sentence> tgt;

  std::size_t size() const { return src.size(); }
  // Throws ConfigError on a count mismatch or an empty side.
  void validate() const;
};

// Reads/writes `<prefix>.src` and `<prefix>.tgt`.
ParallelCorpus load_corpus(const std::filesystem::path& prefix);
void save_corpus(const ParallelCorpus& corpus, const std::filesystem::path& prefix);
// Reads one whitespace-tokenized sentence per line.
std::vector<Sentence> load_sentences(const std::filesystem::path& path);

enum class TaskKind { Copy, Reverse, Mapped };

TaskKind parse_task(const std::string& name);
std::string task_name(TaskKind kind);

struct SyntheticTaskSpec {
  TaskKind kind = TaskKind::Copy;
  std::size_t vocab = 32;
  std::size_t min_len = 4;
  std::size_t max_len = 16;
  std::size_t size = 20000;
  std::size_t window = 1;  // mapped only: shuffle within windows of this size
  std::uint64_t seed = 7;

  void validate() const;
};

// Source tokens are "t0" .. "t<vocab-1>".
std::string synthetic_token(std::size_t index);
// Seeded bijection over token indices used by the mapped task.
std::vector<std::size_t> task_bijection(const SyntheticTaskSpec& spec);
// Seeded permutation applied to every window of `width` tokens.
std::vector<std::size_t> window_permutation(const SyntheticTaskSpec& spec, std::size_t width);

ParallelCorpus generate(const SyntheticTaskSpec& spec);

// Held-out membership of pair `index` (about 10% of pairs).
bool is_heldout(std::uint64_t seed, std::size_t index);

struct EncodedPair {
  std::vector<int> src;  // no special tokens
  std::vector<int> tgt;
};

std::vector<EncodedPair> encode_corpus(const ParallelCorpus& corpus, const Vocabulary& src_vocab,
                                       const Vocabulary& tgt_vocab);

// Teacher-forced view of one direction, rows padded with PAD.
struct DirectionView {
  std::size_t batch = 0;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  std::vector<int> src;      // [batch, src_len]  sentence + EOS
  std::vector<int> tgt_in;   // [batch, tgt_len]  SOS + sentence
  std::vector<int> tgt_out;  // [batch, tgt_len]  sentence + EOS
  std::vector<std::size_t> src_lengths;  // unpadded, EOS included
  std::vector<std::size_t> tgt_lengths;  // unpadded, SOS (or EOS) included
  AttentionBias past;    // [src_len, src_len]
  AttentionBias future;  // [src_len, src_len]

  std::span<const int> src_row(std::size_t b) const { return {src.data() + b * src_len, src_lengths[b]}; }
  std::span<const int> tgt_in_row(std::size_t b) const { return {tgt_in.data() + b * tgt_len, tgt_lengths[b]}; }
  std::span<const int> tgt_out_row(std::size_t b) const { return {tgt_out.data() + b * tgt_len, tgt_lengths[b]}; }
  std::size_t target_tokens() const;
  std::size_t pad_count() const;
};

// Forward (X -> Y) and backward (Y -> X) views of the same pairs.
struct DualBatch {
  std::vector<std::size_t> pair_ids;
  DirectionView fwd;
  DirectionView bwd;
};

DirectionView make_view(std::span<const std::vector<int>> sources, std::span<const std::vector<int>> targets);
DualBatch make_dual_batch(std::span<const EncodedPair> pairs, std::span<const std::size_t> ids);

struct BatchingStats {
  std::size_t dropped = 0;  // pairs longer than max_len once EOS is added
};

// Buckets pairs by target length (width 4), shuffles within buckets and the
// resulting batch order with `seed`, and pads each batch.
std::vector<DualBatch> make_batches(std::span<const EncodedPair> pairs, std::span<const std::size_t> ids,
                                    std::size_t batch_size, std::size_t max_len, std::uint64_t seed,
                                    BatchingStats* stats = nullptr);

}  // namespace dualpf
