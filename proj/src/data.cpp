#include "dualpf/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "dualpf/errors.hpp"
#include "dualpf/rng.hpp"

namespace dualpf {

Sentence tokenize(const std::string& line) {
  std::istringstream in(line);
  Sentence out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string join(const Sentence& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw ConfigError("vocabulary: empty token at line " + std::to_string(i + 1));
    if (!index_.emplace(tokens_[i], static_cast<int>(i) + kReservedTokens).second)
      throw ConfigError("vocabulary: duplicate token '" + tokens_[i] + "'");
  }
}

Vocabulary Vocabulary::build(std::span<const Sentence> sentences) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences)
    for (const auto& t : s) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> entries(counts.begin(), counts.end());
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(entries.size());
  for (auto& e : entries) tokens.push_back(e.first);
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw ConfigError("failed writing vocabulary " + path.string());
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  static const std::string reserved[kReservedTokens] = {"<pad>", "<s>", "</s>", "<unk>"};
  if (id < 0 || static_cast<std::size_t>(id) >= size())
    throw IndexError("vocabulary: id " + std::to_string(id) + " outside [0, " + std::to_string(size()) + ")");
  if (id < kReservedTokens) return reserved[id];
  return tokens_[static_cast<std::size_t>(id - kReservedTokens)];
}

std::vector<int> Vocabulary::encode(const Sentence& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Sentence Vocabulary::decode(std::span<const int> ids) const {
  Sentence out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kSos) continue;
    out.push_back(token(id));
  }
  return out;
}

void ParallelCorpus::validate() const {
  if (src.size() != tgt.size())
    throw ConfigError("corpus: " + std::to_string(src.size()) + " source vs " + std::to_string(tgt.size()) +
                      " target sentences");
  for (std::size_t i = 0; i < src.size(); ++i)
    if (src[i].empty() || tgt[i].empty()) throw ConfigError("corpus: empty sentence in pair " + std::to_string(i));
}

std::vector<Sentence> load_sentences(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::vector<Sentence> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(tokenize(line));
  return out;
}

ParallelCorpus load_corpus(const std::filesystem::path& prefix) {
  ParallelCorpus c;
  c.src = load_sentences(prefix.string() + ".src");
  c.tgt = load_sentences(prefix.string() + ".tgt");
  c.validate();
  return c;
}

void save_corpus(const ParallelCorpus& corpus, const std::filesystem::path& prefix) {
  for (const auto& [ext, side] : {std::pair{".src", &corpus.src}, std::pair{".tgt", &corpus.tgt}}) {
    const std::string path = prefix.string() + ext;
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    for (const auto& s : *side) out << join(s) << '\n';
    if (!out) throw ConfigError("failed writing " + path);
  }
}

TaskKind parse_task(const std::string& name) {
  if (name == "copy") return TaskKind::Copy;
  if (name == "reverse") return TaskKind::Reverse;
  if (name == "mapped") return TaskKind::Mapped;
  throw ConfigError("unknown task '" + name + "' (copy, reverse, mapped)");
}

std::string task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::Copy: return "copy";
    case TaskKind::Reverse: return "reverse";
    case TaskKind::Mapped: return "mapped";
  }
  return "?";
}

void SyntheticTaskSpec::validate() const {
  if (vocab == 0) throw ConfigError("task: vocabulary must be non-empty");
  if (kind == TaskKind::Mapped && vocab < 2)
    throw ConfigError("task: mapped task needs at least 2 tokens for a bijection, got " + std::to_string(vocab));
  if (min_len == 0 || min_len > max_len)
    throw ConfigError("task: bad length range [" + std::to_string(min_len) + ", " + std::to_string(max_len) + "]");
  if (size == 0) throw ConfigError("task: corpus size must be positive");
  if (window == 0) throw ConfigError("task: window must be at least 1");
}

std::string synthetic_token(std::size_t index) { return "t" + std::to_string(index); }

namespace {

std::vector<std::size_t> seeded_permutation(std::size_t n, CounterRng rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

}  // namespace

std::vector<std::size_t> task_bijection(const SyntheticTaskSpec& spec) {
  return seeded_permutation(spec.vocab, CounterRng(spec.seed).split(1));
}

std::vector<std::size_t> window_permutation(const SyntheticTaskSpec& spec, std::size_t width) {
  return seeded_permutation(width, CounterRng(spec.seed).split(100 + width));
}

ParallelCorpus generate(const SyntheticTaskSpec& spec) {
  spec.validate();
  ParallelCorpus c;
  c.src.reserve(spec.size);
  c.tgt.reserve(spec.size);
  const auto pi = spec.kind == TaskKind::Mapped ? task_bijection(spec) : std::vector<std::size_t>{};
  CounterRng rng = CounterRng(spec.seed).split(0);
  for (std::size_t n = 0; n < spec.size; ++n) {
    const std::size_t len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
    std::vector<std::size_t> idx(len);
    for (auto& v : idx) v = rng.below(spec.vocab);
    std::vector<std::size_t> out = idx;
    if (spec.kind == TaskKind::Reverse) std::reverse(out.begin(), out.end());
    if (spec.kind == TaskKind::Mapped) {
      for (auto& v : out) v = pi[v];
      if (spec.window > 1) {
        std::vector<std::size_t> mapped = out;
        for (std::size_t start = 0; start < len; start += spec.window) {
          const std::size_t width = std::min(spec.window, len - start);
          const auto perm = window_permutation(spec, width);
          for (std::size_t k = 0; k < width; ++k) out[start + k] = mapped[start + perm[k]];
        }
      }
    }
    Sentence s, t;
    for (auto v : idx) s.push_back(synthetic_token(v));
    for (auto v : out) t.push_back(synthetic_token(v));
    c.src.push_back(std::move(s));
    c.tgt.push_back(std::move(t));
  }
  return c;
}

bool is_heldout(std::uint64_t seed, std::size_t index) { return hash_combine(seed, index, 0x4e1d) % 10 == 0; }

std::vector<EncodedPair> encode_corpus(const ParallelCorpus& corpus, const Vocabulary& src_vocab,
                                       const Vocabulary& tgt_vocab) {
  corpus.validate();
  std::vector<EncodedPair> out(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    out[i].src = src_vocab.encode(corpus.src[i]);
    out[i].tgt = tgt_vocab.encode(corpus.tgt[i]);
  }
  return out;
}

std::size_t DirectionView::target_tokens() const {
  std::size_t n = 0;
  for (auto l : tgt_lengths) n += l;
  return n;
}

std::size_t DirectionView::pad_count() const {
  std::size_t n = 0;
  for (int v : src) n += v == kPad;
  for (int v : tgt_in) n += v == kPad;
  return n;
}

DirectionView make_view(std::span<const std::vector<int>> sources, std::span<const std::vector<int>> targets) {
  if (sources.size() != targets.size() || sources.empty())
    throw DimensionError("make_view: " + std::to_string(sources.size()) + " sources vs " +
                         std::to_string(targets.size()) + " targets");
  DirectionView v;
  v.batch = sources.size();
  for (std::size_t b = 0; b < v.batch; ++b) {
    v.src_len = std::max(v.src_len, sources[b].size() + 1);
    v.tgt_len = std::max(v.tgt_len, targets[b].size() + 1);
  }
  v.src.assign(v.batch * v.src_len, kPad);
  v.tgt_in.assign(v.batch * v.tgt_len, kPad);
  v.tgt_out.assign(v.batch * v.tgt_len, kPad);
  for (std::size_t b = 0; b < v.batch; ++b) {
    const auto& x = sources[b];
    const auto& y = targets[b];
    std::copy(x.begin(), x.end(), v.src.begin() + b * v.src_len);
    v.src[b * v.src_len + x.size()] = kEos;
    v.tgt_in[b * v.tgt_len] = kSos;
    std::copy(y.begin(), y.end(), v.tgt_in.begin() + b * v.tgt_len + 1);
    std::copy(y.begin(), y.end(), v.tgt_out.begin() + b * v.tgt_len);
    v.tgt_out[b * v.tgt_len + y.size()] = kEos;
    v.src_lengths.push_back(x.size() + 1);
    v.tgt_lengths.push_back(y.size() + 1);
  }
  v.past = make_triangular_bias(v.src_len, BiasKind::Past);
  v.future = make_triangular_bias(v.src_len, BiasKind::Future);
  return v;
}

DualBatch make_dual_batch(std::span<const EncodedPair> pairs, std::span<const std::size_t> ids) {
  std::vector<std::vector<int>> xs, ys;
  for (auto i : ids) {
    xs.push_back(pairs[i].src);
    ys.push_back(pairs[i].tgt);
  }
  return {std::vector<std::size_t>(ids.begin(), ids.end()), make_view(xs, ys), make_view(ys, xs)};
}

std::vector<DualBatch> make_batches(std::span<const EncodedPair> pairs, std::span<const std::size_t> ids,
                                    std::size_t batch_size, std::size_t max_len, std::uint64_t seed,
                                    BatchingStats* stats) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::map<std::size_t, std::vector<std::size_t>> buckets;
  std::size_t dropped = 0;
  for (auto i : ids) {
    if (i >= pairs.size()) throw IndexError("make_batches: pair " + std::to_string(i) + " of " + std::to_string(pairs.size()));
    const auto& p = pairs[i];
    if (p.src.empty() || p.tgt.empty()) throw ConfigError("empty sentence in pair " + std::to_string(i));
    if (p.src.size() + 1 > max_len || p.tgt.size() + 1 > max_len) {
      ++dropped;
      continue;
    }
    buckets[p.tgt.size() / 4].push_back(i);
  }
  if (stats) stats->dropped = dropped;
  CounterRng rng(seed);
  std::vector<std::vector<std::size_t>> groups;
  for (auto& [key, members] : buckets) {
    for (std::size_t k = members.size(); k > 1; --k) std::swap(members[k - 1], members[rng.below(k)]);
    for (std::size_t start = 0; start < members.size(); start += batch_size)
      groups.emplace_back(members.begin() + start,
                          members.begin() + std::min(members.size(), start + batch_size));
  }
  for (std::size_t k = groups.size(); k > 1; --k) std::swap(groups[k - 1], groups[rng.below(k)]);
  std::vector<DualBatch> out;
  out.reserve(groups.size());
  for (const auto& g : groups) out.push_back(make_dual_batch(pairs, g));
  return out;
}

}  // namespace dualpf
