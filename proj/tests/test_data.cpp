#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "dualpf/data.hpp"
#include "dualpf/errors.hpp"

using namespace dualpf;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dualpf_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

SyntheticTaskSpec spec(TaskKind kind, std::size_t size = 200, std::size_t window = 1) {
  SyntheticTaskSpec s;
  s.kind = kind;
  s.size = size;
  s.window = window;
  return s;
}

}  // namespace

TEST(Tokenize, SplitsAndJoins) {
  EXPECT_EQ(tokenize("  a b\tc  "), (Sentence{"a", "b", "c"}));
  EXPECT_TRUE(tokenize("   ").empty());
  EXPECT_EQ(join({"x", "y"}), "x y");
}

TEST(Vocabulary, BuildOrderAndReservedIds) {
  std::vector<Sentence> s = {{"b", "a", "c"}, {"a", "b"}, {"a"}};
  auto v = Vocabulary::build(s);
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(v.id("a"), kReservedTokens);
  EXPECT_EQ(v.id("zzz"), kUnk);
  EXPECT_EQ(v.size(), 7u);
  EXPECT_THROW(v.token(7), IndexError);
  EXPECT_THROW(Vocabulary({"a", "a"}), ConfigError);
}

TEST(Vocabulary, RoundTripAndDecodeRules) {
  auto corpus = generate(spec(TaskKind::Copy));
  auto v = Vocabulary::build(corpus.src);
  for (const auto& s : corpus.src) EXPECT_EQ(v.decode(v.encode(s)), s);
  std::vector<int> ids = v.encode({"t1", "t2"});
  std::vector<int> framed = {kSos, ids[0], kPad, ids[1], kEos, ids[0]};
  EXPECT_EQ(v.decode(framed), (Sentence{"t1", "t2"}));

  auto dir = scratch_dir("vocab");
  v.save(dir / "v.txt");
  EXPECT_EQ(Vocabulary::load(dir / "v.txt"), v);
}

TEST(Generate, TaskDefinitions) {
  auto copy = generate(spec(TaskKind::Copy));
  EXPECT_EQ(copy.src, copy.tgt);
  auto rev = generate(spec(TaskKind::Reverse));
  for (std::size_t i = 0; i < rev.size(); ++i) EXPECT_EQ(rev.tgt[i], Sentence(rev.src[i].rbegin(), rev.src[i].rend()));
  for (const auto& s : copy.src) {
    EXPECT_GE(s.size(), 4u);
    EXPECT_LE(s.size(), 16u);
  }
}

TEST(Generate, MappedReappliesBijection) {
  const auto sp = spec(TaskKind::Mapped);
  const auto c = generate(sp);
  const auto pi = task_bijection(sp);
  std::vector<std::size_t> sorted = pi;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(sp.vocab);
  std::iota(iota.begin(), iota.end(), 0);
  EXPECT_EQ(sorted, iota);
  for (std::size_t n = 0; n < c.size(); ++n)
    for (std::size_t i = 0; i < c.src[n].size(); ++i)
      EXPECT_EQ(c.tgt[n][i], synthetic_token(pi[std::stoul(c.src[n][i].substr(1))]));
}

TEST(Generate, WindowShuffleStaysInsideWindows) {
  const auto sp = spec(TaskKind::Mapped, 100, 3);
  const auto c = generate(sp);
  const auto flat = generate(spec(TaskKind::Mapped, 100, 1));
  EXPECT_EQ(c.src, flat.src);
  bool any_moved = false;
  for (std::size_t n = 0; n < c.size(); ++n) {
    const auto& mapped = flat.tgt[n];
    for (std::size_t start = 0; start < mapped.size(); start += 3) {
      const std::size_t w = std::min<std::size_t>(3, mapped.size() - start);
      const auto perm = window_permutation(sp, w);
      for (std::size_t k = 0; k < w; ++k) {
        EXPECT_EQ(c.tgt[n][start + k], mapped[start + perm[k]]);
        any_moved = any_moved || perm[k] != k;
      }
    }
  }
  EXPECT_TRUE(any_moved);
}

TEST(Generate, PureFunctionOfSpecAndValidation) {
  EXPECT_EQ(generate(spec(TaskKind::Mapped, 50, 2)).tgt, generate(spec(TaskKind::Mapped, 50, 2)).tgt);
  auto other = spec(TaskKind::Copy, 50);
  other.seed = 8;
  EXPECT_NE(generate(other).src, generate(spec(TaskKind::Copy, 50)).src);
  auto tiny = spec(TaskKind::Mapped);
  tiny.vocab = 1;
  EXPECT_THROW(generate(tiny), ConfigError);
  EXPECT_THROW(parse_task("sort"), ConfigError);
}

TEST(Corpus, SaveLoadAndValidate) {
  auto c = generate(spec(TaskKind::Reverse, 20));
  auto dir = scratch_dir("corpus");
  save_corpus(c, dir / "toy");
  auto back = load_corpus(dir / "toy");
  EXPECT_EQ(back.src, c.src);
  EXPECT_EQ(back.tgt, c.tgt);
  ParallelCorpus bad{{{"a"}}, {}};
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Batches, EqualLengthsHaveNoPads) {
  std::vector<EncodedPair> pairs = {{{4, 5, 6}, {7, 8, 9}}, {{6, 6, 6}, {5, 4, 9}}};
  const std::size_t ids[] = {0, 1};
  auto b = make_dual_batch(pairs, ids);
  EXPECT_EQ(b.fwd.pad_count(), 0u);
  EXPECT_EQ(b.bwd.pad_count(), 0u);
}

TEST(Batches, ViewsDescribeSamePairs) {
  std::vector<EncodedPair> pairs = {{{4, 5}, {7, 8, 9, 10}}, {{6, 6, 6, 4, 5}, {5}}};
  const std::size_t ids[] = {1, 0};
  auto b = make_dual_batch(pairs, ids);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& p = pairs[ids[k]];
    auto fs = b.fwd.src_row(k);
    auto bs = b.bwd.src_row(k);
    EXPECT_EQ(std::vector<int>(fs.begin(), fs.end() - 1), p.src);
    EXPECT_EQ(fs.back(), kEos);
    EXPECT_EQ(std::vector<int>(bs.begin(), bs.end() - 1), p.tgt);
    // Backward source equals forward target output (Y + EOS).
    auto fo = b.fwd.tgt_out_row(k);
    EXPECT_EQ(std::vector<int>(fo.begin(), fo.end()), std::vector<int>(bs.begin(), bs.end()));
    auto bi = b.bwd.tgt_in_row(k);
    EXPECT_EQ(bi[0], kSos);
    EXPECT_EQ(std::vector<int>(bi.begin() + 1, bi.end()), p.src);
  }
  EXPECT_EQ(b.fwd.past.keys(), b.fwd.src_len);
  EXPECT_TRUE(b.fwd.future.masked(1, 0));
}

TEST(Batches, DeterministicBucketedAndDropsLong) {
  auto c = generate(spec(TaskKind::Copy, 400));
  auto v = Vocabulary::build(c.src);
  auto pairs = encode_corpus(c, v, v);
  std::vector<std::size_t> ids(pairs.size());
  std::iota(ids.begin(), ids.end(), 0);
  BatchingStats stats;
  auto a = make_batches(pairs, ids, 16, 12, 99, &stats);
  auto b = make_batches(pairs, ids, 16, 12, 99);
  ASSERT_EQ(a.size(), b.size());
  std::size_t kept = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].pair_ids, b[k].pair_ids);
    std::size_t bucket = pairs[a[k].pair_ids[0]].tgt.size() / 4;
    for (auto i : a[k].pair_ids) {
      EXPECT_EQ(pairs[i].tgt.size() / 4, bucket);
      EXPECT_LE(pairs[i].src.size() + 1, 12u);
    }
    kept += a[k].pair_ids.size();
  }
  EXPECT_GT(stats.dropped, 0u);
  EXPECT_EQ(kept + stats.dropped, pairs.size());
  auto shuffled = make_batches(pairs, ids, 16, 12, 100);
  EXPECT_NE(shuffled[0].pair_ids, a[0].pair_ids);
}

TEST(Heldout, RoughlyTenPercent) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < 20000; ++i) n += is_heldout(7, i);
  EXPECT_GT(n, 1800u);
  EXPECT_LT(n, 2200u);
}
