#include "dualpf/grad_suite.hpp"

#include <chrono>

#include "dualpf/capsule.hpp"
#include "dualpf/dual.hpp"
#include "dualpf/head.hpp"
#include "dualpf/model.hpp"
#include "dualpf/ops.hpp"
#include "dualpf/transformer.hpp"

namespace dualpf {

namespace {

std::vector<double> randn_like(std::size_t n, CounterRng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return v;
}

// Reduces y to a scalar with fixed random weights so every output
// coordinate carries a distinct gradient.
Tensor project(const Tensor& y, CounterRng& rng) {
  Tensor w = y.tape().constant(y.shape(), randn_like(y.numel(), rng));
  return sum(mul(y, w));
}

// Slices consecutive blocks of a flat variable into shaped operands.
class Unpack {
 public:
  explicit Unpack(const Tensor& x) : x_(x) {}
  Tensor next(const Shape& s) {
    Tensor t = reshape(slice(x_, 0, pos_, pos_ + s.numel()), s);
    pos_ += s.numel();
    return t;
  }

 private:
  Tensor x_;
  std::size_t pos_ = 0;
};

// An op check over a flat input holding every operand listed in `shapes`.
GradCase op_case(std::string name, std::vector<Shape> shapes,
                 std::function<Tensor(Tape&, std::vector<Tensor>&, CounterRng&)> body, double scale = 1.0) {
  return {std::move(name),
          [shapes, body, scale](std::uint64_t seed) {
            std::size_t n = 0;
            for (const auto& s : shapes) n += s.numel();
            CounterRng init = CounterRng(seed).split(1);
            auto x = randn_like(n, init, scale);
            return grad_check(
                [&](Tape& tape, const Tensor& flat) {
                  Unpack u(flat);
                  std::vector<Tensor> ops;
                  for (const auto& s : shapes) ops.push_back(u.next(s));
                  CounterRng rng = CounterRng(seed).split(2);
                  return body(tape, ops, rng);
                },
                Shape{n}, x);
          },
          false};
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.src_vocab = 10;
  m.tgt_vocab = 9;
  m.d_model = 16;
  m.n_heads = 2;
  m.n_layers = 2;
  m.d_ff = 32;
  m.dropout = 0.0;
  m.max_len = 16;
  return m;
}

CapsuleConfig tiny_capsules() {
  CapsuleConfig c;
  c.dim = 8;
  c.agreement_dim = 8;
  return c;
}

std::vector<int> random_ids(std::size_t n, std::size_t vocab, CounterRng& rng) {
  std::vector<int> ids(n);
  for (auto& v : ids) v = kReservedTokens + static_cast<int>(rng.below(vocab - kReservedTokens));
  return ids;
}

// Two pairs of different lengths.
DualBatch tiny_batch(std::uint64_t seed, const ModelConfig& m) {
  CounterRng rng = CounterRng(seed).split(7);
  std::vector<EncodedPair> pairs(2);
  pairs[0] = {random_ids(4, m.src_vocab, rng), random_ids(3, m.tgt_vocab, rng)};
  pairs[1] = {random_ids(2, m.src_vocab, rng), random_ids(5, m.tgt_vocab, rng)};
  const std::size_t ids[] = {0, 1};
  return make_dual_batch(pairs, ids);
}

ModelConfig reversed(ModelConfig m) {
  std::swap(m.src_vocab, m.tgt_vocab);
  return m;
}

}  // namespace

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  using V = std::vector<Tensor>;
  cases.push_back(op_case("matmul", {Shape{3, 4}, Shape{4, 2}},
                          [](Tape&, V& x, CounterRng& r) { return project(matmul(x[0], x[1]), r); }));
  cases.push_back(op_case("linear", {Shape{3, 4}, Shape{4, 5}, Shape{5}},
                          [](Tape&, V& x, CounterRng& r) { return project(linear(x[0], x[1], x[2]), r); }));
  cases.push_back(op_case("add_broadcast", {Shape{2, 3, 4}, Shape{3, 4}},
                          [](Tape&, V& x, CounterRng& r) { return project(add(x[0], x[1]), r); }));
  cases.push_back(op_case("sub", {Shape{2, 3}, Shape{2, 3}},
                          [](Tape&, V& x, CounterRng& r) { return project(sub(x[0], x[1]), r); }));
  cases.push_back(op_case("mul_broadcast", {Shape{2, 3, 4}, Shape{4}},
                          [](Tape&, V& x, CounterRng& r) { return project(mul(x[0], x[1]), r); }));
  cases.push_back(op_case("scale", {Shape{5}}, [](Tape&, V& x, CounterRng& r) { return project(scale(x[0], -1.7), r); }));
  cases.push_back(op_case("tanh", {Shape{6}}, [](Tape&, V& x, CounterRng& r) { return project(tanh(x[0]), r); }, 2.0));
  cases.push_back(op_case("gelu", {Shape{6}}, [](Tape&, V& x, CounterRng& r) { return project(gelu(x[0]), r); }, 3.0));
  cases.push_back(op_case("concat", {Shape{2, 3}, Shape{2, 2}, Shape{1, 5}}, [](Tape&, V& x, CounterRng& r) {
    Tensor side = concat({x[0], x[1]}, 1);
    return project(concat({side, x[2]}, 0), r);
  }));
  cases.push_back(op_case("slice", {Shape{3, 5}},
                          [](Tape&, V& x, CounterRng& r) { return project(slice(x[0], 1, 1, 4), r); }));
  cases.push_back(op_case("gather_rows", {Shape{4, 3}}, [](Tape&, V& x, CounterRng& r) {
    const std::size_t rows[] = {2, 0, 2, 3};
    return project(gather_rows(x[0], rows), r);
  }));
  cases.push_back(op_case("mask_fill", {Shape{3, 4}}, [](Tape&, V& x, CounterRng& r) {
    const std::uint8_t mask[] = {1, 0, 0, 1};
    return project(mask_fill(x[0], mask, -5.0), r);
  }));
  cases.push_back(op_case("mean", {Shape{7}}, [](Tape&, V& x, CounterRng&) { return mean(mul(x[0], x[0])); }));
  cases.push_back(op_case("l2_norm", {Shape{5}}, [](Tape&, V& x, CounterRng&) { return l2_norm(x[0]); }));
  cases.push_back(op_case("l2_norm_last", {Shape{3, 4}},
                          [](Tape&, V& x, CounterRng& r) { return project(l2_norm_last(x[0]), r); }));
  for (std::size_t axis = 0; axis < 3; ++axis)
    cases.push_back(op_case("softmax_axis" + std::to_string(axis), {Shape{2, 3, 4}},
                            [axis](Tape&, V& x, CounterRng& r) { return project(softmax(x[0], axis), r); }, 2.0));
  cases.push_back(op_case("cross_entropy", {Shape{4, 6}}, [](Tape&, V& x, CounterRng&) {
    const int targets[] = {1, 0, 5, 3};
    return cross_entropy(x[0], targets, 0);
  }, 2.0));
  cases.push_back(op_case("layer_norm", {Shape{3, 5}, Shape{5}, Shape{5}},
                          [](Tape&, V& x, CounterRng& r) { return project(layer_norm(x[0], x[1], x[2]), r); }));
  cases.push_back(op_case("embedding", {Shape{5, 3}}, [](Tape&, V& x, CounterRng& r) {
    const int ids[] = {4, 1, 4, 0};
    return project(embedding(x[0], ids), r);
  }));
  cases.push_back(op_case("dropout", {Shape{4, 3}}, [](Tape&, V& x, CounterRng& r) {
    CounterRng mask_rng(99);
    return project(dropout(x[0], 0.3, mask_rng), r);
  }));
  cases.push_back(op_case("attention", {Shape{3, 4}, Shape{5, 4}, Shape{5, 4}}, [](Tape&, V& x, CounterRng& r) {
    std::vector<double> bias(15, 0.0);
    bias[1] = bias[7] = bias[14] = AttentionBias::kMasked;
    return project(attention(x[0], x[1], x[2], bias, 2), r);
  }, 1.5));
  cases.push_back(op_case("squash", {Shape{2, 3, 4}},
                          [](Tape&, V& x, CounterRng& r) { return project(squash(x[0]), r); }, 2.0));
  cases.push_back(op_case("routing_pool", {Shape{2, 3, 4}, Shape{3, 4, 5}},
                          [](Tape&, V& x, CounterRng& r) { return project(routing_pool(x[0], x[1]), r); }));
  cases.push_back(op_case("guided_agreement", {Shape{2, 6}, Shape{3, 4, 6}, Shape{2, 4, 6}, Shape{6}},
                          [](Tape&, V& x, CounterRng& r) {
                            return project(guided_agreement(x[0], x[1], x[2], x[3]), r);
                          }));
  cases.push_back(op_case("dot_agreement", {Shape{3, 4, 5}, Shape{2, 4, 5}},
                          [](Tape&, V& x, CounterRng& r) { return project(dot_agreement(x[0], x[1]), r); }));
  cases.push_back(op_case("routing_guided", {Shape{4, 16}, Shape{3, 16}}, [](Tape& tape, V& x, CounterRng& r) {
    // Full guided routing as a function of encoder rows and decoder states.
    const CapsuleConfig cfg = tiny_capsules();
    // Static: the tape borrows parameter storage past this call.
    static ParamStore store;
    static CounterRng init(5);
    static const CapsuleLayer layer(cfg, 16, store, init, "caps", true);
    Tensor u = layer.project(tape, x[0]);
    GuidedAgreement g = layer.agreement(tape);
    Tensor omega = run_guided_routing(u, x[1], g, cfg).omega;
    return project(omega, r);
  }));
  cases.push_back(op_case("routing_masked", {Shape{4, 5, 8}}, [](Tape&, V& x, CounterRng& r) {
    const CapsuleConfig cfg = tiny_capsules();
    const std::uint8_t rows[] = {1, 0, 0, 0, 1, 1, 0, 0, 1, 1, 1, 1};
    const GroupMask mask = GroupMask::only(cfg, CapsuleGroup::Future);
    return project(run_masked_routing(x[0], 3, rows, mask, cfg).omega, r);
  }));
  cases.push_back(op_case("consistency_loss", {Shape{3, 2, 4}, Shape{3, 2, 4}},
                          [](Tape&, V& x, CounterRng&) { return consistency_loss(x[0], x[1]); }));

  cases.push_back({"transformer_ce",
                   [](std::uint64_t seed) {
                     const ModelConfig m = tiny_model();
                     TranslationModel model(m, tiny_capsules(), false, seed);
                     const DualBatch batch = tiny_batch(seed, m);
                     ParamStore* stores[] = {&model.params()};
                     return grad_check_params([&](Tape& tape) { return baseline_loss(tape, batch.fwd, model); },
                                              stores);
                   },
                   true});
  cases.push_back({"capsule_head_ce",
                   [](std::uint64_t seed) {
                     const ModelConfig m = tiny_model();
                     TranslationModel model(m, tiny_capsules(), true, seed);
                     const DualBatch batch = tiny_batch(seed, m);
                     ParamStore* stores[] = {&model.params()};
                     return grad_check_params([&](Tape& tape) { return baseline_loss(tape, batch.fwd, model); },
                                              stores);
                   },
                   true});
  cases.push_back({"dual_step_loss",
                   [](std::uint64_t seed) {
                     const ModelConfig m = tiny_model();
                     TranslationModel fwd(m, tiny_capsules(), true, hash_combine(seed, 1));
                     TranslationModel bwd(reversed(m), tiny_capsules(), true, hash_combine(seed, 2));
                     const DualBatch batch = tiny_batch(seed, m);
                     DualLossConfig cfg;
                     cfg.subsample = 1.0;
                     ParamStore* stores[] = {&fwd.params(), &bwd.params()};
                     return grad_check_params(
                         [&](Tape& tape) { return dual_loss(tape, batch, fwd, bwd, cfg, seed); }, stores);
                   },
                   true});
  return cases;
}

std::vector<GradCaseResult> run_gradient_suite(std::size_t op_seeds, std::size_t composite_seeds,
                                               const std::function<void(const GradCaseResult&)>& on_result) {
  std::vector<GradCaseResult> out;
  for (const auto& c : gradient_cases()) {
    const auto start = std::chrono::steady_clock::now();
    GradCaseResult r;
    r.name = c.name;
    r.seeds = c.composite ? composite_seeds : op_seeds;
    for (std::size_t s = 0; s < r.seeds; ++s) {
      GradCheckReport rep = c.run(1000 + s);
      r.worst.coordinates += rep.coordinates;
      if (s == 0 || rep.max_rel_error > r.worst.max_rel_error) {
        const auto coords = r.worst.coordinates;
        r.worst = rep;
        r.worst.coordinates = coords;
        r.worst.worst = "seed " + std::to_string(1000 + s) + " " + rep.worst;
      }
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (on_result) on_result(r);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dualpf
