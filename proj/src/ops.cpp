#include "dualpf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "dualpf/errors.hpp"
#include "dualpf/kernels.hpp"

namespace dualpf {

namespace kp = kernels::parallel;

namespace {

Tape& same_tape(const Tensor& a, const Tensor& b) {
  if (!a.valid() || !b.valid()) throw ContractError("operation on an empty tensor handle");
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
  return a.tape();
}

std::vector<double> copy_of(std::span<const double> s) { return {s.begin(), s.end()}; }

// Returns the broadcast period of b over a (b.numel() if b is a suffix of a).
std::size_t suffix_period(const Shape& a, const Shape& b, const char* op) {
  const auto& ad = a.dims();
  const auto& bd = b.dims();
  if (bd.size() <= ad.size() && std::equal(bd.rbegin(), bd.rend(), ad.rbegin())) return b.numel();
  throw DimensionError(std::string(op) + ": shapes " + a.str() + " and " + b.str() + " are not broadcast-compatible");
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.shape().rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         x.shape().str());
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& tape = same_tape(a, b);
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul: inner extents differ, " + a.shape().str() + " x " + b.shape().str());
  std::vector<double> out(m * n, 0.0);
  kp::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  const auto ai = a.node_id(), bi = b.node_id();
  return tape.record(Shape{m, n}, std::move(out), {a, b}, [ai, bi, m, n, k](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    if (t.requires_grad(ai)) kp::gemm_nt(m, k, n, g.data(), t.value(bi).data(), t.grad_mut(ai).data());
    if (t.requires_grad(bi)) kp::gemm_tn(k, n, m, t.value(ai).data(), g.data(), t.grad_mut(bi).data());
  });
}

Tensor linear(const Tensor& x, const Tensor& w) { return matmul(x, w); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  Tape& tape = same_tape(x, w);
  same_tape(x, bias);
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t m = x.shape()[0], k = x.shape()[1], n = w.shape()[1];
  if (w.shape()[0] != k)
    throw DimensionError("linear: inner extents differ, " + x.shape().str() + " x " + w.shape().str());
  if (bias.shape() != Shape{n}) throw DimensionError("linear: bias shape " + bias.shape().str());
  std::vector<double> out(m * n);
  auto bv = bias.data();
  for (std::size_t i = 0; i < m; ++i) std::copy(bv.begin(), bv.end(), out.begin() + i * n);
  kp::gemm_nn(m, n, k, x.data().data(), w.data().data(), out.data());
  const auto xi = x.node_id(), wi = w.node_id(), bi = bias.node_id();
  return tape.record(Shape{m, n}, std::move(out), {x, w, bias}, [xi, wi, bi, m, n, k](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    if (t.requires_grad(xi)) kp::gemm_nt(m, k, n, g.data(), t.value(wi).data(), t.grad_mut(xi).data());
    if (t.requires_grad(wi)) kp::gemm_tn(k, n, m, t.value(xi).data(), g.data(), t.grad_mut(wi).data());
    if (t.requires_grad(bi)) {
      auto gb = t.grad_mut(bi);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

namespace {

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  Tape& tape = same_tape(a, b);
  const std::size_t period = suffix_period(a.shape(), b.shape(), name);
  const std::size_t n = a.numel();
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = period ? bv[i % period] : 0.0;
    switch (op) {
      case BinOp::Add: out[i] = av[i] + y; break;
      case BinOp::Sub: out[i] = av[i] - y; break;
      case BinOp::Mul: out[i] = av[i] * y; break;
    }
  }
  const auto ai = a.node_id(), bi = b.node_id();
  return tape.record(a.shape(), std::move(out), {a, b}, [ai, bi, n, period, op](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    if (t.requires_grad(ai)) {
      auto ga = t.grad_mut(ai);
      if (op == BinOp::Mul) {
        auto bv = t.value(bi);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i % period];
      } else {
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
    }
    if (t.requires_grad(bi)) {
      auto gb = t.grad_mut(bi);
      if (op == BinOp::Mul) {
        auto av = t.value(ai);
        for (std::size_t i = 0; i < n; ++i) gb[i % period] += g[i] * av[i];
      } else {
        const double sign = op == BinOp::Sub ? -1.0 : 1.0;
        for (std::size_t i = 0; i < n; ++i) gb[i % period] += sign * g[i];
      }
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
  Tape& tape = a.tape();
  std::vector<double> out = copy_of(a.data());
  for (auto& x : out) x *= factor;
  const auto ai = a.node_id();
  return tape.record(a.shape(), std::move(out), {a}, [ai, factor](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad_mut(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

Tensor tanh(const Tensor& x) {
  Tape& tape = x.tape();
  std::vector<double> out = copy_of(x.data());
  for (auto& v : out) v = std::tanh(v);
  const auto xi = x.node_id();
  return tape.record(x.shape(), std::move(out), {x}, [xi](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto y = t.value(self);
    auto gx = t.grad_mut(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tape& tape = x.tape();
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  const auto xi = x.node_id();
  return tape.record(x.shape(), std::move(out), {x}, [xi](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto xv = t.value(xi);
    auto gx = t.grad_mut(xi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double th = std::tanh(kC * (v + kA * v * v * v));
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kC * (1.0 + 3.0 * kA * v * v);
      gx[i] += g[i] * d;
    }
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no operands");
  Tape& tape = parts[0].tape();
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.rank()) throw DimensionError("concat: axis out of range for shape " + s0.str());
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.rank(); ++d) inner *= s0[d];
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& p : parts) {
    same_tape(parts[0], p);
    const Shape& s = p.shape();
    bool ok = s.rank() == s0.rank();
    for (std::size_t d = 0; ok && d < s.rank(); ++d) ok = d == axis || s[d] == s0[d];
    if (!ok) throw DimensionError("concat: incompatible shapes " + s0.str() + " and " + s.str());
    lens.push_back(s[axis]);
    total += s[axis];
  }
  std::vector<std::size_t> dims = s0.dims();
  dims[axis] = total;
  std::vector<double> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto v = parts[p].data();
    const std::size_t block = lens[p] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(v.begin() + o * block, v.begin() + (o + 1) * block, out.begin() + o * total * inner + offset);
    offset += block;
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.node_id());
  return tape.record(Shape(dims), std::move(out), parts,
                     [ids, lens, outer, inner, total](Tape& t, std::size_t self) {
                       auto g = t.grad(self);
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < ids.size(); ++p) {
                         const std::size_t block = lens[p] * inner;
                         if (t.requires_grad(ids[p])) {
                           auto gp = t.grad_mut(ids[p]);
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t q = 0; q < block; ++q)
                               gp[o * block + q] += g[o * total * inner + offset + q];
                         }
                         offset += block;
                       }
                     });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.rank()) throw DimensionError("slice: axis out of range for shape " + s.str());
  if (begin > end || end > s[axis])
    throw IndexError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " + s.str());
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.rank(); ++d) inner *= s[d];
  const std::size_t len = s[axis], width = end - begin;
  std::vector<std::size_t> dims = s.dims();
  dims[axis] = width;
  auto v = x.data();
  std::vector<double> out(outer * width * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(v.begin() + (o * len + begin) * inner, v.begin() + (o * len + end) * inner,
              out.begin() + o * width * inner);
  const auto xi = x.node_id();
  return x.tape().record(Shape(dims), std::move(out), {x},
                         [xi, outer, inner, len, begin, width](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           auto gx = t.grad_mut(xi);
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t q = 0; q < width * inner; ++q)
                               gx[(o * len + begin) * inner + q] += g[o * width * inner + q];
                         });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const Shape& s = x.shape();
  if (s.rank() == 0) throw DimensionError("gather_rows: scalar input");
  const std::size_t inner = s.numel() / std::max<std::size_t>(s[0], 1);
  std::vector<std::size_t> dims = s.dims();
  dims[0] = rows.size();
  auto v = x.data();
  std::vector<double> out(rows.size() * inner);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= s[0]) throw IndexError("gather_rows: row " + std::to_string(rows[r]) + " outside " + s.str());
    std::copy(v.begin() + rows[r] * inner, v.begin() + (rows[r] + 1) * inner, out.begin() + r * inner);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  const auto xi = x.node_id();
  return x.tape().record(Shape(dims), std::move(out), {x}, [xi, idx, inner](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto gx = t.grad_mut(xi);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t q = 0; q < inner; ++q) gx[idx[r] * inner + q] += g[r * inner + q];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape.numel() != x.numel())
    throw DimensionError("reshape: " + x.shape().str() + " cannot become " + shape.str());
  const auto xi = x.node_id();
  return x.tape().record(std::move(shape), copy_of(x.data()), {x}, [xi](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto gx = t.grad_mut(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor detach(const Tensor& x) { return x.tape().constant(x.shape(), copy_of(x.data())); }

Tensor mask_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value) {
  const std::size_t n = x.numel();
  const std::size_t period = mask.size();
  const auto& xd = x.shape().dims();
  std::size_t suffix = 1;
  bool ok = period == n;
  for (std::size_t k = xd.size(); !ok && k-- > 0;) {
    suffix *= xd[k];
    ok = suffix == period;
  }
  if (!ok || (period == 0 && n != 0))
    throw DimensionError("mask_fill: mask of " + std::to_string(period) + " entries for shape " + x.shape().str());
  std::vector<double> out = copy_of(x.data());
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i % period]) out[i] = value;
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  const auto xi = x.node_id();
  return x.tape().record(x.shape(), std::move(out), {x}, [xi, m](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto gx = t.grad_mut(xi);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!m[i % m.size()]) gx[i] += g[i];
  });
}

Tensor sum(const Tensor& x) {
  auto v = x.data();
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  const auto xi = x.node_id();
  return x.tape().record(Shape{}, {total}, {x}, [xi](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    auto gx = t.grad_mut(xi);
    for (auto& e : gx) e += g;
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor l2_norm(const Tensor& x) {
  auto v = x.data();
  double ss = 0.0;
  for (double e : v) ss += e * e;
  const double norm = std::sqrt(ss);
  const auto xi = x.node_id();
  return x.tape().record(Shape{}, {norm}, {x}, [xi](Tape& t, std::size_t self) {
    const double norm = t.value(self)[0];
    if (norm == 0.0) return;
    const double g = t.grad(self)[0] / norm;
    auto xv = t.value(xi);
    auto gx = t.grad_mut(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * xv[i];
  });
}

Tensor l2_norm_last(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.rank() == 0) throw DimensionError("l2_norm_last: scalar input");
  const std::size_t dim = s[s.rank() - 1];
  const std::size_t rows = dim ? s.numel() / dim : 0;
  std::vector<std::size_t> dims(s.dims().begin(), s.dims().end() - 1);
  auto v = x.data();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t d = 0; d < dim; ++d) ss += v[r * dim + d] * v[r * dim + d];
    out[r] = std::sqrt(ss);
  }
  const auto xi = x.node_id();
  return x.tape().record(Shape(dims), std::move(out), {x}, [xi, rows, dim](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto norms = t.value(self);
    auto xv = t.value(xi);
    auto gx = t.grad_mut(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      if (norms[r] == 0.0) continue;
      const double f = g[r] / norms[r];
      for (std::size_t d = 0; d < dim; ++d) gx[r * dim + d] += f * xv[r * dim + d];
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.rank()) throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + s.str());
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.rank(); ++d) inner *= s[d];
  const std::size_t len = s[axis];
  auto xv = x.data();
  std::vector<double> out(xv.size());
  if (inner == 1) {
    kp::softmax_rows(outer, len, xv.data(), out.data());
  } else {
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t q = 0; q < inner; ++q) {
        const std::size_t base = o * len * inner + q;
        double mx = -INFINITY;
        for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, xv[base + l * inner]);
        double total = 0.0;
        for (std::size_t l = 0; l < len; ++l) {
          out[base + l * inner] = std::exp(xv[base + l * inner] - mx);
          total += out[base + l * inner];
        }
        for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= total;
      }
  }
  const auto xi = x.node_id();
  return x.tape().record(s, std::move(out), {x}, [xi, outer, inner, len](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto y = t.value(self);
    auto gx = t.grad_mut(xi);
    if (inner == 1) {
      kp::softmax_rows_backward(outer, len, y.data(), g.data(), gx.data());
      return;
    }
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t q = 0; q < inner; ++q) {
        const std::size_t base = o * len * inner + q;
        double dot = 0.0;
        for (std::size_t l = 0; l < len; ++l) dot += y[base + l * inner] * g[base + l * inner];
        for (std::size_t l = 0; l < len; ++l) gx[base + l * inner] += y[base + l * inner] * (g[base + l * inner] - dot);
      }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int pad_id) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t rows = logits.shape()[0], vocab = logits.shape()[1];
  if (targets.size() != rows)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         logits.shape().str());
  auto lv = logits.data();
  std::vector<double> probs(lv.size());
  kp::softmax_rows(rows, vocab, lv.data(), probs.data());
  double nll = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = targets[r];
    if (y == pad_id) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= vocab)
      throw IndexError("cross_entropy: target id " + std::to_string(y) + " outside vocabulary of " +
                       std::to_string(vocab));
    const double* row = lv.data() + r * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) z += std::exp(row[v] - mx);
    nll += -(row[y] - mx - std::log(z));
    ++count;
  }
  if (count == 0) throw ContractError("cross_entropy: empty loss (every position is padding)");
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<int> tg(targets.begin(), targets.end());
  const auto li = logits.node_id();
  return logits.tape().record(
      Shape{}, {nll * inv}, {logits},
      [li, tg, rows, vocab, inv, pad_id, probs = std::move(probs)](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0] * inv;
        auto gl = t.grad_mut(li);
        for (std::size_t r = 0; r < rows; ++r) {
          if (tg[r] == pad_id) continue;
          for (std::size_t v = 0; v < vocab; ++v) gl[r * vocab + v] += g * probs[r * vocab + v];
          gl[r * vocab + tg[r]] -= g;
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  Tape& tape = same_tape(x, gamma);
  same_tape(x, beta);
  require_rank(x, 2, "layer_norm");
  const std::size_t rows = x.shape()[0], dim = x.shape()[1];
  if (gamma.shape() != Shape{dim} || beta.shape() != Shape{dim})
    throw DimensionError("layer_norm: gain/bias shapes do not match " + x.shape().str());
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<double> out(xv.size()), xhat(xv.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * dim;
    double mu = 0.0;
    for (std::size_t d = 0; d < dim; ++d) mu += xr[d];
    mu /= static_cast<double>(dim);
    double var = 0.0;
    for (std::size_t d = 0; d < dim; ++d) var += (xr[d] - mu) * (xr[d] - mu);
    var /= static_cast<double>(dim);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t d = 0; d < dim; ++d) {
      xhat[r * dim + d] = (xr[d] - mu) * inv_std[r];
      out[r * dim + d] = xhat[r * dim + d] * gv[d] + bv[d];
    }
  }
  const auto xi = x.node_id(), gi = gamma.node_id(), bi = beta.node_id();
  return tape.record(
      x.shape(), std::move(out), {x, gamma, beta},
      [xi, gi, bi, rows, dim, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        auto g = t.grad(self);
        if (t.requires_grad(gi)) {
          auto gg = t.grad_mut(gi);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t d = 0; d < dim; ++d) gg[d] += g[r * dim + d] * xhat[r * dim + d];
        }
        if (t.requires_grad(bi)) {
          auto gb = t.grad_mut(bi);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t d = 0; d < dim; ++d) gb[d] += g[r * dim + d];
        }
        if (t.requires_grad(xi)) {
          auto gv = t.value(gi);
          auto gx = t.grad_mut(xi);
          const double n = static_cast<double>(dim);
          for (std::size_t r = 0; r < rows; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
              const double dxh = g[r * dim + d] * gv[d];
              s1 += dxh;
              s2 += dxh * xhat[r * dim + d];
            }
            for (std::size_t d = 0; d < dim; ++d) {
              const double dxh = g[r * dim + d] * gv[d];
              gx[r * dim + d] += inv_std[r] * (dxh - s1 / n - xhat[r * dim + d] * s2 / n);
            }
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.shape()[0], dim = table.shape()[1];
  auto tv = table.data();
  std::vector<double> out(ids.size() * dim);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab)
      throw IndexError("embedding: token id " + std::to_string(ids[r]) + " outside vocabulary of " +
                       std::to_string(vocab));
    std::copy(tv.begin() + ids[r] * dim, tv.begin() + (ids[r] + 1) * dim, out.begin() + r * dim);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  const auto ti = table.node_id();
  return table.tape().record(Shape{ids.size(), dim}, std::move(out), {table}, [ti, idx, dim](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto gt = t.grad_mut(ti);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t d = 0; d < dim; ++d) gt[idx[r] * dim + d] += g[r * dim + d];
  });
}

Tensor dropout(const Tensor& x, double p, CounterRng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ContractError("dropout: rate must be below 1");
  const double keep = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < p ? 0.0 : keep;
  std::vector<double> out = copy_of(x.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const auto xi = x.node_id();
  return x.tape().record(x.shape(), std::move(out), {x}, [xi, mask = std::move(mask)](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto gx = t.grad_mut(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const double> bias, std::size_t heads) {
  Tape& tape = same_tape(q, k);
  same_tape(q, v);
  require_rank(q, 2, "attention");
  require_rank(k, 2, "attention");
  require_rank(v, 2, "attention");
  const std::size_t lq = q.shape()[0], lk = k.shape()[0], d = q.shape()[1];
  if (k.shape()[1] != d || v.shape() != k.shape())
    throw DimensionError("attention: q " + q.shape().str() + ", k " + k.shape().str() + ", v " + v.shape().str());
  if (heads == 0 || d % heads != 0)
    throw DimensionError("attention: model width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                         " heads");
  if (!bias.empty() && bias.size() != lq * lk)
    throw DimensionError("attention: bias has " + std::to_string(bias.size()) + " entries, expected [" +
                         std::to_string(lq) + " x " + std::to_string(lk) + "]");
  const std::size_t dh = d / heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  auto qv = q.data();
  auto kv = k.data();
  auto vv = v.data();
  std::vector<double> out(lq * d, 0.0);
  std::vector<double> probs(heads * lq * lk);
  for (std::size_t h = 0; h < heads; ++h) {
    double* ph = probs.data() + h * lq * lk;
    for (std::size_t i = 0; i < lq; ++i) {
      const double* qi = qv.data() + i * d + h * dh;
      for (std::size_t j = 0; j < lk; ++j) {
        const double* kj = kv.data() + j * d + h * dh;
        double acc = 0.0;
#pragma omp simd reduction(+ : acc)
        for (std::size_t e = 0; e < dh; ++e) acc += qi[e] * kj[e];
        ph[i * lk + j] = acc * scl + (bias.empty() ? 0.0 : bias[i * lk + j]);
      }
    }
    kp::softmax_rows(lq, lk, ph, ph);
    for (std::size_t i = 0; i < lq; ++i) {
      double* oi = out.data() + i * d + h * dh;
      for (std::size_t j = 0; j < lk; ++j) {
        const double p = ph[i * lk + j];
        const double* vj = vv.data() + j * d + h * dh;
#pragma omp simd
        for (std::size_t e = 0; e < dh; ++e) oi[e] += p * vj[e];
      }
    }
  }
  const auto qi = q.node_id(), ki = k.node_id(), vi = v.node_id();
  return tape.record(
      Shape{lq, d}, std::move(out), {q, k, v},
      [qi, ki, vi, lq, lk, d, dh, heads, scl, probs = std::move(probs)](Tape& t, std::size_t self) {
        auto g = t.grad(self);
        auto qv = t.value(qi);
        auto kv = t.value(ki);
        auto vv = t.value(vi);
        const bool gq = t.requires_grad(qi), gk = t.requires_grad(ki), gvv = t.requires_grad(vi);
        std::span<double> dq, dk, dv;
        if (gq) dq = t.grad_mut(qi);
        if (gk) dk = t.grad_mut(ki);
        if (gvv) dv = t.grad_mut(vi);
        std::vector<double> dp(lq * lk);
        for (std::size_t h = 0; h < heads; ++h) {
          const double* ph = probs.data() + h * lq * lk;
          for (std::size_t i = 0; i < lq; ++i) {
            const double* gi = g.data() + i * d + h * dh;
            for (std::size_t j = 0; j < lk; ++j) {
              const double* vj = vv.data() + j * d + h * dh;
              double acc = 0.0;
              for (std::size_t e = 0; e < dh; ++e) acc += gi[e] * vj[e];
              dp[i * lk + j] = acc;
              if (gvv) {
                const double p = ph[i * lk + j];
                double* dvj = dv.data() + j * d + h * dh;
                for (std::size_t e = 0; e < dh; ++e) dvj[e] += p * gi[e];
              }
            }
          }
          if (!gq && !gk) continue;
          std::vector<double> ds(lq * lk, 0.0);
          kp::softmax_rows_backward(lq, lk, ph, dp.data(), ds.data());
          for (std::size_t i = 0; i < lq; ++i)
            for (std::size_t j = 0; j < lk; ++j) {
              const double s = ds[i * lk + j] * scl;
              if (s == 0.0) continue;
              if (gq) {
                const double* kj = kv.data() + j * d + h * dh;
                double* dqi = dq.data() + i * d + h * dh;
                for (std::size_t e = 0; e < dh; ++e) dqi[e] += s * kj[e];
              }
              if (gk) {
                const double* qi2 = qv.data() + i * d + h * dh;
                double* dkj = dk.data() + j * d + h * dh;
                for (std::size_t e = 0; e < dh; ++e) dkj[e] += s * qi2[e];
              }
            }
        }
      });
}

Tensor squash(const Tensor& s) {
  const Shape& sh = s.shape();
  if (sh.rank() == 0) throw DimensionError("squash: scalar input");
  const std::size_t dim = sh[sh.rank() - 1];
  const std::size_t rows = dim ? sh.numel() / dim : 0;
  auto sv = s.data();
  std::vector<double> out(sv.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t d = 0; d < dim; ++d) ss += sv[r * dim + d] * sv[r * dim + d];
    if (ss == 0.0) continue;
    const double f = std::sqrt(ss) / (1.0 + ss);
    for (std::size_t d = 0; d < dim; ++d) out[r * dim + d] = f * sv[r * dim + d];
  }
  const auto si = s.node_id();
  return s.tape().record(sh, std::move(out), {s}, [si, rows, dim](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto sv = t.value(si);
    auto gs = t.grad_mut(si);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* x = sv.data() + r * dim;
      const double* gr = g.data() + r * dim;
      double ss = 0.0, dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        ss += x[d] * x[d];
        dot += x[d] * gr[d];
      }
      if (ss == 0.0) continue;
      const double n = std::sqrt(ss);
      const double f = n / (1.0 + ss);
      // d/dn [n / (1 + n^2)] / n
      const double fp_over_n = (1.0 - ss) / ((1.0 + ss) * (1.0 + ss) * n);
      for (std::size_t d = 0; d < dim; ++d) gs[r * dim + d] += f * gr[d] + fp_over_n * dot * x[d];
    }
  });
}

Tensor routing_pool(const Tensor& c, const Tensor& u) {
  Tape& tape = same_tape(c, u);
  require_rank(c, 3, "routing_pool");
  require_rank(u, 3, "routing_pool");
  const std::size_t steps = c.shape()[0], lows = c.shape()[1], highs = c.shape()[2], dim = u.shape()[2];
  if (u.shape()[0] != lows || u.shape()[1] != highs)
    throw DimensionError("routing_pool: coefficients " + c.shape().str() + " vs votes " + u.shape().str());
  std::vector<double> out(steps * highs * dim);
  kp::routing_pool(steps, lows, highs, dim, c.data().data(), u.data().data(), out.data());
  const auto ci = c.node_id(), ui = u.node_id();
  return tape.record(Shape{steps, highs, dim}, std::move(out), {c, u},
                     [ci, ui, steps, lows, highs, dim](Tape& t, std::size_t self) {
                       auto g = t.grad(self);
                       auto cv = t.value(ci);
                       auto uv = t.value(ui);
                       if (t.requires_grad(ci)) {
                         auto gc = t.grad_mut(ci);
                         for (std::size_t s = 0; s < steps; ++s)
                           for (std::size_t i = 0; i < lows; ++i)
                             for (std::size_t j = 0; j < highs; ++j) {
                               const double* gs = g.data() + (s * highs + j) * dim;
                               const double* uij = uv.data() + (i * highs + j) * dim;
                               double acc = 0.0;
                               for (std::size_t d = 0; d < dim; ++d) acc += gs[d] * uij[d];
                               gc[(s * lows + i) * highs + j] += acc;
                             }
                       }
                       if (t.requires_grad(ui)) {
                         auto gu = t.grad_mut(ui);
                         for (std::size_t s = 0; s < steps; ++s)
                           for (std::size_t i = 0; i < lows; ++i)
                             for (std::size_t j = 0; j < highs; ++j) {
                               const double w = cv[(s * lows + i) * highs + j];
                               const double* gs = g.data() + (s * highs + j) * dim;
                               double* guij = gu.data() + (i * highs + j) * dim;
                               for (std::size_t d = 0; d < dim; ++d) guij[d] += w * gs[d];
                             }
                       }
                     });
}

Tensor guided_agreement(const Tensor& zp, const Tensor& up, const Tensor& op, const Tensor& w) {
  Tape& tape = same_tape(zp, up);
  same_tape(zp, op);
  same_tape(zp, w);
  require_rank(zp, 2, "guided_agreement");
  require_rank(up, 3, "guided_agreement");
  require_rank(op, 3, "guided_agreement");
  const std::size_t steps = zp.shape()[0], hidden = zp.shape()[1];
  const std::size_t lows = up.shape()[0], highs = up.shape()[1];
  if (up.shape()[2] != hidden || op.shape() != Shape{steps, highs, hidden} || w.shape() != Shape{hidden})
    throw DimensionError("guided_agreement: zp " + zp.shape().str() + ", up " + up.shape().str() + ", op " +
                         op.shape().str() + ", w " + w.shape().str());
  std::vector<double> out(steps * lows * highs);
  std::vector<double> act(steps * lows * highs * hidden);
  kp::guided_agreement(steps, lows, highs, hidden, zp.data().data(), up.data().data(), op.data().data(),
                       w.data().data(), out.data(), act.data());
  const auto zi = zp.node_id(), ui = up.node_id(), oi = op.node_id(), wi = w.node_id();
  return tape.record(
      Shape{steps, lows, highs}, std::move(out), {zp, up, op, w},
      [zi, ui, oi, wi, steps, lows, highs, hidden, act = std::move(act)](Tape& t, std::size_t self) {
        auto g = t.grad(self);
        auto wv = t.value(wi);
        const bool gz = t.requires_grad(zi), gu = t.requires_grad(ui), go = t.requires_grad(oi),
                   gw = t.requires_grad(wi);
        std::span<double> dz, du, dop, dw;
        if (gz) dz = t.grad_mut(zi);
        if (gu) du = t.grad_mut(ui);
        if (go) dop = t.grad_mut(oi);
        if (gw) dw = t.grad_mut(wi);
        std::vector<double> pre(hidden);
        for (std::size_t s = 0; s < steps; ++s)
          for (std::size_t i = 0; i < lows; ++i)
            for (std::size_t j = 0; j < highs; ++j) {
              const double gij = g[(s * lows + i) * highs + j];
              if (gij == 0.0) continue;
              const double* a = act.data() + ((s * lows + i) * highs + j) * hidden;
              for (std::size_t h = 0; h < hidden; ++h) pre[h] = gij * wv[h] * (1.0 - a[h] * a[h]);
              if (gw)
                for (std::size_t h = 0; h < hidden; ++h) dw[h] += gij * a[h];
              if (gz)
                for (std::size_t h = 0; h < hidden; ++h) dz[s * hidden + h] += pre[h];
              if (gu)
                for (std::size_t h = 0; h < hidden; ++h) du[(i * highs + j) * hidden + h] += pre[h];
              if (go)
                for (std::size_t h = 0; h < hidden; ++h) dop[(s * highs + j) * hidden + h] += pre[h];
            }
      });
}

Tensor dot_agreement(const Tensor& u, const Tensor& omega) {
  Tape& tape = same_tape(u, omega);
  require_rank(u, 3, "dot_agreement");
  require_rank(omega, 3, "dot_agreement");
  const std::size_t lows = u.shape()[0], highs = u.shape()[1], dim = u.shape()[2], steps = omega.shape()[0];
  if (omega.shape()[1] != highs || omega.shape()[2] != dim)
    throw DimensionError("dot_agreement: votes " + u.shape().str() + " vs outputs " + omega.shape().str());
  auto uv = u.data();
  auto ov = omega.data();
  std::vector<double> out(steps * lows * highs);
  for (std::size_t s = 0; s < steps; ++s)
    for (std::size_t i = 0; i < lows; ++i)
      for (std::size_t j = 0; j < highs; ++j) {
        const double* a = uv.data() + (i * highs + j) * dim;
        const double* b = ov.data() + (s * highs + j) * dim;
        double acc = 0.0;
        for (std::size_t d = 0; d < dim; ++d) acc += a[d] * b[d];
        out[(s * lows + i) * highs + j] = acc;
      }
  const auto ui = u.node_id(), oi = omega.node_id();
  return tape.record(Shape{steps, lows, highs}, std::move(out), {u, omega},
                     [ui, oi, steps, lows, highs, dim](Tape& t, std::size_t self) {
                       auto g = t.grad(self);
                       auto uv = t.value(ui);
                       auto ov = t.value(oi);
                       const bool gu = t.requires_grad(ui), go = t.requires_grad(oi);
                       std::span<double> du, dom;
                       if (gu) du = t.grad_mut(ui);
                       if (go) dom = t.grad_mut(oi);
                       for (std::size_t s = 0; s < steps; ++s)
                         for (std::size_t i = 0; i < lows; ++i)
                           for (std::size_t j = 0; j < highs; ++j) {
                             const double gij = g[(s * lows + i) * highs + j];
                             if (gij == 0.0) continue;
                             const std::size_t ub = (i * highs + j) * dim, ob = (s * highs + j) * dim;
                             if (gu)
                               for (std::size_t d = 0; d < dim; ++d) du[ub + d] += gij * ov[ob + d];
                             if (go)
                               for (std::size_t d = 0; d < dim; ++d) dom[ob + d] += gij * uv[ub + d];
                           }
                     });
}

}  // namespace dualpf
