#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>

#include "dualpf/rng.hpp"
#include "dualpf/tensor.hpp"

// Differentiable operations. Every op records itself on the tape of its first
// operand; operands must share a tape. Shapes are row-major.
namespace dualpf {

Tensor matmul(const Tensor& a, const Tensor& b);
// x[m,k] * w[k,n] (+ bias[n])
Tensor linear(const Tensor& x, const Tensor& w);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// Elementwise binary ops. `b` either matches `a` or matches a trailing suffix
// of a's shape, in which case it is broadcast over the leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor tanh(const Tensor& x);
// tanh-approximated GELU
Tensor gelu(const Tensor& x);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor reshape(const Tensor& x, Shape shape);
// Gradient-free copy.
Tensor detach(const Tensor& x);

// Writes `value` where mask is nonzero; those positions get zero gradient.
// The mask matches x or a trailing suffix of its shape.
Tensor mask_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Euclidean norm of the whole tensor (scalar).
Tensor l2_norm(const Tensor& x);
// Euclidean norms along the last axis; drops that axis.
Tensor l2_norm_last(const Tensor& x);

// Max-shifted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

// Mean negative log-likelihood of `targets` under row-wise softmax(logits[T,V]);
// positions whose target equals pad_id are skipped.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int pad_id);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor embedding(const Tensor& table, std::span<const int> ids);
// Inverted dropout; p == 0 returns x unchanged.
Tensor dropout(const Tensor& x, double p, CounterRng& rng);

// Multi-head scaled dot-product attention without projections.
// q[Lq,d], k[Lk,d], v[Lk,d]; `bias` is empty or [Lq*Lk] additive logits.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const double> bias, std::size_t heads);

// Capsule squash along the last axis: s * |s| / (1 + |s|^2); zero maps to zero.
Tensor squash(const Tensor& s);

// s[t,j,:] = sum_i c[t,i,j] u[i,j,:]   c[T,I,J], u[I,J,D] -> [T,J,D]
Tensor routing_pool(const Tensor& c, const Tensor& u);

// a[t,i,j] = w . tanh(zp[t] + up[i,j] + op[t,j])   zp[T,H], up[I,J,H], op[T,J,H], w[H] -> [T,I,J]
Tensor guided_agreement(const Tensor& zp, const Tensor& up, const Tensor& op, const Tensor& w);

// a[t,i,j] = u[i,j,:] . omega[t,j,:]   u[I,J,D], omega[T,J,D] -> [T,I,J]
Tensor dot_agreement(const Tensor& u, const Tensor& omega);

}  // namespace dualpf
