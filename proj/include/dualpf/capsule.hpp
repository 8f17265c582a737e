#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualpf/ops.hpp"
#include "dualpf/param_store.hpp"

// Guided dynamic capsule routing. Low-level capsules are projections of
// encoder rows; high-level capsules are laid out as [Past | Future | Redundant]
// along the capsule axis. Routing is batched over decoding steps: logits b and
// coefficients c are [steps, lows, highs], pooled vectors s and outputs omega
// are [steps, highs, dim].
namespace dualpf {

struct CapsuleConfig {
  std::size_t n_past = 2;
  std::size_t n_future = 2;
  std::size_t n_redundant = 1;
  std::size_t dim = 32;         // D_c
  std::size_t iterations = 3;
  std::size_t agreement_dim = 32;  // rows of w / columns of W_b

  std::size_t total() const { return n_past + n_future + n_redundant; }
  void validate() const;
};

enum class CapsuleGroup { Past, Future, Redundant };

// Allowed high-level capsules; at least one must be set.
struct GroupMask {
  std::vector<std::uint8_t> allowed;

  static GroupMask all(const CapsuleConfig& cfg);
  static GroupMask only(const CapsuleConfig& cfg, CapsuleGroup group);
  std::size_t count() const;
  void validate(std::size_t highs) const;
  // 0 for allowed columns, -1e9 otherwise.
  std::vector<double> logit_bias() const;
};

// [begin, end) of a group along the capsule axis.
std::pair<std::size_t, std::size_t> group_range(const CapsuleConfig& cfg, CapsuleGroup group);

struct RoutingState {
  Tensor b;      // [T, I, J]
  Tensor c;      // [T, I, J]
  Tensor s;      // [T, J, Dc]
  Tensor omega;  // [T, J, Dc]
};

// u[i,j,:] = h_i W_j, with all W_j packed column-wise in w[D, J*Dc].
Tensor project_low_capsules(const Tensor& h, const Tensor& w, std::size_t highs, std::size_t dim);

// One round: c = softmax_j(b + mask bias), optionally zeroed on rows outside
// `row_mask` ([T*I] of 0/1), s = sum_i c u, omega = squash(s).
RoutingState routing_round(const Tensor& u, const Tensor& b, const GroupMask* mask = nullptr,
                           std::span<const std::uint8_t> row_mask = {});

// Parameters of the agreement b += w^T tanh(W_b [z; u; omega]).
struct GuidedAgreement {
  Tensor w_b;  // [d_model + 2*Dc, H]
  Tensor w;    // [H]
};

// b'[t,i,j] = b[t,i,j] + w^T tanh(W_b [z_t; u_ij; omega_tj]); masked columns unchanged.
Tensor guided_update(const Tensor& b, const Tensor& u, const Tensor& omega, const Tensor& z,
                     const GuidedAgreement& params, const GroupMask* mask = nullptr);

// b'[t,i,j] = b[t,i,j] + u_ij . omega_tj; masked columns unchanged.
Tensor dot_update(const Tensor& b, const Tensor& u, const Tensor& omega, const GroupMask* mask = nullptr);

struct RoutingResult {
  Tensor omega;  // [T, J, Dc]
  Tensor c;      // final coefficients [T, I, J]
};

// Guided routing of u[I,J,Dc] for each decoder state z[T,d]: zero logits,
// `iterations` x (routing_round -> guided_update), then a final round.
RoutingResult run_guided_routing(const Tensor& u, const Tensor& z, const GuidedAgreement& params,
                                 const CapsuleConfig& cfg, const GroupMask* mask = nullptr);

// Unguided routing with a group mask applied every round and the dot-product
// agreement. `row_mask` ([T*I], optional) selects which low capsules take
// part at each of the T steps; `steps` is T. Columns outside the mask come
// out exactly zero. With `agreement` false the logits stay at zero.
RoutingResult run_masked_routing(const Tensor& u, std::size_t steps, std::span<const std::uint8_t> row_mask,
                                 const GroupMask& mask, const CapsuleConfig& cfg, bool agreement = true);

// Guided DGC with its own parameters, registered under `prefix`.
class CapsuleLayer {
 public:
  CapsuleLayer(const CapsuleConfig& cfg, std::size_t d_model, ParamStore& store, CounterRng& init,
               const std::string& prefix, bool guided);

  const CapsuleConfig& config() const { return cfg_; }
  std::size_t projection_id() const { return proj_; }

  Tensor project(Tape& tape, const Tensor& h) const;
  GuidedAgreement agreement(Tape& tape) const;

 private:
  CapsuleConfig cfg_;
  const ParamStore* store_;
  std::size_t proj_;
  std::optional<std::size_t> w_b_, w_;
};

}  // namespace dualpf
