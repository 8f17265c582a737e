#pragma once

#include <cstddef>
#include <string>

#include "dualpf/ops.hpp"
#include "dualpf/param_store.hpp"

namespace dualpf {

// Output head. With capsules, o_t = Linear([z_t; Omega_P; Omega_F; Omega_R]) + z_t;
// without, o_t = z_t. Logits are a vocabulary projection of o_t.
class PastFutureHead {
 public:
  // capsule_width is (n_past + n_future + n_redundant) * D_c, or 0 for the
  // plain transformer head.
  PastFutureHead(std::size_t d_model, std::size_t capsule_width, std::size_t vocab, ParamStore& store,
                 CounterRng& init, const std::string& prefix = "head");

  std::size_t capsule_width() const { return capsule_width_; }

  // z[T,d], capsules[T, capsule_width] flattened in capsule index order.
  Tensor holistic_context(Tape& tape, const Tensor& z, const Tensor& capsules) const;
  Tensor logits(Tape& tape, const Tensor& o) const;
  Tensor output_distribution(Tape& tape, const Tensor& o) const;

 private:
  const ParamStore* store_;
  std::size_t d_model_, capsule_width_;
  std::size_t w_o_ = 0, b_o_ = 0, w_out_, b_out_;
};

}  // namespace dualpf
