#include "dualpf/head.hpp"

#include "dualpf/errors.hpp"

namespace dualpf {

PastFutureHead::PastFutureHead(std::size_t d_model, std::size_t capsule_width, std::size_t vocab, ParamStore& store,
                               CounterRng& init, const std::string& prefix)
    : store_(&store), d_model_(d_model), capsule_width_(capsule_width) {
  if (capsule_width_ > 0) {
    w_o_ = store.add_xavier(prefix + ".W_o", Shape{d_model + capsule_width, d_model}, init);
    b_o_ = store.add_zeros(prefix + ".b_o", Shape{d_model});
  }
  w_out_ = store.add_xavier(prefix + ".W_out", Shape{d_model, vocab}, init);
  b_out_ = store.add_zeros(prefix + ".b_out", Shape{vocab});
}

Tensor PastFutureHead::holistic_context(Tape& tape, const Tensor& z, const Tensor& capsules) const {
  if (capsule_width_ == 0) return z;
  if (z.shape().rank() != 2 || z.shape()[1] != d_model_ || capsules.shape() != Shape{z.shape()[0], capsule_width_})
    throw DimensionError("holistic_context: z " + z.shape().str() + " with capsules " + capsules.shape().str() +
                         ", expected width " + std::to_string(capsule_width_));
  Tensor joined = concat({z, capsules}, 1);
  return add(linear(joined, tape.param(*store_, w_o_), tape.param(*store_, b_o_)), z);
}

Tensor PastFutureHead::logits(Tape& tape, const Tensor& o) const {
  return linear(o, tape.param(*store_, w_out_), tape.param(*store_, b_out_));
}

Tensor PastFutureHead::output_distribution(Tape& tape, const Tensor& o) const { return softmax(logits(tape, o), 1); }

}  // namespace dualpf
