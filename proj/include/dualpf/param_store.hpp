#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dualpf/rng.hpp"
#include "dualpf/tensor.hpp"

namespace dualpf {

// Named learnable tensors of one model. Ids are assigned in insertion order;
// ordered() walks names lexicographically, which is the canonical order for
// checkpoints and reductions.
class ParamStore {
 public:
  std::size_t add(const std::string& name, Shape shape, std::vector<double> values);
  std::size_t add_zeros(const std::string& name, Shape shape);
  // Xavier-uniform over the first and last extents of `shape`.
  std::size_t add_xavier(const std::string& name, Shape shape, CounterRng& rng);

  std::size_t size() const { return params_.size(); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t id(const std::string& name) const;
  const std::string& name(std::size_t id) const { return params_.at(id).name; }
  const Shape& shape(std::size_t id) const { return params_.at(id).shape; }

  std::span<const double> value(std::size_t id) const { return params_.at(id).value; }
  std::span<double> value_mut(std::size_t id) { return params_.at(id).value; }
  std::span<const double> grad(std::size_t id) const { return params_.at(id).grad; }
  std::span<double> grad_mut(std::size_t id) { return params_.at(id).grad; }

  void zero_grad();
  // Adds a detached gradient buffer (see Tape::param_grads).
  void accumulate(const GradBuffer& grads, double scale = 1.0);

  std::vector<std::size_t> ordered() const;
  std::size_t total_numel() const;

  // Rounds every value to the nearest binary32 so that float checkpoints
  // round-trip exactly.
  void round_to_f32();

 private:
  struct Param {
    std::string name;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
  };
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace dualpf
