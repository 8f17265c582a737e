#include "dualpf/param_store.hpp"

#include <algorithm>
#include <cmath>

#include "dualpf/errors.hpp"

namespace dualpf {

std::size_t ParamStore::add(const std::string& name, Shape shape, std::vector<double> values) {
  if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
  if (values.size() != shape.numel())
    throw DimensionError("parameter '" + name + "': " + std::to_string(values.size()) + " values for shape " +
                         shape.str());
  const std::size_t id = params_.size();
  Param p{name, std::move(shape), std::move(values), {}};
  p.grad.assign(p.value.size(), 0.0);
  params_.push_back(std::move(p));
  index_.emplace(name, id);
  return id;
}

std::size_t ParamStore::add_zeros(const std::string& name, Shape shape) {
  const auto n = shape.numel();
  return add(name, std::move(shape), std::vector<double>(n, 0.0));
}

std::size_t ParamStore::add_xavier(const std::string& name, Shape shape, CounterRng& rng) {
  const std::size_t fan_in = shape.rank() ? shape[0] : 1;
  const std::size_t fan_out = shape.rank() ? shape[shape.rank() - 1] : 1;
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(shape.numel());
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return add(name, std::move(shape), std::move(v));
}

std::size_t ParamStore::id(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

void ParamStore::accumulate(const GradBuffer& grads, double scale) {
  if (grads.size() != params_.size()) throw DimensionError("gradient buffer does not match parameter store");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].empty()) continue;
    auto& g = params_[i].grad;
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += scale * grads[i][k];
  }
}

std::vector<std::size_t> ParamStore::ordered() const {
  std::vector<std::size_t> ids;
  ids.reserve(index_.size());
  for (const auto& [name, id] : index_) ids.push_back(id);
  return ids;
}

std::size_t ParamStore::total_numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamStore::round_to_f32() {
  for (auto& p : params_)
    for (auto& x : p.value) x = static_cast<double>(static_cast<float>(x));
}

}  // namespace dualpf
