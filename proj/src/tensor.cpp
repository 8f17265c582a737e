#include "dualpf/tensor.hpp"

#include <sstream>

#include "dualpf/errors.hpp"
#include "dualpf/param_store.hpp"

namespace dualpf {

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
  os << ']';
  return os.str();
}

const Shape& Tensor::shape() const { return tape_->shape(id_); }
std::span<const double> Tensor::data() const { return tape_->value(id_); }
std::span<const double> Tensor::grad() const { return tape_->grad(id_); }
bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape().str());
  return data()[0];
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

Tensor Tape::constant(Shape shape, std::vector<double> values) {
  if (values.size() != shape.numel())
    throw DimensionError("constant: " + std::to_string(values.size()) + " values for shape " + shape.str());
  Node n;
  n.shape = std::move(shape);
  n.owned = std::move(values);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Tensor Tape::variable(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  nodes_.back().requires_grad = grad_enabled_;
  return t;
}

Tensor Tape::param(const ParamStore& store, std::size_t param_id) {
  auto& slots = param_nodes_[&store];
  if (slots.size() < store.size()) slots.resize(store.size(), -1);
  if (slots[param_id] >= 0) return {this, static_cast<std::size_t>(slots[param_id])};
  Node n;
  n.shape = store.shape(param_id);
  n.borrowed = store.value(param_id).data();
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  slots[param_id] = static_cast<std::ptrdiff_t>(nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Tensor Tape::param(const ParamStore& store, const std::string& name) { return param(store, store.id(name)); }

Tensor Tape::record(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs, BackwardFn fn) {
  return record(std::move(shape), std::move(values), std::span<const Tensor>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Tensor Tape::record(Shape shape, std::vector<double> values, std::span<const Tensor> inputs, BackwardFn fn) {
  bool needs = false;
  if (grad_enabled_)
    for (const auto& in : inputs) needs = needs || nodes_[in.node_id()].requires_grad;
  Node n;
  n.shape = std::move(shape);
  n.owned = std::move(values);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

std::span<double> Tape::grad_mut(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.shape.numel(), 0.0);
  return n.grad;
}

void Tape::backward(const Tensor& loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  if (backward_done_) throw ContractError("backward: tape already consumed by a previous backward pass");
  if (loss.numel() != 1) throw ContractError("backward: loss must be scalar, got shape " + loss.shape().str());
  backward_done_ = true;
  const std::size_t root = loss.node_id();
  if (!nodes_[root].requires_grad) return;
  grad_mut(root)[0] = 1.0;
  for (std::size_t id = root + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
}

GradBuffer Tape::param_grads(const ParamStore& store) const {
  GradBuffer out(store.size());
  auto it = param_nodes_.find(&store);
  if (it == param_nodes_.end()) return out;
  for (std::size_t p = 0; p < it->second.size(); ++p) {
    const auto node = it->second[p];
    if (node >= 0 && !nodes_[node].grad.empty()) out[p] = nodes_[node].grad;
  }
  return out;
}

void Tape::accumulate_param_grads(ParamStore& store) const { store.accumulate(param_grads(store)); }

}  // namespace dualpf
