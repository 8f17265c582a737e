#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace dualpf {

class ParamStore;
class Tape;

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : dims_(dims) {}
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {}

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : dims_) n *= d;
    return n;
  }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::string str() const;

  bool operator==(const Shape&) const = default;

 private:
  std::vector<std::size_t> dims_;
};

// Handle to one node of a Tape. Cheap to copy; valid while its tape lives.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t node_id() const { return id_; }

  const Shape& shape() const;
  std::size_t numel() const { return shape().numel(); }
  std::span<const double> data() const;
  // Empty until backward has reached this node.
  std::span<const double> grad() const;
  bool requires_grad() const;
  double item() const;
  std::vector<double> to_vector() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Per-parameter gradients detached from a tape; empty entries mean zero.
using GradBuffer = std::vector<std::vector<double>>;

// Records operations in execution order and replays them backwards once.
// Values are either owned by the node or borrowed from a ParamStore.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Tensor constant(Shape shape, std::vector<double> values);
  Tensor variable(Shape shape, std::vector<double> values);
  Tensor param(const ParamStore& store, std::size_t param_id);
  Tensor param(const ParamStore& store, const std::string& name);

  // Runs the reverse sweep from a scalar loss. A tape supports one sweep.
  void backward(const Tensor& loss);
  bool backward_done() const { return backward_done_; }

  // Gradients of every parameter of `store` touched on this tape.
  GradBuffer param_grads(const ParamStore& store) const;
  // Adds this tape's parameter gradients into the store's gradient slots.
  void accumulate_param_grads(ParamStore& store) const;

  // --- interface used by op implementations ---
  Tensor record(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs, BackwardFn fn);
  Tensor record(Shape shape, std::vector<double> values, std::span<const Tensor> inputs, BackwardFn fn);

  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  std::span<const double> value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.borrowed ? std::span<const double>(n.borrowed, n.shape.numel()) : std::span<const double>(n.owned);
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty() || nodes_[id].shape.numel() == 0; }
  std::span<const double> grad(std::size_t id) const { return nodes_[id].grad; }
  // Zero-initialized on first access. Only valid for requires-grad nodes.
  std::span<double> grad_mut(std::size_t id);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    std::vector<double> owned;
    const double* borrowed = nullptr;
    std::vector<double> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const ParamStore*, std::vector<std::ptrdiff_t>> param_nodes_;
  bool grad_enabled_ = true;
  bool backward_done_ = false;
};

}  // namespace dualpf
