#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Var is a handle to a node in an acyclic computation graph. Ops build new
// nodes from existing ones; backward() on a scalar root walks the graph in
// reverse topological order and accumulates d(root)/d(node) into every node
// that requires gradients. Graphs are single-threaded; independent graphs may
// run concurrently. Inside a NoGradGuard scope ops record no parents, so
// intermediates are released as soon as their handles go out of scope.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "datt/tensor.hpp"

namespace datt::ag {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;
  bool backward_done = false;

  // Returns the gradient buffer, zero-filled on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient of the last backward root; zeros if nothing flowed here.
  Tensor grad() const;

  // Leaf-only mutation (parameter updates, finite-difference probes).
  Tensor& mutable_value();
  void zero_grad();

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& shared() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Leaf that accumulates gradients.
Var parameter(Tensor value);
// Leaf that never requires gradients.
Var constant(Tensor value);

bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Accumulates d(root)/d(node) for every gradient-requiring node reachable
// from root. Root must hold exactly one value. Calling twice on the same root
// without reset_graph_grads() is a ContractError.
void backward(const Var& root);
// Clears gradients of every node reachable from root and re-arms backward.
void reset_graph_grads(const Var& root);

// ---- ops -------------------------------------------------------------------

// [.., m, k] x [.., k, n] with identical batch extents, or [.., m, k] x [k, n]
// where the rank-2 right operand is shared by every batch entry.
Var matmul(const Var& a, const Var& b);
// x[.., in] * weight[out, in]^T + bias[out]. bias may be undefined.
Var linear(const Var& x, const Var& weight, const Var& bias = {});
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var relu(const Var& x);
Var softmax_lastdim(const Var& x);
// Affine normalisation over the last axis; gain and bias have that extent.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps);
// Mean over one axis, which is removed from the result.
Var mean_axis(const Var& x, int axis);
Var sum_all(const Var& x);
// Sum over the last axis, kept as extent 1.
Var sum_lastdim(const Var& x);
// [.., 1] -> [.., n] by repetition.
Var broadcast_lastdim(const Var& x, std::size_t n);
Var concat_lastdim(const Var& a, const Var& b);
// Stacks equally shaped tensors along a new leading axis.
Var stack(std::span<const Var> parts);
Var slice(const Var& x, int axis, std::size_t begin, std::size_t end);
Var permute(const Var& x, std::span<const std::size_t> perm);
Var permute(const Var& x, std::initializer_list<std::size_t> perm);
Var reshape(const Var& x, Shape shape);
// Mean squared error against a constant target with the same element count.
Var mse_loss(const Var& prediction, const Tensor& target);

}  // namespace datt::ag
