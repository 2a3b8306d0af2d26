#pragma once

#include <array>
#include <functional>
#include <memory>
#include <vector>

#include "l2f/tensor.hpp"

namespace l2f {

class Value;

namespace detail {

using BackwardFn = void (*)(const Value& grad_out, const Value& self, std::vector<Value>& parent_grads);

struct Node {
  Tensor value;
  std::vector<Value> parents;
  BackwardFn backward = nullptr;
  const char* op = "leaf";
  bool requires_grad = false;
  double aux = 0.0;             // op-specific scalar (scale factor, ...)
  std::array<Index, 2> iaux{};  // op-specific indices (slice offset, ...)
};

}  // namespace detail

/// Handle to one node of a differentiable computation graph. Graphs are
/// acyclic and built bottom-up by the op suite below; backward rules emit
/// graph operations themselves, so gradients returned by grad() with
/// create_graph=true are valid inputs for further differentiation.
///
/// There is no global tape: a graph's state lives entirely in its nodes, so
/// distinct graphs can be built and differentiated from distinct threads.
/// A single graph is not synchronized.
class Value {
 public:
  Value() = default;

  /// Leaf that participates in differentiation.
  static Value param(Tensor t);
  /// Leaf treated as a constant.
  static Value constant(Tensor t);
  static Value constant(double v) { return constant(Tensor::scalar(v)); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& tensor() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  double item() const { return node_->value.item(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const char* op() const { return node_->op; }
  const std::vector<Value>& parents() const { return node_->parents; }

  /// Same values, detached from the graph.
  Value detach() const { return constant(node_->value); }

  /// In-place overwrite of a leaf's payload; used by optimizers between
  /// iterations, never while a graph referencing the leaf is still alive.
  /// Mutates the shared node, so it is callable through const handles.
  void set_tensor(Tensor t) const;

  detail::Node* node() const { return node_.get(); }

  friend Value make_node(Tensor value, std::vector<Value> parents, detail::BackwardFn backward,
                         const char* op, double aux, std::array<Index, 2> iaux);

 private:
  explicit Value(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

Value make_node(Tensor value, std::vector<Value> parents, detail::BackwardFn backward,
                const char* op, double aux = 0.0, std::array<Index, 2> iaux = {});

// ---- op suite -------------------------------------------------------------
// Elementwise ops require identical shapes; the only broadcasts are bias-add,
// scalar-node ops and broadcast_scalar. Anything else is a shape error.

Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);

Value matmul(const Value& a, const Value& b);
Value transpose(const Value& a);
Value reshape(const Value& a, Shape shape);
Value slice(const Value& a, Index offset, Index length);
Value embed(const Value& a, Index offset, Index length);  // adjoint of slice

Value scale(const Value& a, double c);
Value neg(const Value& a);
Value scalar_mul(const Value& s, const Value& a);  // scalar node * tensor
Value scalar_add(const Value& s, const Value& a);  // scalar node + tensor
Value add_bias(const Value& x, const Value& b);    // [r x c] + row-broadcast [c]
Value broadcast_scalar(const Value& s, Shape shape);

Value sum(const Value& a);
Value mean(const Value& a);

Value relu(const Value& a);
Value sigmoid(const Value& a);
Value sin(const Value& a);
Value cos(const Value& a);
Value exp(const Value& a);
Value log(const Value& a);
Value sqrt(const Value& a);
Value abs(const Value& a);
Value acos(const Value& a);

Value square(const Value& a);
Value dot(const Value& a, const Value& b);
Value norm(const Value& a);
Value squared_error(const Value& pred, const Value& target);  // mean of squared residuals
Value element(const Value& v, Index i);
Value stack_scalars(const std::vector<Value>& scalars);

/// Mean cross-entropy of row-wise softmax(logits) against integer labels.
/// logits: [batch x classes]; labels: one class id per row.
Value softmax_cross_entropy(const Value& logits, const std::vector<int>& labels);

// ---- differentiation ------------------------------------------------------

/// Reverse-mode gradient of a scalar `output` with respect to each entry of
/// `wrt`. Returns one Value per entry, shaped like it. Nodes unreachable from
/// `output` get a zero gradient. With create_graph=true the results stay
/// connected to the graph and can be differentiated again; with false they
/// are detached constants (same numbers either way).
std::vector<Value> grad(const Value& output, const std::vector<Value>& wrt, bool create_graph);

/// Central-difference check of grad() against a scalar function of leaf
/// tensors. Returns the max relative error over all components, with
/// denominator max(|analytic|, |numeric|, 1e-8). Throws if the function is
/// non-finite near the point.
double finite_difference_check(const std::function<Value(const std::vector<Value>&)>& f,
                               const std::vector<Tensor>& point, double epsilon = 1e-5);

}  // namespace l2f
