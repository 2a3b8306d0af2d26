#include "l2f/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>

namespace l2f {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                              " and " + shape_str(b.shape()));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const char* expected) {
  throw std::invalid_argument(std::string(op) + ": got shape " + shape_str(a.shape()) +
                              ", expected " + expected);
}

void check_finite(const char* op, const Tensor& t) {
  if (!t.all_finite()) throw std::domain_error(std::string(op) + ": produced non-finite values");
}

Tensor map_tensor(const Tensor& a, const std::function<double(double)>& f) {
  Tensor out = Tensor::zeros(a.shape().empty() ? Shape{} : a.shape());
  for (Index i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

Value Value::param(Tensor t) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return Value(std::move(n));
}

Value Value::constant(Tensor t) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(t);
  n->op = "constant";
  return Value(std::move(n));
}

void Value::set_tensor(Tensor t) const {
  if (node_->backward) throw std::logic_error("set_tensor on a non-leaf node");
  if (!node_->value.same_shape(t)) shape_error("set_tensor", t, node_->value);
  node_->value = std::move(t);
}

Value make_node(Tensor value, std::vector<Value> parents, detail::BackwardFn backward,
                const char* op, double aux, std::array<Index, 2> iaux) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  n->backward = backward;
  n->op = op;
  n->aux = aux;
  n->iaux = iaux;
  for (const Value& p : parents) {
    if (p.requires_grad()) {
      n->requires_grad = true;
      break;
    }
  }
  n->parents = std::move(parents);
  return Value(std::move(n));
}

// ---- elementwise binary ----------------------------------------------------

namespace {

void bw_add(const Value& g, const Value& self, std::vector<Value>& pg) {
  const auto& ps = self.parents();
  pg.push_back(ps[0].requires_grad() ? g : Value());
  pg.push_back(ps[1].requires_grad() ? g : Value());
}

void bw_sub(const Value& g, const Value& self, std::vector<Value>& pg) {
  const auto& ps = self.parents();
  pg.push_back(ps[0].requires_grad() ? g : Value());
  pg.push_back(ps[1].requires_grad() ? neg(g) : Value());
}

void bw_mul(const Value& g, const Value& self, std::vector<Value>& pg) {
  const auto& ps = self.parents();
  pg.push_back(ps[0].requires_grad() ? mul(g, ps[1]) : Value());
  pg.push_back(ps[1].requires_grad() ? mul(g, ps[0]) : Value());
}

void bw_div(const Value& g, const Value& self, std::vector<Value>& pg) {
  const auto& ps = self.parents();
  pg.push_back(ps[0].requires_grad() ? div(g, ps[1]) : Value());
  pg.push_back(ps[1].requires_grad() ? neg(div(mul(g, self), ps[1])) : Value());
}

Tensor ew_result(const char* op, const Value& a, const Value& b) {
  if (!a.tensor().same_shape(b.tensor())) shape_error(op, a.tensor(), b.tensor());
  return Tensor::zeros(a.shape());
}

}  // namespace

Value add(const Value& a, const Value& b) {
  Tensor out = ew_result("add", a, b);
  out.array() = a.tensor().array() + b.tensor().array();
  return make_node(std::move(out), {a, b}, bw_add, "add");
}

Value sub(const Value& a, const Value& b) {
  Tensor out = ew_result("sub", a, b);
  out.array() = a.tensor().array() - b.tensor().array();
  return make_node(std::move(out), {a, b}, bw_sub, "sub");
}

Value mul(const Value& a, const Value& b) {
  Tensor out = ew_result("mul", a, b);
  out.array() = a.tensor().array() * b.tensor().array();
  return make_node(std::move(out), {a, b}, bw_mul, "mul");
}

Value div(const Value& a, const Value& b) {
  Tensor out = ew_result("div", a, b);
  out.array() = a.tensor().array() / b.tensor().array();
  check_finite("div", out);
  return make_node(std::move(out), {a, b}, bw_div, "div");
}

// ---- linear algebra --------------------------------------------------------

namespace {

void bw_matmul(const Value& g, const Value& self, std::vector<Value>& pg) {
  const auto& ps = self.parents();
  pg.push_back(ps[0].requires_grad() ? matmul(g, transpose(ps[1])) : Value());
  pg.push_back(ps[1].requires_grad() ? matmul(transpose(ps[0]), g) : Value());
}

void bw_transpose(const Value& g, const Value&, std::vector<Value>& pg) { pg.push_back(transpose(g)); }

void bw_reshape(const Value& g, const Value& self, std::vector<Value>& pg) {
  pg.push_back(reshape(g, self.parents()[0].shape()));
}

void bw_slice(const Value& g, const Value& self, std::vector<Value>& pg) {
  pg.push_back(embed(g, self.node()->iaux[0], self.parents()[0].tensor().size()));
}

void bw_embed(const Value& g, const Value& self, std::vector<Value>& pg) {
  pg.push_back(slice(g, self.node()->iaux[0], self.parents()[0].tensor().size()));
}

}  // namespace

Value matmul(const Value& a, const Value& b) {
  const Tensor& ta = a.tensor();
  const Tensor& tb = b.tensor();
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows()) shape_error("matmul", ta, tb);
  Tensor out = Tensor::zeros({ta.rows(), tb.cols()});
  out.matrix().noalias() = ta.matrix() * tb.matrix();
  return make_node(std::move(out), {a, b}, bw_matmul, "matmul");
}

Value transpose(const Value& a) {
  const Tensor& t = a.tensor();
  if (t.rank() != 2) shape_error("transpose", t, "rank-2");
  Tensor out = Tensor::zeros({t.cols(), t.rows()});
  out.matrix() = t.matrix().transpose();
  return make_node(std::move(out), {a}, bw_transpose, "transpose");
}

Value reshape(const Value& a, Shape shape) {
  return make_node(a.tensor().reshaped(std::move(shape)), {a}, bw_reshape, "reshape");
}

Value slice(const Value& a, Index offset, Index length) {
  const Tensor& t = a.tensor();
  if (t.rank() != 1 || offset < 0 || length <= 0 || offset + length > t.size()) {
    throw std::invalid_argument("slice: range [" + std::to_string(offset) + ", " +
                                std::to_string(offset + length) + ") out of bounds for " +
                                shape_str(t.shape()));
  }
  Tensor out = Tensor::zeros({length});
  out.array() = t.array().segment(offset, length);
  return make_node(std::move(out), {a}, bw_slice, "slice", 0.0, {offset, 0});
}

Value embed(const Value& a, Index offset, Index length) {
  const Tensor& t = a.tensor();
  if (t.rank() != 1 || offset < 0 || offset + t.size() > length) {
    throw std::invalid_argument("embed: source " + shape_str(t.shape()) + " at offset " +
                                std::to_string(offset) + " exceeds length " + std::to_string(length));
  }
  Tensor out = Tensor::zeros({length});
  out.array().segment(offset, t.size()) = t.array();
  return make_node(std::move(out), {a}, bw_embed, "embed", 0.0, {offset, 0});
}

// ---- broadcasts ------------------------------------------------------------

namespace {

void bw_scale(const Value& g, const Value& self, std::vector<Value>& pg) {
  pg.push_back(scale(g, self.node()->aux));
}

void bw_scalar_mul(const Value& g, const Value& self, std::vector<Value>& pg) {
  const auto& ps = self.parents();
  pg.push_back(ps[0].requires_grad() ? sum(mul(g, ps[1])) : Value());
  pg.push_back(ps[1].requires_grad() ? scalar_mul(ps[0], g) : Value());
}

void bw_scalar_add(const Value& g, const Value& self, std::vector<Value>& pg) {
  const auto& ps = self.parents();
  pg.push_back(ps[0].requires_grad() ? sum(g) : Value());
  pg.push_back(ps[1].requires_grad() ? g : Value());
}

void bw_add_bias(const Value& g, const Value& self, std::vector<Value>& pg) {
  const auto& ps = self.parents();
  pg.push_back(ps[0].requires_grad() ? g : Value());
  if (ps[1].requires_grad()) {
    Value ones_row = Value::constant(Tensor::ones({1, g.tensor().rows()}));
    pg.push_back(reshape(matmul(ones_row, g), {g.tensor().cols()}));
  } else {
    pg.push_back(Value());
  }
}

void bw_broadcast_scalar(const Value& g, const Value&, std::vector<Value>& pg) { pg.push_back(sum(g)); }

void bw_sum(const Value& g, const Value& self, std::vector<Value>& pg) {
  pg.push_back(broadcast_scalar(g, self.parents()[0].shape()));
}

}  // namespace

Value scale(const Value& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  out.array() = a.tensor().array() * c;
  return make_node(std::move(out), {a}, bw_scale, "scale", c);
}

Value neg(const Value& a) { return scale(a, -1.0); }

Value scalar_mul(const Value& s, const Value& a) {
  if (!s.tensor().is_scalar()) shape_error("scalar_mul", s.tensor(), "scalar");
  Tensor out = Tensor::zeros(a.shape());
  out.array() = a.tensor().array() * s.tensor().item();
  return make_node(std::move(out), {s, a}, bw_scalar_mul, "scalar_mul");
}

Value scalar_add(const Value& s, const Value& a) {
  if (!s.tensor().is_scalar()) shape_error("scalar_add", s.tensor(), "scalar");
  Tensor out = Tensor::zeros(a.shape());
  out.array() = a.tensor().array() + s.tensor().item();
  return make_node(std::move(out), {s, a}, bw_scalar_add, "scalar_add");
}

Value add_bias(const Value& x, const Value& b) {
  const Tensor& tx = x.tensor();
  const Tensor& tb = b.tensor();
  if (tx.rank() != 2 || tb.rank() != 1 || tb.size() != tx.cols()) shape_error("add_bias", tx, tb);
  Tensor out = Tensor::zeros(tx.shape());
  out.matrix() = tx.matrix().rowwise() + tb.matrix().row(0);
  return make_node(std::move(out), {x, b}, bw_add_bias, "add_bias");
}

Value broadcast_scalar(const Value& s, Shape shape) {
  if (!s.tensor().is_scalar()) shape_error("broadcast_scalar", s.tensor(), "scalar");
  return make_node(Tensor::full(std::move(shape), s.tensor().item()), {s}, bw_broadcast_scalar,
                   "broadcast_scalar");
}

Value sum(const Value& a) {
  return make_node(Tensor::scalar(a.tensor().array().sum()), {a}, bw_sum, "sum");
}

Value mean(const Value& a) { return scale(sum(a), 1.0 / static_cast<double>(a.tensor().size())); }

// ---- nonlinearities --------------------------------------------------------

namespace {

void bw_relu(const Value& g, const Value& self, std::vector<Value>& pg) {
  Tensor mask = map_tensor(self.parents()[0].tensor(), [](double v) { return v > 0.0 ? 1.0 : 0.0; });
  pg.push_back(mul(g, Value::constant(std::move(mask))));
}

void bw_sigmoid(const Value& g, const Value& self, std::vector<Value>& pg) {
  Value one = Value::constant(Tensor::ones(self.shape().empty() ? Shape{} : self.shape()));
  pg.push_back(mul(g, mul(self, sub(one, self))));
}

void bw_sin(const Value& g, const Value& self, std::vector<Value>& pg) {
  pg.push_back(mul(g, cos(self.parents()[0])));
}

void bw_cos(const Value& g, const Value& self, std::vector<Value>& pg) {
  pg.push_back(neg(mul(g, sin(self.parents()[0]))));
}

void bw_exp(const Value& g, const Value& self, std::vector<Value>& pg) { pg.push_back(mul(g, self)); }

void bw_log(const Value& g, const Value& self, std::vector<Value>& pg) {
  pg.push_back(div(g, self.parents()[0]));
}

void bw_sqrt(const Value& g, const Value& self, std::vector<Value>& pg) {
  pg.push_back(div(scale(g, 0.5), self));
}

void bw_abs(const Value& g, const Value& self, std::vector<Value>& pg) {
  Tensor sgn = map_tensor(self.parents()[0].tensor(),
                          [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
  pg.push_back(mul(g, Value::constant(std::move(sgn))));
}

void bw_acos(const Value& g, const Value& self, std::vector<Value>& pg) {
  const Value& a = self.parents()[0];
  Value one = Value::constant(Tensor::ones(a.shape().empty() ? Shape{} : a.shape()));
  pg.push_back(neg(div(g, sqrt(sub(one, mul(a, a))))));
}

Tensor unary_result(const Value& a) { return Tensor::zeros(a.shape()); }

}  // namespace

Value relu(const Value& a) {
  Tensor out = unary_result(a);
  out.array() = a.tensor().array().max(0.0);
  return make_node(std::move(out), {a}, bw_relu, "relu");
}

Value sigmoid(const Value& a) {
  Tensor out = unary_result(a);
  out.array() = 1.0 / (1.0 + (-a.tensor().array()).exp());
  return make_node(std::move(out), {a}, bw_sigmoid, "sigmoid");
}

Value sin(const Value& a) {
  Tensor out = unary_result(a);
  out.array() = a.tensor().array().sin();
  return make_node(std::move(out), {a}, bw_sin, "sin");
}

Value cos(const Value& a) {
  Tensor out = unary_result(a);
  out.array() = a.tensor().array().cos();
  return make_node(std::move(out), {a}, bw_cos, "cos");
}

Value exp(const Value& a) {
  Tensor out = unary_result(a);
  out.array() = a.tensor().array().exp();
  check_finite("exp", out);
  return make_node(std::move(out), {a}, bw_exp, "exp");
}

Value log(const Value& a) {
  Tensor out = unary_result(a);
  out.array() = a.tensor().array().log();
  check_finite("log", out);
  return make_node(std::move(out), {a}, bw_log, "log");
}

Value sqrt(const Value& a) {
  Tensor out = unary_result(a);
  out.array() = a.tensor().array().sqrt();
  check_finite("sqrt", out);
  return make_node(std::move(out), {a}, bw_sqrt, "sqrt");
}

Value abs(const Value& a) {
  Tensor out = unary_result(a);
  out.array() = a.tensor().array().abs();
  return make_node(std::move(out), {a}, bw_abs, "abs");
}

Value acos(const Value& a) {
  Tensor out = unary_result(a);
  out.array() = a.tensor().array().acos();
  check_finite("acos", out);
  return make_node(std::move(out), {a}, bw_acos, "acos");
}

// ---- composites ------------------------------------------------------------

Value square(const Value& a) { return mul(a, a); }

Value dot(const Value& a, const Value& b) { return sum(mul(a, b)); }

Value norm(const Value& a) { return sqrt(sum(square(a))); }

Value squared_error(const Value& pred, const Value& target) {
  if (!pred.tensor().same_shape(target.tensor())) {
    shape_error("squared_error", pred.tensor(), target.tensor());
  }
  return mean(square(sub(pred, target)));
}

Value element(const Value& v, Index i) { return reshape(slice(v, i, 1), {}); }

Value stack_scalars(const std::vector<Value>& scalars) {
  if (scalars.empty()) throw std::invalid_argument("stack_scalars: empty input");
  const Index n = static_cast<Index>(scalars.size());
  Value out;
  for (Index i = 0; i < n; ++i) {
    if (!scalars[static_cast<size_t>(i)].tensor().is_scalar()) {
      shape_error("stack_scalars", scalars[static_cast<size_t>(i)].tensor(), "scalar");
    }
    Value piece = embed(reshape(scalars[static_cast<size_t>(i)], {1}), i, n);
    out = out.defined() ? add(out, piece) : piece;
  }
  return out;
}

Value softmax_cross_entropy(const Value& logits, const std::vector<int>& labels) {
  const Tensor& t = logits.tensor();
  if (t.rank() != 2) shape_error("softmax_cross_entropy", t, "rank-2 [batch x classes]");
  const Index batch = t.rows();
  const Index classes = t.cols();
  if (static_cast<Index>(labels.size()) != batch) {
    throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                " labels for batch " + std::to_string(batch));
  }
  Tensor row_max = Tensor::zeros({batch, 1});
  Tensor onehot = Tensor::zeros({batch, classes});
  for (Index i = 0; i < batch; ++i) {
    int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= classes) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(y) +
                                  " outside [0, " + std::to_string(classes) + ")");
    }
    onehot.at(i, y) = 1.0;
    row_max.at(i, 0) = t.matrix().row(i).maxCoeff();
  }
  // Row max is a detached shift: logsumexp(x) = m + log sum exp(x - m) holds
  // for any constant m, so gradients stay exact.
  Value shift = matmul(Value::constant(row_max), Value::constant(Tensor::ones({1, classes})));
  Value ones_col = Value::constant(Tensor::ones({classes, 1}));
  Value lse = add(log(matmul(exp(sub(logits, shift)), ones_col)), Value::constant(row_max));
  Value picked = matmul(mul(logits, Value::constant(onehot)), ones_col);
  return mean(sub(lse, picked));
}

// ---- reverse pass ----------------------------------------------------------

namespace {

// Post-order over parent edges restricted to grad-requiring nodes. Reversed,
// it is a topological order where every user precedes the nodes it reads.
std::vector<Value> topo_order(const Value& output) {
  struct Frame {
    Value v;
    size_t next = 0;
  };
  std::vector<Value> order;
  std::vector<Frame> stack;
  std::unordered_set<detail::Node*> seen;
  stack.push_back({output});
  seen.insert(output.node());
  while (!stack.empty()) {
    Frame& top = stack.back();
    const auto& parents = top.v.node()->parents;
    bool descended = false;
    while (top.next < parents.size()) {
      Value p = parents[top.next++];
      if (p.requires_grad() && !seen.count(p.node())) {
        seen.insert(p.node());
        stack.push_back({std::move(p)});
        descended = true;
        break;
      }
    }
    if (descended) continue;
    order.push_back(stack.back().v);
    stack.pop_back();
  }
  return order;
}

}  // namespace

std::vector<Value> grad(const Value& output, const std::vector<Value>& wrt, bool create_graph) {
  if (!output.defined()) throw std::invalid_argument("grad: undefined output");
  if (!output.tensor().is_scalar()) shape_error("grad", output.tensor(), "scalar output");

  std::unordered_map<detail::Node*, Value> adjoint;
  if (output.requires_grad()) {
    std::vector<Value> order = topo_order(output);
    adjoint[output.node()] = Value::constant(Tensor::scalar(1.0));
    std::vector<Value> parent_grads;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const Value& v = *it;
      detail::Node* n = v.node();
      if (!n->backward) continue;
      auto found = adjoint.find(n);
      if (found == adjoint.end()) continue;
      Value g = found->second;
      parent_grads.clear();
      n->backward(g, v, parent_grads);
      for (size_t i = 0; i < n->parents.size(); ++i) {
        const Value& p = n->parents[i];
        if (!p.requires_grad() || !parent_grads[i].defined()) continue;
        Value pg = create_graph ? parent_grads[i] : parent_grads[i].detach();
        Value& slot = adjoint[p.node()];
        slot = slot.defined() ? add(slot, pg) : pg;
      }
    }
  }

  std::vector<Value> result;
  result.reserve(wrt.size());
  for (const Value& w : wrt) {
    auto found = adjoint.find(w.node());
    if (found == adjoint.end()) {
      result.push_back(Value::constant(Tensor::zeros(w.shape())));
    } else {
      result.push_back(create_graph ? found->second : found->second.detach());
    }
  }
  return result;
}

double finite_difference_check(const std::function<Value(const std::vector<Value>&)>& f,
                               const std::vector<Tensor>& point, double epsilon) {
  if (epsilon <= 0.0) throw std::invalid_argument("finite_difference_check: epsilon must be > 0");

  // Leaves require grad even for plain evaluation: f may differentiate
  // internally (a meta-objective does), and that inner gradient must see
  // the perturbed leaves as variables.
  auto eval = [&f](const std::vector<Tensor>& at) {
    std::vector<Value> leaves;
    leaves.reserve(at.size());
    for (const Tensor& t : at) leaves.push_back(Value::param(t));
    double v = f(leaves).item();
    if (!std::isfinite(v)) {
      throw std::runtime_error("finite_difference_check: function non-finite near point");
    }
    return v;
  };

  std::vector<Value> leaves;
  leaves.reserve(point.size());
  for (const Tensor& t : point) leaves.push_back(Value::param(t));
  Value out = f(leaves);
  if (!std::isfinite(out.item())) {
    throw std::runtime_error("finite_difference_check: function non-finite at point");
  }
  std::vector<Value> analytic = grad(out, leaves, false);

  double max_rel = 0.0;
  std::vector<Tensor> probe = point;
  for (size_t i = 0; i < point.size(); ++i) {
    for (Index j = 0; j < point[i].size(); ++j) {
      const double saved = probe[i][j];
      probe[i][j] = saved + epsilon;
      const double fp = eval(probe);
      probe[i][j] = saved - epsilon;
      const double fm = eval(probe);
      probe[i][j] = saved;
      const double numeric = (fp - fm) / (2.0 * epsilon);
      const double ana = analytic[i].tensor()[j];
      const double denom = std::max({std::fabs(ana), std::fabs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::fabs(ana - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace l2f
