#include "l2f/meta.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace l2f {

std::string to_string(Order o) { return o == Order::First ? "first" : "second"; }

std::string to_string(Method m) {
  switch (m) {
    case Method::Maml: return "maml";
    case Method::L2f: return "l2f";
    case Method::LearnedScope: return "learned-scope";
  }
  return "?";
}

Order order_from_string(const std::string& s) {
  if (s == "first") return Order::First;
  if (s == "second") return Order::Second;
  throw std::invalid_argument("unknown order '" + s + "'");
}

Method method_from_string(const std::string& s) {
  if (s == "maml") return Method::Maml;
  if (s == "l2f") return Method::L2f;
  if (s == "learned-scope") return Method::LearnedScope;
  throw std::invalid_argument("unknown method '" + s + "'");
}

void MetaConfig::validate() const {
  if (!(inner_lr > 0.0)) throw std::invalid_argument("config: inner_lr must be > 0");
  if (!(meta_lr > 0.0)) throw std::invalid_argument("config: meta_lr must be > 0");
  if (inner_steps_train < 0) throw std::invalid_argument("config: inner_steps_train must be >= 0");
  if (meta_batch_size < 1) throw std::invalid_argument("config: meta_batch_size must be >= 1");
  if (iterations < 0) throw std::invalid_argument("config: iterations must be >= 0");
  if (inner_steps_eval.empty()) throw std::invalid_argument("config: inner_steps_eval is empty");
  for (int s : inner_steps_eval) {
    if (s < 0) throw std::invalid_argument("config: inner_steps_eval entries must be >= 0");
  }
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
    throw std::invalid_argument("config: adam betas must lie in (0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw std::invalid_argument("config: adam_epsilon must be > 0");
  if (force_identity_gamma && method != Method::L2f) {
    throw std::invalid_argument("config: force_identity_gamma requires method l2f");
  }
  if (method != Method::Maml && scope == Scope::None) {
    throw std::invalid_argument("config: method " + to_string(method) + " requires a scope");
  }
  if (transform == Transform::Affine && scope != Scope::Layer) {
    throw std::invalid_argument("config: affine transform requires layer scope");
  }
}

namespace {

std::string divergence_message(const std::string& context, long iteration, long task_index,
                               int inner_step) {
  std::string msg = "non-finite loss (" + context + ")";
  if (iteration >= 0) msg += " at iteration " + std::to_string(iteration);
  if (task_index >= 0) msg += ", task " + std::to_string(task_index);
  if (inner_step >= 0) msg += ", inner step " + std::to_string(inner_step);
  return msg;
}

}  // namespace

TrainingDivergence::TrainingDivergence(const std::string& context_, long iteration_,
                                       long task_index_, int inner_step_)
    : std::runtime_error(divergence_message(context_, iteration_, task_index_, inner_step_)),
      context(context_),
      iteration(iteration_),
      task_index(task_index_),
      inner_step(inner_step_) {}

LossFn make_network_loss(const TaskNetwork& net) {
  TaskNetwork arch = net;  // copies sizes/head; params are ignored here
  return [arch](const LayeredParams& params, const MetaTask& task, bool on_query) {
    const Tensor& x = on_query ? task.query_x : task.support_x;
    Value pred = forward(arch, params, Value::constant(x));
    if (arch.head == Head::Regression) {
      const Tensor& y = on_query ? task.query_y : task.support_y;
      return squared_error(pred, Value::constant(y));
    }
    const std::vector<int>& labels = on_query ? task.query_labels : task.support_labels;
    return softmax_cross_entropy(pred, labels);
  };
}

namespace {

std::vector<Index> sizes_of(const LayeredParams& theta) {
  std::vector<Index> sizes;
  sizes.push_back(theta.layers.front().weight.tensor().cols());
  for (const Layer& l : theta.layers) sizes.push_back(l.weight.tensor().rows());
  return sizes;
}

// Scale one layer by the slice of gamma (and delta) covering it.
Layer modulate_layer(const Layer& layer, const ModulationParams& mod, Index layer_index,
                     Index group_offset) {
  const Tensor& w = layer.weight.tensor();
  Layer out;
  switch (mod.scope) {
    case Scope::Network: {
      Value g = element(mod.gamma, 0);
      out = {scalar_mul(g, layer.weight), scalar_mul(g, layer.bias)};
      break;
    }
    case Scope::Layer: {
      Value g = element(mod.gamma, layer_index);
      out = {scalar_mul(g, layer.weight), scalar_mul(g, layer.bias)};
      if (mod.delta.defined()) {
        Value d = element(mod.delta, layer_index);
        out = {scalar_add(d, out.weight), scalar_add(d, out.bias)};
      }
      break;
    }
    case Scope::Filter: {
      Value g = slice(mod.gamma, group_offset, w.rows());
      Value col = reshape(g, {w.rows(), 1});
      Value spread = matmul(col, Value::constant(Tensor::ones({1, w.cols()})));
      out = {mul(layer.weight, spread), mul(layer.bias, g)};
      break;
    }
    case Scope::Parameter: {
      Value gw = reshape(slice(mod.gamma, group_offset, w.size()), w.shape());
      Value gb = slice(mod.gamma, group_offset + w.size(), layer.bias.tensor().size());
      out = {mul(layer.weight, gw), mul(layer.bias, gb)};
      break;
    }
    case Scope::None:
      out = layer;
      break;
  }
  return out;
}

Index group_stride(Scope scope, const Layer& layer) {
  switch (scope) {
    case Scope::Filter: return layer.weight.tensor().rows();
    case Scope::Parameter: return layer.weight.tensor().size() + layer.bias.tensor().size();
    default: return 0;
  }
}

}  // namespace

LayeredParams attenuate(const LayeredParams& theta, const ModulationParams& mod) {
  if (mod.scope == Scope::None) return theta;
  if (!mod.gamma.defined()) throw std::invalid_argument("attenuate: undefined gamma");
  const Index expected = scope_group_count(mod.scope, sizes_of(theta));
  if (mod.gamma.tensor().size() != expected) {
    throw std::invalid_argument("attenuate: gamma has " +
                                std::to_string(mod.gamma.tensor().size()) + " groups, scope " +
                                to_string(mod.scope) + " expects " + std::to_string(expected));
  }
  if (mod.delta.defined() && mod.scope != Scope::Layer) {
    throw std::invalid_argument("attenuate: delta is only supported at layer scope");
  }
  LayeredParams out;
  out.layers.reserve(theta.layers.size());
  Index offset = 0;
  for (size_t j = 0; j < theta.layers.size(); ++j) {
    out.layers.push_back(
        modulate_layer(theta.layers[j], mod, static_cast<Index>(j), offset));
    offset += group_stride(mod.scope, theta.layers[j]);
  }
  return out;
}

AdaptedParams inner_adapt(const LossFn& loss, const LayeredParams& start, const MetaTask& task,
                          int steps, double alpha, Order order) {
  if (steps < 0) throw std::invalid_argument("inner_adapt: steps must be >= 0");
  AdaptedParams out;
  out.params = start;
  out.loss_trace.reserve(static_cast<size_t>(steps) + 1);
  for (int s = 0; s < steps; ++s) {
    Value support = loss(out.params, task, false);
    const double lv = support.item();
    if (!std::isfinite(lv)) throw TrainingDivergence("inner adaptation", -1, -1, s);
    out.loss_trace.push_back(lv);
    std::vector<Value> flat = out.params.flat();
    std::vector<Value> grads = grad(support, flat, order == Order::Second);
    std::vector<Value> next;
    next.reserve(flat.size());
    for (size_t i = 0; i < flat.size(); ++i) {
      next.push_back(sub(flat[i], scale(grads[i], alpha)));
    }
    out.params = params_from_flat(next);
  }
  // Trailing trace entry; evaluated on detached parameters so no graph is kept.
  const double final_loss = loss(out.params.detached(), task, false).item();
  if (!std::isfinite(final_loss)) throw TrainingDivergence("inner adaptation", -1, -1, steps);
  out.loss_trace.push_back(final_loss);
  return out;
}

std::vector<Value> MetaState::trainable() const {
  std::vector<Value> out = theta.flat();
  if (attenuator) {
    for (const Layer& l : attenuator->params.layers) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
  }
  if (learned_gamma.defined()) out.push_back(learned_gamma);
  return out;
}

MetaState init_meta_state(const MetaConfig& cfg, const std::vector<Index>& net_sizes, Head head) {
  cfg.validate();
  MetaState state;
  state.net_sizes = net_sizes;
  state.head = head;
  state.method = cfg.method;
  state.scope = cfg.scope;
  state.transform = cfg.transform;
  state.theta = init_layered_params(derive_seed(cfg.seed, "init.theta"), net_sizes);
  if (cfg.method == Method::L2f) {
    state.attenuator = init_attenuator(derive_seed(cfg.seed, "init.attenuator"), net_sizes,
                                       cfg.transform, cfg.scope);
    state.attenuator->force_identity = cfg.force_identity_gamma;
  } else if (cfg.method == Method::LearnedScope) {
    state.learned_gamma =
        Value::param(Tensor::ones({scope_group_count(cfg.scope, net_sizes)}));
  }
  return state;
}

TaskNetwork network_view(const MetaState& state) {
  TaskNetwork net;
  net.sizes = state.net_sizes;
  net.head = state.head;
  net.params = state.theta;
  return net;
}

namespace {

/// The starting point of fast adaptation for one task: theta itself for
/// maml, the modulated theta otherwise. Emits the modulation used.
LayeredParams adaptation_start(const MetaConfig& cfg, const MetaState& state, const LossFn& loss,
                               const MetaTask& task, std::optional<ModulationParams>& mod_out) {
  switch (state.method) {
    case Method::Maml:
      return state.theta;
    case Method::LearnedScope: {
      ModulationParams mod;
      mod.gamma = state.learned_gamma;
      mod.scope = state.scope;
      mod_out = mod;
      return attenuate(state.theta, mod);
    }
    case Method::L2f: {
      Value support = loss(state.theta, task, false);
      if (!std::isfinite(support.item())) throw TrainingDivergence("modulation gradient", -1, -1, -1);
      std::vector<Value> grads =
          grad(support, state.theta.flat(), cfg.order == Order::Second);
      Value summary = layerwise_grad_mean(pair_layer_grads(grads), cfg.abs_grad_summary);
      if (cfg.order == Order::First || getenv("L2F_DETACH_SUMMARY")) summary = summary.detach();
      ModulationParams mod = generate_gamma(*state.attenuator, summary);
      mod_out = mod;
      return attenuate(state.theta, mod);
    }
  }
  throw std::logic_error("adaptation_start: bad method");
}

}  // namespace

MetaBatchResult meta_loss(const MetaConfig& cfg, const MetaState& state, const LossFn& loss,
                          const std::vector<MetaTask>& batch) {
  if (batch.empty()) throw std::invalid_argument("meta_loss: empty task batch");
  if (state.method == Method::L2f && !state.attenuator) {
    throw std::invalid_argument("meta_loss: method l2f without an attenuator");
  }
  MetaBatchResult result;
  result.per_task.reserve(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    try {
      std::optional<ModulationParams> mod;
      LayeredParams start = adaptation_start(cfg, state, loss, batch[i], mod);
      AdaptedParams adapted =
          inner_adapt(loss, start, batch[i], cfg.inner_steps_train, cfg.inner_lr, cfg.order);
      adapted.gamma_used = std::move(mod);
      Value query = loss(adapted.params, batch[i], true);
      if (!std::isfinite(query.item())) throw TrainingDivergence("query loss", -1, -1, -1);
      result.loss = result.loss.defined() ? add(result.loss, query) : query;
      result.per_task.push_back(std::move(adapted));
    } catch (const TrainingDivergence& e) {
      throw TrainingDivergence(e.context, e.iteration, static_cast<long>(i), e.inner_step);
    }
  }
  return result;
}

Adam::Adam(double lr, double beta1, double beta2, double epsilon)
    : lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

void Adam::step(const std::vector<Value>& params, const std::vector<Value>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("Adam: param/grad count mismatch");
  if (m_.empty()) {
    for (const Value& p : params) {
      m_.push_back(Tensor::zeros(p.shape().empty() ? Shape{} : p.shape()));
      v_.push_back(Tensor::zeros(p.shape().empty() ? Shape{} : p.shape()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    const Eigen::ArrayXd& g = grads[i].tensor().array();
    m_[i].array() = beta1_ * m_[i].array() + (1.0 - beta1_) * g;
    v_[i].array() = beta2_ * v_[i].array() + (1.0 - beta2_) * g * g;
    Tensor updated = params[i].tensor();
    updated.array() -= lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + epsilon_);
    params[i].set_tensor(std::move(updated));
  }
}

namespace {

struct GammaStats {
  std::vector<double> mean, min, max;
};

// Aggregate modulation values per task-network layer across a batch.
GammaStats batch_gamma_stats(const std::vector<AdaptedParams>& per_task,
                             const std::vector<Index>& sizes) {
  GammaStats stats;
  const size_t l = sizes.size() - 1;
  std::vector<double> sums(l, 0.0);
  std::vector<double> mins(l, std::numeric_limits<double>::infinity());
  std::vector<double> maxs(l, -std::numeric_limits<double>::infinity());
  std::vector<long> counts(l, 0);
  for (const AdaptedParams& ap : per_task) {
    if (!ap.gamma_used || !ap.gamma_used->gamma.defined()) continue;
    const Tensor& g = ap.gamma_used->gamma.tensor();
    const auto ranges = scope_layer_ranges(ap.gamma_used->scope, sizes);
    for (size_t j = 0; j < l; ++j) {
      for (Index t = 0; t < ranges[j].second; ++t) {
        const double v = g[ranges[j].first + t];
        sums[j] += v;
        mins[j] = std::min(mins[j], v);
        maxs[j] = std::max(maxs[j], v);
        ++counts[j];
      }
    }
  }
  if (counts[0] == 0) return stats;
  for (size_t j = 0; j < l; ++j) {
    stats.mean.push_back(sums[j] / static_cast<double>(counts[j]));
    stats.min.push_back(mins[j]);
    stats.max.push_back(maxs[j]);
  }
  return stats;
}

}  // namespace

TrainResult meta_train(const MetaConfig& cfg, MetaState& state, const TaskSampler& sampler,
                       const LossFn& loss, const TrainHooks& hooks) {
  cfg.validate();
  Adam optimizer(cfg.meta_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
  const std::vector<Value> params = state.trainable();
  TrainResult result;
  result.log.reserve(static_cast<size_t>(cfg.iterations));
  const auto start_time = std::chrono::steady_clock::now();

  for (long it = 0; it < cfg.iterations; ++it) {
    std::vector<MetaTask> batch;
    batch.reserve(static_cast<size_t>(cfg.meta_batch_size));
    for (int slot = 0; slot < cfg.meta_batch_size; ++slot) batch.push_back(sampler(it, slot));

    MetaBatchResult mb;
    try {
      mb = meta_loss(cfg, state, loss, batch);
    } catch (const TrainingDivergence& e) {
      throw TrainingDivergence(e.context, it, e.task_index, e.inner_step);
    }
    const double outer = mb.loss.item();
    if (!std::isfinite(outer)) throw TrainingDivergence("outer loss", it, -1, -1);

    if (hooks.on_batch) hooks.on_batch(it, mb.per_task);
    if (hooks.cadence > 0 && hooks.on_cadence && it % hooks.cadence == 0) {
      hooks.on_cadence(it, state, batch, mb);
    }

    std::vector<Value> grads = grad(mb.loss, params, false);
    optimizer.step(params, grads);

    TrainLogRow row;
    row.iteration = it;
    row.outer_loss = outer;
    GammaStats stats = batch_gamma_stats(mb.per_task, state.net_sizes);
    row.gamma_mean = std::move(stats.mean);
    row.gamma_min = std::move(stats.min);
    row.gamma_max = std::move(stats.max);
    row.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    result.log.push_back(std::move(row));
  }
  return result;
}

namespace {

double query_metric(const TaskNetwork& net, const LayeredParams& params, const MetaTask& task) {
  Value pred = forward(net, params, Value::constant(task.query_x));
  if (net.head == Head::Regression) {
    return squared_error(pred, Value::constant(task.query_y)).item();
  }
  const Tensor& logits = pred.tensor();
  long correct = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    Index best = 0;
    for (Index c = 1; c < logits.cols(); ++c) {
      if (logits.at(i, c) > logits.at(i, best)) best = c;
    }
    if (best == task.query_labels[static_cast<size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

}  // namespace

ModulationParams eval_modulation(const MetaConfig& cfg, const MetaState& state, const LossFn& loss,
                                 const MetaTask& task) {
  if (state.method == Method::LearnedScope) {
    ModulationParams mod;
    mod.gamma = state.learned_gamma;
    mod.scope = state.scope;
    return mod;
  }
  if (state.method != Method::L2f) {
    throw std::invalid_argument("eval_modulation: method " + to_string(state.method) +
                                " emits no modulation");
  }
  Value support = loss(state.theta, task, false);
  std::vector<Value> grads = grad(support, state.theta.flat(), false);
  Value summary = layerwise_grad_mean(pair_layer_grads(grads), cfg.abs_grad_summary);
  return generate_gamma(*state.attenuator, summary.detach());
}

std::vector<EvalRow> evaluate(const MetaConfig& cfg, const MetaState& state,
                              const std::vector<MetaTask>& tasks, const GammaSink& gamma_sink) {
  if (cfg.inner_steps_eval.empty()) throw std::invalid_argument("evaluate: no eval step counts");
  TaskNetwork net = network_view(state);
  const LossFn loss = make_network_loss(net);
  const int max_steps = *std::max_element(cfg.inner_steps_eval.begin(), cfg.inner_steps_eval.end());

  std::vector<std::vector<double>> samples(cfg.inner_steps_eval.size());
  for (auto& s : samples) s.reserve(tasks.size());

  for (const MetaTask& task : tasks) {
    // Modulate once from the support gradient, then plain descent.
    LayeredParams start = state.theta;
    if (state.method != Method::Maml) {
      ModulationParams mod = eval_modulation(cfg, state, loss, task);
      start = attenuate(state.theta, mod);
      if (gamma_sink) gamma_sink(task.id, mod.gamma.tensor());
    }
    LayeredParams current = start.detached().as_leaves();

    auto record_if_requested = [&](int step_count) {
      for (size_t si = 0; si < cfg.inner_steps_eval.size(); ++si) {
        if (cfg.inner_steps_eval[si] == step_count) {
          samples[si].push_back(query_metric(net, current, task));
        }
      }
    };
    record_if_requested(0);
    for (int step = 1; step <= max_steps; ++step) {
      Value support = loss(current, task, false);
      std::vector<Value> grads = grad(support, current.flat(), false);
      LayeredParams next;
      next.layers.reserve(current.layers.size());
      for (size_t i = 0; i < current.layers.size(); ++i) {
        Tensor w = current.layers[i].weight.tensor();
        Tensor b = current.layers[i].bias.tensor();
        w.array() -= cfg.inner_lr * grads[2 * i].tensor().array();
        b.array() -= cfg.inner_lr * grads[2 * i + 1].tensor().array();
        next.layers.push_back({Value::param(std::move(w)), Value::param(std::move(b))});
      }
      current = std::move(next);
      record_if_requested(step);
    }
  }

  std::vector<EvalRow> rows;
  rows.reserve(samples.size());
  for (size_t si = 0; si < samples.size(); ++si) {
    EvalRow row;
    row.steps = cfg.inner_steps_eval[si];
    row.count = static_cast<long>(samples[si].size());
    double sum = 0.0;
    for (double v : samples[si]) sum += v;
    row.mean = row.count > 0 ? sum / static_cast<double>(row.count) : 0.0;
    if (row.count > 1) {
      double sq = 0.0;
      for (double v : samples[si]) sq += (v - row.mean) * (v - row.mean);
      const double stddev = std::sqrt(sq / static_cast<double>(row.count - 1));
      row.ci95 = 1.96 * stddev / std::sqrt(static_cast<double>(row.count));
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<std::vector<Tensor>> per_task_meta_gradients(const MetaConfig& cfg,
                                                         const MetaState& state, const LossFn& loss,
                                                         const std::vector<MetaTask>& batch) {
  std::vector<std::vector<Tensor>> out;
  out.reserve(batch.size());
  for (const MetaTask& task : batch) {
    MetaBatchResult single = meta_loss(cfg, state, loss, {task});
    std::vector<Value> grads = grad(single.loss, state.theta.flat(), false);
    std::vector<Tensor> tensors;
    tensors.reserve(grads.size());
    for (const Value& g : grads) tensors.push_back(g.tensor());
    out.push_back(std::move(tensors));
  }
  return out;
}

std::vector<std::vector<Tensor>> per_example_meta_gradients(const MetaConfig& cfg,
                                                            const MetaState& state,
                                                            const LossFn& loss,
                                                            const MetaTask& task) {
  const Index n = task.query_x.rows();
  std::vector<std::vector<Tensor>> out;
  out.reserve(static_cast<size_t>(n));
  for (Index e = 0; e < n; ++e) {
    MetaTask one = task;
    Tensor qx = Tensor::zeros({1, task.query_x.cols()});
    for (Index c = 0; c < task.query_x.cols(); ++c) qx.at(0, c) = task.query_x.at(e, c);
    one.query_x = std::move(qx);
    if (!task.query_labels.empty()) {
      one.query_labels = {task.query_labels[static_cast<size_t>(e)]};
    } else {
      Tensor qy = Tensor::zeros({1, task.query_y.cols()});
      for (Index c = 0; c < task.query_y.cols(); ++c) qy.at(0, c) = task.query_y.at(e, c);
      one.query_y = std::move(qy);
    }
    MetaBatchResult single = meta_loss(cfg, state, loss, {one});
    std::vector<Value> grads = grad(single.loss, state.theta.flat(), false);
    std::vector<Tensor> tensors;
    tensors.reserve(grads.size());
    for (const Value& g : grads) tensors.push_back(g.tensor());
    out.push_back(std::move(tensors));
  }
  return out;
}

}  // namespace l2f
