#include "l2f/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace l2f {

ConflictStats degree_of_conflict(const std::vector<Eigen::VectorXd>& vectors) {
  if (vectors.size() < 2) throw std::invalid_argument("degree_of_conflict: need >= 2 vectors");
  const Eigen::Index dim = vectors.front().size();
  Eigen::VectorXd total = Eigen::VectorXd::Zero(dim);
  for (const auto& u : vectors) {
    if (u.size() != dim) throw std::invalid_argument("degree_of_conflict: mixed vector lengths");
    total += u;
  }
  ConflictStats stats;
  const double total_norm = total.norm();
  if (total_norm == 0.0) throw std::invalid_argument("degree_of_conflict: zero batch direction");
  const Eigen::VectorXd v = total / total_norm;

  double sum_angle = 0.0;
  for (const auto& u : vectors) {
    const double n = u.norm();
    if (n == 0.0) {
      ++stats.skipped;
      continue;
    }
    const double c = std::clamp(u.dot(v) / n, -1.0, 1.0);
    const double angle = std::fabs(std::acos(c));
    stats.angles.push_back(angle);
    sum_angle += angle;
  }
  if (stats.angles.empty()) throw std::invalid_argument("degree_of_conflict: all vectors zero");
  stats.mean_angle = sum_angle / static_cast<double>(stats.angles.size());
  return stats;
}

Eigen::VectorXd flatten_gradients(const std::vector<Tensor>& layer_grads, Index layer) {
  Index begin = 0, end = static_cast<Index>(layer_grads.size());
  if (layer >= 0) {
    begin = 2 * layer;
    end = begin + 2;
    if (end > static_cast<Index>(layer_grads.size())) {
      throw std::invalid_argument("flatten_gradients: layer " + std::to_string(layer) +
                                  " out of range");
    }
  }
  Index total = 0;
  for (Index i = begin; i < end; ++i) total += layer_grads[static_cast<size_t>(i)].size();
  Eigen::VectorXd out(total);
  Index at = 0;
  for (Index i = begin; i < end; ++i) {
    const Tensor& t = layer_grads[static_cast<size_t>(i)];
    out.segment(at, t.size()) = t.array().matrix();
    at += t.size();
  }
  return out;
}

std::vector<double> default_probe_steps(double inner_lr) {
  return {0.25 * inner_lr, 0.5 * inner_lr, 1.0 * inner_lr, 2.0 * inner_lr, 4.0 * inner_lr};
}

LandscapeRecord landscape_probe(const std::function<Value(const LayeredParams&)>& loss_fn,
                                const LayeredParams& theta, const std::vector<Tensor>& grad_at_theta,
                                const std::vector<double>& step_sizes) {
  if (step_sizes.empty()) throw std::invalid_argument("landscape_probe: no step sizes");
  const std::vector<Value> flat = theta.flat();
  if (grad_at_theta.size() != flat.size()) {
    throw std::invalid_argument("landscape_probe: gradient entry count mismatch");
  }
  const Eigen::VectorXd g0 = flatten_gradients(grad_at_theta);
  const double g0_norm = g0.norm();

  LandscapeRecord rec;
  rec.loss_min = rec.grad_diff_min = std::numeric_limits<double>::infinity();
  rec.loss_max = rec.grad_diff_max = -std::numeric_limits<double>::infinity();
  bool any = false;

  for (double step : step_sizes) {
    LayeredParams probe;
    probe.layers.reserve(theta.layers.size());
    for (size_t i = 0; i < theta.layers.size(); ++i) {
      Tensor w = theta.layers[i].weight.tensor();
      Tensor b = theta.layers[i].bias.tensor();
      w.array() -= step * grad_at_theta[2 * i].array();
      b.array() -= step * grad_at_theta[2 * i + 1].array();
      probe.layers.push_back({Value::param(std::move(w)), Value::param(std::move(b))});
    }
    double lv = 0.0;
    Value loss;
    try {
      loss = loss_fn(probe);
      lv = loss.item();
    } catch (const std::domain_error&) {
      lv = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(lv)) {
      ++rec.flagged;
      continue;
    }
    std::vector<Value> grads = grad(loss, probe.flat(), false);
    std::vector<Tensor> grad_tensors;
    grad_tensors.reserve(grads.size());
    for (const Value& g : grads) grad_tensors.push_back(g.tensor());
    const double diff = (flatten_gradients(grad_tensors) - g0).norm();
    const double dist = step * g0_norm;

    rec.loss_min = std::min(rec.loss_min, lv);
    rec.loss_max = std::max(rec.loss_max, lv);
    rec.grad_diff_min = std::min(rec.grad_diff_min, diff);
    rec.grad_diff_max = std::max(rec.grad_diff_max, diff);
    if (dist > 0.0) rec.effective_beta = std::max(rec.effective_beta, diff / dist);
    any = true;
  }
  if (!any) {
    rec.loss_min = rec.loss_max = rec.grad_diff_min = rec.grad_diff_max = 0.0;
  }
  return rec;
}

std::vector<LandscapeRecord> adaptation_landscape(const MetaConfig& cfg, const MetaState& state,
                                                  const MetaTask& task, int steps,
                                                  const std::vector<double>& probe_steps) {
  if (steps < 1) throw std::invalid_argument("adaptation_landscape: steps must be >= 1");
  TaskNetwork net = network_view(state);
  const LossFn loss = make_network_loss(net);

  LayeredParams start = state.theta;
  if (state.method != Method::Maml) {
    start = attenuate(state.theta, eval_modulation(cfg, state, loss, task));
  }
  LayeredParams current = start.detached().as_leaves();

  auto support_loss = [&](const LayeredParams& p) { return loss(p, task, false); };

  std::vector<LandscapeRecord> records;
  records.reserve(static_cast<size_t>(steps));
  for (int step = 0; step < steps; ++step) {
    Value support = support_loss(current);
    std::vector<Value> grads = grad(support, current.flat(), false);
    std::vector<Tensor> grad_tensors;
    grad_tensors.reserve(grads.size());
    for (const Value& g : grads) grad_tensors.push_back(g.tensor());

    records.push_back(landscape_probe(support_loss, current, grad_tensors, probe_steps));

    LayeredParams next;
    next.layers.reserve(current.layers.size());
    for (size_t i = 0; i < current.layers.size(); ++i) {
      Tensor w = current.layers[i].weight.tensor();
      Tensor b = current.layers[i].bias.tensor();
      w.array() -= cfg.inner_lr * grad_tensors[2 * i].array();
      b.array() -= cfg.inner_lr * grad_tensors[2 * i + 1].array();
      next.layers.push_back({Value::param(std::move(w)), Value::param(std::move(b))});
    }
    current = std::move(next);
  }
  return records;
}

std::vector<SweepRow> gamma_sweep(const MetaConfig& cfg, const MetaState& state, Index layer,
                                  const std::vector<double>& gammas,
                                  const std::vector<MetaTask>& eval_tasks) {
  if (layer < 0 || layer >= state.theta.layer_count()) {
    throw std::invalid_argument("gamma_sweep: layer " + std::to_string(layer) +
                                " out of range for " + std::to_string(state.theta.layer_count()) +
                                " layers");
  }
  if (gammas.empty()) throw std::invalid_argument("gamma_sweep: empty gamma grid");

  std::vector<SweepRow> rows;
  rows.reserve(gammas.size());
  for (double gamma : gammas) {
    MetaState scaled;
    scaled.net_sizes = state.net_sizes;
    scaled.head = state.head;
    scaled.method = Method::Maml;  // manual attenuation, no generator at eval
    scaled.theta.layers.reserve(state.theta.layers.size());
    for (Index j = 0; j < state.theta.layer_count(); ++j) {
      const Layer& src = state.theta.layers[static_cast<size_t>(j)];
      Tensor w = src.weight.tensor();
      Tensor b = src.bias.tensor();
      if (j == layer) {
        w.array() *= gamma;
        b.array() *= gamma;
      }
      scaled.theta.layers.push_back({Value::param(std::move(w)), Value::param(std::move(b))});
    }
    std::vector<EvalRow> table = evaluate(cfg, scaled, eval_tasks);
    const EvalRow* last = &table.front();
    for (const EvalRow& r : table) {
      if (r.steps >= last->steps) last = &r;
    }
    rows.push_back({layer, gamma, last->mean, last->ci95});
  }
  return rows;
}

}  // namespace l2f
