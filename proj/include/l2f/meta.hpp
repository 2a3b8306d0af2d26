#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "l2f/models.hpp"
#include "l2f/tasks.hpp"

namespace l2f {

enum class Order { First, Second };
enum class Method { Maml, L2f, LearnedScope };

std::string to_string(Order o);
std::string to_string(Method m);
Order order_from_string(const std::string& s);
Method method_from_string(const std::string& s);

/// Learning-rate / step-count / variant switches for one experiment.
struct MetaConfig {
  double inner_lr = 0.01;
  double meta_lr = 1e-3;
  int inner_steps_train = 1;
  std::vector<int> inner_steps_eval = {1, 2, 5};
  int meta_batch_size = 4;
  Order order = Order::Second;
  Method method = Method::Maml;
  Transform transform = Transform::SigmoidedGamma;
  Scope scope = Scope::Layer;
  long iterations = 0;
  std::uint64_t seed = 0;
  bool abs_grad_summary = false;    // opt-in |mean| summary, off by default
  bool force_identity_gamma = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;  // throws std::invalid_argument naming the field
};

/// Raised when a loss goes non-finite; carries where it happened.
class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(const std::string& context, long iteration, long task_index, int inner_step);

  std::string context;
  long iteration = -1;
  long task_index = -1;
  int inner_step = -1;
};

/// Task loss as a function of parameters; `on_query` selects the query set.
using LossFn = std::function<Value(const LayeredParams&, const MetaTask&, bool on_query)>;

LossFn make_network_loss(const TaskNetwork& net);

/// Result of fast adaptation: parameters as graph nodes rooted at the
/// starting point, plus the support-loss trace (pre-adaptation loss first,
/// so its length is steps + 1).
struct AdaptedParams {
  LayeredParams params;
  std::vector<double> loss_trace;
  std::optional<ModulationParams> gamma_used;
};

/// Per-group multiplicative modulation of the initialization (plus the
/// broadcast delta for the affine transform). The result stays
/// differentiable back to both the initialization and the modulation.
LayeredParams attenuate(const LayeredParams& theta, const ModulationParams& mod);

/// `steps` full-batch gradient-descent steps on the support loss.
/// Order::Second keeps the graph through each step; Order::First detaches
/// the inner gradients.
AdaptedParams inner_adapt(const LossFn& loss, const LayeredParams& start, const MetaTask& task,
                          int steps, double alpha, Order order);

/// Everything the outer loop trains.
struct MetaState {
  std::vector<Index> net_sizes;
  Head head = Head::Regression;
  Method method = Method::Maml;
  Scope scope = Scope::Layer;
  Transform transform = Transform::SigmoidedGamma;
  LayeredParams theta;
  std::optional<Attenuator> attenuator;  // l2f
  Value learned_gamma;                   // learned-scope leaf, init 1

  std::vector<Value> trainable() const;
};

MetaState init_meta_state(const MetaConfig& cfg, const std::vector<Index>& net_sizes, Head head);
TaskNetwork network_view(const MetaState& state);

struct MetaBatchResult {
  Value loss;  // sum over tasks of the query loss at the adapted parameters
  std::vector<AdaptedParams> per_task;
};

/// One outer objective over a task batch, differentiable w.r.t. the full
/// trainable state.
MetaBatchResult meta_loss(const MetaConfig& cfg, const MetaState& state, const LossFn& loss,
                          const std::vector<MetaTask>& batch);

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double epsilon);
  void step(const std::vector<Value>& params, const std::vector<Value>& grads);

 private:
  double lr_, beta1_, beta2_, epsilon_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct TrainLogRow {
  long iteration = 0;
  double outer_loss = 0.0;
  // Per task-network layer, aggregated over the batch; empty when the
  // method emits no gamma.
  std::vector<double> gamma_mean, gamma_min, gamma_max;
  double wall_time_s = 0.0;
};

struct TrainHooks {
  // Invoked every `cadence` iterations, before the parameter update, with
  // the batch that produced the loss. 0 disables.
  long cadence = 0;
  std::function<void(long iteration, const MetaState&, const std::vector<MetaTask>&,
                     const MetaBatchResult&)>
      on_cadence;
  // Invoked every iteration after the loss; carries the per-task results
  // (used for gamma logging).
  std::function<void(long iteration, const std::vector<AdaptedParams>&)> on_batch;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
};

/// Runs `iterations` outer steps of Algorithm: sample a task batch, build
/// the meta-loss, one joint Adam update of the trainable state. Throws
/// TrainingDivergence on a non-finite loss; the state then still holds the
/// last finite parameters.
TrainResult meta_train(const MetaConfig& cfg, MetaState& state, const TaskSampler& sampler,
                       const LossFn& loss, const TrainHooks& hooks = {});

struct EvalRow {
  int steps = 0;
  double mean = 0.0;
  double ci95 = 0.0;  // 1.96 * stderr over all repeats
  long count = 0;
};

using GammaSink = std::function<void(long task_id, const Tensor& gamma)>;

/// Per-task evaluation: attenuate once from the support gradient (variant
/// methods only), then plain gradient descent on the support set, recording
/// the query metric (MSE or accuracy) after each requested step count.
std::vector<EvalRow> evaluate(const MetaConfig& cfg, const MetaState& state,
                              const std::vector<MetaTask>& tasks,
                              const GammaSink& gamma_sink = nullptr);

/// Support-gradient modulation for a single task, exactly as training and
/// evaluation compute it (diagnostics entry point).
ModulationParams eval_modulation(const MetaConfig& cfg, const MetaState& state, const LossFn& loss,
                                 const MetaTask& task);

/// Per-task meta-gradients -(d query-loss / d theta) material: one flat
/// gradient tensor list per task at the current initialization.
std::vector<std::vector<Tensor>> per_task_meta_gradients(const MetaConfig& cfg,
                                                         const MetaState& state, const LossFn& loss,
                                                         const std::vector<MetaTask>& batch);

/// Same, but one gradient per query example of a single task.
std::vector<std::vector<Tensor>> per_example_meta_gradients(const MetaConfig& cfg,
                                                            const MetaState& state,
                                                            const LossFn& loss,
                                                            const MetaTask& task);

}  // namespace l2f
