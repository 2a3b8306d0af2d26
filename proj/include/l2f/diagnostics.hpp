#pragma once

#include <functional>
#include <string>
#include <vector>

#include "l2f/meta.hpp"

namespace l2f {

/// Angle statistics between each update direction u_i and the batch
/// direction v = normalize(sum u_i). All angles lie in [0, pi].
struct ConflictStats {
  double mean_angle = 0.0;
  std::vector<double> angles;  // one per non-skipped vector, input order
  long skipped = 0;            // zero-norm inputs, excluded from the mean
};

/// Mean absolute angle between each normalized vector and the normalized
/// sum. Zero-norm vectors are skipped and counted. Cosines are clamped to
/// [-1, 1] before arccos to absorb roundoff.
ConflictStats degree_of_conflict(const std::vector<Eigen::VectorXd>& vectors);

/// Flattens per-layer gradient tensors into one vector, or restricts to a
/// single layer (weight and bias) when layer >= 0.
Eigen::VectorXd flatten_gradients(const std::vector<Tensor>& layer_grads, Index layer = -1);

struct LandscapeRecord {
  double loss_min = 0.0, loss_max = 0.0;
  double grad_diff_min = 0.0, grad_diff_max = 0.0;
  double effective_beta = 0.0;  // max ||grad(p) - g|| / ||p - theta||
  long flagged = 0;             // probes with a non-finite loss, skipped
};

/// Loss and gradient variation along the update direction: for each step
/// size, evaluates theta - step * g and records the loss range, the l2
/// gradient difference range, and the max gradient change per unit
/// distance. Non-finite probe losses are flagged, not fatal.
LandscapeRecord landscape_probe(const std::function<Value(const LayeredParams&)>& loss_fn,
                                const LayeredParams& theta, const std::vector<Tensor>& grad_at_theta,
                                const std::vector<double>& step_sizes);

/// Default probe grid relative to the inner learning rate: brackets the
/// actual update step.
std::vector<double> default_probe_steps(double inner_lr);

/// Landscape probes along one task's fast-adaptation trajectory: at each of
/// `steps` descent steps on the support loss (starting from the modulated
/// initialization for variant methods), probe before applying the update.
std::vector<LandscapeRecord> adaptation_landscape(const MetaConfig& cfg, const MetaState& state,
                                                  const MetaTask& task, int steps,
                                                  const std::vector<double>& probe_steps);

struct SweepRow {
  Index layer = 0;
  double gamma = 0.0;
  double metric = 0.0;  // query metric after the last eval step count
  double ci95 = 0.0;
};

/// Scales one layer of the initialization by each gamma (all other layers
/// by 1) and runs the evaluation protocol on the result as a plain-maml
/// start. The reported metric is taken at max(inner_steps_eval).
std::vector<SweepRow> gamma_sweep(const MetaConfig& cfg, const MetaState& state, Index layer,
                                  const std::vector<double>& gammas,
                                  const std::vector<MetaTask>& eval_tasks);

}  // namespace l2f
