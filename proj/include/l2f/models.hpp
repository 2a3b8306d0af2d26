#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "l2f/autodiff.hpp"

namespace l2f {

/// One linear layer's parameters: weight [out x in] and bias [out].
struct Layer {
  Value weight;
  Value bias;
};

/// An initialization split into layers; the unit the attenuation acts on.
/// Iteration order (layer 0..l-1, weight before bias) is fixed.
struct LayeredParams {
  std::vector<Layer> layers;

  Index layer_count() const { return static_cast<Index>(layers.size()); }
  Index parameter_count() const;

  /// Flat view [w0, b0, w1, b1, ...] in the fixed iteration order.
  std::vector<Value> flat() const;

  /// Same tensors, fresh grad-requiring leaves.
  LayeredParams as_leaves() const;
  /// Same tensors, detached constants.
  LayeredParams detached() const;

  /// Throws unless adjacent layers are dimension-compatible.
  void validate() const;
};

LayeredParams params_from_flat(const std::vector<Value>& flat);

enum class Head { Regression, Classification };

/// The task network f: a relu MLP over a LayeredParams initialization.
/// The regression configuration is 1 -> 40 -> 40 -> 1.
struct TaskNetwork {
  std::vector<Index> sizes;  // e.g. {1, 40, 40, 1}
  Head head = Head::Regression;
  LayeredParams params;

  Index layer_count() const { return static_cast<Index>(sizes.size()) - 1; }
};

/// Glorot-uniform weights (uniform in +-sqrt(6/(fan_in+fan_out))), zero
/// biases. Deterministic in the seed.
LayeredParams init_layered_params(std::uint64_t seed, const std::vector<Index>& sizes);

TaskNetwork init_task_network(std::uint64_t seed, std::vector<Index> sizes,
                              Head head = Head::Regression);

/// Forward pass as a differentiable graph rooted at `params`.
/// x: [batch x in] -> [batch x out]. relu between layers, identity output.
Value forward(const TaskNetwork& net, const LayeredParams& params, const Value& x);

/// Per-layer arithmetic mean over all gradient components of that layer
/// (weight and bias together) -> vector of length l. With `absolute`, the
/// mean of absolute values instead (opt-in switch; the default signed mean
/// is the documented behavior).
Value layerwise_grad_mean(const std::vector<Layer>& grads, bool absolute = false);

/// Convenience: pair up a flat gradient list [gw0, gb0, ...] into layers.
std::vector<Layer> pair_layer_grads(const std::vector<Value>& flat_grads);

enum class Transform { SigmoidedGamma, RawGamma, Affine };
enum class Scope { Parameter, Filter, Layer, Network, None };

std::string to_string(Transform t);
std::string to_string(Scope s);
Transform transform_from_string(const std::string& s);
Scope scope_from_string(const std::string& s);

/// Number of modulation groups a scope induces on a network of the given
/// layer sizes. Filter groups are one per output unit (weight row plus its
/// bias entry).
Index scope_group_count(Scope scope, const std::vector<Index>& sizes);

/// (offset, count) of the modulation groups covering each layer. For the
/// network scope every layer maps to the single shared group.
std::vector<std::pair<Index, Index>> scope_layer_ranges(Scope scope,
                                                        const std::vector<Index>& sizes);

/// The generator network g: a 3-layer MLP (input l, hidden l, l, output =
/// group count, doubled for affine) mapping the layer-wise gradient summary
/// to modulation parameters.
struct Attenuator {
  LayeredParams params;
  Transform transform = Transform::SigmoidedGamma;
  Scope scope = Scope::Layer;
  std::vector<Index> net_sizes;
  bool force_identity = false;  // testing override: emit gamma = 1, delta = 0

  Index input_dim() const { return static_cast<Index>(net_sizes.size()) - 1; }
};

Attenuator init_attenuator(std::uint64_t seed, const std::vector<Index>& net_sizes,
                           Transform transform = Transform::SigmoidedGamma,
                           Scope scope = Scope::Layer);

/// Modulation emitted for one task: gamma (and delta for the affine
/// transform), one component per scope group.
struct ModulationParams {
  Value gamma;
  Value delta;  // defined only for affine
  Scope scope = Scope::Layer;
};

/// Runs g on the gradient summary. The result is differentiable with
/// respect to the attenuator parameters and the summary, so the outer loop
/// trains the generator end to end.
ModulationParams generate_gamma(const Attenuator& att, const Value& grad_summary);

}  // namespace l2f
