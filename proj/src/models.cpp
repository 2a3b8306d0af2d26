#include "l2f/models.hpp"

#include <cmath>
#include <stdexcept>

#include "l2f/rng.hpp"

namespace l2f {

Index LayeredParams::parameter_count() const {
  Index n = 0;
  for (const Layer& l : layers) n += l.weight.tensor().size() + l.bias.tensor().size();
  return n;
}

std::vector<Value> LayeredParams::flat() const {
  std::vector<Value> out;
  out.reserve(layers.size() * 2);
  for (const Layer& l : layers) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

LayeredParams LayeredParams::as_leaves() const {
  LayeredParams out;
  out.layers.reserve(layers.size());
  for (const Layer& l : layers) {
    out.layers.push_back({Value::param(l.weight.tensor()), Value::param(l.bias.tensor())});
  }
  return out;
}

LayeredParams LayeredParams::detached() const {
  LayeredParams out;
  out.layers.reserve(layers.size());
  for (const Layer& l : layers) out.layers.push_back({l.weight.detach(), l.bias.detach()});
  return out;
}

void LayeredParams::validate() const {
  if (layers.empty()) throw std::invalid_argument("LayeredParams: no layers");
  for (size_t j = 0; j < layers.size(); ++j) {
    const Tensor& w = layers[j].weight.tensor();
    const Tensor& b = layers[j].bias.tensor();
    if (w.rank() != 2 || b.rank() != 1 || b.size() != w.rows()) {
      throw std::invalid_argument("LayeredParams: layer " + std::to_string(j) +
                                  " has weight " + shape_str(w.shape()) + ", bias " +
                                  shape_str(b.shape()));
    }
    if (j > 0 && layers[j - 1].weight.tensor().rows() != w.cols()) {
      throw std::invalid_argument("LayeredParams: layer " + std::to_string(j) +
                                  " input dim does not match layer " + std::to_string(j - 1) +
                                  " output dim");
    }
  }
}

LayeredParams params_from_flat(const std::vector<Value>& flat) {
  if (flat.size() % 2 != 0) throw std::invalid_argument("params_from_flat: odd entry count");
  LayeredParams out;
  out.layers.reserve(flat.size() / 2);
  for (size_t i = 0; i < flat.size(); i += 2) out.layers.push_back({flat[i], flat[i + 1]});
  return out;
}

LayeredParams init_layered_params(std::uint64_t seed, const std::vector<Index>& sizes) {
  if (sizes.size() < 2) {
    throw std::invalid_argument("init_layered_params: need at least input and output sizes, got " +
                                std::to_string(sizes.size()));
  }
  for (Index s : sizes) {
    if (s <= 0) throw std::invalid_argument("init_layered_params: zero-size layer");
  }
  Rng rng(seed);
  LayeredParams params;
  for (size_t j = 0; j + 1 < sizes.size(); ++j) {
    const Index fan_in = sizes[j];
    const Index fan_out = sizes[j + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor w = Tensor::zeros({fan_out, fan_in});
    for (Index i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
    params.layers.push_back({Value::param(std::move(w)), Value::param(Tensor::zeros({fan_out}))});
  }
  params.validate();
  return params;
}

TaskNetwork init_task_network(std::uint64_t seed, std::vector<Index> sizes, Head head) {
  TaskNetwork net;
  net.params = init_layered_params(seed, sizes);
  net.sizes = std::move(sizes);
  net.head = head;
  return net;
}

Value forward(const TaskNetwork& net, const LayeredParams& params, const Value& x) {
  if (params.layer_count() != net.layer_count()) {
    throw std::invalid_argument("forward: params have " + std::to_string(params.layer_count()) +
                                " layers, network expects " + std::to_string(net.layer_count()));
  }
  if (x.tensor().rank() != 2 || x.tensor().cols() != net.sizes.front()) {
    throw std::invalid_argument("forward: input " + shape_str(x.shape()) +
                                " does not match first layer width " +
                                std::to_string(net.sizes.front()));
  }
  Value h = x;
  for (Index j = 0; j < net.layer_count(); ++j) {
    const Layer& l = params.layers[static_cast<size_t>(j)];
    h = add_bias(matmul(h, transpose(l.weight)), l.bias);
    if (j + 1 < net.layer_count()) h = relu(h);
  }
  return h;
}

Value layerwise_grad_mean(const std::vector<Layer>& grads, bool absolute) {
  if (grads.empty()) throw std::invalid_argument("layerwise_grad_mean: no layers");
  std::vector<Value> means;
  means.reserve(grads.size());
  for (const Layer& g : grads) {
    Value w = absolute ? abs(g.weight) : g.weight;
    Value b = absolute ? abs(g.bias) : g.bias;
    const double count = static_cast<double>(g.weight.tensor().size() + g.bias.tensor().size());
    means.push_back(scale(add(sum(w), sum(b)), 1.0 / count));
  }
  return stack_scalars(means);
}

std::vector<Layer> pair_layer_grads(const std::vector<Value>& flat_grads) {
  if (flat_grads.size() % 2 != 0) throw std::invalid_argument("pair_layer_grads: odd entry count");
  std::vector<Layer> out;
  out.reserve(flat_grads.size() / 2);
  for (size_t i = 0; i < flat_grads.size(); i += 2) out.push_back({flat_grads[i], flat_grads[i + 1]});
  return out;
}

std::string to_string(Transform t) {
  switch (t) {
    case Transform::SigmoidedGamma: return "sigmoided-gamma";
    case Transform::RawGamma: return "raw-gamma";
    case Transform::Affine: return "affine";
  }
  return "?";
}

std::string to_string(Scope s) {
  switch (s) {
    case Scope::Parameter: return "parameter";
    case Scope::Filter: return "filter";
    case Scope::Layer: return "layer";
    case Scope::Network: return "network";
    case Scope::None: return "none";
  }
  return "?";
}

Transform transform_from_string(const std::string& s) {
  if (s == "sigmoided-gamma") return Transform::SigmoidedGamma;
  if (s == "raw-gamma") return Transform::RawGamma;
  if (s == "affine") return Transform::Affine;
  throw std::invalid_argument("unknown transform '" + s + "'");
}

Scope scope_from_string(const std::string& s) {
  if (s == "parameter") return Scope::Parameter;
  if (s == "filter") return Scope::Filter;
  if (s == "layer") return Scope::Layer;
  if (s == "network") return Scope::Network;
  if (s == "none") return Scope::None;
  throw std::invalid_argument("unknown scope '" + s + "'");
}

Index scope_group_count(Scope scope, const std::vector<Index>& sizes) {
  if (sizes.size() < 2) throw std::invalid_argument("scope_group_count: degenerate sizes");
  const Index l = static_cast<Index>(sizes.size()) - 1;
  switch (scope) {
    case Scope::Network: return 1;
    case Scope::Layer: return l;
    case Scope::Filter: {
      Index n = 0;
      for (size_t j = 1; j < sizes.size(); ++j) n += sizes[j];
      return n;
    }
    case Scope::Parameter: {
      Index n = 0;
      for (size_t j = 0; j + 1 < sizes.size(); ++j) n += sizes[j] * sizes[j + 1] + sizes[j + 1];
      return n;
    }
    case Scope::None: return 0;
  }
  throw std::invalid_argument("scope_group_count: bad scope");
}

std::vector<std::pair<Index, Index>> scope_layer_ranges(Scope scope,
                                                        const std::vector<Index>& sizes) {
  std::vector<std::pair<Index, Index>> ranges;
  Index offset = 0;
  for (size_t j = 0; j + 1 < sizes.size(); ++j) {
    switch (scope) {
      case Scope::Network: ranges.emplace_back(0, 1); break;
      case Scope::Layer: ranges.emplace_back(static_cast<Index>(j), 1); break;
      case Scope::Filter:
        ranges.emplace_back(offset, sizes[j + 1]);
        offset += sizes[j + 1];
        break;
      case Scope::Parameter: {
        const Index n = sizes[j] * sizes[j + 1] + sizes[j + 1];
        ranges.emplace_back(offset, n);
        offset += n;
        break;
      }
      case Scope::None: ranges.emplace_back(0, 0); break;
    }
  }
  return ranges;
}

Attenuator init_attenuator(std::uint64_t seed, const std::vector<Index>& net_sizes,
                           Transform transform, Scope scope) {
  if (scope == Scope::None) throw std::invalid_argument("init_attenuator: scope 'none'");
  const Index l = static_cast<Index>(net_sizes.size()) - 1;
  Index out_dim = scope_group_count(scope, net_sizes);
  if (transform == Transform::Affine) out_dim *= 2;
  Attenuator att;
  att.params = init_layered_params(seed, {l, l, l, out_dim});
  if (const char* b0 = getenv("L2F_ATT_BIAS")) {
    Tensor b = att.params.layers.back().bias.tensor();
    b.array() += atof(b0);
    att.params.layers.back().bias.set_tensor(std::move(b));
  }
  att.transform = transform;
  att.scope = scope;
  att.net_sizes = net_sizes;
  return att;
}

ModulationParams generate_gamma(const Attenuator& att, const Value& grad_summary) {
  const Index l = att.input_dim();
  if (grad_summary.tensor().rank() != 1 || grad_summary.tensor().size() != l) {
    throw std::invalid_argument("generate_gamma: summary " + shape_str(grad_summary.shape()) +
                                ", expected [" + std::to_string(l) + "]");
  }
  const Index groups = scope_group_count(att.scope, att.net_sizes);

  ModulationParams mod;
  mod.scope = att.scope;
  if (att.force_identity) {
    mod.gamma = Value::constant(Tensor::ones({groups}));
    if (att.transform == Transform::Affine) mod.delta = Value::constant(Tensor::zeros({groups}));
    return mod;
  }

  Value h = reshape(grad_summary, {1, l});
  const Index depth = att.params.layer_count();
  for (Index j = 0; j < depth; ++j) {
    const Layer& lay = att.params.layers[static_cast<size_t>(j)];
    h = add_bias(matmul(h, transpose(lay.weight)), lay.bias);
    if (j + 1 < depth) h = relu(h);
  }
  Value out = reshape(h, {h.tensor().size()});

  switch (att.transform) {
    case Transform::SigmoidedGamma:
      mod.gamma = sigmoid(out);
      break;
    case Transform::RawGamma:
      mod.gamma = out;
      break;
    case Transform::Affine:
      mod.gamma = slice(out, 0, groups);
      mod.delta = slice(out, groups, groups);
      break;
  }
  return mod;
}

}  // namespace l2f
