#include "l2f/selftest.hpp"

#include <cmath>
#include <functional>
#include <ostream>
#include <sstream>

#include "l2f/meta.hpp"
#include "l2f/rng.hpp"

namespace l2f::selftest {

namespace {

using Builder = std::function<Value(const std::vector<Value>&)>;

struct Scenario {
  std::string name;
  Builder build;
  std::function<std::vector<Tensor>(Rng&)> sample;
  double tolerance = 1e-5;
};

Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t = shape.empty() ? Tensor::scalar(0.0) : Tensor::zeros(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Keeps samples away from the kink/domain edge of non-smooth primitives so
// a central difference is a valid oracle.
Tensor random_tensor_away_from(Rng& rng, Shape shape, double lo, double hi, double margin) {
  Tensor t = random_tensor(rng, std::move(shape), lo, hi);
  for (Index i = 0; i < t.size(); ++i) {
    if (std::fabs(t[i]) < margin) t[i] = t[i] < 0.0 ? -margin : margin;
  }
  return t;
}

std::vector<Scenario> primitive_scenarios() {
  std::vector<Scenario> s;
  auto two = [](Shape a, Shape b, double lo, double hi) {
    return [=](Rng& rng) {
      return std::vector<Tensor>{random_tensor(rng, a, lo, hi), random_tensor(rng, b, lo, hi)};
    };
  };
  auto one = [](Shape a, double lo, double hi) {
    return [=](Rng& rng) { return std::vector<Tensor>{random_tensor(rng, a, lo, hi)}; };
  };

  s.push_back({"add", [](const std::vector<Value>& v) { return sum(add(v[0], v[1])); },
               two({2, 3}, {2, 3}, -2, 2)});
  s.push_back({"sub", [](const std::vector<Value>& v) { return sum(mul(sub(v[0], v[1]), v[0])); },
               two({4}, {4}, -2, 2)});
  s.push_back({"mul", [](const std::vector<Value>& v) { return sum(mul(v[0], v[1])); },
               two({3, 2}, {3, 2}, -2, 2)});
  s.push_back({"div", [](const std::vector<Value>& v) { return sum(div(v[0], v[1])); },
               [](Rng& rng) {
                 return std::vector<Tensor>{random_tensor(rng, {4}, -2, 2),
                                            random_tensor_away_from(rng, {4}, -2, 2, 0.5)};
               }});
  s.push_back({"matmul", [](const std::vector<Value>& v) { return sum(matmul(v[0], v[1])); },
               two({2, 3}, {3, 2}, -1.5, 1.5)});
  s.push_back({"transpose",
               [](const std::vector<Value>& v) { return sum(mul(transpose(v[0]), v[1])); },
               two({2, 3}, {3, 2}, -2, 2)});
  s.push_back({"reshape",
               [](const std::vector<Value>& v) { return sum(square(reshape(v[0], {6}))); },
               one({2, 3}, -2, 2)});
  s.push_back({"slice", [](const std::vector<Value>& v) { return sum(square(slice(v[0], 1, 3))); },
               one({6}, -2, 2)});
  s.push_back({"embed", [](const std::vector<Value>& v) { return sum(square(embed(v[0], 2, 7))); },
               one({3}, -2, 2)});
  s.push_back({"scale", [](const std::vector<Value>& v) { return sum(scale(v[0], -1.7)); },
               one({5}, -2, 2)});
  s.push_back({"scalar_mul",
               [](const std::vector<Value>& v) { return sum(square(scalar_mul(v[0], v[1]))); },
               two({}, {3, 2}, -2, 2)});
  s.push_back({"scalar_add",
               [](const std::vector<Value>& v) { return sum(square(scalar_add(v[0], v[1]))); },
               two({}, {4}, -2, 2)});
  s.push_back({"add_bias",
               [](const std::vector<Value>& v) { return sum(square(add_bias(v[0], v[1]))); },
               two({3, 2}, {2}, -2, 2)});
  s.push_back({"broadcast_scalar",
               [](const std::vector<Value>& v) {
                 return sum(mul(broadcast_scalar(v[0], {2, 2}), v[1]));
               },
               two({}, {2, 2}, -2, 2)});
  s.push_back({"sum", [](const std::vector<Value>& v) { return square(sum(v[0])); },
               one({3, 3}, -1, 1)});
  s.push_back({"mean", [](const std::vector<Value>& v) { return square(mean(v[0])); },
               one({6}, -2, 2)});
  s.push_back({"relu", [](const std::vector<Value>& v) { return sum(square(relu(v[0]))); },
               [](Rng& rng) {
                 return std::vector<Tensor>{random_tensor_away_from(rng, {5}, -2, 2, 1e-3)};
               }});
  s.push_back({"sigmoid", [](const std::vector<Value>& v) { return sum(sigmoid(v[0])); },
               one({5}, -3, 3)});
  s.push_back({"sin", [](const std::vector<Value>& v) { return sum(sin(v[0])); },
               one({5}, -3, 3)});
  s.push_back({"cos", [](const std::vector<Value>& v) { return sum(cos(v[0])); },
               one({5}, -3, 3)});
  s.push_back({"exp", [](const std::vector<Value>& v) { return sum(exp(v[0])); },
               one({4}, -2, 2)});
  s.push_back({"log", [](const std::vector<Value>& v) { return sum(log(v[0])); },
               one({4}, 0.5, 3)});
  s.push_back({"sqrt", [](const std::vector<Value>& v) { return sum(sqrt(v[0])); },
               one({4}, 0.5, 3)});
  s.push_back({"abs", [](const std::vector<Value>& v) { return sum(abs(v[0])); },
               [](Rng& rng) {
                 return std::vector<Tensor>{random_tensor_away_from(rng, {5}, -2, 2, 1e-3)};
               }});
  s.push_back({"acos", [](const std::vector<Value>& v) { return sum(acos(v[0])); },
               one({4}, -0.85, 0.85)});
  s.push_back({"dot", [](const std::vector<Value>& v) { return dot(v[0], v[1]); },
               two({5}, {5}, -2, 2)});
  s.push_back({"norm", [](const std::vector<Value>& v) { return norm(v[0]); },
               one({5}, 0.5, 2)});
  s.push_back({"squared_error",
               [](const std::vector<Value>& v) { return squared_error(v[0], v[1]); },
               two({4, 1}, {4, 1}, -2, 2)});
  s.push_back({"softmax_cross_entropy",
               [](const std::vector<Value>& v) {
                 return softmax_cross_entropy(v[0], {0, 2, 1});
               },
               one({3, 3}, -2, 2)});
  return s;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

CheckResult check_primitive_fd(std::uint64_t seed) {
  CheckResult r{"autodiff.finite-difference", true, ""};
  double worst = 0.0;
  std::string worst_name;
  for (const Scenario& sc : primitive_scenarios()) {
    Rng rng(derive_seed(seed, sc.name));
    for (int rep = 0; rep < 100; ++rep) {
      const std::vector<Tensor> point = sc.sample(rng);
      const double err = finite_difference_check(sc.build, point, 1e-5);
      if (err > worst) {
        worst = err;
        worst_name = sc.name;
      }
      if (err >= sc.tolerance) {
        r.pass = false;
        r.detail = sc.name + " rel err " + fmt(err) + " at repeat " + std::to_string(rep);
        return r;
      }
    }
  }
  r.detail = "28 primitives x 100 points, worst " + worst_name + " rel err " + fmt(worst);
  return r;
}

CheckResult check_second_order(std::uint64_t seed) {
  CheckResult r{"autodiff.second-order-cubic", true, ""};
  Rng rng(derive_seed(seed, "cubic"));
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const double x0 = rng.uniform(-3.0, 3.0);
    Value x = Value::param(Tensor::scalar(x0));
    Value y = mul(mul(x, x), x);
    Value g1 = grad(y, {x}, true)[0];
    Value g2 = grad(g1, {x}, false)[0];
    const double expected = 6.0 * x0;
    const double err = std::fabs(g2.item() - expected) /
                       std::max({std::fabs(expected), std::fabs(g2.item()), 1e-8});
    worst = std::max(worst, err);
    if (err >= 1e-8) {
      r.pass = false;
      r.detail = "x=" + fmt(x0) + " rel err " + fmt(err);
      return r;
    }
  }
  r.detail = "grad(grad(x^3)) == 6x, worst rel err " + fmt(worst);
  return r;
}

CheckResult check_sum_linearity(std::uint64_t seed) {
  CheckResult r{"autodiff.batch-linearity", true, ""};
  Rng rng(derive_seed(seed, "linearity"));
  TaskNetwork net = init_task_network(derive_seed(seed, "lin.net"), {2, 5, 1});
  Tensor x = random_tensor(rng, {6, 2}, -2, 2);
  Tensor y = random_tensor(rng, {6, 1}, -2, 2);

  auto loss_of = [&](const Tensor& xs, const Tensor& ys) {
    Value pred = forward(net, net.params, Value::constant(xs));
    return sum(square(sub(pred, Value::constant(ys))));
  };
  std::vector<Value> flat = net.params.flat();
  std::vector<Value> batch_grad = grad(loss_of(x, y), flat, false);

  std::vector<Tensor> acc;
  for (Index e = 0; e < x.rows(); ++e) {
    Tensor xe = Tensor::zeros({1, x.cols()});
    Tensor ye = Tensor::zeros({1, 1});
    for (Index c = 0; c < x.cols(); ++c) xe.at(0, c) = x.at(e, c);
    ye.at(0, 0) = y.at(e, 0);
    std::vector<Value> ge = grad(loss_of(xe, ye), flat, false);
    if (acc.empty()) {
      for (const Value& g : ge) acc.push_back(g.tensor());
    } else {
      for (size_t i = 0; i < ge.size(); ++i) acc[i].array() += ge[i].tensor().array();
    }
  }
  double worst = 0.0;
  for (size_t i = 0; i < batch_grad.size(); ++i) {
    worst = std::max(worst,
                     (batch_grad[i].tensor().array() - acc[i].array()).abs().maxCoeff());
  }
  r.pass = worst < 1e-9;
  r.detail = "sum-of-per-example vs batch gradient, max abs diff " + fmt(worst);
  return r;
}

CheckResult check_create_graph_agreement(std::uint64_t seed) {
  CheckResult r{"autodiff.create-graph-agreement", true, ""};
  Rng rng(derive_seed(seed, "cg"));
  TaskNetwork net = init_task_network(derive_seed(seed, "cg.net"), {2, 4, 1});
  Tensor x = random_tensor(rng, {3, 2}, -2, 2);
  Tensor y = random_tensor(rng, {3, 1}, -2, 2);
  auto loss = [&] {
    return squared_error(forward(net, net.params, Value::constant(x)), Value::constant(y));
  };
  std::vector<Value> flat = net.params.flat();
  std::vector<Value> with = grad(loss(), flat, true);
  std::vector<Value> without = grad(loss(), flat, false);
  for (size_t i = 0; i < flat.size(); ++i) {
    for (Index j = 0; j < with[i].tensor().size(); ++j) {
      if (with[i].tensor()[j] != without[i].tensor()[j]) {
        r.pass = false;
        r.detail = "first-order values differ at tensor " + std::to_string(i);
        return r;
      }
    }
  }
  r.detail = "create_graph true/false produce identical first-order values";
  return r;
}

CheckResult check_sampler_ranges(std::uint64_t seed) {
  CheckResult r{"tasks.sampler-ranges", true, ""};
  const int draws = 100000;
  for (const auto& [label, spec] :
       {std::pair<const char*, DistributionSpec>{"standard", DistributionSpec::standard(5, 5)},
        {"non-overlap-train", DistributionSpec::non_overlapped_train(5, 5)},
        {"non-overlap-eval", DistributionSpec::non_overlapped_eval(5, 5)}}) {
    Rng rng(derive_seed(seed, label));
    for (int i = 0; i < draws; ++i) {
      SinusoidTask t = sample_sinusoid(spec, rng);
      if (!spec.amplitude.contains(t.amplitude) || !spec.frequency.contains(t.frequency) ||
          !spec.phase.contains(t.phase)) {
        r.pass = false;
        r.detail = std::string(label) + ": parameter outside its interval at draw " +
                   std::to_string(i);
        return r;
      }
      for (Index p = 0; p < t.support_x.size(); ++p) {
        if (t.support_x[p] < -5.0 || t.support_x[p] > 5.0) {
          r.pass = false;
          r.detail = std::string(label) + ": x outside [-5, 5]";
          return r;
        }
      }
    }
  }
  r.detail = "3 specs x 100000 draws inside their closed intervals";
  return r;
}

CheckResult check_determinism(std::uint64_t seed) {
  CheckResult r{"meta.determinism", true, ""};
  MetaConfig cfg;
  cfg.method = Method::L2f;
  cfg.iterations = 10;
  cfg.seed = seed;
  cfg.inner_steps_train = 1;
  auto run = [&] {
    MetaState state = init_meta_state(cfg, {1, 8, 1}, Head::Regression);
    TaskSampler sampler = make_sinusoid_sampler(DistributionSpec::standard(5, 5), cfg.seed);
    meta_train(cfg, state, sampler, make_network_loss(network_view(state)));
    return state;
  };
  MetaState a = run();
  MetaState b = run();
  for (size_t j = 0; j < a.theta.layers.size(); ++j) {
    const Tensor& wa = a.theta.layers[j].weight.tensor();
    const Tensor& wb = b.theta.layers[j].weight.tensor();
    for (Index i = 0; i < wa.size(); ++i) {
      if (wa[i] != wb[i]) {
        r.pass = false;
        r.detail = "trained weights differ bitwise at layer " + std::to_string(j);
        return r;
      }
    }
  }
  MetaTask t1 = make_sinusoid_sampler(DistributionSpec::standard(5, 5), seed)(3, 1);
  MetaTask t2 = make_sinusoid_sampler(DistributionSpec::standard(5, 5), seed)(3, 1);
  if ((t1.support_x.array() != t2.support_x.array()).any()) {
    r.pass = false;
    r.detail = "task sampler not reproducible";
    return r;
  }
  r.detail = "10-iteration l2f run twice bitwise identical; samplers reproducible";
  return r;
}

CheckResult check_gamma_range(std::uint64_t seed) {
  CheckResult r{"models.gamma-in-unit-interval", true, ""};
  const std::vector<Index> sizes = {1, 40, 40, 1};
  for (int rep = 0; rep < 1000; ++rep) {
    Attenuator att = init_attenuator(derive_seed(derive_seed(seed, "gamma"), rep), sizes);
    Rng rng(derive_seed(derive_seed(seed, "gamma-in"), rep));
    Value summary = Value::constant(random_tensor(rng, {3}, -5.0, 5.0));
    ModulationParams mod = generate_gamma(att, summary);
    for (Index i = 0; i < mod.gamma.tensor().size(); ++i) {
      const double g = mod.gamma.tensor()[i];
      if (!(g > 0.0 && g < 1.0)) {
        r.pass = false;
        r.detail = "gamma " + fmt(g) + " outside (0, 1) at repeat " + std::to_string(rep);
        return r;
      }
    }
  }
  r.detail = "1000 random attenuator/input draws emit gamma strictly in (0, 1)";
  return r;
}

CheckResult check_model_fd(std::uint64_t seed) {
  CheckResult r{"models.finite-difference", true, ""};
  const std::vector<Index> sizes = {2, 3, 2};
  TaskNetwork net = init_task_network(derive_seed(seed, "mfd.net"), sizes);
  Rng rng(derive_seed(seed, "mfd"));
  Tensor x = random_tensor(rng, {4, 2}, -2, 2);

  auto forward_loss = [&](const std::vector<Value>& leaves) {
    LayeredParams p = params_from_flat(leaves);
    return sum(square(forward(net, p, Value::constant(x))));
  };
  std::vector<Tensor> theta_point;
  for (const Value& v : net.params.flat()) theta_point.push_back(v.tensor());
  const double err_forward = finite_difference_check(forward_loss, theta_point, 1e-5);
  if (err_forward >= 1e-5) {
    r.pass = false;
    r.detail = "forward fd rel err " + fmt(err_forward);
    return r;
  }

  Attenuator att = init_attenuator(derive_seed(seed, "mfd.att"), sizes);
  // keep the relus active so the check probes a smooth point
  for (size_t j = 0; j + 1 < att.params.layers.size(); ++j) {
    Tensor b = att.params.layers[j].bias.tensor();
    b.array() += 0.75;
    att.params.layers[j].bias.set_tensor(std::move(b));
  }
  Tensor summary = random_tensor(rng, {2}, -1, 1);
  auto gamma_loss = [&](const std::vector<Value>& leaves) {
    Attenuator probe = att;
    probe.params = params_from_flat({leaves.begin(), leaves.end() - 1});
    return sum(square(generate_gamma(probe, leaves.back()).gamma));
  };
  std::vector<Tensor> point;
  for (const Value& v : att.params.flat()) point.push_back(v.tensor());
  point.push_back(summary);
  const double err_gamma = finite_difference_check(gamma_loss, point, 1e-5);
  if (err_gamma >= 1e-5) {
    r.pass = false;
    r.detail = "generate_gamma fd rel err " + fmt(err_gamma);
    return r;
  }
  r.detail = "forward rel err " + fmt(err_forward) + ", generate_gamma rel err " + fmt(err_gamma);
  return r;
}

CheckResult check_parameter_count() {
  CheckResult r{"models.regression-parameter-count", true, ""};
  LayeredParams p = init_layered_params(7, {1, 40, 40, 1});
  const Index n = p.parameter_count();
  r.pass = n == 1761;
  r.detail = "1-40-40-1 network has " + std::to_string(n) + " parameters";
  return r;
}

CheckResult check_eval_protocol(std::uint64_t seed) {
  CheckResult r{"tasks.eval-protocol", true, ""};
  EvalProtocol proto;
  proto.spec = DistributionSpec::standard(5, 5);
  if (proto.total() != 10000) {
    r.pass = false;
    r.detail = "protocol yields " + std::to_string(proto.total()) + " evaluations";
    return r;
  }
  MetaTask a = proto.task(seed, 17, 3);
  MetaTask b = proto.task(seed, 17, 62);
  MetaTask a2 = proto.task(seed, 17, 3);
  if ((a.support_x.array() != a2.support_x.array()).any()) {
    r.pass = false;
    r.detail = "same (curve, repeat) not reproducible";
    return r;
  }
  // Repeats of a curve share its parameters but draw fresh shots: identical
  // query targets would require identical inputs.
  if ((a.support_x.array() == b.support_x.array()).all()) {
    r.pass = false;
    r.detail = "distinct repeats drew identical support points";
    return r;
  }
  if (a.query_x.rows() != 100) {
    r.pass = false;
    r.detail = "query sample has " + std::to_string(a.query_x.rows()) + " points";
    return r;
  }
  r.detail = "100 x 100 protocol, reproducible streams, fresh shots per repeat";
  return r;
}

}  // namespace

std::vector<CheckResult> run_all(std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back(check_primitive_fd(seed));
  out.push_back(check_second_order(seed));
  out.push_back(check_sum_linearity(seed));
  out.push_back(check_create_graph_agreement(seed));
  out.push_back(check_model_fd(seed));
  out.push_back(check_parameter_count());
  out.push_back(check_gamma_range(seed));
  out.push_back(check_sampler_ranges(seed));
  out.push_back(check_eval_protocol(seed));
  out.push_back(check_determinism(seed));
  return out;
}

bool report(const std::vector<CheckResult>& results, std::ostream& os) {
  bool all = true;
  for (const CheckResult& r : results) {
    os << (r.pass ? "[PASS] " : "[FAIL] ") << r.name;
    if (!r.detail.empty()) os << ": " << r.detail;
    os << "\n";
    all = all && r.pass;
  }
  os << (all ? "selftest: all checks passed" : "selftest: FAILURES") << "\n";
  return all;
}

}  // namespace l2f::selftest
