// Acceptance suite: one criterion per invocation (1..8), each printing a
// single [PASS]/[FAIL] line. Criterion 9 is the CLI selftest subcommand.

#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <sstream>

#include "l2f/diagnostics.hpp"
#include "l2f/rng.hpp"

using namespace l2f;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

// ---- criterion 1: second-order meta-gradient vs central differences -------

bool criterion_1(std::string& detail) {
  const auto t0 = Clock::now();
  MetaTask task;
  task.support_x = Tensor::from_rows({{0.5}, {-1.0}, {2.0}});
  task.support_y = Tensor::from_rows({{0.8}, {-0.4}, {1.5}});
  task.query_x = Tensor::from_rows({{1.0}, {-2.0}});
  task.query_y = Tensor::from_rows({{0.9}, {-1.1}});

  TaskNetwork net = init_task_network(17, {1, 1});  // 2 parameters
  MetaConfig cfg;
  cfg.inner_steps_train = 2;
  cfg.order = Order::Second;
  const LossFn loss = make_network_loss(net);

  auto f = [&](const std::vector<Value>& leaves) {
    MetaState state;
    state.net_sizes = {1, 1};
    state.method = Method::Maml;
    state.theta = params_from_flat(leaves);
    return meta_loss(cfg, state, loss, {task}).loss;
  };
  std::vector<Tensor> point;
  for (const Value& v : net.params.flat()) point.push_back(v.tensor());
  const double err = finite_difference_check(f, point, 1e-5);

  // same check with the generator in the loop, gradients w.r.t. (theta, phi);
  // positive hidden biases keep the generator's relus active so the probed
  // point is smooth
  Attenuator att = init_attenuator(5, {1, 1});
  for (size_t j = 0; j + 1 < att.params.layers.size(); ++j) {
    Tensor b = att.params.layers[j].bias.tensor();
    b.array() += 0.75;
    att.params.layers[j].bias.set_tensor(std::move(b));
  }
  MetaConfig l2f_cfg = cfg;
  l2f_cfg.method = Method::L2f;
  auto f2 = [&](const std::vector<Value>& leaves) {
    MetaState state;
    state.net_sizes = {1, 1};
    state.method = Method::L2f;
    state.theta = params_from_flat({leaves.begin(), leaves.begin() + 2});
    state.attenuator = att;
    state.attenuator->params = params_from_flat({leaves.begin() + 2, leaves.end()});
    return meta_loss(l2f_cfg, state, loss, {task}).loss;
  };
  std::vector<Tensor> point2 = point;
  for (const Value& v : att.params.flat()) point2.push_back(v.tensor());
  const double err2 = finite_difference_check(f2, point2, 1e-5);

  const double elapsed = seconds_since(t0);
  detail = "maml rel err " + fmt(err) + ", l2f rel err " + fmt(err2) + " (tol 1e-4), " +
           fmt(elapsed) + " s";
  return err < 1e-4 && err2 < 1e-4 && elapsed < 1.0;
}

// ---- criterion 2: identity-forced modulation tracks the maml trajectory ---

bool criterion_2(std::string& detail) {
  const auto t0 = Clock::now();
  const long iterations = 100;

  auto run = [&](Method method) {
    MetaConfig cfg;
    cfg.method = method;
    cfg.force_identity_gamma = method == Method::L2f;
    cfg.iterations = iterations;
    cfg.seed = 77;
    MetaState state = init_meta_state(cfg, {1, 40, 40, 1}, Head::Regression);
    std::vector<std::vector<Tensor>> snapshots;
    TrainHooks hooks;
    hooks.cadence = 1;
    hooks.on_cadence = [&](long, const MetaState& s, const std::vector<MetaTask>&,
                           const MetaBatchResult&) {
      std::vector<Tensor> snap;
      for (const Value& v : s.theta.flat()) snap.push_back(v.tensor());
      snapshots.push_back(std::move(snap));
    };
    meta_train(cfg, state, make_sinusoid_sampler(DistributionSpec::standard(5, 5), cfg.seed),
               make_network_loss(network_view(state)), hooks);
    std::vector<Tensor> final_snap;
    for (const Value& v : state.theta.flat()) final_snap.push_back(v.tensor());
    snapshots.push_back(std::move(final_snap));
    return snapshots;
  };

  auto maml = run(Method::Maml);
  auto l2f = run(Method::L2f);
  double worst = 0.0;
  for (size_t s = 0; s < maml.size(); ++s) {
    for (size_t i = 0; i < maml[s].size(); ++i) {
      worst = std::max(worst,
                       (maml[s][i].array() - l2f[s][i].array()).abs().maxCoeff());
    }
  }
  const double elapsed = seconds_since(t0);
  detail = "max per-parameter deviation over " + std::to_string(maml.size()) +
           " snapshots: " + fmt(worst) + " (tol 1e-10), " + fmt(elapsed) + " s";
  return worst <= 1e-10 && elapsed < 60.0;
}

// ---- criterion 3: scalar closed form ---------------------------------------

bool criterion_3(std::string& detail) {
  const LossFn scalar_loss = [](const LayeredParams& p, const MetaTask& t, bool on_query) {
    Value w = reshape(p.layers[0].weight, {});
    const double target = (on_query ? t.query_y : t.support_y).at(0, 0);
    return square(sub(w, Value::constant(Tensor::scalar(target))));
  };
  Rng rng(321);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const double theta0 = rng.uniform(-2, 2);
    const double s = rng.uniform(-2, 2);
    const double q = rng.uniform(-2, 2);
    const double alpha = rng.uniform(0.001, 0.2);

    MetaState state;
    state.net_sizes = {1, 1};
    state.method = Method::Maml;
    state.theta.layers.push_back(
        {Value::param(Tensor::from_rows({{theta0}})), Value::param(Tensor::zeros({1}))});

    MetaConfig cfg;
    cfg.inner_lr = alpha;
    cfg.inner_steps_train = 1;
    MetaTask task;
    task.support_x = Tensor::zeros({1, 1});
    task.query_x = Tensor::zeros({1, 1});
    task.support_y = Tensor::from_rows({{s}});
    task.query_y = Tensor::from_rows({{q}});

    MetaBatchResult mb = meta_loss(cfg, state, scalar_loss, {task});
    const double got = grad(mb.loss, {state.theta.layers[0].weight}, false)[0].tensor()[0];
    const double theta1 = theta0 - alpha * 2.0 * (theta0 - s);
    const double expected = 2.0 * (theta1 - q) * (1.0 - 2.0 * alpha);
    worst = std::max(worst, std::fabs(got - expected));
  }
  detail = "100 random draws, max abs deviation " + fmt(worst) + " (tol 1e-10)";
  return worst <= 1e-10;
}

// ---- criterion 4: conflict-metric oracles ----------------------------------

double conflict_oracle(const std::vector<Eigen::VectorXd>& us) {
  Eigen::VectorXd total = Eigen::VectorXd::Zero(us.front().size());
  for (const auto& u : us) total += u;
  const Eigen::VectorXd v = total / total.norm();
  double acc = 0.0;
  long n = 0;
  for (const auto& u : us) {
    if (u.norm() == 0.0) continue;
    double c = u.dot(v) / u.norm();
    c = std::max(-1.0, std::min(1.0, c));
    acc += std::fabs(std::acos(c));
    ++n;
  }
  return acc / static_cast<double>(n);
}

bool criterion_4(std::string& detail) {
  constexpr double kPi = 3.14159265358979323846;
  Eigen::VectorXd a(3), b(2), c(2);
  a << 0.4, -1.2, 0.7;
  ConflictStats same = degree_of_conflict({a, a, a});
  if (std::fabs(same.mean_angle) > 1e-9) {
    detail = "identical set gave " + fmt(same.mean_angle);
    return false;
  }
  b << 1, 0;
  c << 0, 1;
  ConflictStats ortho = degree_of_conflict({b, c});
  if (std::fabs(ortho.mean_angle - kPi / 4) > 1e-9) {
    detail = "orthogonal pair gave " + fmt(ortho.mean_angle);
    return false;
  }
  Rng rng(99);
  double worst = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    const int n = 2 + static_cast<int>(rng.below(7));
    const int dim = 2 + static_cast<int>(rng.below(8));
    std::vector<Eigen::VectorXd> us;
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd u(dim);
      for (int d = 0; d < dim; ++d) u[d] = rng.uniform(-3, 3);
      us.push_back(u);
    }
    worst = std::max(worst,
                     std::fabs(degree_of_conflict(us).mean_angle - conflict_oracle(us)));
  }
  detail = "identical 0, orthogonal pi/4, 1000 random sets max dev " + fmt(worst) +
           " (tol 1e-9)";
  return worst <= 1e-9;
}

// ---- criterion 5: landscape oracle -----------------------------------------

bool criterion_5(std::string& detail) {
  // isotropic: L = |w|^2 + |b|^2, Hessian 2I, top eigenvalue 2
  LayeredParams theta;
  theta.layers.push_back({Value::param(Tensor::from_rows({{1.0, -2.0}})),
                          Value::param(Tensor::from_vector({0.5}))});
  auto iso = [](const LayeredParams& p) {
    return add(sum(square(p.layers[0].weight)), sum(square(p.layers[0].bias)));
  };
  std::vector<Tensor> g = {Tensor::from_rows({{2.0, -4.0}}), Tensor::from_vector({1.0})};
  LandscapeRecord rec = landscape_probe(iso, theta, g, default_probe_steps(0.01));
  const double dev_iso = std::fabs(rec.effective_beta - 2.0);

  // anisotropic with the gradient along the top eigenvector: top eigenvalue 6
  LayeredParams theta2;
  theta2.layers.push_back(
      {Value::param(Tensor::from_rows({{1.0, 0.0}})), Value::param(Tensor::zeros({1}))});
  auto aniso = [](const LayeredParams& p) {
    Value coeffs = Value::constant(Tensor::from_rows({{3.0, 1.0}}));
    return sum(mul(coeffs, square(p.layers[0].weight)));
  };
  std::vector<Tensor> g2 = {Tensor::from_rows({{6.0, 0.0}}), Tensor::zeros({1})};
  LandscapeRecord rec2 = landscape_probe(aniso, theta2, g2, default_probe_steps(0.01));
  const double dev_aniso = std::fabs(rec2.effective_beta - 6.0);

  detail = "isotropic beta dev " + fmt(dev_iso) + ", aligned anisotropic dev " + fmt(dev_aniso) +
           " (tol 1e-9)";
  return dev_iso <= 1e-9 && dev_aniso <= 1e-9;
}

// ---- criteria 6 and 7: directional reproduction ----------------------------

std::vector<EvalRow> train_and_eval(Method method, std::uint64_t seed, bool nonoverlap,
                                    long iterations) {
  MetaConfig cfg;
  cfg.method = method;
  cfg.iterations = iterations;
  cfg.seed = seed;
  MetaState state = init_meta_state(cfg, {1, 40, 40, 1}, Head::Regression);
  const DistributionSpec train_spec = nonoverlap ? DistributionSpec::non_overlapped_train(5, 5)
                                                 : DistributionSpec::standard(5, 5);
  const auto t0 = Clock::now();
  meta_train(cfg, state, make_sinusoid_sampler(train_spec, seed),
             make_network_loss(network_view(state)));
  std::cerr << "  " << to_string(method) << " seed " << seed << ": trained " << iterations
            << " iters in " << fmt(seconds_since(t0)) << " s" << std::endl;

  EvalProtocol proto;
  proto.spec = nonoverlap ? DistributionSpec::non_overlapped_eval(5, 5)
                          : DistributionSpec::standard(5, 5);
  std::vector<EvalRow> rows = evaluate(cfg, state, proto.materialize(seed));
  std::cerr << "    eval MSE @1/2/5: " << fmt(rows[0].mean) << " / " << fmt(rows[1].mean)
            << " / " << fmt(rows[2].mean) << std::endl;
  return rows;
}

bool directional_reproduction(bool nonoverlap, const std::vector<int>& step_filter,
                              std::string& detail) {
  const long iterations = 10000;
  const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  int wins = 0;
  std::ostringstream table;
  for (std::uint64_t seed : seeds) {
    std::vector<EvalRow> maml = train_and_eval(Method::Maml, seed, nonoverlap, iterations);
    std::vector<EvalRow> l2f = train_and_eval(Method::L2f, seed, nonoverlap, iterations);
    bool win = true;
    for (size_t i = 0; i < maml.size(); ++i) {
      bool counted = false;
      for (int s : step_filter) counted = counted || maml[i].steps == s;
      if (counted && !(l2f[i].mean < maml[i].mean)) win = false;
    }
    wins += win;
    table << " seed " << seed << (win ? " l2f<maml" : " NOT-better");
  }
  detail = std::to_string(wins) + "/5 seeds with l2f below maml at the gated steps;" +
           table.str();
  return wins >= 4;
}

bool criterion_6(std::string& detail) {
  std::cerr << "criterion 6: 10 training runs of 10000 iterations + full eval protocol"
            << std::endl;
  const bool pass = directional_reproduction(false, {1, 2, 5}, detail);

  // Full-scale run, reported against the published 5-shot table
  // (maml 1.2247 / 1.0268 / 0.8995, l2f 1.0537 / 0.8426 / 0.7096); not a gate.
  std::cerr << "criterion 6 report: one 50000-iteration pair at seed 1" << std::endl;
  const double published_l2f[3] = {1.0537, 0.8426, 0.7096};
  std::vector<EvalRow> maml50 = train_and_eval(Method::Maml, 1, false, 50000);
  std::vector<EvalRow> l2f50 = train_and_eval(Method::L2f, 1, false, 50000);
  std::ostringstream report;
  report << "; 50k report (not asserted): maml " << fmt(maml50[0].mean) << "/"
         << fmt(maml50[1].mean) << "/" << fmt(maml50[2].mean) << ", l2f " << fmt(l2f50[0].mean)
         << "/" << fmt(l2f50[1].mean) << "/" << fmt(l2f50[2].mean) << ", l2f within +-0.2 of the"
         << " published values at";
  for (size_t i = 0; i < 3; ++i) {
    if (std::fabs(l2f50[i].mean - published_l2f[i]) <= 0.2) report << " " << l2f50[i].steps;
  }
  report << " steps";
  detail += report.str();
  return pass;
}

bool criterion_7(std::string& detail) {
  std::cerr << "criterion 7: non-overlapped distributions, gate at 5 steps" << std::endl;
  return directional_reproduction(true, {5}, detail);
}

// ---- criterion 8: synthetic classification smoke ---------------------------

double classification_accuracy(const MetaConfig& base_cfg, Method method, Scope scope,
                               std::uint64_t seed, long iterations, double& out_seconds) {
  MetaConfig cfg = base_cfg;
  cfg.method = method;
  cfg.scope = scope;
  cfg.seed = seed;
  cfg.iterations = iterations;
  ClassificationSpec spec;
  spec.noise = 0.05;
  const std::vector<Index> sizes = {spec.dim, 40, 40, spec.num_classes};
  MetaState state = init_meta_state(cfg, sizes, Head::Classification);
  const auto t0 = Clock::now();
  meta_train(cfg, state, make_classification_sampler(spec, seed),
             make_network_loss(network_view(state)));
  out_seconds = seconds_since(t0);

  const std::uint64_t eval_stream = derive_seed(seed, "accept8.eval");
  std::vector<MetaTask> tasks;
  for (long i = 0; i < 100; ++i) {
    Rng rng(derive_seed(eval_stream, static_cast<std::uint64_t>(i)));
    tasks.push_back(to_meta_task(sample_classification(spec, rng), i));
  }
  std::vector<EvalRow> rows = evaluate(cfg, state, tasks);
  return rows.back().mean;  // accuracy after 5 steps
}

bool criterion_8(std::string& detail) {
  MetaConfig base;
  base.inner_steps_train = 5;
  base.inner_steps_eval = {1, 2, 5};
  const long iterations = 2500;
  double secs = 0.0;

  const double maml_acc =
      classification_accuracy(base, Method::Maml, Scope::Layer, 11, iterations, secs);
  std::cerr << "  maml acc " << fmt(maml_acc) << " (" << fmt(secs) << " s)" << std::endl;
  const double l2f_acc =
      classification_accuracy(base, Method::L2f, Scope::Layer, 11, iterations, secs);
  std::cerr << "  l2f acc " << fmt(l2f_acc) << " (" << fmt(secs) << " s)" << std::endl;

  std::ostringstream scopes;
  double layer_acc = 0.0, network_acc = 0.0;
  for (Scope scope : {Scope::Parameter, Scope::Filter, Scope::Layer, Scope::Network}) {
    const double acc =
        classification_accuracy(base, Method::LearnedScope, scope, 11, iterations, secs);
    scopes << " " << to_string(scope) << "=" << fmt(acc);
    std::cerr << "  learned-scope " << to_string(scope) << " acc " << fmt(acc) << std::endl;
    if (scope == Scope::Layer) layer_acc = acc;
    if (scope == Scope::Network) network_acc = acc;
  }

  detail = "maml " + fmt(maml_acc) + ", l2f " + fmt(l2f_acc) +
           " (gate > 0.90); learned scopes:" + scopes.str() + "; layer vs network: " +
           fmt(layer_acc) + " vs " + fmt(network_acc) + " (reported, not asserted)";
  return maml_acc > 0.90 && l2f_acc > 0.90;
}

struct Criterion {
  int id;
  const char* title;
  std::function<bool(std::string&)> run;
};

const Criterion kCriteria[] = {
    {1, "meta-gradient matches central finite differences", criterion_1},
    {2, "identity-forced modulation tracks the maml trajectory", criterion_2},
    {3, "scalar quadratic closed-form meta-gradient", criterion_3},
    {4, "conflict-metric oracles", criterion_4},
    {5, "landscape probe recovers the quadratic's smoothness constant", criterion_5},
    {6, "reduced-scale 5-shot regression: l2f below maml at 1/2/5 steps", criterion_6},
    {7, "non-overlapped distributions: l2f below maml at 5 steps", criterion_7},
    {8, "synthetic classification smoke with scope variants", criterion_8},
};

}  // namespace

int main(int argc, char** argv) {
  bool all_pass = true;
  bool ran_any = false;
  for (const Criterion& c : kCriteria) {
    if (argc > 1 && std::to_string(c.id) != argv[1]) continue;
    ran_any = true;
    std::string detail;
    bool pass = false;
    try {
      pass = c.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << "criterion " << c.id << ": " << c.title
              << " -- " << detail << std::endl;
    all_pass = all_pass && pass;
  }
  if (!ran_any) {
    std::cerr << "usage: acceptance [1..8]  (no argument runs everything)" << std::endl;
    return 1;
  }
  return all_pass ? 0 : 1;
}
