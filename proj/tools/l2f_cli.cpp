// Experiment runner: train / eval / diagnose / sweep / selftest over the
// meta-learning library. All outputs land in the run's output directory.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "l2f/checkpoint.hpp"
#include "l2f/diagnostics.hpp"
#include "l2f/io.hpp"
#include "l2f/selftest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace l2f;

namespace {

struct ExperimentConfig {
  MetaConfig meta;
  std::string task = "sinusoid";  // sinusoid | sinusoid-nonoverlap | classification
  int k = 5;
  int m = -1;  // query size during training; -1 means "same as k"
  std::vector<Index> hidden = {40, 40};
  int num_classes = 5;
  int class_dim = 8;
  double class_noise = 0.05;
  long diag_cadence = 0;
  int diag_tasks = 50;
  int dump_tasks = 0;
  int eval_curves = 100;
  int eval_repeats = 100;
  int eval_query_points = 100;
  std::string out_dir = "runs/out";
  std::string checkpoint_path;

  int query_size() const { return m > 0 ? m : k; }

  std::vector<Index> net_sizes(Head head) const {
    std::vector<Index> sizes;
    sizes.push_back(head == Head::Regression ? 1 : class_dim);
    for (Index h : hidden) sizes.push_back(h);
    sizes.push_back(head == Head::Regression ? 1 : num_classes);
    return sizes;
  }

  Head head() const { return task == "classification" ? Head::Classification : Head::Regression; }

  DistributionSpec train_spec() const {
    return task == "sinusoid-nonoverlap" ? DistributionSpec::non_overlapped_train(k, query_size())
                                         : DistributionSpec::standard(k, query_size());
  }

  DistributionSpec eval_spec() const {
    return task == "sinusoid-nonoverlap" ? DistributionSpec::non_overlapped_eval(k, query_size())
                                         : DistributionSpec::standard(k, query_size());
  }

  ClassificationSpec class_spec() const {
    ClassificationSpec s;
    s.num_classes = num_classes;
    s.k = k;
    s.m = query_size();
    s.dim = class_dim;
    s.noise = class_noise;
    return s;
  }

  void validate() const {
    meta.validate();
    if (task != "sinusoid" && task != "sinusoid-nonoverlap" && task != "classification") {
      throw std::invalid_argument("config: unknown task '" + task + "'");
    }
    if (k < 1) throw std::invalid_argument("config: k must be >= 1");
    if (hidden.empty()) throw std::invalid_argument("config: hidden sizes must be nonempty");
    if (eval_curves < 1 || eval_repeats < 1 || eval_query_points < 1) {
      throw std::invalid_argument("config: eval protocol sizes must be >= 1");
    }
  }
};

json to_json(const ExperimentConfig& c) {
  json j;
  j["method"] = to_string(c.meta.method);
  j["order"] = to_string(c.meta.order);
  j["scope"] = to_string(c.meta.scope);
  j["transform"] = to_string(c.meta.transform);
  j["inner_lr"] = c.meta.inner_lr;
  j["meta_lr"] = c.meta.meta_lr;
  j["inner_steps_train"] = c.meta.inner_steps_train;
  j["inner_steps_eval"] = c.meta.inner_steps_eval;
  j["meta_batch_size"] = c.meta.meta_batch_size;
  j["iterations"] = c.meta.iterations;
  j["seed"] = c.meta.seed;
  j["abs_grad_summary"] = c.meta.abs_grad_summary;
  j["gamma_identity"] = c.meta.force_identity_gamma;
  j["adam_beta1"] = c.meta.adam_beta1;
  j["adam_beta2"] = c.meta.adam_beta2;
  j["adam_epsilon"] = c.meta.adam_epsilon;
  j["task"] = c.task;
  j["k"] = c.k;
  j["m"] = c.query_size();
  j["hidden"] = c.hidden;
  j["num_classes"] = c.num_classes;
  j["class_dim"] = c.class_dim;
  j["class_noise"] = c.class_noise;
  j["diag_cadence"] = c.diag_cadence;
  j["diag_tasks"] = c.diag_tasks;
  j["dump_tasks"] = c.dump_tasks;
  j["eval_curves"] = c.eval_curves;
  j["eval_repeats"] = c.eval_repeats;
  j["eval_query_points"] = c.eval_query_points;
  j["out_dir"] = c.out_dir;
  if (!c.checkpoint_path.empty()) j["checkpoint"] = c.checkpoint_path;
  return j;
}

void from_json_file(const std::string& path, ExperimentConfig& c) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  json j = json::parse(in);
  if (j.contains("method")) c.meta.method = method_from_string(j["method"]);
  if (j.contains("order")) c.meta.order = order_from_string(j["order"]);
  if (j.contains("scope")) c.meta.scope = scope_from_string(j["scope"]);
  if (j.contains("transform")) c.meta.transform = transform_from_string(j["transform"]);
  if (j.contains("inner_lr")) c.meta.inner_lr = j["inner_lr"];
  if (j.contains("meta_lr")) c.meta.meta_lr = j["meta_lr"];
  if (j.contains("inner_steps_train")) c.meta.inner_steps_train = j["inner_steps_train"];
  if (j.contains("inner_steps_eval")) {
    c.meta.inner_steps_eval = j["inner_steps_eval"].get<std::vector<int>>();
  }
  if (j.contains("meta_batch_size")) c.meta.meta_batch_size = j["meta_batch_size"];
  if (j.contains("iterations")) c.meta.iterations = j["iterations"];
  if (j.contains("seed")) c.meta.seed = j["seed"];
  if (j.contains("abs_grad_summary")) c.meta.abs_grad_summary = j["abs_grad_summary"];
  if (j.contains("gamma_identity")) c.meta.force_identity_gamma = j["gamma_identity"];
  if (j.contains("adam_beta1")) c.meta.adam_beta1 = j["adam_beta1"];
  if (j.contains("adam_beta2")) c.meta.adam_beta2 = j["adam_beta2"];
  if (j.contains("adam_epsilon")) c.meta.adam_epsilon = j["adam_epsilon"];
  if (j.contains("task")) c.task = j["task"];
  if (j.contains("k")) c.k = j["k"];
  if (j.contains("m")) c.m = j["m"];
  if (j.contains("hidden")) c.hidden = j["hidden"].get<std::vector<Index>>();
  if (j.contains("num_classes")) c.num_classes = j["num_classes"];
  if (j.contains("class_dim")) c.class_dim = j["class_dim"];
  if (j.contains("class_noise")) c.class_noise = j["class_noise"];
  if (j.contains("diag_cadence")) c.diag_cadence = j["diag_cadence"];
  if (j.contains("diag_tasks")) c.diag_tasks = j["diag_tasks"];
  if (j.contains("dump_tasks")) c.dump_tasks = j["dump_tasks"];
  if (j.contains("eval_curves")) c.eval_curves = j["eval_curves"];
  if (j.contains("eval_repeats")) c.eval_repeats = j["eval_repeats"];
  if (j.contains("eval_query_points")) c.eval_query_points = j["eval_query_points"];
  if (j.contains("out_dir")) c.out_dir = j["out_dir"];
  if (j.contains("checkpoint")) c.checkpoint_path = j["checkpoint"];
}

struct CommonFlags {
  std::string config_file;
  std::string method, order, scope, transform;
  std::vector<int> eval_steps;
};

// defaults < config file < command line; the file is applied in a
// pre-parse callback so explicit flags win.
void add_common_options(CLI::App* cmd, ExperimentConfig& c, CommonFlags& f) {
  cmd->add_option("--config", f.config_file, "JSON config file (flags override it)");
  cmd->add_option("--method", f.method, "maml | l2f | learned-scope");
  cmd->add_option("--order", f.order, "first | second");
  cmd->add_option("--scope", f.scope, "parameter | filter | layer | network | none");
  cmd->add_option("--transform", f.transform, "sigmoided-gamma | raw-gamma | affine");
  cmd->add_option("--inner-lr", c.meta.inner_lr, "inner-loop step size");
  cmd->add_option("--meta-lr", c.meta.meta_lr, "outer Adam learning rate");
  cmd->add_option("--inner-steps", c.meta.inner_steps_train, "inner steps during training");
  cmd->add_option("--eval-steps", f.eval_steps, "eval step counts (default 1 2 5)");
  cmd->add_option("--batch", c.meta.meta_batch_size, "meta batch size");
  cmd->add_option("--iterations", c.meta.iterations, "outer iterations");
  cmd->add_option("--seed", c.meta.seed, "root seed");
  cmd->add_flag("--abs-summary", c.meta.abs_grad_summary,
                "feed |mean| of gradients to the generator (off by default)");
  cmd->add_flag("--gamma-identity", c.meta.force_identity_gamma,
                "force gamma = 1 (testing; l2f only)");
  cmd->add_option("--task", c.task, "sinusoid | sinusoid-nonoverlap | classification");
  cmd->add_option("--k", c.k, "support shots");
  cmd->add_option("--m", c.m, "query points during training (default: k)");
  cmd->add_option("--hidden", c.hidden, "hidden layer sizes");
  cmd->add_option("--num-classes", c.num_classes, "classification: N");
  cmd->add_option("--class-dim", c.class_dim, "classification: input dimension");
  cmd->add_option("--class-noise", c.class_noise, "classification: cluster noise sigma");
  cmd->add_option("--diag-cadence", c.diag_cadence, "training diagnostics every N iterations");
  cmd->add_option("--diag-tasks", c.diag_tasks, "tasks per diagnostic window");
  cmd->add_option("--dump-tasks", c.dump_tasks,
                  "also write this many sampled sinusoid tasks as CSV");
  cmd->add_option("--curves", c.eval_curves, "eval protocol: distinct curves/tasks");
  cmd->add_option("--repeats", c.eval_repeats, "eval protocol: repeats per curve");
  cmd->add_option("--query-points", c.eval_query_points, "eval protocol: query sample size");
  cmd->add_option("--out", c.out_dir, "output directory");
}

// Applies the config file, then re-applies any explicitly passed flags.
void resolve_config(CLI::App* cmd, ExperimentConfig& c, CommonFlags& f) {
  if (!f.config_file.empty()) {
    ExperimentConfig from_file = c;
    from_json_file(f.config_file, from_file);
    // flags that were not given on the command line take the file's value
    auto keep = [&](const std::string& flag) {
      const CLI::Option* o = cmd->get_option_no_throw(flag);
      return o && o->count() > 0;
    };
    ExperimentConfig merged = from_file;
    if (keep("--inner-lr")) merged.meta.inner_lr = c.meta.inner_lr;
    if (keep("--meta-lr")) merged.meta.meta_lr = c.meta.meta_lr;
    if (keep("--inner-steps")) merged.meta.inner_steps_train = c.meta.inner_steps_train;
    if (keep("--batch")) merged.meta.meta_batch_size = c.meta.meta_batch_size;
    if (keep("--iterations")) merged.meta.iterations = c.meta.iterations;
    if (keep("--seed")) merged.meta.seed = c.meta.seed;
    if (keep("--abs-summary")) merged.meta.abs_grad_summary = c.meta.abs_grad_summary;
    if (keep("--gamma-identity")) merged.meta.force_identity_gamma = c.meta.force_identity_gamma;
    if (keep("--task")) merged.task = c.task;
    if (keep("--k")) merged.k = c.k;
    if (keep("--m")) merged.m = c.m;
    if (keep("--hidden")) merged.hidden = c.hidden;
    if (keep("--num-classes")) merged.num_classes = c.num_classes;
    if (keep("--class-dim")) merged.class_dim = c.class_dim;
    if (keep("--class-noise")) merged.class_noise = c.class_noise;
    if (keep("--diag-cadence")) merged.diag_cadence = c.diag_cadence;
    if (keep("--diag-tasks")) merged.diag_tasks = c.diag_tasks;
    if (keep("--dump-tasks")) merged.dump_tasks = c.dump_tasks;
    if (keep("--curves")) merged.eval_curves = c.eval_curves;
    if (keep("--repeats")) merged.eval_repeats = c.eval_repeats;
    if (keep("--query-points")) merged.eval_query_points = c.eval_query_points;
    if (keep("--out")) merged.out_dir = c.out_dir;
    if (keep("--checkpoint")) merged.checkpoint_path = c.checkpoint_path;
    c = merged;
  }
  if (!f.method.empty()) c.meta.method = method_from_string(f.method);
  if (!f.order.empty()) c.meta.order = order_from_string(f.order);
  if (!f.scope.empty()) c.meta.scope = scope_from_string(f.scope);
  if (!f.transform.empty()) c.meta.transform = transform_from_string(f.transform);
  if (!f.eval_steps.empty()) c.meta.inner_steps_eval = f.eval_steps;
  c.validate();
}

void archive_config(const ExperimentConfig& c) {
  fs::create_directories(c.out_dir);
  std::ofstream out(fs::path(c.out_dir) / "config.json");
  out << to_json(c).dump(2) << "\n";
}

TaskSampler make_sampler(const ExperimentConfig& c) {
  if (c.head() == Head::Classification) {
    return make_classification_sampler(c.class_spec(), c.meta.seed);
  }
  return make_sinusoid_sampler(c.train_spec(), c.meta.seed);
}

std::vector<MetaTask> make_eval_tasks(const ExperimentConfig& c) {
  if (c.head() == Head::Classification) {
    ClassificationSpec spec = c.class_spec();
    const std::uint64_t stream = derive_seed(c.meta.seed, "eval.classification");
    std::vector<MetaTask> tasks;
    const long total = static_cast<long>(c.eval_curves) * c.eval_repeats;
    tasks.reserve(static_cast<size_t>(total));
    for (long i = 0; i < total; ++i) {
      Rng rng(derive_seed(stream, static_cast<std::uint64_t>(i)));
      tasks.push_back(to_meta_task(sample_classification(spec, rng), i));
    }
    return tasks;
  }
  EvalProtocol proto;
  proto.spec = c.eval_spec();
  proto.curves = c.eval_curves;
  proto.repeats = c.eval_repeats;
  proto.query_points = c.eval_query_points;
  return proto.materialize(c.meta.seed);
}

std::vector<std::string> provenance(const ExperimentConfig& c) {
  std::vector<std::string> notes;
  notes.push_back("method=" + to_string(c.meta.method) + " task=" + c.task +
                  " k=" + std::to_string(c.k) + " seed=" + std::to_string(c.meta.seed));
  if (!c.checkpoint_path.empty()) notes.push_back("checkpoint=" + c.checkpoint_path);
  return notes;
}

void check_architecture(const MetaState& state, const ExperimentConfig& c) {
  const Head requested = c.head();
  const std::vector<Index> expected = c.net_sizes(requested);
  if (state.head != requested || state.net_sizes.front() != expected.front() ||
      state.net_sizes.back() != expected.back()) {
    std::ostringstream os;
    os << "checkpoint architecture mismatch: task '" << c.task << "' expects input/output "
       << expected.front() << "/" << expected.back() << " ("
       << (requested == Head::Regression ? "regression" : "classification")
       << " head), checkpoint has " << state.net_sizes.front() << "/" << state.net_sizes.back()
       << " (" << (state.head == Head::Regression ? "regression" : "classification") << ")";
    throw std::invalid_argument(os.str());
  }
}

void print_eval_table(const std::vector<EvalRow>& rows, Head head) {
  const char* metric = head == Head::Regression ? "MSE" : "accuracy";
  std::cout << "steps  mean_" << metric << "  ci95  count\n";
  for (const EvalRow& r : rows) {
    std::cout << r.steps << "  " << r.mean << " +- " << r.ci95 << "  (n=" << r.count << ")\n";
  }
}

CsvWriter make_conflict_csv(const std::string& path, const ExperimentConfig& c, size_t window) {
  std::vector<std::string> notes = provenance(c);
  notes.push_back("window=" + std::to_string(window) + " tasks");
  notes.push_back("scopes: per-task (subject=task), per-layer (subject=layer), "
                  "within-task (subject=task, per-example gradients)");
  return CsvWriter(path, {"scope", "iteration", "subject", "angle_rad"}, notes);
}

void append_conflict_rows(CsvWriter& csv, const ExperimentConfig& c, const MetaState& state,
                          const std::vector<MetaTask>& tasks, long iteration,
                          const LossFn& loss) {
  std::vector<std::vector<Tensor>> grads = per_task_meta_gradients(c.meta, state, loss, tasks);
  std::vector<Eigen::VectorXd> us;
  us.reserve(grads.size());
  for (const auto& g : grads) us.push_back(-flatten_gradients(g));

  ConflictStats per_task = degree_of_conflict(us);
  for (size_t i = 0; i < per_task.angles.size(); ++i) {
    csv.row({"per-task", CsvWriter::num(iteration), CsvWriter::num(static_cast<long>(i)),
             CsvWriter::num(per_task.angles[i])});
  }
  csv.row({"per-task-mean", CsvWriter::num(iteration), "", CsvWriter::num(per_task.mean_angle)});

  for (Index layer = 0; layer < state.theta.layer_count(); ++layer) {
    std::vector<Eigen::VectorXd> layer_us;
    layer_us.reserve(grads.size());
    for (const auto& g : grads) layer_us.push_back(-flatten_gradients(g, layer));
    ConflictStats s = degree_of_conflict(layer_us);
    csv.row({"per-layer", CsvWriter::num(iteration), CsvWriter::num(static_cast<long>(layer)),
             CsvWriter::num(s.mean_angle)});
  }

  const size_t within_count = std::min<size_t>(tasks.size(), 10);
  for (size_t i = 0; i < within_count; ++i) {
    std::vector<std::vector<Tensor>> ex = per_example_meta_gradients(c.meta, state, loss, tasks[i]);
    std::vector<Eigen::VectorXd> ex_us;
    ex_us.reserve(ex.size());
    for (const auto& g : ex) ex_us.push_back(-flatten_gradients(g));
    ConflictStats s = degree_of_conflict(ex_us);
    csv.row({"within-task", CsvWriter::num(iteration), CsvWriter::num(static_cast<long>(i)),
             CsvWriter::num(s.mean_angle)});
  }
}

CsvWriter make_landscape_csv(const std::string& path, const ExperimentConfig& c, size_t window) {
  std::vector<std::string> notes = provenance(c);
  notes.push_back("rows average " + std::to_string(window) + " tasks per inner step");
  return CsvWriter(path,
                   {"iteration", "step", "loss_min", "loss_max", "grad_diff_min", "grad_diff_max",
                    "effective_beta", "flagged", "tasks"},
                   notes);
}

void append_landscape_rows(CsvWriter& csv, const ExperimentConfig& c, const MetaState& state,
                           const std::vector<MetaTask>& tasks, long iteration, int steps) {
  const std::vector<double> probes = default_probe_steps(c.meta.inner_lr);
  std::vector<LandscapeRecord> agg(static_cast<size_t>(steps));
  long flagged = 0;
  for (const MetaTask& t : tasks) {
    std::vector<LandscapeRecord> recs = adaptation_landscape(c.meta, state, t, steps, probes);
    for (size_t s = 0; s < recs.size(); ++s) {
      agg[s].loss_min += recs[s].loss_min;
      agg[s].loss_max += recs[s].loss_max;
      agg[s].grad_diff_min += recs[s].grad_diff_min;
      agg[s].grad_diff_max += recs[s].grad_diff_max;
      agg[s].effective_beta += recs[s].effective_beta;
      flagged += recs[s].flagged;
    }
  }
  const double n = static_cast<double>(tasks.size());
  for (size_t s = 0; s < agg.size(); ++s) {
    csv.row({CsvWriter::num(iteration), CsvWriter::num(static_cast<long>(s)),
             CsvWriter::num(agg[s].loss_min / n), CsvWriter::num(agg[s].loss_max / n),
             CsvWriter::num(agg[s].grad_diff_min / n), CsvWriter::num(agg[s].grad_diff_max / n),
             CsvWriter::num(agg[s].effective_beta / n), CsvWriter::num(flagged),
             CsvWriter::num(static_cast<long>(tasks.size()))});
  }
}

int cmd_train(ExperimentConfig& c) {
  archive_config(c);
  const Head head = c.head();
  if (c.dump_tasks > 0) {
    if (head == Head::Classification) {
      std::cerr << "warning: --dump-tasks only applies to sinusoid tasks\n";
    } else {
      Rng rng(derive_seed(c.meta.seed, "task-dump"));
      std::vector<SinusoidTask> dump;
      dump.reserve(static_cast<size_t>(c.dump_tasks));
      for (int i = 0; i < c.dump_tasks; ++i) dump.push_back(sample_sinusoid(c.train_spec(), rng));
      write_task_dump((fs::path(c.out_dir) / "tasks_dump.csv").string(), dump);
    }
  }
  MetaState state = init_meta_state(c.meta, c.net_sizes(head), head);
  const LossFn loss = make_network_loss(network_view(state));
  TaskSampler sampler = make_sampler(c);

  std::optional<GammaLogWriter> gamma_log;
  if (c.meta.method != Method::Maml) {
    gamma_log.emplace((fs::path(c.out_dir) / "gamma_train.csv").string(), state.net_sizes,
                      c.meta.scope, provenance(c));
  }

  TrainHooks hooks;
  if (gamma_log) {
    hooks.on_batch = [&](long iter, const std::vector<AdaptedParams>& per_task) {
      for (size_t i = 0; i < per_task.size(); ++i) {
        if (per_task[i].gamma_used && per_task[i].gamma_used->gamma.defined()) {
          gamma_log->append(iter, static_cast<long>(i), per_task[i].gamma_used->gamma.tensor());
        }
      }
    };
  }
  std::optional<CsvWriter> conflict_csv, landscape_csv;
  if (c.diag_cadence > 0) {
    conflict_csv = make_conflict_csv((fs::path(c.out_dir) / "conflict_train.csv").string(), c,
                                     static_cast<size_t>(c.meta.meta_batch_size));
    landscape_csv = make_landscape_csv((fs::path(c.out_dir) / "landscape_train.csv").string(), c,
                                       static_cast<size_t>(c.meta.meta_batch_size));
    hooks.cadence = c.diag_cadence;
    hooks.on_cadence = [&](long iter, const MetaState& s, const std::vector<MetaTask>& batch,
                           const MetaBatchResult&) {
      append_conflict_rows(*conflict_csv, c, s, batch, iter, loss);
      append_landscape_rows(*landscape_csv, c, s, batch, iter,
                            std::max(1, c.meta.inner_steps_train));
    };
  }

  TrainResult result;
  const std::string ckpt = (fs::path(c.out_dir) / "checkpoint.ckpt").string();
  try {
    result = meta_train(c.meta, state, sampler, loss, hooks);
  } catch (const TrainingDivergence& e) {
    const std::string partial = (fs::path(c.out_dir) / "checkpoint.partial.ckpt").string();
    save_checkpoint(partial, state);
    std::cerr << "error: " << e.what() << "\n"
              << "last finite state written to " << partial << "\n";
    return 2;
  }
  save_checkpoint(ckpt, state);
  write_train_log((fs::path(c.out_dir) / "train_log.csv").string(), result.log,
                  state.theta.layer_count(), provenance(c));
  if (!result.log.empty()) {
    std::cout << "trained " << c.meta.iterations << " iterations, final outer loss "
              << result.log.back().outer_loss << "\n";
  }
  std::cout << "checkpoint: " << ckpt << "\n";
  return 0;
}

int cmd_eval(ExperimentConfig& c) {
  MetaState state = load_checkpoint(c.checkpoint_path);
  check_architecture(state, c);
  archive_config(c);
  std::vector<MetaTask> tasks = make_eval_tasks(c);
  std::vector<EvalRow> rows = evaluate(c.meta, state, tasks);
  std::vector<std::string> notes = provenance(c);
  notes.push_back("protocol: " + std::to_string(c.eval_curves) + " curves x " +
                  std::to_string(c.eval_repeats) + " repeats, query " +
                  std::to_string(c.eval_query_points));
  write_eval_table((fs::path(c.out_dir) / "eval.csv").string(), rows,
                   state.head == Head::Regression ? "mse" : "accuracy", notes);
  print_eval_table(rows, state.head);
  return 0;
}

int cmd_diagnose(ExperimentConfig& c, const std::vector<std::string>& which) {
  if (which.empty()) {
    std::cerr << "warning: no diagnostics selected; nothing to do\n";
    return 0;
  }
  const std::set<std::string> sel(which.begin(), which.end());
  for (const std::string& w : sel) {
    if (w != "conflict" && w != "landscape" && w != "gamma-log") {
      throw std::invalid_argument("diagnose: unknown diagnostic '" + w + "'");
    }
  }
  MetaState state = load_checkpoint(c.checkpoint_path);
  check_architecture(state, c);
  archive_config(c);
  const LossFn loss = make_network_loss(network_view(state));

  std::vector<MetaTask> tasks;
  {
    TaskSampler sampler = c.head() == Head::Classification
                              ? make_classification_sampler(c.class_spec(),
                                                            derive_seed(c.meta.seed, "diagnose"))
                              : make_sinusoid_sampler(c.eval_spec(),
                                                      derive_seed(c.meta.seed, "diagnose"));
    for (int i = 0; i < c.diag_tasks; ++i) tasks.push_back(sampler(i, 0));
  }

  if (sel.count("conflict")) {
    CsvWriter csv = make_conflict_csv((fs::path(c.out_dir) / "conflict.csv").string(), c,
                                      tasks.size());
    append_conflict_rows(csv, c, state, tasks, 0, loss);
    std::cout << "wrote conflict.csv\n";
  }
  if (sel.count("landscape")) {
    const int steps = *std::max_element(c.meta.inner_steps_eval.begin(),
                                        c.meta.inner_steps_eval.end());
    CsvWriter csv = make_landscape_csv((fs::path(c.out_dir) / "landscape.csv").string(), c,
                                       tasks.size());
    append_landscape_rows(csv, c, state, tasks, 0, std::max(1, steps));
    std::cout << "wrote landscape.csv\n";
  }
  if (sel.count("gamma-log")) {
    GammaLogWriter log((fs::path(c.out_dir) / "gamma_log.csv").string(), state.net_sizes,
                       state.scope, provenance(c));
    if (state.method != Method::Maml) {
      for (const MetaTask& t : tasks) {
        ModulationParams mod = eval_modulation(c.meta, state, loss, t);
        log.append(-1, t.id, mod.gamma.tensor());
      }
    }
    std::cout << "wrote gamma_log.csv (" << log.rows_written() << " rows)\n";
  }
  return 0;
}

int cmd_sweep(ExperimentConfig& c, std::vector<Index>& layers, std::vector<double>& gammas) {
  MetaState state = load_checkpoint(c.checkpoint_path);
  check_architecture(state, c);
  archive_config(c);
  if (layers.empty()) {
    for (Index j = 0; j < state.theta.layer_count(); ++j) layers.push_back(j);
  }
  if (gammas.empty()) gammas = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<MetaTask> tasks = make_eval_tasks(c);

  std::vector<std::string> notes = provenance(c);
  notes.push_back("metric: query metric after " +
                  std::to_string(*std::max_element(c.meta.inner_steps_eval.begin(),
                                                   c.meta.inner_steps_eval.end())) +
                  " adaptation steps");
  CsvWriter csv((fs::path(c.out_dir) / "gamma_sweep.csv").string(),
                {"layer", "gamma", "metric", "ci95"}, notes);
  for (Index layer : layers) {
    std::vector<SweepRow> rows = gamma_sweep(c.meta, state, layer, gammas, tasks);
    for (const SweepRow& r : rows) {
      csv.row({CsvWriter::num(static_cast<long>(r.layer)), CsvWriter::num(r.gamma),
               CsvWriter::num(r.metric), CsvWriter::num(r.ci95)});
    }
  }
  std::cout << "wrote gamma_sweep.csv (" << layers.size() * gammas.size() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-based meta-learning toolkit (MAML + attenuated variants)"};
  app.require_subcommand(1);

  ExperimentConfig cfg;
  CommonFlags flags;

  CLI::App* train = app.add_subcommand("train", "meta-train a model");
  add_common_options(train, cfg, flags);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common_options(eval, cfg, flags);
  eval->add_option("--checkpoint", cfg.checkpoint_path, "checkpoint to evaluate")->required();

  CLI::App* diagnose = app.add_subcommand("diagnose", "conflict / landscape / gamma diagnostics");
  add_common_options(diagnose, cfg, flags);
  diagnose->add_option("--checkpoint", cfg.checkpoint_path, "checkpoint to inspect")->required();
  std::vector<std::string> which;
  diagnose->add_option("--which", which, "any of: conflict landscape gamma-log");

  CLI::App* sweep = app.add_subcommand("sweep", "manual per-layer gamma sweep");
  add_common_options(sweep, cfg, flags);
  sweep->add_option("--checkpoint", cfg.checkpoint_path, "checkpoint to sweep")->required();
  std::vector<Index> sweep_layers;
  std::vector<double> sweep_gammas;
  sweep->add_option("--layers", sweep_layers, "layer indices (default: all)");
  sweep->add_option("--gammas", sweep_gammas, "gamma grid (default: 0 0.25 0.5 0.75 1)");

  CLI::App* selftest = app.add_subcommand("selftest", "finite-difference and oracle suites");
  std::uint64_t selftest_seed = 20240;
  selftest->add_option("--seed", selftest_seed, "seed for the property suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (selftest->parsed()) {
      auto results = l2f::selftest::run_all(selftest_seed);
      return l2f::selftest::report(results, std::cout) ? 0 : 2;
    }
    CLI::App* active = train->parsed() ? train
                       : eval->parsed() ? eval
                       : diagnose->parsed() ? diagnose
                                            : sweep;
    resolve_config(active, cfg, flags);
    if (train->parsed()) return cmd_train(cfg);
    if (eval->parsed()) return cmd_eval(cfg);
    if (diagnose->parsed()) return cmd_diagnose(cfg, which);
    return cmd_sweep(cfg, sweep_layers, sweep_gammas);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
