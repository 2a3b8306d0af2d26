#include "l2f/tasks.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace l2f {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kInputLo = -5.0;
constexpr double kInputHi = 5.0;

void check_interval(const char* name, const Interval& iv) {
  if (!(iv.lo <= iv.hi)) {
    throw std::invalid_argument(std::string("DistributionSpec: empty ") + name + " range [" +
                                std::to_string(iv.lo) + ", " + std::to_string(iv.hi) + "]");
  }
}

}  // namespace

void DistributionSpec::validate() const {
  check_interval("amplitude", amplitude);
  check_interval("frequency", frequency);
  check_interval("phase", phase);
  if (k < 1) throw std::invalid_argument("DistributionSpec: k must be >= 1");
  if (m < 1) throw std::invalid_argument("DistributionSpec: m must be >= 1");
}

DistributionSpec DistributionSpec::standard(int k, int m) {
  DistributionSpec s;
  s.amplitude = {0.1, 5.0};
  s.frequency = {0.8, 1.2};
  s.phase = {0.0, kPi};
  s.k = k;
  s.m = m;
  return s;
}

DistributionSpec DistributionSpec::non_overlapped_train(int k, int m) {
  DistributionSpec s;
  s.amplitude = {0.1, 3.0};
  s.frequency = {0.8, 1.0};
  s.phase = {0.0, kPi / 2.0};
  s.k = k;
  s.m = m;
  return s;
}

DistributionSpec DistributionSpec::non_overlapped_eval(int k, int m) {
  DistributionSpec s;
  s.amplitude = {3.0, 5.0};
  s.frequency = {1.0, 1.2};
  s.phase = {kPi / 2.0, kPi};
  s.k = k;
  s.m = m;
  return s;
}

namespace {

void fill_sine_points(Tensor& x, Tensor& y, int n, double a, double w, double b, Rng& rng) {
  x = Tensor::zeros({n, 1});
  y = Tensor::zeros({n, 1});
  for (Index i = 0; i < n; ++i) {
    const double xi = rng.uniform(kInputLo, kInputHi);
    x[i] = xi;
    y[i] = a * std::sin(w * xi + b);
  }
}

}  // namespace

SinusoidTask sample_sinusoid(const DistributionSpec& spec, Rng& rng) {
  spec.validate();
  SinusoidTask t;
  t.amplitude = rng.uniform(spec.amplitude.lo, spec.amplitude.hi);
  t.frequency = rng.uniform(spec.frequency.lo, spec.frequency.hi);
  t.phase = rng.uniform(spec.phase.lo, spec.phase.hi);
  fill_sine_points(t.support_x, t.support_y, spec.k, t.amplitude, t.frequency, t.phase, rng);
  fill_sine_points(t.query_x, t.query_y, spec.m, t.amplitude, t.frequency, t.phase, rng);
  return t;
}

MetaTask to_meta_task(const SinusoidTask& t, long id) {
  MetaTask m;
  m.support_x = t.support_x;
  m.support_y = t.support_y;
  m.query_x = t.query_x;
  m.query_y = t.query_y;
  m.id = id;
  return m;
}

void ClassificationSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("ClassificationSpec: need N >= 2 classes");
  if (k < 1 || m < 1) throw std::invalid_argument("ClassificationSpec: k and m must be >= 1");
  if (dim < 1) throw std::invalid_argument("ClassificationSpec: dim must be >= 1");
  if (noise < 0.0) throw std::invalid_argument("ClassificationSpec: noise must be >= 0");
}

SyntheticClassTask sample_classification(const ClassificationSpec& spec, Rng& rng) {
  spec.validate();
  SyntheticClassTask t;
  t.centroids = Tensor::zeros({spec.num_classes, spec.dim});
  for (Index i = 0; i < t.centroids.size(); ++i) t.centroids[i] = rng.uniform(-1.0, 1.0);

  auto fill_split = [&](int per_class, Tensor& x, std::vector<int>& labels) {
    const Index n = static_cast<Index>(spec.num_classes) * per_class;
    x = Tensor::zeros({n, spec.dim});
    labels.resize(static_cast<size_t>(n));
    Index row = 0;
    for (int c = 0; c < spec.num_classes; ++c) {
      for (int s = 0; s < per_class; ++s, ++row) {
        for (Index d = 0; d < spec.dim; ++d) {
          x.at(row, d) = t.centroids.at(c, d) + spec.noise * rng.normal();
        }
        labels[static_cast<size_t>(row)] = c;
      }
    }
  };
  fill_split(spec.k, t.support_x, t.support_labels);
  fill_split(spec.m, t.query_x, t.query_labels);
  return t;
}

MetaTask to_meta_task(const SyntheticClassTask& t, long id) {
  MetaTask m;
  m.support_x = t.support_x;
  m.query_x = t.query_x;
  m.support_labels = t.support_labels;
  m.query_labels = t.query_labels;
  m.id = id;
  return m;
}

TaskSampler make_sinusoid_sampler(const DistributionSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::uint64_t stream = derive_seed(seed, "tasks.sinusoid");
  return [spec, stream](long iteration, int slot) {
    Rng rng(derive_seed(stream, static_cast<std::uint64_t>(iteration),
                        static_cast<std::uint64_t>(slot)));
    return to_meta_task(sample_sinusoid(spec, rng), iteration * 1000 + slot);
  };
}

TaskSampler make_classification_sampler(const ClassificationSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::uint64_t stream = derive_seed(seed, "tasks.classification");
  return [spec, stream](long iteration, int slot) {
    Rng rng(derive_seed(stream, static_cast<std::uint64_t>(iteration),
                        static_cast<std::uint64_t>(slot)));
    return to_meta_task(sample_classification(spec, rng), iteration * 1000 + slot);
  };
}

MetaTask EvalProtocol::task(std::uint64_t seed, int curve, int repeat) const {
  spec.validate();
  const std::uint64_t stream = derive_seed(seed, "eval.sinusoid");
  // Curve parameters depend on the curve index only, so repeats share them.
  Rng curve_rng(derive_seed(stream, static_cast<std::uint64_t>(curve)));
  const double a = curve_rng.uniform(spec.amplitude.lo, spec.amplitude.hi);
  const double w = curve_rng.uniform(spec.frequency.lo, spec.frequency.hi);
  const double b = curve_rng.uniform(spec.phase.lo, spec.phase.hi);

  Rng rng(derive_seed(stream, static_cast<std::uint64_t>(curve),
                      static_cast<std::uint64_t>(repeat) + 1));
  MetaTask t;
  Tensor sx, sy, qx, qy;
  fill_sine_points(sx, sy, spec.k, a, w, b, rng);
  fill_sine_points(qx, qy, query_points, a, w, b, rng);
  t.support_x = sx;
  t.support_y = sy;
  t.query_x = qx;
  t.query_y = qy;
  t.id = static_cast<long>(curve) * repeats + repeat;
  return t;
}

std::vector<MetaTask> EvalProtocol::materialize(std::uint64_t seed) const {
  std::vector<MetaTask> out;
  out.reserve(static_cast<size_t>(total()));
  for (int c = 0; c < curves; ++c) {
    for (int r = 0; r < repeats; ++r) out.push_back(task(seed, c, r));
  }
  return out;
}

}  // namespace l2f
