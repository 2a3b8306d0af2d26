#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "l2f/rng.hpp"
#include "l2f/tensor.hpp"

namespace l2f {

/// One sampled task: support set for adaptation, query set for the
/// meta-loss. Classification tasks carry integer labels; regression tasks
/// carry targets in *_y.
struct MetaTask {
  Tensor support_x, support_y;
  Tensor query_x, query_y;
  std::vector<int> support_labels, query_labels;
  long id = 0;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return lo <= v && v <= hi; }
};

/// Sinusoid family y = A sin(wx + b), x in [-5, 5]; parameter ranges are
/// closed intervals sampled uniformly.
struct DistributionSpec {
  Interval amplitude{0.1, 5.0};
  Interval frequency{0.8, 1.2};
  Interval phase{0.0, 3.14159265358979323846};
  int k = 5;  // support shots
  int m = 5;  // query points

  void validate() const;

  static DistributionSpec standard(int k, int m);
  static DistributionSpec non_overlapped_train(int k, int m);
  static DistributionSpec non_overlapped_eval(int k, int m);
};

struct SinusoidTask {
  double amplitude = 0.0, frequency = 0.0, phase = 0.0;
  Tensor support_x, support_y;  // [k x 1]
  Tensor query_x, query_y;      // [m x 1]
};

SinusoidTask sample_sinusoid(const DistributionSpec& spec, Rng& rng);
MetaTask to_meta_task(const SinusoidTask& t, long id = 0);

/// N-way k-shot Gaussian-cluster classification: centroids uniform in
/// [-1, 1]^d, points = centroid + N(0, sigma^2 I).
struct ClassificationSpec {
  int num_classes = 5;
  int k = 5;
  int m = 5;
  int dim = 8;
  double noise = 0.05;

  void validate() const;
};

struct SyntheticClassTask {
  Tensor centroids;  // [N x d]
  Tensor support_x;  // [N*k x d]
  std::vector<int> support_labels;
  Tensor query_x;  // [N*m x d]
  std::vector<int> query_labels;
};

SyntheticClassTask sample_classification(const ClassificationSpec& spec, Rng& rng);
MetaTask to_meta_task(const SyntheticClassTask& t, long id = 0);

/// Task source for training: a pure function of (iteration, slot).
using TaskSampler = std::function<MetaTask(long iteration, int slot)>;

TaskSampler make_sinusoid_sampler(const DistributionSpec& spec, std::uint64_t seed);
TaskSampler make_classification_sampler(const ClassificationSpec& spec, std::uint64_t seed);

/// Evaluation protocol: `curves` distinct tasks; each repeated `repeats`
/// times with fresh support shots and a fresh `query_points`-sized query
/// sample. Repeats of one curve share (A, w, b). Every task is a pure
/// function of (seed, curve, repeat), so enumeration order is free.
struct EvalProtocol {
  DistributionSpec spec;
  int curves = 100;
  int repeats = 100;
  int query_points = 100;

  long total() const { return static_cast<long>(curves) * repeats; }
  MetaTask task(std::uint64_t seed, int curve, int repeat) const;
  std::vector<MetaTask> materialize(std::uint64_t seed) const;
};

}  // namespace l2f
