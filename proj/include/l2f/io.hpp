#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "l2f/meta.hpp"
#include "l2f/tasks.hpp"

namespace l2f {

/// Minimal CSV emitter: optional '#'-prefixed provenance lines, one header
/// row, then data rows.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header,
            const std::vector<std::string>& comments = {});

  void row(const std::vector<std::string>& fields);
  static std::string num(double v);
  static std::string num(long v) { return std::to_string(v); }

 private:
  std::ofstream out_;
  size_t width_;
};

/// Training log: iteration, outer_loss, per-layer gamma mean/min/max,
/// wall-time. Gamma columns stay empty for methods without modulation.
void write_train_log(const std::string& path, const std::vector<TrainLogRow>& log,
                     Index layer_count, const std::vector<std::string>& comments = {});

/// Eval table: steps, mean metric, 95% CI half-width, repeat count.
void write_eval_table(const std::string& path, const std::vector<EvalRow>& rows,
                      const std::string& metric_name,
                      const std::vector<std::string>& comments = {});

/// Serialized sink for generated modulation values:
/// (iteration, task_id, layer, gamma). Evaluation rows use iteration -1.
class GammaLogWriter {
 public:
  GammaLogWriter(const std::string& path, const std::vector<Index>& net_sizes, Scope scope,
                 const std::vector<std::string>& comments = {});

  void append(long iteration, long task_id, const Tensor& gamma);
  long rows_written() const { return rows_; }

 private:
  CsvWriter csv_;
  std::vector<Index> sizes_;
  Scope scope_;
  long rows_ = 0;
};

/// Task dump for external verification: (task_id, A, omega, b, set, x, y).
void write_task_dump(const std::string& path, const std::vector<SinusoidTask>& tasks);

}  // namespace l2f
