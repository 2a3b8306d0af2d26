#include "l2f/io.hpp"

#include <cstdio>
#include <stdexcept>

namespace l2f {

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header,
                     const std::vector<std::string>& comments)
    : out_(path), width_(header.size()) {
  if (!out_) throw std::runtime_error("cannot write " + path);
  for (const std::string& c : comments) out_ << "# " << c << "\n";
  for (size_t i = 0; i < header.size(); ++i) {
    if (i) out_ << ",";
    out_ << header[i];
  }
  out_ << "\n";
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  if (fields.size() != width_) {
    throw std::invalid_argument("csv row has " + std::to_string(fields.size()) + " fields, header " +
                                std::to_string(width_));
  }
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) out_ << ",";
    out_ << fields[i];
  }
  out_ << "\n";
}

std::string CsvWriter::num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_train_log(const std::string& path, const std::vector<TrainLogRow>& log,
                     Index layer_count, const std::vector<std::string>& comments) {
  std::vector<std::string> header = {"iteration", "outer_loss"};
  for (Index j = 0; j < layer_count; ++j) {
    const std::string s = std::to_string(j);
    header.push_back("gamma_mean_" + s);
    header.push_back("gamma_min_" + s);
    header.push_back("gamma_max_" + s);
  }
  header.push_back("wall_time_s");
  CsvWriter csv(path, header, comments);
  for (const TrainLogRow& r : log) {
    std::vector<std::string> fields = {CsvWriter::num(r.iteration), CsvWriter::num(r.outer_loss)};
    for (Index j = 0; j < layer_count; ++j) {
      const size_t sj = static_cast<size_t>(j);
      if (sj < r.gamma_mean.size()) {
        fields.push_back(CsvWriter::num(r.gamma_mean[sj]));
        fields.push_back(CsvWriter::num(r.gamma_min[sj]));
        fields.push_back(CsvWriter::num(r.gamma_max[sj]));
      } else {
        fields.push_back("");
        fields.push_back("");
        fields.push_back("");
      }
    }
    fields.push_back(CsvWriter::num(r.wall_time_s));
    csv.row(fields);
  }
}

void write_eval_table(const std::string& path, const std::vector<EvalRow>& rows,
                      const std::string& metric_name, const std::vector<std::string>& comments) {
  CsvWriter csv(path, {"steps", "mean_" + metric_name, "ci95", "count"}, comments);
  for (const EvalRow& r : rows) {
    csv.row({CsvWriter::num(static_cast<long>(r.steps)), CsvWriter::num(r.mean),
             CsvWriter::num(r.ci95), CsvWriter::num(r.count)});
  }
}

GammaLogWriter::GammaLogWriter(const std::string& path, const std::vector<Index>& net_sizes,
                               Scope scope, const std::vector<std::string>& comments)
    : csv_([&] {
        std::vector<std::string> notes = comments;
        notes.push_back("layer value is the mean over that layer's modulation groups");
        notes.push_back("evaluation rows use iteration -1");
        return CsvWriter(path, {"iteration", "task_id", "layer", "gamma"}, notes);
      }()),
      sizes_(net_sizes),
      scope_(scope) {}

void GammaLogWriter::append(long iteration, long task_id, const Tensor& gamma) {
  const auto ranges = scope_layer_ranges(scope_, sizes_);
  for (size_t j = 0; j < ranges.size(); ++j) {
    double sum = 0.0;
    for (Index t = 0; t < ranges[j].second; ++t) sum += gamma[ranges[j].first + t];
    const double v = ranges[j].second > 0 ? sum / static_cast<double>(ranges[j].second) : 0.0;
    csv_.row({CsvWriter::num(iteration), CsvWriter::num(task_id),
              CsvWriter::num(static_cast<long>(j)), CsvWriter::num(v)});
    ++rows_;
  }
}

void write_task_dump(const std::string& path, const std::vector<SinusoidTask>& tasks) {
  CsvWriter csv(path, {"task_id", "amplitude", "frequency", "phase", "set", "x", "y"});
  for (size_t id = 0; id < tasks.size(); ++id) {
    const SinusoidTask& t = tasks[id];
    auto dump = [&](const Tensor& x, const Tensor& y, const char* which) {
      for (Index i = 0; i < x.size(); ++i) {
        csv.row({CsvWriter::num(static_cast<long>(id)), CsvWriter::num(t.amplitude),
                 CsvWriter::num(t.frequency), CsvWriter::num(t.phase), which, CsvWriter::num(x[i]),
                 CsvWriter::num(y[i])});
      }
    };
    dump(t.support_x, t.support_y, "support");
    dump(t.query_x, t.query_y, "query");
  }
}

}  // namespace l2f
