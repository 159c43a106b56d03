#pragma once

#include <map>
#include <string>
#include <vector>

#include "conpvp/linalg.hpp"

namespace conpvp {

// One named metric result with run metadata. Persisted as a single JSON line
// in the append-only report store.
struct EvalReport {
  std::string task_name;
  std::string metric_name;  // "spearman" or "accuracy"
  double value = 0.0;
  std::vector<double> per_run_values;  // when present, value is their mean
  std::map<std::string, std::string> metadata;
};

void append_report(const std::string& path, const EvalReport& report);
std::vector<EvalReport> read_reports(const std::string& path);

// Plain-text embedding exchange: "conpvp-embeddings <rows> <cols>" header,
// then one row of reals per line.
void write_embeddings(const std::string& path, const Mat& embeddings);
Mat read_embeddings(const std::string& path);

}  // namespace conpvp
