#include "conpvp/report.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace conpvp {

using nlohmann::json;

void append_report(const std::string& path, const EvalReport& report) {
  json doc;
  doc["task"] = report.task_name;
  doc["metric"] = report.metric_name;
  doc["value"] = report.value;
  if (!report.per_run_values.empty()) {
    doc["per_run_values"] = report.per_run_values;
  }
  for (const auto& [key, value] : report.metadata) {
    doc["meta"][key] = value;
  }
  std::ofstream out(path, std::ios::app);
  if (!out) {
    throw std::runtime_error("cannot append to report store: " + path);
  }
  // One record per line, written in a single call so concurrent appends from
  // separate commands stay line-atomic.
  out << doc.dump() << "\n";
  out.flush();
}

std::vector<EvalReport> read_reports(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("cannot open report store: " + path);
  }
  std::vector<EvalReport> reports;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json doc = json::parse(line);
    EvalReport r;
    r.task_name = doc.at("task").get<std::string>();
    r.metric_name = doc.at("metric").get<std::string>();
    r.value = doc.at("value").get<double>();
    if (doc.contains("per_run_values")) {
      r.per_run_values = doc.at("per_run_values").get<std::vector<double>>();
    }
    if (doc.contains("meta")) {
      for (const auto& [key, value] : doc.at("meta").items()) {
        r.metadata[key] = value.get<std::string>();
      }
    }
    reports.push_back(std::move(r));
  }
  return reports;
}

void write_embeddings(const std::string& path, const Mat& embeddings) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write embeddings file: " + path);
  }
  out.precision(17);
  out << "conpvp-embeddings " << embeddings.rows() << " " << embeddings.cols() << "\n";
  for (Eigen::Index r = 0; r < embeddings.rows(); ++r) {
    for (Eigen::Index c = 0; c < embeddings.cols(); ++c) {
      if (c > 0) out << " ";
      out << embeddings(r, c);
    }
    out << "\n";
  }
}

Mat read_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("cannot open embeddings file: " + path);
  }
  std::string magic;
  Eigen::Index rows = 0, cols = 0;
  in >> magic >> rows >> cols;
  if (magic != "conpvp-embeddings" || rows < 0 || cols <= 0) {
    throw std::invalid_argument("not an embeddings file: " + path);
  }
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!(in >> m(r, c))) {
        throw std::invalid_argument("truncated embeddings file: " + path);
      }
    }
  }
  return m;
}

}  // namespace conpvp
