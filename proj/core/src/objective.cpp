#include "conpvp/objective.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace conpvp {
namespace {

constexpr double kNormEps = 1e-12;

void check_finite(const Mat& m, const char* name) {
  if (!m.allFinite()) {
    throw std::invalid_argument(std::string(name) + " contains non-finite entries");
  }
}

Mat normalized_rows(const Mat& m, const char* name) {
  Mat out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double norm = m.row(r).norm();
    if (norm <= kNormEps) {
      throw std::invalid_argument(std::string(name) + " has a zero-norm row at index " +
                                  std::to_string(r));
    }
    out.row(r) = m.row(r) / norm;
  }
  return out;
}

// d/dA and d/dB of sum_ij G_ij * cosine(A_i, B_j), accumulated in place.
void cosine_backward(const Mat& a, const Mat& b, const Mat& g, Mat& da, Mat& db) {
  const Mat an = normalized_rows(a, "A");
  const Mat bn = normalized_rows(b, "B");
  const Mat dan = g * bn;
  const Mat dbn = g.transpose() * an;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double norm = a.row(r).norm();
    const double dot = dan.row(r).dot(an.row(r));
    da.row(r) += (dan.row(r) - dot * an.row(r)) / norm;
  }
  for (Eigen::Index r = 0; r < b.rows(); ++r) {
    const double norm = b.row(r).norm();
    const double dot = dbn.row(r).dot(bn.row(r));
    db.row(r) += (dbn.row(r) - dot * bn.row(r)) / norm;
  }
}

void validate_pair(const Mat& v, const Mat& block, const char* name) {
  if (block.rows() != v.rows() || block.cols() != v.cols()) {
    throw std::invalid_argument(std::string(name) + " shape does not match v");
  }
}

// Shared softmax-cross-entropy engine. The positive logit of row i is column i
// of the first block; the denominator runs over every column of every block.
LossReport block_loss(const Mat& v, const std::vector<const Mat*>& blocks, double temperature) {
  if (temperature <= 0.0) {
    throw std::invalid_argument("temperature must be positive");
  }
  if (v.rows() < 1) {
    throw std::invalid_argument("batch must contain at least one instance");
  }
  check_finite(v, "v");
  Eigen::Index total_cols = 0;
  for (const Mat* b : blocks) {
    check_finite(*b, "prototype block");
    validate_pair(v, *b, "prototype block");
    total_cols += b->rows();
  }

  const Eigen::Index n = v.rows();
  LossReport report;
  report.temperature = temperature;
  report.logits.resize(n, total_cols);
  Eigen::Index col = 0;
  for (const Mat* b : blocks) {
    report.logits.middleCols(col, b->rows()) = cosine_sim_matrix(v, *b) / temperature;
    col += b->rows();
  }

  report.per_instance.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = report.logits.row(i);
    const double rowmax = row.maxCoeff();
    const double lse = rowmax + std::log((row.array() - rowmax).exp().sum());
    report.per_instance(i) = lse - report.logits(i, i);
  }
  report.loss = report.per_instance.mean();
  return report;
}

TripleGrads block_loss_grad(const Mat& v, const std::vector<const Mat*>& blocks,
                            double temperature) {
  const LossReport report = block_loss(v, blocks, temperature);
  const Eigen::Index n = v.rows();

  // dL/dlogit = (softmax - onehot(positive)) / N, then /temperature for sims.
  Mat dsim(n, report.logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = report.logits.row(i);
    const double rowmax = row.maxCoeff();
    Eigen::ArrayXd p = (row.array() - rowmax).exp();
    p /= p.sum();
    dsim.row(i) = p.matrix();
    dsim(i, i) -= 1.0;
  }
  dsim /= static_cast<double>(n) * temperature;

  TripleGrads grads;
  grads.v = Mat::Zero(v.rows(), v.cols());
  std::vector<Mat> block_grads;
  Eigen::Index col = 0;
  for (const Mat* b : blocks) {
    Mat db = Mat::Zero(b->rows(), b->cols());
    cosine_backward(v, *b, dsim.middleCols(col, b->rows()), grads.v, db);
    block_grads.push_back(std::move(db));
    col += b->rows();
  }
  grads.c_plus = std::move(block_grads[0]);
  if (block_grads.size() > 1) grads.c_minus = std::move(block_grads[1]);
  return grads;
}

}  // namespace

Mat cosine_sim_matrix(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("cosine_sim_matrix dimension mismatch");
  }
  const Mat an = normalized_rows(a, "A");
  const Mat bn = normalized_rows(b, "B");
  return an * bn.transpose();
}

LossReport conpvp_loss(const BatchTriple& triple, double temperature) {
  validate_pair(triple.v, triple.c_plus, "c_plus");
  validate_pair(triple.v, triple.c_minus, "c_minus");
  return block_loss(triple.v, {&triple.c_plus, &triple.c_minus}, temperature);
}

TripleGrads conpvp_loss_grad(const BatchTriple& triple, double temperature) {
  validate_pair(triple.v, triple.c_plus, "c_plus");
  validate_pair(triple.v, triple.c_minus, "c_minus");
  return block_loss_grad(triple.v, {&triple.c_plus, &triple.c_minus}, temperature);
}

LossReport loss_variant(const BatchTriple& inputs, double temperature, LossMode mode) {
  switch (mode) {
    case LossMode::full:
      return conpvp_loss(inputs, temperature);
    case LossMode::no_neg_proto:
      validate_pair(inputs.v, inputs.c_plus, "c_plus");
      return block_loss(inputs.v, {&inputs.c_plus}, temperature);
    case LossMode::instance_dropout:
      validate_pair(inputs.v, inputs.c_plus, "second anchor view");
      return block_loss(inputs.v, {&inputs.c_plus}, temperature);
  }
  throw std::invalid_argument("unknown loss mode");
}

TripleGrads loss_variant_grad(const BatchTriple& inputs, double temperature, LossMode mode) {
  switch (mode) {
    case LossMode::full:
      return conpvp_loss_grad(inputs, temperature);
    case LossMode::no_neg_proto:
    case LossMode::instance_dropout:
      validate_pair(inputs.v, inputs.c_plus, "positive block");
      return block_loss_grad(inputs.v, {&inputs.c_plus}, temperature);
  }
  throw std::invalid_argument("unknown loss mode");
}

LossMode loss_mode_from_name(const std::string& name) {
  if (name == "full") return LossMode::full;
  if (name == "no_neg_proto") return LossMode::no_neg_proto;
  if (name == "instance_dropout") return LossMode::instance_dropout;
  throw std::invalid_argument("unknown loss_mode: " + name);
}

std::string loss_mode_name(LossMode mode) {
  switch (mode) {
    case LossMode::full: return "full";
    case LossMode::no_neg_proto: return "no_neg_proto";
    case LossMode::instance_dropout: return "instance_dropout";
  }
  return "unknown";
}

}  // namespace conpvp
