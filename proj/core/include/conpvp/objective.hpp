#pragma once

#include <string>

#include "conpvp/linalg.hpp"

namespace conpvp {

// Aligned anchor / positive-prototype / negative-prototype rows.
// For LossMode::instance_dropout, c_plus carries the second dropout view v'
// and c_minus is unused (may be empty).
struct BatchTriple {
  Mat v;
  Mat c_plus;
  Mat c_minus;
};

enum class LossMode { full, no_neg_proto, instance_dropout };

struct LossReport {
  double loss = 0.0;            // mean of per_instance
  Vec per_instance;             // all >= 0
  Mat logits;                   // sim/temperature, columns [c+ block | c- block]
  double temperature = 0.0;
};

struct TripleGrads {
  Mat v;
  Mat c_plus;
  Mat c_minus;  // empty for single-block modes
};

// Entry (i,j) = A_i . B_j / (|A_i| |B_j|). Throws on rows with norm <= 1e-12.
Mat cosine_sim_matrix(const Mat& a, const Mat& b);

// l_i = -log exp(sim(v_i,c_i+)/t) / sum_k [exp(sim(v_i,c_k+)/t) + exp(sim(v_i,c_k-)/t)],
// log-sum-exp stabilized; loss is the batch mean.
LossReport conpvp_loss(const BatchTriple& triple, double temperature);

// Analytic gradients of the mean loss w.r.t. every input entry.
TripleGrads conpvp_loss_grad(const BatchTriple& triple, double temperature);

// full: conpvp_loss. no_neg_proto: denominator keeps only the N positive
// prototype terms. instance_dropout: InfoNCE over two anchor views.
LossReport loss_variant(const BatchTriple& inputs, double temperature, LossMode mode);
TripleGrads loss_variant_grad(const BatchTriple& inputs, double temperature, LossMode mode);

LossMode loss_mode_from_name(const std::string& name);
std::string loss_mode_name(LossMode mode);

}  // namespace conpvp
