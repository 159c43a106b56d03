#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "conpvp/linalg.hpp"

namespace conpvp::nn {

// A named parameter with its gradient accumulator.
struct Tensor {
  std::string name;
  Mat value;
  Mat grad;
  bool weight_decay = true;

  Tensor() = default;
  Tensor(std::string n, int rows, int cols, bool decay)
      : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)),
        weight_decay(decay) {}
};

struct TransformerConfig {
  int hidden_dim = 64;
  int num_layers = 2;
  int num_heads = 4;
  int intermediate_dim = 256;
  int vocab_size = 0;
  int max_positions = 64;
  int type_vocab = 1;
  double dropout_rate = 0.1;
  double layer_norm_eps = 1e-12;

  int head_dim() const { return hidden_dim / num_heads; }
  void validate() const;
};

struct LayerWeights {
  Tensor *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
  Tensor *ln1_gamma, *ln1_beta;
  Tensor *w_in, *b_in, *w_out, *b_out;
  Tensor *ln2_gamma, *ln2_beta;
};

// Post-norm masked-LM encoder weights: embeddings (token/position/type) with
// an embedding LayerNorm, then num_layers blocks of
// LN(x + MHA(x)) / LN(h + MLP(h)).
class TransformerWeights {
 public:
  explicit TransformerWeights(const TransformerConfig& cfg);

  const TransformerConfig& config() const { return cfg_; }

  Tensor& token_embeddings() { return *tok_emb_; }
  Tensor& position_embeddings() { return *pos_emb_; }
  Tensor& type_embeddings() { return *type_emb_; }
  Tensor& embedding_ln_gamma() { return *emb_ln_g_; }
  Tensor& embedding_ln_beta() { return *emb_ln_b_; }
  const Tensor& token_embeddings() const { return *tok_emb_; }
  const Tensor& position_embeddings() const { return *pos_emb_; }
  const Tensor& type_embeddings() const { return *type_emb_; }
  const Tensor& embedding_ln_gamma() const { return *emb_ln_g_; }
  const Tensor& embedding_ln_beta() const { return *emb_ln_b_; }
  const std::vector<LayerWeights>& layers() const { return layers_; }

  const std::vector<Tensor*>& parameters() const { return params_; }
  Tensor* find(const std::string& name);

  void init_normal(uint64_t seed, double stddev = 0.02);
  void zero_grads();
  // FNV digest over all parameter bytes; used to assert no-update invariants.
  uint64_t value_hash() const;

 private:
  Tensor* add(std::string name, int rows, int cols, bool decay);

  TransformerConfig cfg_;
  std::vector<std::unique_ptr<Tensor>> store_;
  std::vector<Tensor*> params_;
  Tensor *tok_emb_, *pos_emb_, *type_emb_, *emb_ln_g_, *emb_ln_b_;
  std::vector<LayerWeights> layers_;
};

// One encoder input sequence. prompt_slot[t] >= 0 replaces the token
// embedding at t with that row of the continuous-prompt matrix.
struct SequenceInput {
  std::vector<int> token_ids;
  std::vector<int> position_ids;
  std::vector<int> prompt_slot;
  int mask_index = -1;
};

struct LayerCache {
  Mat input;
  Mat q, k, v;
  std::vector<Mat> attn_probs;      // per head, pre-dropout softmax output
  std::vector<Mat> attn_drop;       // per head dropout mask; empty when inactive
  Mat context;
  Mat proj_drop;
  Mat ln1_xhat;
  Vec ln1_inv_std;
  Mat ln1_out;
  Mat mlp_pre;                      // pre-GELU activations
  Mat mlp_act;
  Mat mlp_drop;
  Mat ln2_xhat;
  Vec ln2_inv_std;
};

struct SeqCache {
  Mat emb_ln_xhat;
  Vec emb_ln_inv_std;
  Mat emb_drop;
  std::vector<LayerCache> layers;
};

// Returns the final-layer hidden states (T x d). With dropout_active, masks
// are drawn from `rng` (required). Pass `cache` to retain activations for
// transformer_backward.
Mat transformer_forward(const TransformerWeights& weights, const Tensor* prompt,
                        const SequenceInput& seq, bool dropout_active, std::mt19937_64* rng,
                        SeqCache* cache);

// Accumulates parameter gradients (and prompt gradients when slots are used)
// for d(loss)/d(final hidden states) = grad_output.
void transformer_backward(TransformerWeights& weights, Tensor* prompt, const SequenceInput& seq,
                          const SeqCache& cache, const Mat& grad_output);

// Decoupled weight decay Adam. Decay is skipped for tensors flagged
// weight_decay=false (biases, LayerNorm parameters).
class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8, double weight_decay = 0.01);

  void step(double lr_scale = 1.0);
  void zero_grads();
  long step_count() const { return steps_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<Mat> m_, v_;
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  long steps_ = 0;
};

// Scales all gradients so their global L2 norm is at most max_norm;
// returns the pre-clip norm.
double clip_global_norm(const std::vector<Tensor*>& params, double max_norm);

}  // namespace conpvp::nn
