#include "conpvp/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "conpvp/util.hpp"

namespace conpvp::nn {
namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
}

double gelu_prime(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

// Inverted dropout: entries are 0 or 1/keep so forward and backward both
// reduce to an elementwise product with the mask.
Mat draw_dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
  const double keep = 1.0 - rate;
  const double scale = 1.0 / keep;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Mat mask(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      mask(r, c) = uniform(rng) < keep ? scale : 0.0;
    }
  }
  return mask;
}

Mat layer_norm_forward(const Mat& x, const Tensor& gamma, const Tensor& beta, double eps,
                       Mat& xhat, Vec& inv_std) {
  const Eigen::Index rows = x.rows(), cols = x.cols();
  xhat.resize(rows, cols);
  inv_std.resize(rows);
  Mat out(rows, cols);
  const auto g = gamma.value.row(0).array();
  const auto b = beta.value.row(0).array();
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto row = x.row(r).array();
    const double mu = row.mean();
    const double var = (row - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std(r) = inv;
    xhat.row(r) = ((row - mu) * inv).matrix();
    out.row(r) = (xhat.row(r).array() * g + b).matrix();
  }
  return out;
}

Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const Vec& inv_std, Tensor& gamma,
                        Tensor& beta) {
  const Eigen::Index rows = dy.rows(), cols = dy.cols();
  Mat dx(rows, cols);
  const auto g = gamma.value.row(0).array();
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto dyr = dy.row(r).array();
    const auto xh = xhat.row(r).array();
    const Eigen::ArrayXd dxhat = dyr * g;
    const double m1 = dxhat.mean();
    const double m2 = (dxhat * xh).mean();
    dx.row(r) = (inv_std(r) * (dxhat - m1 - xh * m2)).matrix();
    gamma.grad.row(0).array() += dyr * xh;
    beta.grad.row(0).array() += dyr;
  }
  return dx;
}

void validate_sequence(const TransformerConfig& cfg, const Tensor* prompt,
                       const SequenceInput& seq) {
  const size_t T = seq.token_ids.size();
  if (T == 0) throw std::invalid_argument("empty input sequence");
  if (seq.position_ids.size() != T) {
    throw std::invalid_argument("position_ids length mismatch");
  }
  if (!seq.prompt_slot.empty() && seq.prompt_slot.size() != T) {
    throw std::invalid_argument("prompt_slot length mismatch");
  }
  if (seq.mask_index < 0 || seq.mask_index >= static_cast<int>(T)) {
    throw std::invalid_argument("mask_index out of range");
  }
  for (size_t t = 0; t < T; ++t) {
    const int slot = seq.prompt_slot.empty() ? -1 : seq.prompt_slot[t];
    if (slot >= 0) {
      if (prompt == nullptr || slot >= prompt->value.rows()) {
        throw std::invalid_argument("prompt slot without a matching prompt row");
      }
    } else if (seq.token_ids[t] < 0 || seq.token_ids[t] >= cfg.vocab_size) {
      throw std::invalid_argument("token id out of vocabulary range");
    }
    if (seq.position_ids[t] < 0 || seq.position_ids[t] >= cfg.max_positions) {
      throw std::invalid_argument("position id " + std::to_string(seq.position_ids[t]) +
                                  " exceeds max_positions " + std::to_string(cfg.max_positions));
    }
  }
}

}  // namespace

void TransformerConfig::validate() const {
  if (hidden_dim <= 0 || num_layers <= 0 || num_heads <= 0 || intermediate_dim <= 0) {
    throw std::invalid_argument("transformer dimensions must be positive");
  }
  if (hidden_dim % num_heads != 0) {
    throw std::invalid_argument("hidden_dim must be divisible by num_heads");
  }
  if (vocab_size <= 0) throw std::invalid_argument("vocab_size must be positive");
  if (max_positions <= 0) throw std::invalid_argument("max_positions must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw std::invalid_argument("dropout_rate must be in [0,1)");
  }
}

TransformerWeights::TransformerWeights(const TransformerConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.hidden_dim;
  tok_emb_ = add("emb.tok", cfg_.vocab_size, d, true);
  pos_emb_ = add("emb.pos", cfg_.max_positions, d, true);
  type_emb_ = add("emb.type", cfg_.type_vocab, d, true);
  emb_ln_g_ = add("emb.ln.gamma", 1, d, false);
  emb_ln_b_ = add("emb.ln.beta", 1, d, false);
  for (int i = 0; i < cfg_.num_layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    LayerWeights lw;
    lw.wq = add(p + "attn.wq", d, d, true);
    lw.bq = add(p + "attn.bq", 1, d, false);
    lw.wk = add(p + "attn.wk", d, d, true);
    lw.bk = add(p + "attn.bk", 1, d, false);
    lw.wv = add(p + "attn.wv", d, d, true);
    lw.bv = add(p + "attn.bv", 1, d, false);
    lw.wo = add(p + "attn.wo", d, d, true);
    lw.bo = add(p + "attn.bo", 1, d, false);
    lw.ln1_gamma = add(p + "ln1.gamma", 1, d, false);
    lw.ln1_beta = add(p + "ln1.beta", 1, d, false);
    lw.w_in = add(p + "mlp.w_in", d, cfg_.intermediate_dim, true);
    lw.b_in = add(p + "mlp.b_in", 1, cfg_.intermediate_dim, false);
    lw.w_out = add(p + "mlp.w_out", cfg_.intermediate_dim, d, true);
    lw.b_out = add(p + "mlp.b_out", 1, d, false);
    lw.ln2_gamma = add(p + "ln2.gamma", 1, d, false);
    lw.ln2_beta = add(p + "ln2.beta", 1, d, false);
    layers_.push_back(lw);
  }
}

Tensor* TransformerWeights::add(std::string name, int rows, int cols, bool decay) {
  store_.push_back(std::make_unique<Tensor>(std::move(name), rows, cols, decay));
  params_.push_back(store_.back().get());
  return store_.back().get();
}

Tensor* TransformerWeights::find(const std::string& name) {
  for (Tensor* t : params_) {
    if (t->name == name) return t;
  }
  return nullptr;
}

void TransformerWeights::init_normal(uint64_t seed, double stddev) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  for (Tensor* t : params_) {
    const size_t dot = t->name.rfind('.');
    const std::string leaf = dot == std::string::npos ? t->name : t->name.substr(dot + 1);
    if (leaf == "gamma") {
      t->value.setOnes();
    } else if (!leaf.empty() && leaf[0] == 'b') {
      t->value.setZero();
    } else {
      for (Eigen::Index r = 0; r < t->value.rows(); ++r) {
        for (Eigen::Index c = 0; c < t->value.cols(); ++c) {
          t->value(r, c) = normal(rng);
        }
      }
    }
  }
}

void TransformerWeights::zero_grads() {
  for (Tensor* t : params_) t->grad.setZero();
}

uint64_t TransformerWeights::value_hash() const {
  uint64_t hash = 0xCBF29CE484222325ULL;
  auto mix_bytes = [&hash](const void* data, size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < bytes; ++i) {
      hash ^= p[i];
      hash *= 0x100000001B3ULL;
    }
  };
  for (const Tensor* t : params_) {
    mix_bytes(t->value.data(), sizeof(double) * static_cast<size_t>(t->value.size()));
  }
  return hash;
}

Mat transformer_forward(const TransformerWeights& weights, const Tensor* prompt,
                        const SequenceInput& seq, bool dropout_active, std::mt19937_64* rng,
                        SeqCache* cache) {
  const TransformerConfig& cfg = weights.config();
  validate_sequence(cfg, prompt, seq);
  if (dropout_active && cfg.dropout_rate > 0.0 && rng == nullptr) {
    throw std::invalid_argument("dropout requires an RNG");
  }
  const bool drop = dropout_active && cfg.dropout_rate > 0.0;
  const int T = static_cast<int>(seq.token_ids.size());
  const int d = cfg.hidden_dim;
  const int H = cfg.num_heads;
  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat embedded(T, d);
  for (int t = 0; t < T; ++t) {
    const int slot = seq.prompt_slot.empty() ? -1 : seq.prompt_slot[t];
    if (slot >= 0) {
      embedded.row(t) = prompt->value.row(slot);
    } else {
      embedded.row(t) = weights.token_embeddings().value.row(seq.token_ids[t]);
    }
    embedded.row(t) += weights.position_embeddings().value.row(seq.position_ids[t]);
    embedded.row(t) += weights.type_embeddings().value.row(0);
  }

  Mat xhat_e;
  Vec inv_e;
  Mat x = layer_norm_forward(embedded, weights.embedding_ln_gamma(), weights.embedding_ln_beta(),
                             cfg.layer_norm_eps, xhat_e, inv_e);
  Mat emb_mask;
  if (drop) {
    emb_mask = draw_dropout_mask(T, d, cfg.dropout_rate, *rng);
    x = x.cwiseProduct(emb_mask);
  }
  if (cache) {
    cache->emb_ln_xhat = xhat_e;
    cache->emb_ln_inv_std = inv_e;
    cache->emb_drop = emb_mask;
    cache->layers.clear();
    cache->layers.resize(cfg.num_layers);
  }

  for (int li = 0; li < cfg.num_layers; ++li) {
    const LayerWeights& lw = weights.layers()[li];
    LayerCache* lc = cache ? &cache->layers[li] : nullptr;
    if (lc) lc->input = x;

    Mat q = (x * lw.wq->value).rowwise() + lw.bq->value.row(0);
    Mat k = (x * lw.wk->value).rowwise() + lw.bk->value.row(0);
    Mat v = (x * lw.wv->value).rowwise() + lw.bv->value.row(0);
    if (lc) {
      lc->q = q;
      lc->k = k;
      lc->v = v;
      lc->attn_probs.resize(H);
      lc->attn_drop.assign(H, Mat());
    }

    Mat context(T, d);
    for (int h = 0; h < H; ++h) {
      const auto qh = q.middleCols(h * dh, dh);
      const auto kh = k.middleCols(h * dh, dh);
      const auto vh = v.middleCols(h * dh, dh);
      Mat scores = (qh * kh.transpose()) * scale;
      for (int r = 0; r < T; ++r) {
        const double rowmax = scores.row(r).maxCoeff();
        Eigen::ArrayXd e = (scores.row(r).array() - rowmax).exp();
        scores.row(r) = (e / e.sum()).matrix();
      }
      Mat probs = scores;  // post-softmax
      if (lc) lc->attn_probs[h] = probs;
      if (drop) {
        Mat mask = draw_dropout_mask(T, T, cfg.dropout_rate, *rng);
        probs = probs.cwiseProduct(mask);
        if (lc) lc->attn_drop[h] = std::move(mask);
      }
      context.middleCols(h * dh, dh) = probs * vh;
    }
    if (lc) lc->context = context;

    Mat attn_out = (context * lw.wo->value).rowwise() + lw.bo->value.row(0);
    if (drop) {
      Mat mask = draw_dropout_mask(T, d, cfg.dropout_rate, *rng);
      attn_out = attn_out.cwiseProduct(mask);
      if (lc) lc->proj_drop = std::move(mask);
    }
    Mat residual1 = x + attn_out;
    Mat xhat1;
    Vec inv1;
    Mat h1 = layer_norm_forward(residual1, *lw.ln1_gamma, *lw.ln1_beta, cfg.layer_norm_eps,
                                xhat1, inv1);
    if (lc) {
      lc->ln1_xhat = xhat1;
      lc->ln1_inv_std = inv1;
      lc->ln1_out = h1;
    }

    Mat pre = (h1 * lw.w_in->value).rowwise() + lw.b_in->value.row(0);
    Mat act = pre.unaryExpr([](double z) { return gelu(z); });
    if (lc) {
      lc->mlp_pre = pre;
      lc->mlp_act = act;
    }
    Mat mlp_out = (act * lw.w_out->value).rowwise() + lw.b_out->value.row(0);
    if (drop) {
      Mat mask = draw_dropout_mask(T, d, cfg.dropout_rate, *rng);
      mlp_out = mlp_out.cwiseProduct(mask);
      if (lc) lc->mlp_drop = std::move(mask);
    }
    Mat residual2 = h1 + mlp_out;
    Mat xhat2;
    Vec inv2;
    x = layer_norm_forward(residual2, *lw.ln2_gamma, *lw.ln2_beta, cfg.layer_norm_eps,
                           xhat2, inv2);
    if (lc) {
      lc->ln2_xhat = xhat2;
      lc->ln2_inv_std = inv2;
    }
  }
  return x;
}

void transformer_backward(TransformerWeights& weights, Tensor* prompt, const SequenceInput& seq,
                          const SeqCache& cache, const Mat& grad_output) {
  const TransformerConfig& cfg = weights.config();
  const int T = static_cast<int>(seq.token_ids.size());
  const int d = cfg.hidden_dim;
  const int H = cfg.num_heads;
  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (grad_output.rows() != T || grad_output.cols() != d) {
    throw std::invalid_argument("grad_output shape mismatch");
  }
  if (static_cast<int>(cache.layers.size()) != cfg.num_layers) {
    throw std::invalid_argument("cache does not match configuration");
  }

  Mat dx = grad_output;
  for (int li = cfg.num_layers - 1; li >= 0; --li) {
    const LayerWeights& lw = weights.layers()[li];
    const LayerCache& lc = cache.layers[li];

    Mat dres2 = layer_norm_backward(dx, lc.ln2_xhat, lc.ln2_inv_std, *lw.ln2_gamma, *lw.ln2_beta);
    Mat dh1 = dres2;
    Mat dmlp_out = dres2;
    if (lc.mlp_drop.size() > 0) dmlp_out = dmlp_out.cwiseProduct(lc.mlp_drop);

    lw.w_out->grad.noalias() += lc.mlp_act.transpose() * dmlp_out;
    lw.b_out->grad.row(0) += dmlp_out.colwise().sum();
    Mat dact = dmlp_out * lw.w_out->value.transpose();
    Mat dpre = dact.cwiseProduct(lc.mlp_pre.unaryExpr([](double z) { return gelu_prime(z); }));
    lw.w_in->grad.noalias() += lc.ln1_out.transpose() * dpre;
    lw.b_in->grad.row(0) += dpre.colwise().sum();
    dh1.noalias() += dpre * lw.w_in->value.transpose();

    Mat dres1 = layer_norm_backward(dh1, lc.ln1_xhat, lc.ln1_inv_std, *lw.ln1_gamma, *lw.ln1_beta);
    Mat dinput = dres1;
    Mat dattn_out = dres1;
    if (lc.proj_drop.size() > 0) dattn_out = dattn_out.cwiseProduct(lc.proj_drop);

    lw.wo->grad.noalias() += lc.context.transpose() * dattn_out;
    lw.bo->grad.row(0) += dattn_out.colwise().sum();
    Mat dcontext = dattn_out * lw.wo->value.transpose();

    Mat dq(T, d), dk(T, d), dv(T, d);
    for (int h = 0; h < H; ++h) {
      const auto qh = lc.q.middleCols(h * dh, dh);
      const auto kh = lc.k.middleCols(h * dh, dh);
      const auto vh = lc.v.middleCols(h * dh, dh);
      const Mat& probs = lc.attn_probs[h];
      const Mat dropped = lc.attn_drop[h].size() > 0 ? probs.cwiseProduct(lc.attn_drop[h]) : probs;

      const auto dch = dcontext.middleCols(h * dh, dh);
      Mat dprobs_dropped = dch * vh.transpose();
      dv.middleCols(h * dh, dh).noalias() = dropped.transpose() * dch;
      Mat dprobs = lc.attn_drop[h].size() > 0 ? dprobs_dropped.cwiseProduct(lc.attn_drop[h])
                                              : std::move(dprobs_dropped);

      Mat dscores(T, T);
      for (int r = 0; r < T; ++r) {
        const auto p = probs.row(r).array();
        const auto dp = dprobs.row(r).array();
        const double dot = (p * dp).sum();
        dscores.row(r) = (p * (dp - dot)).matrix();
      }
      dq.middleCols(h * dh, dh).noalias() = (dscores * kh) * scale;
      dk.middleCols(h * dh, dh).noalias() = (dscores.transpose() * qh) * scale;
    }

    lw.wq->grad.noalias() += lc.input.transpose() * dq;
    lw.bq->grad.row(0) += dq.colwise().sum();
    lw.wk->grad.noalias() += lc.input.transpose() * dk;
    lw.bk->grad.row(0) += dk.colwise().sum();
    lw.wv->grad.noalias() += lc.input.transpose() * dv;
    lw.bv->grad.row(0) += dv.colwise().sum();
    dinput.noalias() += dq * lw.wq->value.transpose();
    dinput.noalias() += dk * lw.wk->value.transpose();
    dinput.noalias() += dv * lw.wv->value.transpose();
    dx = std::move(dinput);
  }

  if (cache.emb_drop.size() > 0) dx = dx.cwiseProduct(cache.emb_drop);
  Mat dembedded = layer_norm_backward(dx, cache.emb_ln_xhat, cache.emb_ln_inv_std,
                                      weights.embedding_ln_gamma(), weights.embedding_ln_beta());
  for (int t = 0; t < T; ++t) {
    const int slot = seq.prompt_slot.empty() ? -1 : seq.prompt_slot[t];
    if (slot >= 0) {
      prompt->grad.row(slot) += dembedded.row(t);
    } else {
      weights.token_embeddings().grad.row(seq.token_ids[t]) += dembedded.row(t);
    }
    weights.position_embeddings().grad.row(seq.position_ids[t]) += dembedded.row(t);
    weights.type_embeddings().grad.row(0) += dembedded.row(t);
  }
}

AdamW::AdamW(std::vector<Tensor*> params, double lr, double beta1, double beta2, double eps,
             double weight_decay)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      weight_decay_(weight_decay) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor* t : params_) {
    m_.push_back(Mat::Zero(t->value.rows(), t->value.cols()));
    v_.push_back(Mat::Zero(t->value.rows(), t->value.cols()));
  }
}

void AdamW::step(double lr_scale) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  const double lr = lr_ * lr_scale;
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = *params_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * t.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * t.grad.cwiseProduct(t.grad);
    const Mat mhat = m_[i] / bc1;
    const Mat vhat = v_[i] / bc2;
    Mat update = mhat.array() / (vhat.array().sqrt() + eps_);
    if (t.weight_decay && weight_decay_ > 0.0) {
      update += weight_decay_ * t.value;
    }
    t.value -= lr * update;
  }
}

void AdamW::zero_grads() {
  for (Tensor* t : params_) t->grad.setZero();
}

double clip_global_norm(const std::vector<Tensor*>& params, double max_norm) {
  double sq = 0.0;
  for (const Tensor* t : params) {
    sq += t->grad.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (Tensor* t : params) t->grad *= factor;
  }
  return norm;
}

}  // namespace conpvp::nn
