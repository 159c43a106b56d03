#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "conpvp/linalg.hpp"
#include "conpvp/nn.hpp"
#include "conpvp/prompting.hpp"
#include "conpvp/tokenizer.hpp"

namespace conpvp {

enum class BackboneKind { builtin_tiny, pretrained };
enum class AnchorMode { continuous, manual };
enum class EncodePhase { training, evaluation };

struct EncoderConfig {
  int hidden_dim = 64;
  int num_layers = 2;
  int num_heads = 4;
  int intermediate_dim = 0;  // 0 -> 4 * hidden_dim
  int vocab_size = 0;        // 0 -> taken from the tokenizer
  int max_length = 64;
  double dropout_rate = 0.1;
  int prompt_length = 4;
  BackboneKind backbone = BackboneKind::builtin_tiny;
  std::string pretrained_path;
  AnchorMode anchor_mode = AnchorMode::continuous;
  // The debiasing footnote concerns sentence embeddings during training;
  // prototypes and evaluation-time anchors are opt-in.
  bool debias_prototypes = false;
  bool eval_debias = false;

  void validate() const;
};

// Retained activations for one encoded batch; feed to MaskEncoder::backward.
struct EncodeTape {
  std::vector<nn::SequenceInput> inputs;
  std::vector<nn::SeqCache> caches;
};

// Tape for a debiased batch: the main encode plus one shared bias encode per
// unique wrapped shape, each remembering which batch rows it was subtracted
// from.
struct DebiasedTape {
  EncodeTape main;
  struct BiasGroup {
    nn::SequenceInput input;
    nn::SeqCache cache;
    std::vector<int> members;
  };
  std::vector<BiasGroup> bias_groups;
};

struct EncodeStats {
  uint64_t batch_calls = 0;
  uint64_t sequences = 0;
  uint64_t bias_sequences = 0;
};

// Masked-LM encoder: maps PromptedSequences to the final-layer hidden state at
// the mask position, hosts the trainable continuous prompt matrix, and
// implements position-preserving template-bias debiasing.
class MaskEncoder {
 public:
  MaskEncoder(EncoderConfig cfg, std::shared_ptr<const Tokenizer> tokenizer, uint64_t seed);

  // Standard published checkpoint directory: config.json + vocab.txt +
  // model.safetensors. prompt_length/anchor flags come from `overrides`.
  static MaskEncoder load_pretrained(const std::string& dir, const EncoderConfig& overrides,
                                     uint64_t seed);

  static MaskEncoder load_checkpoint(const std::string& dir);
  void save_checkpoint(const std::string& dir) const;
  // Digest of the serialized weights; reports cite it as the checkpoint id.
  std::string checkpoint_id() const;

  const EncoderConfig& config() const { return cfg_; }
  const Tokenizer& tokenizer() const { return *tokenizer_; }
  std::shared_ptr<const Tokenizer> tokenizer_ptr() const { return tokenizer_; }

  // Row i = final-layer hidden state at batch[i].mask_index. Gradients flow to
  // all encoder parameters and the continuous prompt when a tape is supplied.
  Mat encode_mask_states(std::span<const PromptedSequence> batch, bool dropout_active,
                         EncodeTape* tape = nullptr);
  void backward(const EncodeTape& tape, const Mat& grad_rows);

  // Mask state of the template around an empty sentence slot, template tokens
  // keeping the positions they would occupy around a sentence of
  // reference_sentence_tokens tokens. Deterministic (no dropout).
  Vec template_bias(const Template& tpl, int reference_sentence_tokens = 0);
  Vec continuous_prompt_bias(int reference_sentence_tokens = 0);
  static Mat debias(const Mat& h, const Vec& bias);

  // Sentence embeddings v_i. Training phase subtracts the matching bias per
  // instance; evaluation subtracts only when eval_debias is set.
  Mat anchor_embed(std::span<const std::string> sentences, EncodePhase phase,
                   bool dropout_active = false, DebiasedTape* tape = nullptr);
  Mat anchor_embed_tokens(std::span<const std::vector<int>> sentence_ids, EncodePhase phase,
                          bool dropout_active = false, DebiasedTape* tape = nullptr);

  // Prototype embeddings from per-instance sampled templates.
  std::pair<Mat, Mat> prototype_embed(std::span<const std::string> sentences,
                                      std::span<const Template* const> positive,
                                      std::span<const Template* const> negative,
                                      bool dropout_active = false,
                                      DebiasedTape* positive_tape = nullptr,
                                      DebiasedTape* negative_tape = nullptr);
  Mat prototype_embed_side(std::span<const std::vector<int>> sentence_ids,
                           std::span<const Template* const> templates, bool dropout_active,
                           DebiasedTape* tape = nullptr);

  void debiased_backward(const DebiasedTape& tape, const Mat& grad_rows);

  PromptedSequence wrap_anchor(std::span<const int> sentence_ids) const;

  nn::TransformerWeights& weights() { return weights_; }
  const nn::TransformerWeights& weights() const { return weights_; }
  nn::Tensor& prompt() { return prompt_; }
  const nn::Tensor& prompt() const { return prompt_; }
  std::vector<nn::Tensor*> trainable_parameters();
  void zero_grads();
  uint64_t parameter_hash() const;

  const EncodeStats& stats() const { return stats_; }
  void reset_stats() { stats_ = {}; }

 private:
  nn::SequenceInput to_input(const PromptedSequence& seq) const;
  Vec bias_vector(const PromptedSequence& bias_seq, nn::SeqCache* cache);
  Mat apply_debias_groups(Mat states, std::span<const PromptedSequence> bias_seqs,
                          std::span<const int> group_of_row, DebiasedTape* tape);
  void init_prompt(uint64_t seed);

  EncoderConfig cfg_;
  std::shared_ptr<const Tokenizer> tokenizer_;
  nn::TransformerWeights weights_;
  nn::Tensor prompt_;
  uint64_t dropout_seed_ = 0;
  uint64_t dropout_counter_ = 0;
  EncodeStats stats_;
};

}  // namespace conpvp
