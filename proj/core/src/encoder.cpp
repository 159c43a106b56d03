#include "conpvp/encoder.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "conpvp/util.hpp"

namespace conpvp {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr char kWeightsMagic[8] = {'C', 'P', 'V', 'P', 'W', 'B', '0', '1'};

EncoderConfig normalize(EncoderConfig cfg, const Tokenizer& tokenizer) {
  if (cfg.vocab_size == 0) cfg.vocab_size = tokenizer.vocab_size();
  if (cfg.intermediate_dim == 0) cfg.intermediate_dim = 4 * cfg.hidden_dim;
  cfg.validate();
  return cfg;
}

nn::TransformerConfig to_transformer_config(const EncoderConfig& cfg, int max_positions,
                                            int type_vocab) {
  nn::TransformerConfig t;
  t.hidden_dim = cfg.hidden_dim;
  t.num_layers = cfg.num_layers;
  t.num_heads = cfg.num_heads;
  t.intermediate_dim = cfg.intermediate_dim;
  t.vocab_size = cfg.vocab_size;
  t.max_positions = max_positions;
  t.type_vocab = type_vocab;
  t.dropout_rate = cfg.dropout_rate;
  return t;
}

std::string backbone_name(BackboneKind kind) {
  return kind == BackboneKind::builtin_tiny ? "builtin-tiny" : "pretrained";
}

BackboneKind backbone_from_name(const std::string& name) {
  if (name == "builtin-tiny") return BackboneKind::builtin_tiny;
  if (name == "pretrained") return BackboneKind::pretrained;
  throw std::invalid_argument("unknown backbone: " + name);
}

json encoder_config_to_json(const EncoderConfig& cfg, int max_positions, int type_vocab) {
  json doc;
  doc["hidden_dim"] = cfg.hidden_dim;
  doc["num_layers"] = cfg.num_layers;
  doc["num_heads"] = cfg.num_heads;
  doc["intermediate_dim"] = cfg.intermediate_dim;
  doc["vocab_size"] = cfg.vocab_size;
  doc["max_length"] = cfg.max_length;
  doc["max_positions"] = max_positions;
  doc["type_vocab"] = type_vocab;
  doc["dropout_rate"] = cfg.dropout_rate;
  doc["prompt_length"] = cfg.prompt_length;
  doc["backbone"] = backbone_name(cfg.backbone);
  doc["pretrained_path"] = cfg.pretrained_path;
  doc["anchor_mode"] = cfg.anchor_mode == AnchorMode::continuous ? "continuous" : "manual";
  doc["debias_prototypes"] = cfg.debias_prototypes;
  doc["eval_debias"] = cfg.eval_debias;
  return doc;
}

void write_all(std::ofstream& out, const void* data, size_t bytes) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

void read_all(std::ifstream& in, void* data, size_t bytes) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  if (static_cast<size_t>(in.gcount()) != bytes) {
    throw std::runtime_error("truncated weights file");
  }
}

void write_weights_file(const std::string& path, const std::vector<const nn::Tensor*>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_all(out, kWeightsMagic, sizeof(kWeightsMagic));
  const uint64_t count = tensors.size();
  write_all(out, &count, sizeof(count));
  for (const nn::Tensor* t : tensors) {
    const uint32_t name_len = static_cast<uint32_t>(t->name.size());
    write_all(out, &name_len, sizeof(name_len));
    write_all(out, t->name.data(), name_len);
    const uint64_t rows = static_cast<uint64_t>(t->value.rows());
    const uint64_t cols = static_cast<uint64_t>(t->value.cols());
    write_all(out, &rows, sizeof(rows));
    write_all(out, &cols, sizeof(cols));
    for (uint64_t r = 0; r < rows; ++r) {
      for (uint64_t c = 0; c < cols; ++c) {
        const double v = t->value(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        write_all(out, &v, sizeof(v));
      }
    }
  }
}

void read_weights_file(const std::string& path, const std::vector<nn::Tensor*>& tensors) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[8];
  read_all(in, magic, sizeof(magic));
  if (std::memcmp(magic, kWeightsMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a weights file: " + path);
  }
  std::map<std::string, nn::Tensor*> by_name;
  for (nn::Tensor* t : tensors) by_name[t->name] = t;
  uint64_t count = 0;
  read_all(in, &count, sizeof(count));
  std::unordered_set<std::string> seen;
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t name_len = 0;
    read_all(in, &name_len, sizeof(name_len));
    std::string name(name_len, '\0');
    read_all(in, name.data(), name_len);
    uint64_t rows = 0, cols = 0;
    read_all(in, &rows, sizeof(rows));
    read_all(in, &cols, sizeof(cols));
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw std::runtime_error("unexpected tensor in weights file: " + name);
    }
    nn::Tensor* t = it->second;
    if (t->value.rows() != static_cast<Eigen::Index>(rows) ||
        t->value.cols() != static_cast<Eigen::Index>(cols)) {
      throw std::runtime_error("shape mismatch for tensor " + name);
    }
    for (uint64_t r = 0; r < rows; ++r) {
      for (uint64_t c = 0; c < cols; ++c) {
        double v = 0.0;
        read_all(in, &v, sizeof(v));
        t->value(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
      }
    }
    seen.insert(name);
  }
  for (const auto& [name, t] : by_name) {
    if (!seen.count(name)) {
      throw std::runtime_error("weights file is missing tensor " + name);
    }
  }
}

// --- safetensors reading (pretrained checkpoints) ---

struct SafeTensorFile {
  json header;
  std::string data;  // raw tensor buffer after the header
};

SafeTensorFile read_safetensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open " + path);
  uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in) throw std::runtime_error("truncated safetensors header: " + path);
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("truncated safetensors header: " + path);
  SafeTensorFile file;
  file.header = json::parse(header_text);
  std::ostringstream rest;
  rest << in.rdbuf();
  file.data = rest.str();
  return file;
}

Mat safetensor_matrix(const SafeTensorFile& file, const json& entry) {
  const std::string dtype = entry.at("dtype").get<std::string>();
  const auto shape = entry.at("shape").get<std::vector<long>>();
  const auto offsets = entry.at("data_offsets").get<std::vector<size_t>>();
  long rows = 1, cols = 1;
  if (shape.size() == 1) {
    rows = 1;
    cols = shape[0];
  } else if (shape.size() == 2) {
    rows = shape[0];
    cols = shape[1];
  } else {
    throw std::runtime_error("unsupported tensor rank in safetensors");
  }
  const size_t begin = offsets.at(0), end = offsets.at(1);
  if (end > file.data.size() || begin > end) {
    throw std::runtime_error("safetensors offsets out of range");
  }
  const size_t count = static_cast<size_t>(rows) * static_cast<size_t>(cols);
  Mat m(rows, cols);
  if (dtype == "F32") {
    if (end - begin != count * 4) throw std::runtime_error("safetensors size mismatch");
    const float* src = reinterpret_cast<const float*>(file.data.data() + begin);
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c) m(r, c) = static_cast<double>(src[r * cols + c]);
  } else if (dtype == "F64") {
    if (end - begin != count * 8) throw std::runtime_error("safetensors size mismatch");
    const double* src = reinterpret_cast<const double*>(file.data.data() + begin);
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c) m(r, c) = src[r * cols + c];
  } else {
    throw std::runtime_error("unsupported safetensors dtype " + dtype +
                             " (expected F32 or F64)");
  }
  return m;
}

const json* find_entry(const json& header, const std::string& name) {
  if (header.contains(name)) return &header.at(name);
  const std::string prefixed = "bert." + name;
  if (header.contains(prefixed)) return &header.at(prefixed);
  return nullptr;
}

}  // namespace

void EncoderConfig::validate() const {
  if (hidden_dim <= 0 || num_layers <= 0 || num_heads <= 0) {
    throw std::invalid_argument("encoder dimensions must be positive");
  }
  if (hidden_dim % num_heads != 0) {
    throw std::invalid_argument("hidden_dim must be divisible by num_heads");
  }
  if (prompt_length < 0) throw std::invalid_argument("prompt_length must be >= 0");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw std::invalid_argument("dropout_rate must be in [0,1)");
  }
  if (max_length <= 2) throw std::invalid_argument("max_length too small");
}

MaskEncoder::MaskEncoder(EncoderConfig cfg, std::shared_ptr<const Tokenizer> tokenizer,
                         uint64_t seed)
    : cfg_(normalize(std::move(cfg), *tokenizer)),
      tokenizer_(std::move(tokenizer)),
      weights_(to_transformer_config(cfg_, cfg_.max_length, 1)),
      prompt_("prompt", std::max(cfg_.prompt_length, 1), cfg_.hidden_dim, true),
      dropout_seed_(mix_seed(seed, 3)) {
  weights_.init_normal(mix_seed(seed, 0));
  init_prompt(mix_seed(seed, 1));
}

void MaskEncoder::init_prompt(uint64_t seed) {
  if (cfg_.prompt_length == 0) {
    prompt_.value.setZero();
    return;
  }
  // Rows start on the embedding manifold: copies of seeded vocabulary tokens.
  std::unordered_set<int> specials = {tokenizer_->pad_id(), tokenizer_->unk_id(),
                                      tokenizer_->mask_id()};
  if (tokenizer_->cls_id() >= 0) specials.insert(tokenizer_->cls_id());
  if (tokenizer_->sep_id() >= 0) specials.insert(tokenizer_->sep_id());
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, cfg_.vocab_size - 1);
  for (int j = 0; j < cfg_.prompt_length; ++j) {
    int id = pick(rng);
    while (specials.count(id)) id = pick(rng);
    prompt_.value.row(j) = weights_.token_embeddings().value.row(id);
  }
}

nn::SequenceInput MaskEncoder::to_input(const PromptedSequence& seq) const {
  if (seq.mask_index < 0 || seq.mask_index >= seq.length()) {
    throw std::invalid_argument("mask_index out of range");
  }
  if (seq.token_ids[seq.mask_index] != tokenizer_->mask_id()) {
    throw std::invalid_argument("token at mask_index is not the mask token");
  }
  if (seq.length() > cfg_.max_length) {
    throw std::invalid_argument("sequence exceeds max_length");
  }
  nn::SequenceInput input;
  input.token_ids = seq.token_ids;
  input.position_ids = seq.position_ids;
  if (input.position_ids.empty()) {
    input.position_ids.resize(seq.token_ids.size());
    for (size_t t = 0; t < input.position_ids.size(); ++t) {
      input.position_ids[t] = static_cast<int>(t);
    }
  }
  input.mask_index = seq.mask_index;
  if (seq.continuous_slot_count > 0) {
    if (seq.continuous_slot_count != cfg_.prompt_length) {
      throw std::invalid_argument("sequence prompt slots do not match the model prompt length");
    }
    input.prompt_slot.assign(seq.token_ids.size(), -1);
    for (int j = 0; j < seq.continuous_slot_count; ++j) {
      input.prompt_slot[seq.mask_index - seq.continuous_slot_count + j] = j;
    }
  }
  return input;
}

Mat MaskEncoder::encode_mask_states(std::span<const PromptedSequence> batch, bool dropout_active,
                                    EncodeTape* tape) {
  ++stats_.batch_calls;
  stats_.sequences += batch.size();
  const int n = static_cast<int>(batch.size());
  Mat out(n, cfg_.hidden_dim);
  if (tape) {
    tape->inputs.assign(n, {});
    tape->caches.assign(n, {});
  }
  std::mt19937_64 rng(mix_seed(dropout_seed_, ++dropout_counter_));
  for (int i = 0; i < n; ++i) {
    nn::SequenceInput input = to_input(batch[i]);
    nn::SeqCache* cache = tape ? &tape->caches[i] : nullptr;
    const Mat hidden =
        nn::transformer_forward(weights_, &prompt_, input, dropout_active, &rng, cache);
    out.row(i) = hidden.row(input.mask_index);
    if (tape) tape->inputs[i] = std::move(input);
  }
  if (!out.allFinite()) {
    throw std::runtime_error("non-finite encoder output");
  }
  return out;
}

void MaskEncoder::backward(const EncodeTape& tape, const Mat& grad_rows) {
  if (grad_rows.rows() != static_cast<Eigen::Index>(tape.inputs.size())) {
    throw std::invalid_argument("gradient rows do not match tape");
  }
  for (size_t i = 0; i < tape.inputs.size(); ++i) {
    const nn::SequenceInput& input = tape.inputs[i];
    Mat grad_out = Mat::Zero(static_cast<Eigen::Index>(input.token_ids.size()), cfg_.hidden_dim);
    grad_out.row(input.mask_index) = grad_rows.row(static_cast<Eigen::Index>(i));
    nn::transformer_backward(weights_, &prompt_, input, tape.caches[i], grad_out);
  }
}

Vec MaskEncoder::bias_vector(const PromptedSequence& bias_seq, nn::SeqCache* cache) {
  ++stats_.bias_sequences;
  nn::SequenceInput input = to_input(bias_seq);
  const Mat hidden = nn::transformer_forward(weights_, &prompt_, input, false, nullptr, cache);
  return hidden.row(input.mask_index).transpose();
}

Vec MaskEncoder::template_bias(const Template& tpl, int reference_sentence_tokens) {
  const PromptedSequence seq =
      template_bias_sequence(tpl, reference_sentence_tokens, *tokenizer_, cfg_.max_length);
  return bias_vector(seq, nullptr);
}

Vec MaskEncoder::continuous_prompt_bias(int reference_sentence_tokens) {
  const PromptedSequence seq = continuous_bias_sequence(
      cfg_.prompt_length, reference_sentence_tokens, *tokenizer_, cfg_.max_length);
  return bias_vector(seq, nullptr);
}

Mat MaskEncoder::debias(const Mat& h, const Vec& bias) {
  if (h.cols() != bias.size()) {
    throw std::invalid_argument("debias dimension mismatch");
  }
  return h.rowwise() - bias.transpose();
}

PromptedSequence MaskEncoder::wrap_anchor(std::span<const int> sentence_ids) const {
  if (cfg_.anchor_mode == AnchorMode::continuous) {
    return apply_continuous_prompt_tokens(sentence_ids, cfg_.prompt_length, *tokenizer_,
                                          cfg_.max_length);
  }
  return apply_template_tokens(manual_anchor_template(), sentence_ids, *tokenizer_,
                               cfg_.max_length);
}

Mat MaskEncoder::apply_debias_groups(Mat states, std::span<const PromptedSequence> bias_seqs,
                                     std::span<const int> group_of_row, DebiasedTape* tape) {
  std::vector<Vec> biases(bias_seqs.size());
  if (tape) tape->bias_groups.resize(bias_seqs.size());
  for (size_t g = 0; g < bias_seqs.size(); ++g) {
    nn::SeqCache* cache = nullptr;
    if (tape) {
      tape->bias_groups[g].input = to_input(bias_seqs[g]);
      cache = &tape->bias_groups[g].cache;
    }
    biases[g] = bias_vector(bias_seqs[g], cache);
  }
  for (Eigen::Index r = 0; r < states.rows(); ++r) {
    const int g = group_of_row[static_cast<size_t>(r)];
    states.row(r) -= biases[g].transpose();
    if (tape) tape->bias_groups[g].members.push_back(static_cast<int>(r));
  }
  return states;
}

Mat MaskEncoder::anchor_embed(std::span<const std::string> sentences, EncodePhase phase,
                              bool dropout_active, DebiasedTape* tape) {
  std::vector<std::vector<int>> ids;
  ids.reserve(sentences.size());
  for (const std::string& s : sentences) ids.push_back(tokenizer_->encode(s));
  return anchor_embed_tokens(ids, phase, dropout_active, tape);
}

Mat MaskEncoder::anchor_embed_tokens(std::span<const std::vector<int>> sentence_ids,
                                     EncodePhase phase, bool dropout_active, DebiasedTape* tape) {
  std::vector<PromptedSequence> seqs;
  seqs.reserve(sentence_ids.size());
  for (const auto& ids : sentence_ids) seqs.push_back(wrap_anchor(ids));

  Mat states = encode_mask_states(seqs, dropout_active, tape ? &tape->main : nullptr);
  const bool want_debias =
      phase == EncodePhase::training || (phase == EncodePhase::evaluation && cfg_.eval_debias);
  if (!want_debias || seqs.empty()) return states;

  // One bias forward per distinct truncated-sentence length.
  std::map<int, int> group_by_len;
  std::vector<PromptedSequence> bias_seqs;
  std::vector<int> group_of_row(seqs.size());
  for (size_t r = 0; r < seqs.size(); ++r) {
    const int len = seqs[r].sentence_token_count();
    auto [it, inserted] = group_by_len.emplace(len, static_cast<int>(bias_seqs.size()));
    if (inserted) {
      if (cfg_.anchor_mode == AnchorMode::continuous) {
        bias_seqs.push_back(
            continuous_bias_sequence(cfg_.prompt_length, len, *tokenizer_, cfg_.max_length));
      } else {
        bias_seqs.push_back(
            template_bias_sequence(manual_anchor_template(), len, *tokenizer_, cfg_.max_length));
      }
    }
    group_of_row[r] = it->second;
  }
  return apply_debias_groups(std::move(states), bias_seqs, group_of_row, tape);
}

Mat MaskEncoder::prototype_embed_side(std::span<const std::vector<int>> sentence_ids,
                                      std::span<const Template* const> templates,
                                      bool dropout_active, DebiasedTape* tape) {
  if (sentence_ids.size() != templates.size()) {
    throw std::invalid_argument("one template per sentence required");
  }
  std::vector<PromptedSequence> seqs;
  seqs.reserve(sentence_ids.size());
  for (size_t i = 0; i < sentence_ids.size(); ++i) {
    seqs.push_back(
        apply_template_tokens(*templates[i], sentence_ids[i], *tokenizer_, cfg_.max_length));
  }
  Mat states = encode_mask_states(seqs, dropout_active, tape ? &tape->main : nullptr);
  if (!cfg_.debias_prototypes || seqs.empty()) return states;

  std::map<std::pair<std::string, int>, int> group_by_key;
  std::vector<PromptedSequence> bias_seqs;
  std::vector<int> group_of_row(seqs.size());
  for (size_t r = 0; r < seqs.size(); ++r) {
    const int len = seqs[r].sentence_token_count();
    const std::pair<std::string, int> key{templates[r]->id, len};
    auto [it, inserted] = group_by_key.emplace(key, static_cast<int>(bias_seqs.size()));
    if (inserted) {
      bias_seqs.push_back(template_bias_sequence(*templates[r], len, *tokenizer_, cfg_.max_length));
    }
    group_of_row[r] = it->second;
  }
  return apply_debias_groups(std::move(states), bias_seqs, group_of_row, tape);
}

std::pair<Mat, Mat> MaskEncoder::prototype_embed(std::span<const std::string> sentences,
                                                 std::span<const Template* const> positive,
                                                 std::span<const Template* const> negative,
                                                 bool dropout_active, DebiasedTape* positive_tape,
                                                 DebiasedTape* negative_tape) {
  std::vector<std::vector<int>> ids;
  ids.reserve(sentences.size());
  for (const std::string& s : sentences) ids.push_back(tokenizer_->encode(s));
  Mat c_plus = prototype_embed_side(ids, positive, dropout_active, positive_tape);
  Mat c_minus = prototype_embed_side(ids, negative, dropout_active, negative_tape);
  return {std::move(c_plus), std::move(c_minus)};
}

void MaskEncoder::debiased_backward(const DebiasedTape& tape, const Mat& grad_rows) {
  backward(tape.main, grad_rows);
  for (const DebiasedTape::BiasGroup& group : tape.bias_groups) {
    Vec grad_sum = Vec::Zero(cfg_.hidden_dim);
    for (int r : group.members) {
      grad_sum += grad_rows.row(r).transpose();
    }
    Mat grad_out =
        Mat::Zero(static_cast<Eigen::Index>(group.input.token_ids.size()), cfg_.hidden_dim);
    grad_out.row(group.input.mask_index) = -grad_sum.transpose();
    nn::transformer_backward(weights_, &prompt_, group.input, group.cache, grad_out);
  }
}

std::vector<nn::Tensor*> MaskEncoder::trainable_parameters() {
  std::vector<nn::Tensor*> params = weights_.parameters();
  if (cfg_.prompt_length > 0) params.push_back(&prompt_);
  return params;
}

void MaskEncoder::zero_grads() {
  weights_.zero_grads();
  prompt_.grad.setZero();
}

uint64_t MaskEncoder::parameter_hash() const {
  uint64_t hash = weights_.value_hash();
  const auto* bytes = reinterpret_cast<const unsigned char*>(prompt_.value.data());
  const size_t n = sizeof(double) * static_cast<size_t>(prompt_.value.size());
  for (size_t i = 0; i < n; ++i) {
    hash ^= bytes[i];
    hash *= 0x100000001B3ULL;
  }
  return hash;
}

std::string MaskEncoder::checkpoint_id() const {
  return to_hex(parameter_hash());
}

void MaskEncoder::save_checkpoint(const std::string& dir) const {
  fs::create_directories(dir);
  std::vector<const nn::Tensor*> tensors;
  for (const nn::Tensor* t : weights_.parameters()) tensors.push_back(t);
  tensors.push_back(&prompt_);
  write_weights_file(dir + "/weights.bin", tensors);
  save_tokenizer(*tokenizer_, dir + "/tokenizer.json");

  json doc;
  doc["format"] = "conpvp-checkpoint-v1";
  doc["encoder"] = encoder_config_to_json(cfg_, weights_.config().max_positions,
                                          weights_.config().type_vocab);
  doc["tokenizer_hash"] = tokenizer_->vocab_hash();
  std::ofstream out(dir + "/config.json");
  if (!out) throw std::runtime_error("cannot write " + dir + "/config.json");
  out << doc.dump(2) << "\n";
}

MaskEncoder MaskEncoder::load_checkpoint(const std::string& dir) {
  std::ifstream in(dir + "/config.json");
  if (!in) throw std::invalid_argument("cannot open checkpoint config: " + dir + "/config.json");
  json doc = json::parse(in);
  if (doc.value("format", "") != "conpvp-checkpoint-v1") {
    throw std::invalid_argument(dir + " is not a checkpoint directory");
  }
  const json& e = doc.at("encoder");
  EncoderConfig cfg;
  cfg.hidden_dim = e.at("hidden_dim").get<int>();
  cfg.num_layers = e.at("num_layers").get<int>();
  cfg.num_heads = e.at("num_heads").get<int>();
  cfg.intermediate_dim = e.at("intermediate_dim").get<int>();
  cfg.vocab_size = e.at("vocab_size").get<int>();
  cfg.max_length = e.at("max_length").get<int>();
  cfg.dropout_rate = e.at("dropout_rate").get<double>();
  cfg.prompt_length = e.at("prompt_length").get<int>();
  cfg.backbone = backbone_from_name(e.at("backbone").get<std::string>());
  cfg.pretrained_path = e.value("pretrained_path", "");
  cfg.anchor_mode =
      e.at("anchor_mode").get<std::string>() == "manual" ? AnchorMode::manual
                                                         : AnchorMode::continuous;
  cfg.debias_prototypes = e.at("debias_prototypes").get<bool>();
  cfg.eval_debias = e.at("eval_debias").get<bool>();

  std::shared_ptr<Tokenizer> tokenizer = load_tokenizer(dir + "/tokenizer.json");
  if (doc.at("tokenizer_hash").get<std::string>() != tokenizer->vocab_hash()) {
    throw std::runtime_error("tokenizer hash mismatch in checkpoint " + dir);
  }
  MaskEncoder encoder(cfg, tokenizer, 0);
  const int max_positions = e.at("max_positions").get<int>();
  const int type_vocab = e.at("type_vocab").get<int>();
  if (max_positions != encoder.weights_.config().max_positions ||
      type_vocab != encoder.weights_.config().type_vocab) {
    encoder.weights_ = nn::TransformerWeights(
        to_transformer_config(encoder.cfg_, max_positions, type_vocab));
  }
  std::vector<nn::Tensor*> tensors = encoder.weights_.parameters();
  tensors.push_back(&encoder.prompt_);
  read_weights_file(dir + "/weights.bin", tensors);
  return encoder;
}

MaskEncoder MaskEncoder::load_pretrained(const std::string& dir, const EncoderConfig& overrides,
                                         uint64_t seed) {
  std::ifstream cfg_in(dir + "/config.json");
  if (!cfg_in) throw std::invalid_argument("cannot open " + dir + "/config.json");
  json hf = json::parse(cfg_in);

  bool lowercase = true;
  if (fs::exists(dir + "/tokenizer_config.json")) {
    std::ifstream tok_in(dir + "/tokenizer_config.json");
    json tok_cfg = json::parse(tok_in);
    lowercase = tok_cfg.value("do_lower_case", true);
  }
  auto tokenizer = std::make_shared<WordPieceTokenizer>(
      WordPieceTokenizer::from_vocab_file(dir + "/vocab.txt", lowercase));

  EncoderConfig cfg = overrides;
  cfg.backbone = BackboneKind::pretrained;
  cfg.pretrained_path = dir;
  cfg.hidden_dim = hf.at("hidden_size").get<int>();
  cfg.num_layers = hf.at("num_hidden_layers").get<int>();
  cfg.num_heads = hf.at("num_attention_heads").get<int>();
  cfg.intermediate_dim = hf.at("intermediate_size").get<int>();
  cfg.dropout_rate = hf.value("hidden_dropout_prob", 0.1);
  cfg.vocab_size = tokenizer->vocab_size();
  const int max_positions = hf.at("max_position_embeddings").get<int>();
  cfg.max_length = std::min(overrides.max_length, max_positions);
  const int type_vocab = hf.value("type_vocab_size", 2);

  MaskEncoder encoder(cfg, tokenizer, seed);
  encoder.weights_ =
      nn::TransformerWeights(to_transformer_config(encoder.cfg_, max_positions, type_vocab));
  encoder.weights_.init_normal(mix_seed(seed, 0));
  encoder.init_prompt(mix_seed(seed, 1));

  const SafeTensorFile file = read_safetensors(dir + "/model.safetensors");
  auto assign = [&](const std::string& ours, const std::string& theirs, bool transpose) {
    const json* entry = find_entry(file.header, theirs);
    if (entry == nullptr) {
      throw std::runtime_error("pretrained checkpoint is missing tensor " + theirs);
    }
    Mat m = safetensor_matrix(file, *entry);
    if (transpose) m.transposeInPlace();
    nn::Tensor* t = encoder.weights_.find(ours);
    if (t == nullptr) throw std::runtime_error("no such tensor " + ours);
    if (t->value.rows() != m.rows() || t->value.cols() != m.cols()) {
      throw std::runtime_error("shape mismatch loading " + theirs);
    }
    t->value = std::move(m);
  };

  assign("emb.tok", "embeddings.word_embeddings.weight", false);
  assign("emb.pos", "embeddings.position_embeddings.weight", false);
  assign("emb.type", "embeddings.token_type_embeddings.weight", false);
  assign("emb.ln.gamma", "embeddings.LayerNorm.weight", false);
  assign("emb.ln.beta", "embeddings.LayerNorm.bias", false);
  for (int i = 0; i < cfg.num_layers; ++i) {
    const std::string ours = "layer" + std::to_string(i) + ".";
    const std::string theirs = "encoder.layer." + std::to_string(i) + ".";
    assign(ours + "attn.wq", theirs + "attention.self.query.weight", true);
    assign(ours + "attn.bq", theirs + "attention.self.query.bias", false);
    assign(ours + "attn.wk", theirs + "attention.self.key.weight", true);
    assign(ours + "attn.bk", theirs + "attention.self.key.bias", false);
    assign(ours + "attn.wv", theirs + "attention.self.value.weight", true);
    assign(ours + "attn.bv", theirs + "attention.self.value.bias", false);
    assign(ours + "attn.wo", theirs + "attention.output.dense.weight", true);
    assign(ours + "attn.bo", theirs + "attention.output.dense.bias", false);
    assign(ours + "ln1.gamma", theirs + "attention.output.LayerNorm.weight", false);
    assign(ours + "ln1.beta", theirs + "attention.output.LayerNorm.bias", false);
    assign(ours + "mlp.w_in", theirs + "intermediate.dense.weight", true);
    assign(ours + "mlp.b_in", theirs + "intermediate.dense.bias", false);
    assign(ours + "mlp.w_out", theirs + "output.dense.weight", true);
    assign(ours + "mlp.b_out", theirs + "output.dense.bias", false);
    assign(ours + "ln2.gamma", theirs + "output.LayerNorm.weight", false);
    assign(ours + "ln2.beta", theirs + "output.LayerNorm.bias", false);
  }
  // Prompt rows now copy the *loaded* embeddings rather than the random init.
  encoder.init_prompt(mix_seed(seed, 1));
  return encoder;
}

}  // namespace conpvp
