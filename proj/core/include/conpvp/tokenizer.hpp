#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace conpvp {

// Maps raw text to token ids. Implementations own all text normalization;
// upstream loaders never touch the text.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual std::vector<int> encode(std::string_view text) const = 0;
  virtual std::string token_text(int id) const = 0;
  virtual int vocab_size() const = 0;

  virtual int mask_id() const = 0;
  virtual int unk_id() const = 0;
  virtual int pad_id() const = 0;
  // -1 when the scheme has no sequence delimiters (the builtin tokenizer).
  virtual int cls_id() const { return -1; }
  virtual int sep_id() const { return -1; }

  virtual std::string kind() const = 0;

  // Stable digest of the vocabulary; checkpoints embed it so evaluation can
  // detect a checkpoint/tokenizer mismatch.
  std::string vocab_hash() const;
};

// Whitespace + single-character punctuation splitting over a lowercased
// corpus-built vocabulary. Deterministic: ids ordered by (count desc, token asc).
class BasicTokenizer final : public Tokenizer {
 public:
  // `texts` supply the frequency counts; `extra_texts` (template surfaces)
  // are always included so prompt tokens never map to [UNK].
  static BasicTokenizer build(const std::vector<std::string>& texts,
                              const std::vector<std::string>& extra_texts,
                              int max_vocab = 0);
  static BasicTokenizer from_token_list(std::vector<std::string> tokens);

  static std::vector<std::string> split_words(std::string_view text);

  std::vector<int> encode(std::string_view text) const override;
  std::string token_text(int id) const override;
  int vocab_size() const override { return static_cast<int>(tokens_.size()); }
  int mask_id() const override { return kMask; }
  int unk_id() const override { return kUnk; }
  int pad_id() const override { return kPad; }
  std::string kind() const override { return "basic"; }

  const std::vector<std::string>& tokens() const { return tokens_; }

  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kMask = 2;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Greedy longest-match-first subword tokenizer over a published vocab.txt,
// "##" continuation convention, with the usual [PAD]/[UNK]/[CLS]/[SEP]/[MASK]
// special tokens.
class WordPieceTokenizer final : public Tokenizer {
 public:
  static WordPieceTokenizer from_vocab_file(const std::string& path, bool lowercase = true);
  static WordPieceTokenizer from_token_list(std::vector<std::string> tokens, bool lowercase);

  std::vector<int> encode(std::string_view text) const override;
  std::string token_text(int id) const override;
  int vocab_size() const override { return static_cast<int>(tokens_.size()); }
  int mask_id() const override { return mask_; }
  int unk_id() const override { return unk_; }
  int pad_id() const override { return pad_; }
  int cls_id() const override { return cls_; }
  int sep_id() const override { return sep_; }
  std::string kind() const override { return "wordpiece"; }

  bool lowercase() const { return lowercase_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  bool lowercase_ = true;
  int pad_ = -1, unk_ = -1, cls_ = -1, sep_ = -1, mask_ = -1;
};

// Persistence for checkpoint directories (tokenizer.json).
void save_tokenizer(const Tokenizer& tokenizer, const std::string& path);
std::shared_ptr<Tokenizer> load_tokenizer(const std::string& path);

}  // namespace conpvp
