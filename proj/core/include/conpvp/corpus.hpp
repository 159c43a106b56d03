#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace conpvp {

struct SentenceCorpus {
  std::vector<std::string> sentences;  // load order; never contains empty strings
  std::string source_path;

  size_t size() const { return sentences.size(); }
};

struct STSExample {
  std::string sentence_a;
  std::string sentence_b;
  double gold_score = 0.0;  // in [0, 5]
};

struct LabeledExample {
  std::string text;
  int label = 0;  // compacted to 0..num_classes-1
};

struct LabeledDataset {
  std::vector<LabeledExample> examples;
  std::vector<std::string> label_names;  // index = class id

  int num_classes() const { return static_cast<int>(label_names.size()); }
};

// One sentence per line, UTF-8; blank lines dropped. Throws on missing file
// or when no usable line remains.
SentenceCorpus load_sentences(const std::string& path);

// Tab-separated rows "score<TAB>sentence_a<TAB>sentence_b", score in [0,5].
std::vector<STSExample> load_sts(const std::string& path);
void save_sts(const std::string& path, const std::vector<STSExample>& examples);

// Tab-separated rows "label<TAB>text". Label strings are compacted to ids
// 0..C-1 in sorted order; the mapping is kept in label_names.
LabeledDataset load_labeled(const std::string& path);

// Exactly per_class examples per class, uniform without replacement.
LabeledDataset sample_few_shot(const LabeledDataset& dataset, int per_class, uint64_t seed);

// Seeded epoch shuffling over a corpus. One full pass per epoch; a trailing
// batch of size < 2 is dropped (the contrastive loss needs in-batch negatives).
class BatchIterator {
 public:
  BatchIterator(const SentenceCorpus& corpus, int batch_size, uint64_t seed);

  // Fills `batch` with the next batch of the current epoch; returns false at
  // end of epoch (call start_epoch to begin the next one).
  bool next(std::vector<std::string>& batch);
  void start_epoch();

  int epoch() const { return epoch_; }
  size_t batches_per_epoch() const;

 private:
  const SentenceCorpus* corpus_;
  int batch_size_;
  uint64_t seed_;
  int epoch_ = -1;
  size_t cursor_ = 0;
  std::vector<size_t> order_;
};

}  // namespace conpvp
