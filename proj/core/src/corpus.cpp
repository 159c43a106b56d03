#include "conpvp/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "conpvp/util.hpp"

namespace conpvp {
namespace {

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("cannot open file: " + path);
  }
  return in;
}

// Strips a trailing '\r' so CRLF files load identically to LF files.
void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') {
    line.pop_back();
  }
}

bool is_blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(),
                     [](unsigned char c) { return std::isspace(c); });
}

double parse_score(const std::string& field, const std::string& path, size_t line_no) {
  double value = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                ": non-numeric score '" + field + "'");
  }
  return value;
}

}  // namespace

SentenceCorpus load_sentences(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  SentenceCorpus corpus;
  corpus.source_path = path;
  std::string line;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (is_blank(line)) continue;
    corpus.sentences.push_back(line);
  }
  if (corpus.sentences.empty()) {
    throw std::invalid_argument("zero usable lines in " + path);
  }
  log_info("loaded " + std::to_string(corpus.sentences.size()) + " sentences from " + path);
  return corpus;
}

std::vector<STSExample> load_sts(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  std::vector<STSExample> examples;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (is_blank(line)) continue;
    const size_t t1 = line.find('\t');
    const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos ||
        line.find('\t', t2 + 1) != std::string::npos) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                  ": expected 3 tab-separated columns");
    }
    STSExample ex;
    ex.gold_score = parse_score(line.substr(0, t1), path, line_no);
    if (ex.gold_score < 0.0 || ex.gold_score > 5.0) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                  ": score out of range [0,5]: " +
                                  std::to_string(ex.gold_score));
    }
    ex.sentence_a = line.substr(t1 + 1, t2 - t1 - 1);
    ex.sentence_b = line.substr(t2 + 1);
    examples.push_back(std::move(ex));
  }
  if (examples.empty()) {
    throw std::invalid_argument("zero usable rows in " + path);
  }
  return examples;
}

void save_sts(const std::string& path, const std::vector<STSExample>& examples) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write file: " + path);
  }
  out.precision(17);
  for (const STSExample& ex : examples) {
    out << ex.gold_score << '\t' << ex.sentence_a << '\t' << ex.sentence_b << '\n';
  }
}

LabeledDataset load_labeled(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  std::vector<std::pair<std::string, std::string>> rows;  // (label, text)
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (is_blank(line)) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                  ": expected 'label<TAB>text'");
    }
    rows.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  if (rows.empty()) {
    throw std::invalid_argument("zero usable rows in " + path);
  }

  std::map<std::string, int> label_ids;  // sorted labels -> contiguous ids
  for (const auto& [label, text] : rows) {
    label_ids.emplace(label, 0);
  }
  LabeledDataset dataset;
  for (auto& [label, id] : label_ids) {
    id = static_cast<int>(dataset.label_names.size());
    dataset.label_names.push_back(label);
  }
  for (const auto& [label, text] : rows) {
    dataset.examples.push_back({text, label_ids.at(label)});
  }
  if (dataset.num_classes() == 1) {
    log_warn("labeled file " + path + " contains a single class");
  }
  return dataset;
}

LabeledDataset sample_few_shot(const LabeledDataset& dataset, int per_class, uint64_t seed) {
  if (per_class < 1) {
    throw std::invalid_argument("per_class must be >= 1");
  }
  std::vector<std::vector<size_t>> by_class(dataset.num_classes());
  for (size_t i = 0; i < dataset.examples.size(); ++i) {
    by_class[dataset.examples[i].label].push_back(i);
  }
  LabeledDataset subset;
  subset.label_names = dataset.label_names;
  std::mt19937_64 rng(seed);
  for (int c = 0; c < dataset.num_classes(); ++c) {
    auto& pool = by_class[c];
    if (static_cast<int>(pool.size()) < per_class) {
      throw std::invalid_argument("class '" + dataset.label_names[c] + "' has only " +
                                  std::to_string(pool.size()) + " examples, need " +
                                  std::to_string(per_class));
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<size_t> picked(pool.begin(), pool.begin() + per_class);
    std::sort(picked.begin(), picked.end());  // keep original order within a class
    for (size_t idx : picked) {
      subset.examples.push_back(dataset.examples[idx]);
    }
  }
  return subset;
}

BatchIterator::BatchIterator(const SentenceCorpus& corpus, int batch_size, uint64_t seed)
    : corpus_(&corpus), batch_size_(batch_size), seed_(seed) {
  if (batch_size_ < 2) {
    throw std::invalid_argument("batch_size must be >= 2");
  }
  order_.resize(corpus.size());
  std::iota(order_.begin(), order_.end(), size_t{0});
  start_epoch();
}

void BatchIterator::start_epoch() {
  ++epoch_;
  cursor_ = 0;
  std::mt19937_64 rng(mix_seed(seed_, static_cast<uint64_t>(epoch_)));
  std::shuffle(order_.begin(), order_.end(), rng);
}

bool BatchIterator::next(std::vector<std::string>& batch) {
  batch.clear();
  if (cursor_ >= order_.size()) return false;
  const size_t remaining = order_.size() - cursor_;
  const size_t take = std::min<size_t>(remaining, static_cast<size_t>(batch_size_));
  if (take < 2) {  // final short batch below the loss's minimum size
    cursor_ = order_.size();
    return false;
  }
  batch.reserve(take);
  for (size_t i = 0; i < take; ++i) {
    batch.push_back(corpus_->sentences[order_[cursor_ + i]]);
  }
  cursor_ += take;
  return true;
}

size_t BatchIterator::batches_per_epoch() const {
  const size_t n = order_.size();
  const size_t full = n / static_cast<size_t>(batch_size_);
  const size_t rem = n % static_cast<size_t>(batch_size_);
  return full + (rem >= 2 ? 1 : 0);
}

}  // namespace conpvp
