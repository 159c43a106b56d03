#include "conpvp/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "conpvp/util.hpp"

namespace conpvp {
namespace {

using nlohmann::json;

std::string lowercase_ascii(std::string_view text) {
  std::string out(text);
  for (char& c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

bool is_ascii_punct(unsigned char c) {
  return std::ispunct(c) != 0;
}

// Splits on whitespace, then peels ASCII punctuation off as single-character
// tokens. Bytes >= 0x80 are kept inside words so multi-byte UTF-8 stays whole.
std::vector<std::string> split_words_impl(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      words.push_back(current);
      current.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && is_ascii_punct(c)) {
      flush();
      words.push_back(std::string(1, static_cast<char>(c)));
    } else {
      current.push_back(static_cast<char>(c));
    }
  }
  flush();
  return words;
}

}  // namespace

std::string Tokenizer::vocab_hash() const {
  std::string blob = kind();
  blob.push_back('\n');
  for (int i = 0; i < vocab_size(); ++i) {
    blob += token_text(i);
    blob.push_back('\n');
  }
  return to_hex(fnv1a64(blob));
}

std::vector<std::string> BasicTokenizer::split_words(std::string_view text) {
  return split_words_impl(lowercase_ascii(text));
}

BasicTokenizer BasicTokenizer::build(const std::vector<std::string>& texts,
                                     const std::vector<std::string>& extra_texts,
                                     int max_vocab) {
  std::map<std::string, long long> counts;
  for (const std::string& t : texts) {
    for (std::string& w : split_words(t)) {
      ++counts[std::move(w)];
    }
  }
  std::vector<std::string> forced;
  for (const std::string& t : extra_texts) {
    for (std::string& w : split_words(t)) {
      if (!counts.count(w)) forced.push_back(std::move(w));
    }
  }
  std::sort(forced.begin(), forced.end());
  forced.erase(std::unique(forced.begin(), forced.end()), forced.end());

  std::vector<std::pair<std::string, long long>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::vector<std::string> tokens = {"[PAD]", "[UNK]", "[MASK]"};
  const size_t limit = max_vocab > 0 ? static_cast<size_t>(max_vocab)
                                     : std::numeric_limits<size_t>::max();
  for (auto& [tok, count] : ranked) {
    if (tokens.size() >= limit) break;
    tokens.push_back(tok);
  }
  // Template tokens ride along regardless of the cap.
  for (const std::string& w : forced) {
    tokens.push_back(w);
  }
  return from_token_list(std::move(tokens));
}

BasicTokenizer BasicTokenizer::from_token_list(std::vector<std::string> tokens) {
  if (tokens.size() < 3 || tokens[kPad] != "[PAD]" || tokens[kUnk] != "[UNK]" ||
      tokens[kMask] != "[MASK]") {
    throw std::invalid_argument("basic tokenizer vocabulary must start with [PAD],[UNK],[MASK]");
  }
  BasicTokenizer tk;
  tk.tokens_ = std::move(tokens);
  for (size_t i = 0; i < tk.tokens_.size(); ++i) {
    if (!tk.ids_.emplace(tk.tokens_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate token in vocabulary: " + tk.tokens_[i]);
    }
  }
  return tk;
}

std::vector<int> BasicTokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const std::string& w : split_words(text)) {
    auto it = ids_.find(w);
    ids.push_back(it == ids_.end() ? kUnk : it->second);
  }
  return ids;
}

std::string BasicTokenizer::token_text(int id) const {
  if (id < 0 || id >= vocab_size()) {
    throw std::out_of_range("token id out of range: " + std::to_string(id));
  }
  return tokens_[id];
}

WordPieceTokenizer WordPieceTokenizer::from_vocab_file(const std::string& path, bool lowercase) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("cannot open vocab file: " + path);
  }
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
  return from_token_list(std::move(tokens), lowercase);
}

WordPieceTokenizer WordPieceTokenizer::from_token_list(std::vector<std::string> tokens,
                                                       bool lowercase) {
  WordPieceTokenizer tk;
  tk.tokens_ = std::move(tokens);
  tk.lowercase_ = lowercase;
  for (size_t i = 0; i < tk.tokens_.size(); ++i) {
    tk.ids_.emplace(tk.tokens_[i], static_cast<int>(i));
  }
  auto lookup = [&](const char* name) {
    auto it = tk.ids_.find(name);
    if (it == tk.ids_.end()) {
      throw std::invalid_argument(std::string("vocab missing special token ") + name);
    }
    return it->second;
  };
  tk.pad_ = lookup("[PAD]");
  tk.unk_ = lookup("[UNK]");
  tk.cls_ = lookup("[CLS]");
  tk.sep_ = lookup("[SEP]");
  tk.mask_ = lookup("[MASK]");
  return tk;
}

std::vector<int> WordPieceTokenizer::encode(std::string_view text) const {
  const std::string prepared = lowercase_ ? lowercase_ascii(text) : std::string(text);
  std::vector<int> ids;
  for (const std::string& word : split_words_impl(prepared)) {
    if (word.size() > 200) {
      ids.push_back(unk_);
      continue;
    }
    std::vector<int> pieces;
    size_t start = 0;
    bool ok = true;
    while (start < word.size()) {
      size_t end = word.size();
      int found = -1;
      while (end > start) {
        std::string piece = (start == 0 ? "" : "##") + word.substr(start, end - start);
        auto it = ids_.find(piece);
        if (it != ids_.end()) {
          found = it->second;
          break;
        }
        --end;
      }
      if (found < 0) {
        ok = false;
        break;
      }
      pieces.push_back(found);
      start = end;
    }
    if (ok) {
      ids.insert(ids.end(), pieces.begin(), pieces.end());
    } else {
      ids.push_back(unk_);
    }
  }
  return ids;
}

std::string WordPieceTokenizer::token_text(int id) const {
  if (id < 0 || id >= vocab_size()) {
    throw std::out_of_range("token id out of range: " + std::to_string(id));
  }
  return tokens_[id];
}

void save_tokenizer(const Tokenizer& tokenizer, const std::string& path) {
  json doc;
  doc["kind"] = tokenizer.kind();
  std::vector<std::string> tokens;
  tokens.reserve(tokenizer.vocab_size());
  for (int i = 0; i < tokenizer.vocab_size(); ++i) {
    tokens.push_back(tokenizer.token_text(i));
  }
  doc["tokens"] = tokens;
  if (tokenizer.kind() == "wordpiece") {
    doc["lowercase"] = static_cast<const WordPieceTokenizer&>(tokenizer).lowercase();
  }
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write tokenizer file: " + path);
  }
  out << doc.dump(2) << "\n";
}

std::shared_ptr<Tokenizer> load_tokenizer(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("cannot open tokenizer file: " + path);
  }
  json doc = json::parse(in);
  const std::string kind = doc.at("kind").get<std::string>();
  std::vector<std::string> tokens = doc.at("tokens").get<std::vector<std::string>>();
  if (kind == "basic") {
    return std::make_shared<BasicTokenizer>(BasicTokenizer::from_token_list(std::move(tokens)));
  }
  if (kind == "wordpiece") {
    const bool lowercase = doc.value("lowercase", true);
    return std::make_shared<WordPieceTokenizer>(
        WordPieceTokenizer::from_token_list(std::move(tokens), lowercase));
  }
  throw std::invalid_argument("unknown tokenizer kind: " + kind);
}

}  // namespace conpvp
