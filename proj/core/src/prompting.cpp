#include "conpvp/prompting.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace conpvp {
namespace {

constexpr std::string_view kSentenceSlot = "<S>";
constexpr std::string_view kMaskSlot = "[MASK]";

struct Piece {
  enum Kind { text, sentence, mask } kind;
  std::string content;  // only for text pieces
};

size_t count_occurrences(const std::string& pattern, std::string_view needle) {
  size_t count = 0;
  for (size_t pos = pattern.find(needle); pos != std::string::npos;
       pos = pattern.find(needle, pos + needle.size())) {
    ++count;
  }
  return count;
}

std::vector<Piece> split_pattern(const std::string& pattern) {
  std::vector<Piece> pieces;
  size_t pos = 0;
  while (pos < pattern.size()) {
    const size_t s = pattern.find(kSentenceSlot, pos);
    const size_t m = pattern.find(kMaskSlot, pos);
    const size_t next = std::min(s, m);
    if (next == std::string::npos) {
      pieces.push_back({Piece::text, pattern.substr(pos)});
      break;
    }
    if (next > pos) {
      pieces.push_back({Piece::text, pattern.substr(pos, next - pos)});
    }
    if (next == s) {
      pieces.push_back({Piece::sentence, {}});
      pos = next + kSentenceSlot.size();
    } else {
      pieces.push_back({Piece::mask, {}});
      pos = next + kMaskSlot.size();
    }
  }
  return pieces;
}

// Shared assembler for wrapped inputs and template-only bias inputs.
// skip_positions > 0 reserves that many position indices at the sentence slot
// without emitting tokens (the bias variant); sentence_ids must then be empty.
PromptedSequence assemble(const std::vector<Piece>& pieces, const std::string& template_id,
                          std::span<const int> sentence_ids, const Tokenizer& tokenizer,
                          int max_length, int skip_positions) {
  const int cls = tokenizer.cls_id();
  const int sep = tokenizer.sep_id();
  const int specials = (cls >= 0 ? 1 : 0) + (sep >= 0 ? 1 : 0);

  int template_tokens = 0;
  std::vector<std::vector<int>> text_ids(pieces.size());
  for (size_t i = 0; i < pieces.size(); ++i) {
    if (pieces[i].kind == Piece::text) {
      text_ids[i] = tokenizer.encode(pieces[i].content);
      template_tokens += static_cast<int>(text_ids[i].size());
    } else if (pieces[i].kind == Piece::mask) {
      template_tokens += 1;
    }
  }
  const int budget = max_length - specials - template_tokens;
  if (budget < 0) {
    throw std::invalid_argument("template '" + template_id + "' alone exceeds max_length " +
                                std::to_string(max_length));
  }
  const int occupied = skip_positions > 0 ? skip_positions : static_cast<int>(sentence_ids.size());
  if (skip_positions > budget) {
    throw std::invalid_argument("bias reference length " + std::to_string(skip_positions) +
                                " cannot occur under max_length " + std::to_string(max_length));
  }
  const int keep = std::min<int>(static_cast<int>(sentence_ids.size()), budget);

  PromptedSequence seq;
  seq.template_id = template_id;
  int position = 0;
  auto push = [&](int id) {
    seq.token_ids.push_back(id);
    seq.position_ids.push_back(position++);
  };
  if (cls >= 0) push(cls);
  for (size_t i = 0; i < pieces.size(); ++i) {
    switch (pieces[i].kind) {
      case Piece::text:
        for (int id : text_ids[i]) push(id);
        break;
      case Piece::sentence:
        seq.sentence_begin = static_cast<int>(seq.token_ids.size());
        for (int k = 0; k < keep; ++k) push(sentence_ids[k]);
        seq.sentence_end = static_cast<int>(seq.token_ids.size());
        position += skip_positions;  // bias variant: hold the sentence's positions open
        break;
      case Piece::mask:
        seq.mask_index = static_cast<int>(seq.token_ids.size());
        push(tokenizer.mask_id());
        break;
    }
  }
  if (sep >= 0) push(sep);
  (void)occupied;
  return seq;
}

std::vector<Piece> continuous_pieces(int prompt_length) {
  // [sentence; slots; mask] — slots are emitted by the caller between the
  // sentence and the mask, so the piece list is just sentence then mask.
  (void)prompt_length;
  return {{Piece::sentence, {}}, {Piece::mask, {}}};
}

PromptedSequence assemble_continuous(std::span<const int> sentence_ids, int prompt_length,
                                     const Tokenizer& tokenizer, int max_length,
                                     int skip_positions) {
  if (prompt_length < 0) {
    throw std::invalid_argument("prompt_length must be >= 0");
  }
  const int cls = tokenizer.cls_id();
  const int sep = tokenizer.sep_id();
  const int specials = (cls >= 0 ? 1 : 0) + (sep >= 0 ? 1 : 0);
  const int budget = max_length - specials - prompt_length - 1;
  if (budget < 0) {
    throw std::invalid_argument("continuous prompt of length " + std::to_string(prompt_length) +
                                " exceeds max_length " + std::to_string(max_length));
  }
  if (skip_positions > budget) {
    throw std::invalid_argument("bias reference length " + std::to_string(skip_positions) +
                                " cannot occur under max_length " + std::to_string(max_length));
  }
  const int keep = std::min<int>(static_cast<int>(sentence_ids.size()), budget);

  PromptedSequence seq;
  seq.template_id = "<continuous>";
  seq.continuous_slot_count = prompt_length;
  int position = 0;
  auto push = [&](int id) {
    seq.token_ids.push_back(id);
    seq.position_ids.push_back(position++);
  };
  if (cls >= 0) push(cls);
  seq.sentence_begin = static_cast<int>(seq.token_ids.size());
  for (int k = 0; k < keep; ++k) push(sentence_ids[k]);
  seq.sentence_end = static_cast<int>(seq.token_ids.size());
  position += skip_positions;
  for (int j = 0; j < prompt_length; ++j) push(tokenizer.pad_id());  // placeholder slots
  seq.mask_index = static_cast<int>(seq.token_ids.size());
  push(tokenizer.mask_id());
  if (sep >= 0) push(sep);
  return seq;
}

}  // namespace

const Template* TemplateSets::find(const std::string& id) const {
  for (const Template& t : positives) {
    if (t.id == id) return &t;
  }
  for (const Template& t : negatives) {
    if (t.id == id) return &t;
  }
  return nullptr;
}

Template parse_template(const std::string& pattern, Polarity polarity, const std::string& id) {
  if (pattern.empty()) {
    throw std::invalid_argument("empty template pattern");
  }
  const size_t sentence_slots = count_occurrences(pattern, kSentenceSlot);
  const size_t mask_slots = count_occurrences(pattern, kMaskSlot);
  if (sentence_slots != 1 || mask_slots != 1) {
    throw std::invalid_argument("template must contain exactly one <S> and one [MASK], got " +
                                std::to_string(sentence_slots) + " and " +
                                std::to_string(mask_slots) + ": " + pattern);
  }
  Template t;
  t.id = id.empty() ? pattern : id;
  t.pattern = pattern;
  t.polarity = polarity;
  return t;
}

TemplateSets builtin_template_sets() {
  struct Row {
    const char* id;
    const char* pattern;
    const char* pair;  // nullptr when the wording has no explicit negation
  };
  static const Row kPositive[] = {
      {"p1", "Given ``<S>'' , we assume that ``[MASK]''", nullptr},
      {"p2", "`` <S> '' , is this review positive ? [MASK] .", "n1"},
      {"p3", "`` <S> '' , is [MASK] news", nullptr},
      {"p4", "`` <S> '' , is a [MASK] one", "n6"},
      {"p5", "`` <S> '' . In summary : `` [MASK] ''", nullptr},
      {"p6", "By `` <S> '' they mean [MASK] .", "n2"},
      {"p7", "Article `` <S> '' belongs to a [MASK] topic", "n8"},
      {"p8", "This sentence : `` <S> '' means [MASK] .", "n7"},
  };
  static const Row kNegative[] = {
      {"n1", "`` <S> '' , is this review negative ? [MASK] .", "p2"},
      {"n2", "Without `` <S> '' , they mean [MASK] .", "p6"},
      {"n3", "`` <S> '' is inconsistent with `` [MASK] ''", nullptr},
      {"n4", "`` <S> '' is totally different from : `` [MASK] ''", nullptr},
      {"n5", "`` <S> '' which does not denote [MASK]", nullptr},
      {"n6", "`` <S> '' is not a [MASK] one", "p4"},
      {"n7", "This sentence : `` <S> '' does not mean [MASK] .", "p8"},
      {"n8", "Article `` <S> '' is definitely not about the [MASK] topic", "p7"},
  };
  TemplateSets sets;
  for (const Row& row : kPositive) {
    Template t = parse_template(row.pattern, Polarity::positive, row.id);
    if (row.pair) t.pair_id = row.pair;
    sets.positives.push_back(std::move(t));
  }
  for (const Row& row : kNegative) {
    Template t = parse_template(row.pattern, Polarity::negative, row.id);
    if (row.pair) t.pair_id = row.pair;
    sets.negatives.push_back(std::move(t));
  }
  return sets;
}

const Template& manual_anchor_template() {
  static const Template t =
      parse_template("This sentence : `` <S> '' means [MASK] .", Polarity::positive, "manual");
  return t;
}

TemplateSets load_template_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("cannot open template file: " + path);
  }
  TemplateSets sets;
  std::string line;
  size_t line_no = 0;
  int counter = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    Polarity polarity;
    size_t skip;
    if (line[0] == '+') {
      polarity = Polarity::positive;
      skip = 1;
    } else if (line[0] == '-') {
      polarity = Polarity::negative;
      skip = 1;
    } else if (line.size() >= 3 && line.compare(0, 3, "\xE2\x88\x92") == 0) {  // U+2212
      polarity = Polarity::negative;
      skip = 3;
    } else {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                  ": line must start with '+' or '-'");
    }
    while (skip < line.size() && line[skip] == ' ') ++skip;
    Template t = parse_template(line.substr(skip), polarity, "u" + std::to_string(++counter));
    (polarity == Polarity::positive ? sets.positives : sets.negatives).push_back(std::move(t));
  }
  if (sets.positives.empty() || sets.negatives.empty()) {
    throw std::invalid_argument("template file must provide at least one template per polarity");
  }
  return sets;
}

PromptedSequence apply_template(const Template& tpl, std::string_view sentence,
                                const Tokenizer& tokenizer, int max_length) {
  return apply_template_tokens(tpl, tokenizer.encode(sentence), tokenizer, max_length);
}

PromptedSequence apply_template_tokens(const Template& tpl, std::span<const int> sentence_ids,
                                       const Tokenizer& tokenizer, int max_length) {
  return assemble(split_pattern(tpl.pattern), tpl.id, sentence_ids, tokenizer, max_length, 0);
}

PromptedSequence apply_continuous_prompt(std::string_view sentence, int prompt_length,
                                         const Tokenizer& tokenizer, int max_length) {
  return assemble_continuous(tokenizer.encode(sentence), prompt_length, tokenizer, max_length, 0);
}

PromptedSequence apply_continuous_prompt_tokens(std::span<const int> sentence_ids,
                                                int prompt_length, const Tokenizer& tokenizer,
                                                int max_length) {
  return assemble_continuous(sentence_ids, prompt_length, tokenizer, max_length, 0);
}

PromptedSequence template_bias_sequence(const Template& tpl, int reference_sentence_tokens,
                                        const Tokenizer& tokenizer, int max_length) {
  return assemble(split_pattern(tpl.pattern), tpl.id, {}, tokenizer, max_length,
                  reference_sentence_tokens);
}

PromptedSequence continuous_bias_sequence(int prompt_length, int reference_sentence_tokens,
                                          const Tokenizer& tokenizer, int max_length) {
  return assemble_continuous({}, prompt_length, tokenizer, max_length, reference_sentence_tokens);
}

std::vector<std::string> template_texts_for_vocab(const TemplateSets& sets) {
  auto strip = [](std::string pattern) {
    for (std::string_view slot : {kSentenceSlot, kMaskSlot}) {
      for (size_t pos = pattern.find(slot); pos != std::string::npos;
           pos = pattern.find(slot, pos)) {
        pattern.replace(pos, slot.size(), " ");
      }
    }
    return pattern;
  };
  std::vector<std::string> texts;
  for (const Template& t : sets.positives) texts.push_back(strip(t.pattern));
  for (const Template& t : sets.negatives) texts.push_back(strip(t.pattern));
  texts.push_back(strip(manual_anchor_template().pattern));
  return texts;
}

std::pair<const Template*, const Template*> sample_templates(const TemplateSets& sets,
                                                             std::mt19937_64& rng,
                                                             TemplateSamplingMode mode) {
  if (sets.positives.empty() || sets.negatives.empty()) {
    throw std::invalid_argument("template sets must be nonempty");
  }
  if (mode == TemplateSamplingMode::independent) {
    std::uniform_int_distribution<size_t> pick_pos(0, sets.positives.size() - 1);
    std::uniform_int_distribution<size_t> pick_neg(0, sets.negatives.size() - 1);
    const Template* tp = &sets.positives[pick_pos(rng)];
    const Template* tn = &sets.negatives[pick_neg(rng)];
    return {tp, tn};
  }
  std::vector<const Template*> paired;
  for (const Template& t : sets.positives) {
    if (t.pair_id) paired.push_back(&t);
  }
  if (paired.empty()) {
    throw std::invalid_argument("paired sampling requires templates with pair links");
  }
  std::uniform_int_distribution<size_t> pick(0, paired.size() - 1);
  const Template* tp = paired[pick(rng)];
  const Template* tn = sets.find(*tp->pair_id);
  if (tn == nullptr || tn->polarity != Polarity::negative) {
    throw std::invalid_argument("template '" + tp->id + "' has a dangling pair link");
  }
  return {tp, tn};
}

}  // namespace conpvp
