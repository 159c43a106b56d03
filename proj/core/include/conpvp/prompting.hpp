#pragma once

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "conpvp/tokenizer.hpp"

namespace conpvp {

enum class Polarity { positive, negative };

// A prompt pattern with exactly one sentence slot "<S>" and one mask slot
// "[MASK]". Negative templates may name their positive counterpart.
struct Template {
  std::string id;
  std::string pattern;
  Polarity polarity = Polarity::positive;
  std::optional<std::string> pair_id;
};

struct TemplateSets {
  std::vector<Template> positives;
  std::vector<Template> negatives;

  const Template* find(const std::string& id) const;
};

// The 16 built-in patterns: 8 positive, 8 negative, with pair links where the
// wording is an explicit negation of a positive row.
TemplateSets builtin_template_sets();

// Fixed discrete template for the manual-anchor variant.
const Template& manual_anchor_template();

// Validates slot counts; throws on zero or duplicate "<S>"/"[MASK]".
Template parse_template(const std::string& pattern, Polarity polarity,
                        const std::string& id = "");

// One pattern per line, prefixed '+' or '-' (U+2212 also accepted).
TemplateSets load_template_file(const std::string& path);

// A tokenized, mask-bearing input. position_ids are explicit so template-only
// bias sequences can keep the positions they would occupy in a full wrapped
// sequence. For continuous-prompt inputs, the continuous_slot_count positions
// immediately before mask_index are placeholder slots to be filled with the
// trainable prompt vectors.
struct PromptedSequence {
  std::vector<int> token_ids;
  std::vector<int> position_ids;
  int mask_index = -1;
  int sentence_begin = 0;  // [begin, end) token range of the sentence
  int sentence_end = 0;
  std::string template_id;
  int continuous_slot_count = 0;

  int length() const { return static_cast<int>(token_ids.size()); }
  int sentence_token_count() const { return sentence_end - sentence_begin; }
};

// Wraps a sentence in a discrete template. The sentence is truncated to fit
// max_length; template tokens are never dropped. Throws if the template alone
// does not fit.
PromptedSequence apply_template(const Template& tpl, std::string_view sentence,
                                const Tokenizer& tokenizer, int max_length);
PromptedSequence apply_template_tokens(const Template& tpl, std::span<const int> sentence_ids,
                                       const Tokenizer& tokenizer, int max_length);

// [sentence; l placeholder slots; mask], truncating the sentence to fit.
PromptedSequence apply_continuous_prompt(std::string_view sentence, int prompt_length,
                                         const Tokenizer& tokenizer, int max_length);
PromptedSequence apply_continuous_prompt_tokens(std::span<const int> sentence_ids,
                                                int prompt_length, const Tokenizer& tokenizer,
                                                int max_length);

// Template-only input whose tokens keep the positions they would occupy when
// wrapped around a sentence of reference_sentence_tokens tokens.
PromptedSequence template_bias_sequence(const Template& tpl, int reference_sentence_tokens,
                                        const Tokenizer& tokenizer, int max_length);
PromptedSequence continuous_bias_sequence(int prompt_length, int reference_sentence_tokens,
                                          const Tokenizer& tokenizer, int max_length);

// Pattern surfaces with the slot markers blanked out; feed these to a
// corpus-built tokenizer so template words never map to [UNK].
std::vector<std::string> template_texts_for_vocab(const TemplateSets& sets);

enum class TemplateSamplingMode { independent, paired };

// independent: one uniform draw from each set. paired: uniform draw over the
// positives that have a pair link, returning the linked negative.
std::pair<const Template*, const Template*> sample_templates(const TemplateSets& sets,
                                                             std::mt19937_64& rng,
                                                             TemplateSamplingMode mode);

}  // namespace conpvp
