#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "layerslim/model.hpp"
#include "layerslim/task.hpp"
#include "layerslim/tokenizer.hpp"

namespace layerslim {

// P(s, l). An empty label leaves the pattern ending on the answer cue.
std::string render_pattern(const PromptTemplate& tmpl, std::string_view text, std::string_view label);

// X(s) = P(s_1,l_1) + ... + P(s_k,l_k) + P(s, empty), joined by the template
// separator. Demonstrations are used in the order given; may be empty.
std::string build_prompt(const PromptTemplate& tmpl, std::span<const LabeledExample> demonstrations,
                         std::string_view query);

// As above, but requires exactly one demonstration per class of `task` and
// orders them by label id.
std::string build_prompt(const TaskSpec& task, std::span<const LabeledExample> demonstrations,
                         std::string_view query);

// Injective label id -> label word map, with each word's token ids under a vocabulary.
class Verbalizer {
 public:
  explicit Verbalizer(std::vector<std::string> label_words);
  Verbalizer(std::vector<std::string> label_words, const Vocab& vocab);

  int64_t num_classes() const { return static_cast<int64_t>(words_.size()); }
  const std::string& word(int64_t label) const;
  int64_t label_of(std::string_view word) const;  // -1 when not a label word
  bool has_tokens() const { return !tokens_.empty(); }
  const std::vector<int32_t>& tokens(int64_t label) const;
  int64_t max_token_length() const;
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::vector<std::vector<int32_t>> tokens_;
};

// A prompt kept as separately encoded parts so whole demonstrations can be
// dropped when it does not fit.
struct EncodedPrompt {
  std::vector<std::vector<int32_t>> demonstrations;  // one pattern each, no BOS
  std::vector<int32_t> query;                         // P(s, empty), no BOS

  int64_t length() const;              // including BOS
  std::vector<int32_t> ids() const;    // BOS + demonstrations + query
};

EncodedPrompt encode_prompt(const Vocab& vocab, const PromptTemplate& tmpl,
                            std::span<const LabeledExample> demonstrations, std::string_view query);

// Removes whole demonstrations, oldest first, until BOS + prompt fits in
// max_seq_len. Throws LengthError if the query pattern alone does not fit.
std::vector<int32_t> truncate_prompt(const EncodedPrompt& prompt, int64_t max_seq_len);

// Per-class sum of log-probabilities of the label word's tokens, each
// conditioned on the prompt and the preceding label tokens. All scores <= 0.
std::vector<double> score_labels(const TransformerModel& model, const Verbalizer& verbalizer,
                                 std::span<const int32_t> prompt_ids);
std::vector<double> score_labels(const TransformerModel& model, const Vocab& vocab, const Verbalizer& verbalizer,
                                 std::string_view prompt);

int64_t argmax(std::span<const double> scores);
int64_t argmax(std::span<const float> scores);

}  // namespace layerslim
