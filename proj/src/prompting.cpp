#include "layerslim/prompting.hpp"

#include <algorithm>
#include <set>

#include "layerslim/errors.hpp"

namespace layerslim {

std::string render_pattern(const PromptTemplate& tmpl, std::string_view text, std::string_view label) {
  std::string out;
  out.reserve(tmpl.input_prefix.size() + text.size() + tmpl.answer_prefix.size() + label.size() + 1);
  out += tmpl.input_prefix;
  out += text;
  out += tmpl.answer_prefix;
  if (!label.empty()) {
    out += ' ';
    out += label;
  }
  return out;
}

std::string build_prompt(const PromptTemplate& tmpl, std::span<const LabeledExample> demonstrations,
                         std::string_view query) {
  std::string out;
  for (const LabeledExample& demo : demonstrations) {
    out += render_pattern(tmpl, demo.text, demo.label_word);
    out += tmpl.separator;
  }
  out += render_pattern(tmpl, query, "");
  return out;
}

namespace {

std::vector<LabeledExample> ordered_demonstrations(const TaskSpec& task,
                                                   std::span<const LabeledExample> demonstrations) {
  std::vector<LabeledExample> ordered(demonstrations.begin(), demonstrations.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const LabeledExample& a, const LabeledExample& b) { return a.label_id < b.label_id; });
  for (int64_t c = 0; c < task.num_classes(); ++c) {
    const size_t i = static_cast<size_t>(c);
    if (i >= ordered.size() || ordered[i].label_id != c) {
      throw PromptError("task '" + task.name + "' prompt is missing a demonstration for class " + std::to_string(c) +
                        " (" + task.label_words[i] + ")");
    }
  }
  if (static_cast<int64_t>(ordered.size()) != task.num_classes()) {
    throw PromptError("task '" + task.name + "' takes exactly one demonstration per class, got " +
                      std::to_string(ordered.size()));
  }
  return ordered;
}

}  // namespace

std::string build_prompt(const TaskSpec& task, std::span<const LabeledExample> demonstrations,
                         std::string_view query) {
  const auto ordered = ordered_demonstrations(task, demonstrations);
  return build_prompt(task.prompt, ordered, query);
}

Verbalizer::Verbalizer(std::vector<std::string> label_words) : words_(std::move(label_words)) {
  if (words_.empty()) throw ConfigError("verbalizer needs at least one label word");
  std::set<std::string> seen;
  for (const std::string& w : words_) {
    if (!seen.insert(w).second) throw ConfigError("verbalizer is not injective: '" + w + "' used twice");
  }
}

Verbalizer::Verbalizer(std::vector<std::string> label_words, const Vocab& vocab) : Verbalizer(std::move(label_words)) {
  std::set<std::vector<int32_t>> seen;
  for (const std::string& w : words_) {
    std::vector<int32_t> ids = encode_tokens(vocab, w);
    if (ids.empty()) throw ConfigError("label word '" + w + "' tokenizes to an empty sequence");
    if (std::find(ids.begin(), ids.end(), Vocab::kUnk) != ids.end()) {
      throw ConfigError("label word '" + w + "' contains tokens missing from the vocabulary");
    }
    if (!seen.insert(ids).second) throw ConfigError("label word '" + w + "' has the same tokens as another label");
    tokens_.push_back(std::move(ids));
  }
}

const std::string& Verbalizer::word(int64_t label) const {
  if (label < 0 || label >= num_classes()) throw IndexError("label " + std::to_string(label) + " out of range");
  return words_[static_cast<size_t>(label)];
}

int64_t Verbalizer::label_of(std::string_view word) const {
  for (size_t i = 0; i < words_.size(); ++i) {
    if (words_[i] == word) return static_cast<int64_t>(i);
  }
  return -1;
}

const std::vector<int32_t>& Verbalizer::tokens(int64_t label) const {
  if (!has_tokens()) throw ConfigError("verbalizer was built without a vocabulary");
  if (label < 0 || label >= num_classes()) throw IndexError("label " + std::to_string(label) + " out of range");
  return tokens_[static_cast<size_t>(label)];
}

int64_t Verbalizer::max_token_length() const {
  int64_t longest = 0;
  for (const auto& t : tokens_) longest = std::max<int64_t>(longest, static_cast<int64_t>(t.size()));
  return longest;
}

int64_t EncodedPrompt::length() const {
  int64_t n = 1 + static_cast<int64_t>(query.size());
  for (const auto& d : demonstrations) n += static_cast<int64_t>(d.size());
  return n;
}

std::vector<int32_t> EncodedPrompt::ids() const {
  std::vector<int32_t> out;
  out.reserve(static_cast<size_t>(length()));
  out.push_back(Vocab::kBos);
  for (const auto& d : demonstrations) out.insert(out.end(), d.begin(), d.end());
  out.insert(out.end(), query.begin(), query.end());
  return out;
}

EncodedPrompt encode_prompt(const Vocab& vocab, const PromptTemplate& tmpl,
                            std::span<const LabeledExample> demonstrations, std::string_view query) {
  // Patterns are whitespace-separated, so encoding parts separately equals
  // encoding the joined prompt.
  EncodedPrompt out;
  for (const LabeledExample& demo : demonstrations) {
    out.demonstrations.push_back(encode_tokens(vocab, render_pattern(tmpl, demo.text, demo.label_word)));
  }
  out.query = encode_tokens(vocab, render_pattern(tmpl, query, ""));
  return out;
}

std::vector<int32_t> truncate_prompt(const EncodedPrompt& prompt, int64_t max_seq_len) {
  const int64_t query_len = 1 + static_cast<int64_t>(prompt.query.size());
  if (query_len > max_seq_len) {
    throw LengthError("query pattern needs " + std::to_string(query_len) + " tokens, max_seq_len is " +
                      std::to_string(max_seq_len));
  }
  int64_t total = prompt.length();
  size_t first = 0;
  while (total > max_seq_len) {
    total -= static_cast<int64_t>(prompt.demonstrations[first].size());
    ++first;
  }
  std::vector<int32_t> out{Vocab::kBos};
  for (size_t i = first; i < prompt.demonstrations.size(); ++i) {
    out.insert(out.end(), prompt.demonstrations[i].begin(), prompt.demonstrations[i].end());
  }
  out.insert(out.end(), prompt.query.begin(), prompt.query.end());
  return out;
}

std::vector<double> score_labels(const TransformerModel& model, const Verbalizer& verbalizer,
                                 std::span<const int32_t> prompt_ids) {
  if (model.config().head_type != HeadType::LanguageModeling) {
    throw ConfigError("label scoring needs a language-modeling head");
  }
  if (prompt_ids.empty()) throw LengthError("empty prompt");
  const int64_t classes = verbalizer.num_classes();
  std::vector<double> scores(static_cast<size_t>(classes), 0.0);
  const int64_t last = static_cast<int64_t>(prompt_ids.size()) - 1;

  if (verbalizer.max_token_length() == 1) {
    const Tensor logits = lm_logits_at(model, prompt_ids, std::span<const int64_t>(&last, 1));
    const std::vector<double> logp = log_softmax(logits.data());
    for (int64_t c = 0; c < classes; ++c) scores[static_cast<size_t>(c)] = logp[verbalizer.tokens(c)[0]];
    return scores;
  }

  for (int64_t c = 0; c < classes; ++c) {
    const std::vector<int32_t>& label = verbalizer.tokens(c);
    std::vector<int32_t> ids(prompt_ids.begin(), prompt_ids.end());
    ids.insert(ids.end(), label.begin(), label.end() - 1);
    std::vector<int64_t> positions;
    for (size_t j = 0; j < label.size(); ++j) positions.push_back(last + static_cast<int64_t>(j));
    const Tensor logits = lm_logits_at(model, ids, positions);
    double total = 0.0;
    for (size_t j = 0; j < label.size(); ++j) {
      const auto row = logits.data().subspan(j * static_cast<size_t>(logits.cols()), static_cast<size_t>(logits.cols()));
      total += log_softmax(row)[static_cast<size_t>(label[j])];
    }
    scores[static_cast<size_t>(c)] = total;
  }
  return scores;
}

std::vector<double> score_labels(const TransformerModel& model, const Vocab& vocab, const Verbalizer& verbalizer,
                                 std::string_view prompt) {
  return score_labels(model, verbalizer, encode(vocab, prompt));
}

int64_t argmax(std::span<const double> scores) {
  if (scores.empty()) throw IndexError("argmax of an empty score vector");
  return std::distance(scores.begin(), std::max_element(scores.begin(), scores.end()));
}

int64_t argmax(std::span<const float> scores) {
  if (scores.empty()) throw IndexError("argmax of an empty score vector");
  return std::distance(scores.begin(), std::max_element(scores.begin(), scores.end()));
}

}  // namespace layerslim
