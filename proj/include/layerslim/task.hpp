#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace layerslim {

// Cloze pattern: input_prefix + s + answer_prefix, then " " + label when a
// label is present. answer_prefix carries no trailing space so that the
// unlabeled query ends exactly on the cue ("... Sentiment:").
struct PromptTemplate {
  std::string input_prefix;
  std::string answer_prefix;
  std::string separator = " ";

  bool operator==(const PromptTemplate&) const = default;
};

struct TaskSpec {
  std::string name;
  PromptTemplate prompt;
  std::vector<std::string> label_words;  // index = label id

  int64_t num_classes() const { return static_cast<int64_t>(label_words.size()); }
  // Label id for an exact label word, or -1.
  int64_t label_id(const std::string& word) const;
};

struct LabeledExample {
  std::string text;
  int64_t label_id = 0;
  std::string label_word;

  bool operator==(const LabeledExample&) const = default;
};

// Task name -> template and label words. Ships the four benchmark tasks plus
// "synthetic" (the AGNews pattern over the desk-scale generated task);
// more can be loaded from JSON of the form
//   {"task": {"input_prefix": ..., "answer_prefix": ..., "label_words": [...]}}
class TemplateRegistry {
 public:
  static TemplateRegistry builtin();
  static TemplateRegistry from_json(const nlohmann::json& doc);
  static TemplateRegistry load(const std::filesystem::path& path);

  void add(TaskSpec task);
  // Entries of `other` replace same-named entries here.
  void merge(const TemplateRegistry& other);
  bool contains(const std::string& name) const { return tasks_.contains(name); }
  const TaskSpec& get(const std::string& name) const;
  std::vector<std::string> names() const;
  nlohmann::json to_json() const;

 private:
  std::map<std::string, TaskSpec> tasks_;
};

}  // namespace layerslim
