#include "layerslim/task.hpp"

#include <fstream>
#include <set>

#include "layerslim/errors.hpp"

namespace layerslim {

int64_t TaskSpec::label_id(const std::string& word) const {
  for (size_t i = 0; i < label_words.size(); ++i) {
    if (label_words[i] == word) return static_cast<int64_t>(i);
  }
  return -1;
}

TemplateRegistry TemplateRegistry::builtin() {
  TemplateRegistry r;
  r.add({"agnews", {"Article: ", " Answer:"}, {"World", "Sports", "Business", "Technology"}});
  r.add({"emoc", {"Dialogue: ", " Emotion:"}, {"Happy", "Sad", "Angry", "Others"}});
  r.add({"sst2", {"Review: ", " Sentiment:"}, {"Positive", "Negative"}});
  r.add({"trec",
         {"Question: ", " Answer Type:"},
         {"Abbreviation", "Entity", "Description", "Person", "Location", "Number"}});
  r.add({"synthetic", {"Article: ", " Answer:"}, {"World", "Sports", "Business", "Technology"}});
  return r;
}

void TemplateRegistry::add(TaskSpec task) {
  if (task.name.empty()) throw ConfigError("task name must not be empty");
  if (task.label_words.size() < 2) throw ConfigError("task '" + task.name + "' needs at least two label words");
  std::set<std::string> seen;
  for (const std::string& w : task.label_words) {
    if (w.empty()) throw ConfigError("task '" + task.name + "' has an empty label word");
    if (!seen.insert(w).second) throw ConfigError("task '" + task.name + "' repeats label word '" + w + "'");
  }
  const std::string name = task.name;
  tasks_[name] = std::move(task);
}

void TemplateRegistry::merge(const TemplateRegistry& other) {
  for (const auto& [name, task] : other.tasks_) tasks_[name] = task;
}

const TaskSpec& TemplateRegistry::get(const std::string& name) const {
  auto it = tasks_.find(name);
  if (it == tasks_.end()) throw ConfigError("unknown task '" + name + "'");
  return it->second;
}

std::vector<std::string> TemplateRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, task] : tasks_) out.push_back(name);
  return out;
}

TemplateRegistry TemplateRegistry::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("template registry must be a JSON object");
  TemplateRegistry r;
  for (const auto& [name, entry] : doc.items()) {
    if (!entry.is_object()) throw ConfigError("template entry '" + name + "' must be an object");
    for (const auto& [key, value] : entry.items()) {
      if (key != "input_prefix" && key != "answer_prefix" && key != "label_words" && key != "separator") {
        throw ConfigError("template entry '" + name + "' has unknown key '" + key + "'");
      }
    }
    try {
      TaskSpec task;
      task.name = name;
      task.prompt.input_prefix = entry.at("input_prefix").get<std::string>();
      task.prompt.answer_prefix = entry.at("answer_prefix").get<std::string>();
      if (entry.contains("separator")) task.prompt.separator = entry.at("separator").get<std::string>();
      task.label_words = entry.at("label_words").get<std::vector<std::string>>();
      r.add(std::move(task));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("template entry '" + name + "': " + e.what());
    }
  }
  return r;
}

TemplateRegistry TemplateRegistry::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read template registry " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("template registry " + path.string() + ": " + e.what());
  }
}

nlohmann::json TemplateRegistry::to_json() const {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [name, task] : tasks_) {
    doc[name] = {{"input_prefix", task.prompt.input_prefix},
                 {"answer_prefix", task.prompt.answer_prefix},
                 {"separator", task.prompt.separator},
                 {"label_words", task.label_words}};
  }
  return doc;
}

}  // namespace layerslim
