#include "layerslim/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "layerslim/errors.hpp"
#include "layerslim/prompting.hpp"
#include "layerslim/rng.hpp"

namespace layerslim {

FewShotSplit sample_few_shot(const Dataset& dataset, uint64_t seed, int64_t class_count, const SplitSizes& sizes) {
  if (class_count < 1) throw DataError("class_count must be positive");
  Rng rng(seed);
  FewShotSplit split;
  split.seed = seed;

  std::vector<std::vector<int64_t>> by_class(static_cast<size_t>(class_count));
  for (size_t i = 0; i < dataset.train.size(); ++i) {
    const int64_t label = dataset.train[i].label_id;
    if (label < 0 || label >= class_count) {
      throw DataError("training example " + std::to_string(i) + " has label " + std::to_string(label) +
                      " outside [0, " + std::to_string(class_count) + ")");
    }
    by_class[static_cast<size_t>(label)].push_back(static_cast<int64_t>(i));
  }
  std::vector<bool> taken(dataset.train.size(), false);
  for (int64_t c = 0; c < class_count; ++c) {
    const auto& pool = by_class[static_cast<size_t>(c)];
    if (pool.empty()) throw DataError("no training example of class " + std::to_string(c) + " for a demonstration");
    const int64_t pick = pool[rng.uniform_index(pool.size())];
    taken[static_cast<size_t>(pick)] = true;
    split.demonstration_indices.push_back(pick);
    split.demonstrations.push_back(dataset.train[static_cast<size_t>(pick)]);
  }

  std::vector<int64_t> remaining;
  for (size_t i = 0; i < dataset.train.size(); ++i) {
    if (!taken[i]) remaining.push_back(static_cast<int64_t>(i));
  }
  const int64_t needed = sizes.train + sizes.val;
  if (static_cast<int64_t>(remaining.size()) < needed) {
    throw DataError("few-shot split needs " + std::to_string(needed + class_count) + " training-pool examples (" +
                    std::to_string(class_count) + " demonstrations + " + std::to_string(sizes.train) + " train + " +
                    std::to_string(sizes.val) + " val), only " + std::to_string(dataset.train.size()) +
                    " available");
  }
  rng.shuffle(remaining);
  for (int64_t i = 0; i < needed; ++i) {
    const int64_t idx = remaining[static_cast<size_t>(i)];
    auto& indices = i < sizes.train ? split.train_indices : split.val_indices;
    auto& examples = i < sizes.train ? split.train : split.val;
    indices.push_back(idx);
    examples.push_back(dataset.train[static_cast<size_t>(idx)]);
  }

  if (dataset.test.empty()) throw DataError("test pool is empty");
  std::vector<int64_t> test_order(dataset.test.size());
  for (size_t i = 0; i < test_order.size(); ++i) test_order[i] = static_cast<int64_t>(i);
  rng.shuffle(test_order);
  const int64_t test_count = std::min<int64_t>(sizes.test, static_cast<int64_t>(test_order.size()));
  for (int64_t i = 0; i < test_count; ++i) {
    const int64_t idx = test_order[static_cast<size_t>(i)];
    split.test_indices.push_back(idx);
    split.test.push_back(dataset.test[static_cast<size_t>(idx)]);
  }
  return split;
}

DatasetFormat dataset_format_from_path(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".csv") return DatasetFormat::Csv;
  if (ext == ".jsonl") return DatasetFormat::Jsonl;
  throw DataError("cannot infer dataset format from '" + path.string() + "' (expected .csv or .jsonl)");
}

namespace {

LabeledExample make_example(std::string text, const std::string& label, const TaskSpec& task, int64_t line) {
  int64_t id = task.label_id(label);
  if (id < 0) {
    int64_t parsed = -1;
    const auto [ptr, ec] = std::from_chars(label.data(), label.data() + label.size(), parsed);
    if (ec == std::errc() && ptr == label.data() + label.size() && parsed >= 0 && parsed < task.num_classes()) {
      id = parsed;
    }
  }
  if (id < 0) {
    throw DataError("line " + std::to_string(line) + ": unknown label '" + label + "' for task '" + task.name + "'");
  }
  return LabeledExample{std::move(text), id, task.label_words[static_cast<size_t>(id)]};
}

}  // namespace

std::vector<std::pair<int64_t, std::vector<std::string>>> parse_csv(const std::string& content) {
  std::vector<std::pair<int64_t, std::vector<std::string>>> records;
  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  bool field_was_quoted = false;
  int64_t line = 1;
  int64_t record_line = 1;
  auto end_field = [&] {
    fields.push_back(std::move(field));
    field.clear();
    field_was_quoted = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(fields.size() == 1 && fields[0].empty())) records.emplace_back(record_line, std::move(fields));
    fields.clear();
  };
  for (size_t i = 0; i < content.size(); ++i) {
    const char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      if (!field.empty() || field_was_quoted) throw DataError("line " + std::to_string(line) + ": stray quote");
      in_quotes = true;
      field_was_quoted = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r' && i + 1 < content.size() && content[i + 1] == '\n') {
      continue;
    } else if (c == '\n') {
      end_record();
      ++line;
      record_line = line;
    } else {
      if (field_was_quoted) throw DataError("line " + std::to_string(line) + ": text after closing quote");
      field.push_back(c);
    }
  }
  if (in_quotes) throw DataError("line " + std::to_string(record_line) + ": unterminated quoted field");
  if (!field.empty() || !fields.empty() || field_was_quoted) end_record();
  return records;
}

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\r\n") == std::string::npos) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

namespace {

std::vector<LabeledExample> load_csv(const std::string& content, const TaskSpec& task) {
  const auto records = parse_csv(content);
  if (records.empty()) throw DataError("dataset is empty");
  const auto& header = records.front().second;
  int64_t text_col = -1;
  int64_t label_col = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "text") text_col = static_cast<int64_t>(i);
    if (header[i] == "label") label_col = static_cast<int64_t>(i);
  }
  if (text_col < 0 || label_col < 0) throw DataError("line 1: CSV header must name columns 'text' and 'label'");
  std::vector<LabeledExample> out;
  for (size_t r = 1; r < records.size(); ++r) {
    const auto& [line, fields] = records[r];
    if (fields.size() != header.size()) {
      throw DataError("line " + std::to_string(line) + ": expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(fields.size()));
    }
    out.push_back(make_example(fields[static_cast<size_t>(text_col)], fields[static_cast<size_t>(label_col)], task,
                               line));
  }
  if (out.empty()) throw DataError("dataset has a header but no examples");
  return out;
}

std::vector<LabeledExample> load_jsonl(const std::string& content, const TaskSpec& task) {
  std::vector<LabeledExample> out;
  std::istringstream in(content);
  std::string text;
  int64_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("line " + std::to_string(line) + ": malformed JSON (" + e.what() + ")");
    }
    if (!row.is_object() || !row.contains("text") || !row.contains("label") || !row["text"].is_string()) {
      throw DataError("line " + std::to_string(line) + ": expected an object with string 'text' and 'label'");
    }
    const auto& label = row["label"];
    std::string label_text;
    if (label.is_string()) {
      label_text = label.get<std::string>();
    } else if (label.is_number_integer()) {
      label_text = std::to_string(label.get<int64_t>());
    } else {
      throw DataError("line " + std::to_string(line) + ": 'label' must be a string or integer");
    }
    out.push_back(make_example(row["text"].get<std::string>(), label_text, task, line));
  }
  if (out.empty()) throw DataError("dataset is empty");
  return out;
}

}  // namespace

std::vector<LabeledExample> load_dataset(const std::filesystem::path& path, DatasetFormat format,
                                         const TaskSpec& task) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read dataset " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string content = buffer.str();
  return format == DatasetFormat::Csv ? load_csv(content, task) : load_jsonl(content, task);
}

std::string synthetic_noise_token(int64_t index) { return "w" + std::to_string(index); }

std::string synthetic_signal_token(int64_t label, int64_t index) {
  return "s" + std::to_string(label) + "_" + std::to_string(index);
}

namespace {

void check_spec(const TaskSpec& task, const SyntheticSpec& spec) {
  if (task.num_classes() < 2) throw DataError("synthetic task needs at least two classes");
  if (spec.noise_vocab < 1 || spec.signal_per_class < 1 || spec.signal_per_example < 1 ||
      spec.text_length < spec.signal_per_example) {
    throw DataError("synthetic spec needs positive vocabularies and text_length >= signal_per_example");
  }
}

LabeledExample synthetic_example(Rng& rng, const TaskSpec& task, const SyntheticSpec& spec, int64_t label) {
  std::vector<std::string> words;
  for (int64_t i = 0; i < spec.signal_per_example; ++i) {
    words.push_back(synthetic_signal_token(label, static_cast<int64_t>(rng.uniform_index(spec.signal_per_class))));
  }
  for (int64_t i = spec.signal_per_example; i < spec.text_length; ++i) {
    words.push_back(synthetic_noise_token(static_cast<int64_t>(rng.uniform_index(spec.noise_vocab))));
  }
  rng.shuffle(words);
  std::string text;
  for (const std::string& w : words) {
    if (!text.empty()) text += ' ';
    text += w;
  }
  return LabeledExample{std::move(text), label, task.label_words[static_cast<size_t>(label)]};
}

}  // namespace

Dataset generate_synthetic_task(uint64_t seed, const TaskSpec& task, const SyntheticSpec& spec,
                                const SyntheticSizes& sizes) {
  check_spec(task, spec);
  Rng rng(seed);
  Dataset out;
  const int64_t classes = task.num_classes();
  // Balanced pools: label i % classes, then shuffled.
  auto fill = [&](std::vector<LabeledExample>& pool, int64_t count) {
    for (int64_t i = 0; i < count; ++i) pool.push_back(synthetic_example(rng, task, spec, i % classes));
    rng.shuffle(pool);
  };
  fill(out.train, sizes.train);
  fill(out.test, sizes.test);
  return out;
}

std::vector<std::string> synthetic_lexicon(const TaskSpec& task, const SyntheticSpec& spec) {
  check_spec(task, spec);
  std::vector<std::string> out;
  for (int64_t c = 0; c < task.num_classes(); ++c) {
    for (int64_t j = 0; j < spec.signal_per_class; ++j) out.push_back(synthetic_signal_token(c, j));
  }
  for (int64_t i = 0; i < spec.noise_vocab; ++i) out.push_back(synthetic_noise_token(i));
  return out;
}

std::vector<std::string> synthetic_pretraining_corpus(uint64_t seed, const TaskSpec& task, int64_t documents,
                                                      const SyntheticSpec& spec) {
  check_spec(task, spec);
  Rng rng(seed);
  const int64_t classes = task.num_classes();
  std::vector<std::string> corpus;
  corpus.reserve(static_cast<size_t>(documents));
  for (int64_t d = 0; d < documents; ++d) {
    const int64_t patterns = 2 + static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(classes)));
    std::string doc;
    for (int64_t p = 0; p < patterns; ++p) {
      const auto label = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(classes)));
      const LabeledExample ex = synthetic_example(rng, task, spec, label);
      if (!doc.empty()) doc += task.prompt.separator;
      doc += render_pattern(task.prompt, ex.text, ex.label_word);
    }
    corpus.push_back(std::move(doc));
  }
  return corpus;
}

}  // namespace layerslim
