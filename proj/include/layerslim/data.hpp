#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "layerslim/task.hpp"

namespace layerslim {

// Source pools a few-shot split is drawn from.
struct Dataset {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> test;
};

struct SplitSizes {
  int64_t train = 200;
  int64_t val = 1000;
  int64_t test = 1000;  // upper bound; smaller test pools are used whole
};

struct FewShotSplit {
  std::vector<LabeledExample> demonstrations;  // one per class, label order
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> val;
  std::vector<LabeledExample> test;
  uint64_t seed = 0;

  // Positions in Dataset::train / Dataset::test the members were drawn from.
  std::vector<int64_t> demonstration_indices;
  std::vector<int64_t> train_indices;
  std::vector<int64_t> val_indices;
  std::vector<int64_t> test_indices;
};

// Demonstrations first (uniform per class, removed from the pool), then
// disjoint train and val from what remains, then test from the test pool.
FewShotSplit sample_few_shot(const Dataset& dataset, uint64_t seed, int64_t class_count, const SplitSizes& sizes = {});

// RFC 4180 records, each paired with the line it starts on. Blank lines are skipped.
std::vector<std::pair<int64_t, std::vector<std::string>>> parse_csv(const std::string& content);
// Quotes a field when it contains a comma, quote or line break.
std::string csv_field(const std::string& value);

enum class DatasetFormat { Csv, Jsonl };

DatasetFormat dataset_format_from_path(const std::filesystem::path& path);

// CSV with header text,label (RFC 4180 quoting) or JSONL with keys text,label.
// Labels are the task's label words, or integer label ids.
std::vector<LabeledExample> load_dataset(const std::filesystem::path& path, DatasetFormat format,
                                         const TaskSpec& task);

// Generated classification task: every class owns a disjoint set of signal
// tokens, examples mix class-independent noise tokens with signal tokens of
// their class.
struct SyntheticSpec {
  int64_t noise_vocab = 200;
  int64_t signal_per_class = 8;
  int64_t text_length = 5;
  int64_t signal_per_example = 2;
};

struct SyntheticSizes {
  int64_t train = 1500;
  int64_t test = 1000;
};

std::string synthetic_noise_token(int64_t index);
std::string synthetic_signal_token(int64_t label, int64_t index);

Dataset generate_synthetic_task(uint64_t seed, const TaskSpec& task, const SyntheticSpec& spec = {},
                                const SyntheticSizes& sizes = {});

// Token strings the generator can emit, for vocabulary construction.
std::vector<std::string> synthetic_lexicon(const TaskSpec& task, const SyntheticSpec& spec);

// Language-modeling corpus of documents made of labeled patterns of the
// task (between 2 and class_count + 1 per document, classes in random order).
std::vector<std::string> synthetic_pretraining_corpus(uint64_t seed, const TaskSpec& task, int64_t documents,
                                                      const SyntheticSpec& spec = {});

}  // namespace layerslim
