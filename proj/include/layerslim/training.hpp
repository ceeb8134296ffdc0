#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "layerslim/data.hpp"
#include "layerslim/model.hpp"
#include "layerslim/prompting.hpp"
#include "layerslim/task.hpp"
#include "layerslim/tokenizer.hpp"

namespace layerslim {

enum class Paradigm {
  PromptLM,    // prompt + language-modeling head
  VanillaCLS,  // bare input + classification head
  PromptCLS,   // prompt + classification head
};

std::string to_string(Paradigm paradigm);
Paradigm paradigm_from_string(const std::string& text);
// Short series label: LM, CLS, P-CLS.
std::string series_label(Paradigm paradigm);
bool uses_prompt(Paradigm paradigm);
bool uses_lm_head(Paradigm paradigm);

struct AdamWConfig {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// First and second moments per parameter, created on the first step.
struct AdamWState {
  int64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

// One decoupled-weight-decay Adam update from each parameter's grad.
void adamw_step(std::span<Parameter* const> params, AdamWState& state, const AdamWConfig& config);

// Rescales grads so their global L2 norm is at most max_norm.
void clip_grad_norm(std::span<Parameter* const> params, double max_norm);

struct TrainConfig {
  double learning_rate = 5e-5;
  int64_t max_epochs = 50;
  int64_t patience = 15;
  int64_t batch_size = 1;
  uint64_t seed = 0;
  Paradigm paradigm = Paradigm::PromptLM;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 0.0;  // 0 disables clipping

  void validate() const;
  AdamWConfig adamw() const;
};

nlohmann::json to_json(const TrainConfig& config);
// Starts from `base` and applies the keys present in `doc`; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& doc, TrainConfig base = {});

struct TrainHistory {
  std::vector<double> train_loss;    // per epoch, summed over examples
  std::vector<double> val_accuracy;  // per epoch
  int64_t best_epoch = 0;            // 1-based
  double best_val_accuracy = 0.0;
  bool stopped_early = false;

  int64_t epochs_run() const { return static_cast<int64_t>(val_accuracy.size()); }
  bool operator==(const TrainHistory&) const = default;
};

nlohmann::json to_json(const TrainHistory& history);

// Everything needed to turn labeled text into model inputs for one task.
struct TaskContext {
  TaskContext(const TaskSpec& task, const Vocab& vocab);

  TaskSpec task;
  const Vocab* vocab;
  Verbalizer verbalizer;
};

// Model input for one example under one paradigm.
struct PreparedExample {
  std::vector<int32_t> ids;
  int64_t label = 0;
};

// Prompt paradigms render X(s) with the demonstrations, truncated to fit
// max_seq_len (leaving room for multi-token label words); VanillaCLS encodes
// the bare text.
PreparedExample prepare_example(const LabeledExample& example, std::span<const LabeledExample> demonstrations,
                                Paradigm paradigm, const TaskContext& ctx, int64_t max_seq_len);
std::vector<PreparedExample> prepare_examples(std::span<const LabeledExample> examples,
                                              std::span<const LabeledExample> demonstrations, Paradigm paradigm,
                                              const TaskContext& ctx, int64_t max_seq_len);

// Throws ConfigError unless the model head suits the paradigm and task.
void check_paradigm(const TransformerModel& model, Paradigm paradigm, const TaskContext& ctx);

// Cross-entropy of the correct label: summed over label-word tokens for
// PromptLM, over class logits for the CLS paradigms.
Var training_example_loss(Graph& graph, TransformerModel& model, const PreparedExample& example, Paradigm paradigm,
                          const Verbalizer& verbalizer);
double training_example_loss(TransformerModel& model, const LabeledExample& example, const FewShotSplit& split,
                             Paradigm paradigm, const TaskContext& ctx);

int64_t predict(const TransformerModel& model, const PreparedExample& example, Paradigm paradigm,
                const Verbalizer& verbalizer);

double evaluate_accuracy(const TransformerModel& model, std::span<const PreparedExample> examples, Paradigm paradigm,
                         const Verbalizer& verbalizer);
double evaluate_accuracy(const TransformerModel& model, std::span<const LabeledExample> examples,
                         std::span<const LabeledExample> demonstrations, Paradigm paradigm, const TaskContext& ctx);

struct FinetuneResult {
  TransformerModel best_model;
  TrainHistory history;
};

// Called after every epoch with (epoch, train loss, val accuracy).
using EpochCallback = std::function<void(int64_t, double, double)>;

// Batch-1 training with a seed-determined shuffle each epoch, validation
// accuracy after each epoch, best-epoch snapshot and early stopping.
FinetuneResult finetune(const TransformerModel& model, const FewShotSplit& split, const TrainConfig& config,
                        const TaskContext& ctx, const EpochCallback& on_epoch = nullptr);

// Next-token language-model training over a corpus of token sequences.
struct PretrainConfig {
  int64_t epochs = 1;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  uint64_t seed = 0;
};

struct PretrainHistory {
  std::vector<double> epoch_loss;  // mean per predicted token
  double initial_loss = 0.0;       // mean per token before the first update
};

PretrainHistory pretrain(TransformerModel& model, std::span<const std::vector<int32_t>> sequences,
                         const PretrainConfig& config, const EpochCallback& on_epoch = nullptr);

// Mean next-token loss per predicted token, no updates.
double language_model_loss(const TransformerModel& model, std::span<const std::vector<int32_t>> sequences);

}  // namespace layerslim
