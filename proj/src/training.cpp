#include "layerslim/training.hpp"

#include <cmath>
#include <numeric>

#include "layerslim/errors.hpp"
#include "layerslim/rng.hpp"

namespace layerslim {

std::string to_string(Paradigm paradigm) {
  switch (paradigm) {
    case Paradigm::PromptLM: return "PromptLM";
    case Paradigm::VanillaCLS: return "VanillaCLS";
    case Paradigm::PromptCLS: return "PromptCLS";
  }
  return "unknown";
}

Paradigm paradigm_from_string(const std::string& text) {
  if (text == "PromptLM" || text == "LM") return Paradigm::PromptLM;
  if (text == "VanillaCLS" || text == "CLS") return Paradigm::VanillaCLS;
  if (text == "PromptCLS" || text == "P-CLS") return Paradigm::PromptCLS;
  throw ConfigError("unknown paradigm '" + text + "' (expected PromptLM, VanillaCLS or PromptCLS)");
}

std::string series_label(Paradigm paradigm) {
  switch (paradigm) {
    case Paradigm::PromptLM: return "LM";
    case Paradigm::VanillaCLS: return "CLS";
    case Paradigm::PromptCLS: return "P-CLS";
  }
  return "?";
}

bool uses_prompt(Paradigm paradigm) { return paradigm != Paradigm::VanillaCLS; }
bool uses_lm_head(Paradigm paradigm) { return paradigm == Paradigm::PromptLM; }

// ---------------------------------------------------------------------------
// AdamW

void adamw_step(std::span<Parameter* const> params, AdamWState& state, const AdamWConfig& config) {
  if (state.first_moment.empty() && state.step == 0) {
    for (const Parameter* p : params) {
      state.first_moment.emplace_back(p->value.shape(), 0.0f);
      state.second_moment.emplace_back(p->value.shape(), 0.0f);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw OptimizerError("optimizer state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, step got " + std::to_string(params.size()));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i];
    if (p.grad.shape() != p.value.shape() || state.first_moment[i].shape() != p.value.shape()) {
      throw OptimizerError("shape mismatch for parameter " + p.name + ": value " + shape_to_string(p.value.shape()) +
                           ", grad " + shape_to_string(p.grad.shape()) + ", state " +
                           shape_to_string(state.first_moment[i].shape()));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(config.beta1, t);
  const double bias2 = 1.0 - std::pow(config.beta2, t);
  const double lr = config.learning_rate;
  const double decay = lr * config.weight_decay;
  for (size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    float* w = p.value.ptr();
    const float* g = p.grad.ptr();
    float* m = state.first_moment[i].ptr();
    float* v = state.second_moment[i].ptr();
    for (int64_t j = 0; j < p.value.numel(); ++j) {
      const double grad = g[j];
      const double m_new = config.beta1 * m[j] + (1.0 - config.beta1) * grad;
      const double v_new = config.beta2 * v[j] + (1.0 - config.beta2) * grad * grad;
      m[j] = static_cast<float>(m_new);
      v[j] = static_cast<float>(v_new);
      const double update = (m_new / bias1) / (std::sqrt(v_new / bias2) + config.eps);
      const double weight = w[j];
      w[j] = static_cast<float>(weight - decay * weight - lr * update);
    }
  }
}

void clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  if (max_norm <= 0.0) return;
  double total = 0.0;
  for (const Parameter* p : params) {
    for (float g : p->grad.data()) total += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(total);
  if (norm <= max_norm) return;
  const auto factor = static_cast<float>(max_norm / norm);
  for (Parameter* p : params) {
    for (float& g : p->grad.data()) g *= factor;
  }
}

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (batch_size != 1) throw ConfigError("only batch_size 1 is supported, got " + std::to_string(batch_size));
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
}

AdamWConfig TrainConfig::adamw() const { return {learning_rate, beta1, beta2, eps, weight_decay}; }

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"max_epochs", c.max_epochs}, {"patience", c.patience},
          {"batch_size", c.batch_size},       {"seed", c.seed},             {"paradigm", to_string(c.paradigm)},
          {"beta1", c.beta1},                 {"beta2", c.beta2},           {"eps", c.eps},
          {"weight_decay", c.weight_decay},   {"grad_clip", c.grad_clip}};
}

TrainConfig train_config_from_json(const nlohmann::json& doc, TrainConfig c) {
  if (!doc.is_object()) throw ConfigError("train config must be a JSON object");
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "max_epochs") c.max_epochs = value.get<int64_t>();
      else if (key == "patience") c.patience = value.get<int64_t>();
      else if (key == "batch_size") c.batch_size = value.get<int64_t>();
      else if (key == "seed") c.seed = value.get<uint64_t>();
      else if (key == "paradigm") c.paradigm = paradigm_from_string(value.get<std::string>());
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "eps") c.eps = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "grad_clip") c.grad_clip = value.get<double>();
      else throw ConfigError("unknown train config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const TrainHistory& h) {
  return {{"train_loss", h.train_loss},
          {"val_accuracy", h.val_accuracy},
          {"best_epoch", h.best_epoch},
          {"best_val_accuracy", h.best_val_accuracy},
          {"stopped_early", h.stopped_early},
          {"epochs_run", h.epochs_run()}};
}

// ---------------------------------------------------------------------------
// Inputs and losses

TaskContext::TaskContext(const TaskSpec& task_in, const Vocab& vocab_in)
    : task(task_in), vocab(&vocab_in), verbalizer(task_in.label_words, vocab_in) {}

namespace {

void check_demonstrations(std::span<const LabeledExample> demonstrations, const TaskContext& ctx) {
  if (static_cast<int64_t>(demonstrations.size()) != ctx.task.num_classes()) {
    throw PromptError("expected one demonstration per class (" + std::to_string(ctx.task.num_classes()) + "), got " +
                      std::to_string(demonstrations.size()));
  }
  for (size_t i = 0; i < demonstrations.size(); ++i) {
    if (demonstrations[i].label_id != static_cast<int64_t>(i)) {
      throw PromptError("demonstrations must be one per class in label order; position " + std::to_string(i) +
                        " holds class " + std::to_string(demonstrations[i].label_id));
    }
  }
}

}  // namespace

PreparedExample prepare_example(const LabeledExample& example, std::span<const LabeledExample> demonstrations,
                                Paradigm paradigm, const TaskContext& ctx, int64_t max_seq_len) {
  PreparedExample out;
  out.label = example.label_id;
  if (out.label < 0 || out.label >= ctx.task.num_classes()) {
    throw DataError("example label " + std::to_string(out.label) + " outside task '" + ctx.task.name + "'");
  }
  if (uses_prompt(paradigm)) {
    const EncodedPrompt prompt = encode_prompt(*ctx.vocab, ctx.task.prompt, demonstrations, example.text);
    const int64_t reserve = paradigm == Paradigm::PromptLM ? ctx.verbalizer.max_token_length() - 1 : 0;
    out.ids = truncate_prompt(prompt, max_seq_len - reserve);
  } else {
    out.ids = encode(*ctx.vocab, example.text);
    if (static_cast<int64_t>(out.ids.size()) > max_seq_len) out.ids.resize(static_cast<size_t>(max_seq_len));
  }
  return out;
}

std::vector<PreparedExample> prepare_examples(std::span<const LabeledExample> examples,
                                              std::span<const LabeledExample> demonstrations, Paradigm paradigm,
                                              const TaskContext& ctx, int64_t max_seq_len) {
  if (uses_prompt(paradigm)) check_demonstrations(demonstrations, ctx);
  std::vector<PreparedExample> out;
  out.reserve(examples.size());
  for (const LabeledExample& ex : examples) {
    out.push_back(prepare_example(ex, demonstrations, paradigm, ctx, max_seq_len));
  }
  return out;
}

void check_paradigm(const TransformerModel& model, Paradigm paradigm, const TaskContext& ctx) {
  const ModelConfig& c = model.config();
  if (uses_lm_head(paradigm)) {
    if (c.head_type != HeadType::LanguageModeling) {
      throw ConfigError(to_string(paradigm) + " needs a language-modeling head");
    }
    if (!ctx.verbalizer.has_tokens()) throw ConfigError("verbalizer has no token ids");
    for (int64_t k = 0; k < ctx.verbalizer.num_classes(); ++k) {
      for (int32_t id : ctx.verbalizer.tokens(k)) {
        if (id >= c.vocab_size) throw ConfigError("label word token id outside the model vocabulary");
      }
    }
  } else {
    if (c.head_type != HeadType::Classification) {
      throw ConfigError(to_string(paradigm) + " needs a classification head");
    }
    if (c.num_classes != ctx.task.num_classes()) {
      throw ConfigError("classification head has " + std::to_string(c.num_classes) + " classes, task '" +
                        ctx.task.name + "' has " + std::to_string(ctx.task.num_classes()));
    }
  }
}

Var training_example_loss(Graph& graph, TransformerModel& model, const PreparedExample& example, Paradigm paradigm,
                          const Verbalizer& verbalizer) {
  if (uses_lm_head(paradigm)) {
    const std::vector<int32_t>& label = verbalizer.tokens(example.label);
    std::vector<int32_t> ids = example.ids;
    ids.insert(ids.end(), label.begin(), label.end() - 1);
    std::vector<int64_t> positions;
    std::vector<int64_t> targets;
    for (size_t j = 0; j < label.size(); ++j) {
      positions.push_back(static_cast<int64_t>(example.ids.size()) - 1 + static_cast<int64_t>(j));
      targets.push_back(label[j]);
    }
    Var logits = lm_logits_at(graph, model, ids, positions);
    return cross_entropy_rows(logits, targets);
  }
  return cross_entropy(cls_logits(graph, model, example.ids), example.label);
}

double training_example_loss(TransformerModel& model, const LabeledExample& example, const FewShotSplit& split,
                             Paradigm paradigm, const TaskContext& ctx) {
  check_paradigm(model, paradigm, ctx);
  if (uses_prompt(paradigm)) check_demonstrations(split.demonstrations, ctx);
  const PreparedExample prepared =
      prepare_example(example, split.demonstrations, paradigm, ctx, model.config().max_seq_len);
  Graph graph(false);
  return training_example_loss(graph, model, prepared, paradigm, ctx.verbalizer).value().item();
}

int64_t predict(const TransformerModel& model, const PreparedExample& example, Paradigm paradigm,
                const Verbalizer& verbalizer) {
  if (uses_lm_head(paradigm)) return argmax(score_labels(model, verbalizer, example.ids));
  const Tensor logits = cls_logits(model, example.ids);
  return argmax(logits.data());
}

double evaluate_accuracy(const TransformerModel& model, std::span<const PreparedExample> examples, Paradigm paradigm,
                         const Verbalizer& verbalizer) {
  if (examples.empty()) throw EvaluationError("cannot evaluate accuracy on an empty example list");
  int64_t correct = 0;
  for (const PreparedExample& ex : examples) {
    if (predict(model, ex, paradigm, verbalizer) == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

double evaluate_accuracy(const TransformerModel& model, std::span<const LabeledExample> examples,
                         std::span<const LabeledExample> demonstrations, Paradigm paradigm, const TaskContext& ctx) {
  if (examples.empty()) throw EvaluationError("cannot evaluate accuracy on an empty example list");
  check_paradigm(model, paradigm, ctx);
  const auto prepared = prepare_examples(examples, demonstrations, paradigm, ctx, model.config().max_seq_len);
  return evaluate_accuracy(model, prepared, paradigm, ctx.verbalizer);
}

// ---------------------------------------------------------------------------
// Fine-tuning

FinetuneResult finetune(const TransformerModel& model, const FewShotSplit& split, const TrainConfig& config,
                        const TaskContext& ctx, const EpochCallback& on_epoch) {
  config.validate();
  check_paradigm(model, config.paradigm, ctx);
  if (split.train.empty()) throw DataError("few-shot split has no training examples");
  if (split.val.empty()) throw DataError("few-shot split has no validation examples");
  const int64_t max_len = model.config().max_seq_len;
  const auto train = prepare_examples(split.train, split.demonstrations, config.paradigm, ctx, max_len);
  const auto val = prepare_examples(split.val, split.demonstrations, config.paradigm, ctx, max_len);

  TransformerModel current = model;
  FinetuneResult result{model, {}};
  TrainHistory& history = result.history;
  history.best_val_accuracy = -1.0;

  AdamWState state;
  const AdamWConfig adamw = config.adamw();
  Rng shuffle_rng(derive_seed(config.seed, 0x5EED));
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int64_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (size_t step = 0; step < order.size(); ++step) {
      current.zero_grads();
      Graph graph;
      Var loss = training_example_loss(graph, current, train[order[step]], config.paradigm, ctx.verbalizer);
      const float value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", example " +
                           std::to_string(order[step]));
      }
      epoch_loss += value;
      graph.backward(loss);
      auto params = current.parameters();
      if (config.grad_clip > 0.0) clip_grad_norm(params, config.grad_clip);
      adamw_step(params, state, adamw);
    }
    const double accuracy = evaluate_accuracy(current, val, config.paradigm, ctx.verbalizer);
    history.train_loss.push_back(epoch_loss);
    history.val_accuracy.push_back(accuracy);
    if (accuracy > history.best_val_accuracy) {
      history.best_val_accuracy = accuracy;
      history.best_epoch = epoch;
      result.best_model = current;
    }
    if (on_epoch) on_epoch(epoch, epoch_loss, accuracy);
    if (epoch - history.best_epoch >= config.patience) {
      history.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  result.best_model.zero_grads();
  return result;
}

// ---------------------------------------------------------------------------
// Language-model pretraining

namespace {

Var sequence_lm_loss(Graph& graph, TransformerModel& model, const std::vector<int32_t>& ids) {
  const std::span<const int32_t> inputs(ids.data(), ids.size() - 1);
  std::vector<int64_t> positions(inputs.size());
  std::vector<int64_t> targets(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    positions[i] = static_cast<int64_t>(i);
    targets[i] = ids[i + 1];
  }
  Var logits = lm_logits_at(graph, model, inputs, positions);
  return cross_entropy_rows(logits, targets);
}

void check_sequences(std::span<const std::vector<int32_t>> sequences) {
  if (sequences.empty()) throw DataError("pretraining corpus is empty");
  for (const auto& s : sequences) {
    if (s.size() < 2) throw DataError("pretraining sequences need at least two tokens");
  }
}

}  // namespace

double language_model_loss(const TransformerModel& model, std::span<const std::vector<int32_t>> sequences) {
  check_sequences(sequences);
  double total = 0.0;
  int64_t tokens = 0;
  for (const auto& ids : sequences) {
    const std::span<const int32_t> inputs(ids.data(), ids.size() - 1);
    std::vector<int64_t> positions(inputs.size());
    std::iota(positions.begin(), positions.end(), int64_t{0});
    const Tensor logits = lm_logits_at(model, inputs, positions);
    const auto vocab = static_cast<size_t>(logits.cols());
    for (size_t i = 0; i < inputs.size(); ++i) {
      total -= log_softmax(logits.data().subspan(i * vocab, vocab))[static_cast<size_t>(ids[i + 1])];
    }
    tokens += static_cast<int64_t>(inputs.size());
  }
  return total / static_cast<double>(tokens);
}

PretrainHistory pretrain(TransformerModel& model, std::span<const std::vector<int32_t>> sequences,
                         const PretrainConfig& config, const EpochCallback& on_epoch) {
  check_sequences(sequences);
  if (model.config().head_type != HeadType::LanguageModeling) {
    throw ConfigError("pretraining needs a language-modeling head");
  }
  PretrainHistory history;
  history.initial_loss = language_model_loss(model, sequences);
  AdamWState state;
  const AdamWConfig adamw{config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay};
  Rng rng(derive_seed(config.seed, 0x9E7));
  std::vector<size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    int64_t tokens = 0;
    for (size_t i : order) {
      const auto& ids = sequences[i];
      model.zero_grads();
      Graph graph;
      Var loss = sequence_lm_loss(graph, model, ids);
      const int64_t count = static_cast<int64_t>(ids.size()) - 1;
      const float value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite pretraining loss at epoch " + std::to_string(epoch) + ", sequence " +
                           std::to_string(i));
      }
      total += value;
      tokens += count;
      graph.backward(scale(loss, 1.0f / static_cast<float>(count)));
      auto params = model.parameters();
      clip_grad_norm(params, config.grad_clip);
      adamw_step(params, state, adamw);
    }
    history.epoch_loss.push_back(total / static_cast<double>(tokens));
    if (on_epoch) on_epoch(epoch, history.epoch_loss.back(), 0.0);
  }
  model.zero_grads();
  return history;
}

}  // namespace layerslim
