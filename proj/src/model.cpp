#include "layerslim/model.hpp"

#include <type_traits>

#include "layerslim/errors.hpp"
#include "layerslim/rng.hpp"

namespace layerslim {

std::string to_string(HeadType head) {
  return head == HeadType::LanguageModeling ? "language_modeling" : "classification";
}

HeadType head_type_from_string(const std::string& text) {
  if (text == "language_modeling") return HeadType::LanguageModeling;
  if (text == "classification") return HeadType::Classification;
  throw ConfigError("unknown head type '" + text + "'");
}

void ModelConfig::validate() const {
  auto positive = [](int64_t v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be >= 1, got " + std::to_string(v));
  };
  positive(vocab_size, "vocab_size");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(n_layers, "n_layers");
  positive(d_ff, "d_ff");
  positive(max_seq_len, "max_seq_len");
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (head_type == HeadType::Classification && num_classes < 1) {
    throw ConfigError("classification head needs num_classes >= 1");
  }
  if (head_type == HeadType::LanguageModeling && num_classes != 0) {
    throw ConfigError("num_classes must be 0 for a language-modeling head");
  }
}

ModelConfig gpt2_xl_config() {
  return ModelConfig{.vocab_size = 50257, .d_model = 1600, .n_heads = 25, .n_layers = 48, .d_ff = 6400,
                     .max_seq_len = 1024, .head_type = HeadType::LanguageModeling, .num_classes = 0,
                     .tie_lm_head = true};
}

ModelConfig gpt2_small_config() {
  return ModelConfig{.vocab_size = 50257, .d_model = 768, .n_heads = 12, .n_layers = 12, .d_ff = 3072,
                     .max_seq_len = 1024, .head_type = HeadType::LanguageModeling, .num_classes = 0,
                     .tie_lm_head = true};
}

ModelConfig opt_1_3b_config() {
  return ModelConfig{.vocab_size = 50272, .d_model = 2048, .n_heads = 32, .n_layers = 24, .d_ff = 8192,
                     .max_seq_len = 2048, .head_type = HeadType::LanguageModeling, .num_classes = 0,
                     .tie_lm_head = true};
}

DecoderLayer::DecoderLayer(int64_t index, const ModelConfig& c) {
  const std::string p = "layers." + std::to_string(index) + ".";
  const int64_t d = c.d_model;
  ln1_gain = Parameter(p + "ln1.gain", Tensor({d}, 1.0f));
  ln1_bias = Parameter(p + "ln1.bias", Tensor({d}));
  wq = Parameter(p + "attn.wq", Tensor({d, d}));
  bq = Parameter(p + "attn.bq", Tensor({d}));
  wk = Parameter(p + "attn.wk", Tensor({d, d}));
  bk = Parameter(p + "attn.bk", Tensor({d}));
  wv = Parameter(p + "attn.wv", Tensor({d, d}));
  bv = Parameter(p + "attn.bv", Tensor({d}));
  wo = Parameter(p + "attn.wo", Tensor({d, d}));
  bo = Parameter(p + "attn.bo", Tensor({d}));
  ln2_gain = Parameter(p + "ln2.gain", Tensor({d}, 1.0f));
  ln2_bias = Parameter(p + "ln2.bias", Tensor({d}));
  w1 = Parameter(p + "mlp.w1", Tensor({d, c.d_ff}));
  b1 = Parameter(p + "mlp.b1", Tensor({c.d_ff}));
  w2 = Parameter(p + "mlp.w2", Tensor({c.d_ff, d}));
  b2 = Parameter(p + "mlp.b2", Tensor({d}));
}

std::vector<Parameter*> DecoderLayer::parameters() {
  return {&ln1_gain, &ln1_bias, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &ln2_gain, &ln2_bias, &w1, &b1, &w2, &b2};
}

std::vector<const Parameter*> DecoderLayer::parameters() const {
  return {&ln1_gain, &ln1_bias, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &ln2_gain, &ln2_bias, &w1, &b1, &w2, &b2};
}

TransformerModel::TransformerModel(ModelConfig config) : config_(config) {
  config_.validate();
  const int64_t d = config_.d_model;
  token_embedding_ = Parameter("token_embedding", Tensor({config_.vocab_size, d}));
  position_embedding_ = Parameter("position_embedding", Tensor({config_.max_seq_len, d}));
  layers_.reserve(static_cast<size_t>(config_.n_layers));
  for (int64_t i = 0; i < config_.n_layers; ++i) layers_.emplace_back(i, config_);
  final_norm_gain_ = Parameter("final_norm.gain", Tensor({d}, 1.0f));
  final_norm_bias_ = Parameter("final_norm.bias", Tensor({d}));
  if (config_.head_type == HeadType::LanguageModeling) {
    if (!config_.tie_lm_head) lm_head_ = Parameter("lm_head", Tensor({d, config_.vocab_size}));
  } else {
    cls_weight_ = Parameter("cls_head.weight", Tensor({d, config_.num_classes}));
    cls_bias_ = Parameter("cls_head.bias", Tensor({config_.num_classes}));
  }
}

namespace {
[[noreturn]] void missing_head(const std::string& what) {
  throw ConfigError("model has no " + what + " parameter under its head configuration");
}
}  // namespace

Parameter& TransformerModel::lm_head() {
  if (config_.head_type != HeadType::LanguageModeling || config_.tie_lm_head) missing_head("untied lm_head");
  return lm_head_;
}
const Parameter& TransformerModel::lm_head() const {
  if (config_.head_type != HeadType::LanguageModeling || config_.tie_lm_head) missing_head("untied lm_head");
  return lm_head_;
}
Parameter& TransformerModel::cls_weight() {
  if (config_.head_type != HeadType::Classification) missing_head("cls_head.weight");
  return cls_weight_;
}
const Parameter& TransformerModel::cls_weight() const {
  if (config_.head_type != HeadType::Classification) missing_head("cls_head.weight");
  return cls_weight_;
}
Parameter& TransformerModel::cls_bias() {
  if (config_.head_type != HeadType::Classification) missing_head("cls_head.bias");
  return cls_bias_;
}
const Parameter& TransformerModel::cls_bias() const {
  if (config_.head_type != HeadType::Classification) missing_head("cls_head.bias");
  return cls_bias_;
}

std::vector<Parameter*> TransformerModel::parameters() {
  std::vector<Parameter*> out{&token_embedding_, &position_embedding_};
  for (DecoderLayer& layer : layers_) {
    for (Parameter* p : layer.parameters()) out.push_back(p);
  }
  out.push_back(&final_norm_gain_);
  out.push_back(&final_norm_bias_);
  if (config_.head_type == HeadType::LanguageModeling) {
    if (!config_.tie_lm_head) out.push_back(&lm_head_);
  } else {
    out.push_back(&cls_weight_);
    out.push_back(&cls_bias_);
  }
  return out;
}

std::vector<const Parameter*> TransformerModel::parameters() const {
  std::vector<const Parameter*> out;
  for (Parameter* p : const_cast<TransformerModel*>(this)->parameters()) out.push_back(p);
  return out;
}

Parameter* TransformerModel::find(const std::string& name) {
  for (Parameter* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

const Parameter* TransformerModel::find(const std::string& name) const {
  return const_cast<TransformerModel*>(this)->find(name);
}

int64_t TransformerModel::num_parameters() const {
  int64_t n = 0;
  for (const Parameter* p : parameters()) n += p->numel();
  return n;
}

void TransformerModel::zero_grads() {
  for (Parameter* p : parameters()) p->zero_grad();
}

bool TransformerModel::identical(const TransformerModel& other) const {
  if (!(config_ == other.config_)) return false;
  const auto mine = parameters();
  const auto theirs = other.parameters();
  if (mine.size() != theirs.size()) return false;
  for (size_t i = 0; i < mine.size(); ++i) {
    if (mine[i]->name != theirs[i]->name || !mine[i]->value.identical(theirs[i]->value)) return false;
  }
  return true;
}

TransformerModel init_weights(const ModelConfig& config, uint64_t seed) {
  TransformerModel model(config);
  Rng rng(seed);
  for (Parameter* p : model.parameters()) {
    // Rank-2 tensors are weights or embeddings; rank-1 are biases and gains,
    // which keep the constructor's 0/1 values.
    if (p->value.rank() != 2) continue;
    for (float& v : p->value.data()) v = static_cast<float>(rng.normal(0.0, 0.02));
  }
  return model;
}

TransformerModel with_classification_head(const TransformerModel& model, int64_t num_classes) {
  ModelConfig config = model.config();
  config.head_type = HeadType::Classification;
  config.num_classes = num_classes;
  config.validate();
  TransformerModel out = model;
  out.config_ = config;
  out.lm_head_ = Parameter();
  out.cls_weight_ = Parameter("cls_head.weight", Tensor({config.d_model, num_classes}));
  out.cls_bias_ = Parameter("cls_head.bias", Tensor({num_classes}));
  return out;
}

namespace {

void check_input(const ModelConfig& config, std::span<const int32_t> ids) {
  if (ids.empty()) throw LengthError("empty input sequence");
  if (static_cast<int64_t>(ids.size()) > config.max_seq_len) {
    throw LengthError("input of " + std::to_string(ids.size()) + " tokens exceeds max_seq_len " +
                      std::to_string(config.max_seq_len));
  }
  for (int32_t id : ids) {
    if (id < 0 || id >= config.vocab_size) {
      throw VocabError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(config.vocab_size));
    }
  }
}

// Shared by the trainable (non-const) and read-only (const) paths; the
// constness of Model picks which Graph::param overload is used.
template <typename Model>
Var stack_forward(Graph& g, Model& model, std::span<const int32_t> ids, std::vector<Tensor>* layer_outputs) {
  const ModelConfig& config = model.config();
  check_input(config, ids);
  std::vector<int32_t> positions(ids.size());
  for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int32_t>(i);

  Var h = add(embedding(g.param(model.token_embedding()), ids),
              embedding(g.param(model.position_embedding()), positions));
  if (layer_outputs) layer_outputs->clear();
  for (int64_t li = 0; li < model.n_layers(); ++li) {
    auto& layer = model.layer(li);
    Var a = layer_norm(h, g.param(layer.ln1_gain), g.param(layer.ln1_bias));
    Var q = add_bias(matmul(a, g.param(layer.wq)), g.param(layer.bq));
    Var k = add_bias(matmul(a, g.param(layer.wk)), g.param(layer.bk));
    Var v = add_bias(matmul(a, g.param(layer.wv)), g.param(layer.bv));
    Var att = causal_self_attention(q, k, v, config.n_heads);
    h = add(h, add_bias(matmul(att, g.param(layer.wo)), g.param(layer.bo)));
    Var m = layer_norm(h, g.param(layer.ln2_gain), g.param(layer.ln2_bias));
    Var f = gelu(add_bias(matmul(m, g.param(layer.w1)), g.param(layer.b1)));
    h = add(h, add_bias(matmul(f, g.param(layer.w2)), g.param(layer.b2)));
    if (layer_outputs) layer_outputs->push_back(h.value());
  }
  return layer_norm(h, g.param(model.final_norm_gain()), g.param(model.final_norm_bias()));
}

template <typename Model>
Var lm_head_forward(Graph& g, Model& model, Var hidden_rows) {
  const ModelConfig& config = model.config();
  if (config.head_type != HeadType::LanguageModeling) {
    throw ConfigError("language-modeling logits requested from a model with a classification head");
  }
  if (config.tie_lm_head) return matmul_nt(hidden_rows, g.param(model.token_embedding()));
  return matmul(hidden_rows, g.param(model.lm_head()));
}

template <typename Model>
Var lm_logits_impl(Graph& g, Model& model, std::span<const int32_t> ids, std::span<const int64_t> positions) {
  if (model.config().head_type != HeadType::LanguageModeling) {
    throw ConfigError("language-modeling logits requested from a model with a classification head");
  }
  Var hidden = stack_forward(g, model, ids, nullptr);
  return lm_head_forward(g, model, select_rows(hidden, positions));
}

template <typename Model>
Var cls_logits_impl(Graph& g, Model& model, std::span<const int32_t> ids) {
  if (model.config().head_type != HeadType::Classification) {
    throw ConfigError("classification logits requested from a model with a language-modeling head");
  }
  Var hidden = stack_forward(g, model, ids, nullptr);
  const int64_t last = static_cast<int64_t>(ids.size()) - 1;
  Var row = select_rows(hidden, std::span<const int64_t>(&last, 1));
  return add_bias(matmul(row, g.param(model.cls_weight())), g.param(model.cls_bias()));
}

}  // namespace

Var forward_hidden(Graph& graph, TransformerModel& model, std::span<const int32_t> ids,
                   std::vector<Tensor>* layer_outputs) {
  return stack_forward(graph, model, ids, layer_outputs);
}

Tensor forward_hidden(const TransformerModel& model, std::span<const int32_t> ids, std::vector<Tensor>* layer_outputs) {
  Graph g(false);
  return stack_forward(g, model, ids, layer_outputs).value();
}

Var lm_logits_at(Graph& graph, TransformerModel& model, std::span<const int32_t> ids,
                 std::span<const int64_t> positions) {
  return lm_logits_impl(graph, model, ids, positions);
}

Tensor lm_logits_at(const TransformerModel& model, std::span<const int32_t> ids, std::span<const int64_t> positions) {
  Graph g(false);
  return lm_logits_impl(g, model, ids, positions).value();
}

Tensor lm_logits(const TransformerModel& model, std::span<const int32_t> ids) {
  const int64_t last = static_cast<int64_t>(ids.size()) - 1;
  Graph g(false);
  Tensor rows = lm_logits_impl(g, model, ids, std::span<const int64_t>(&last, 1)).value();
  return rows.reshaped({rows.numel()});
}

Var cls_logits(Graph& graph, TransformerModel& model, std::span<const int32_t> ids) {
  return cls_logits_impl(graph, model, ids);
}

Tensor cls_logits(const TransformerModel& model, std::span<const int32_t> ids) {
  Graph g(false);
  Tensor row = cls_logits_impl(g, model, ids).value();
  return row.reshaped({row.numel()});
}

}  // namespace layerslim
