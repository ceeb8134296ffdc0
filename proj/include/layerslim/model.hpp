#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "layerslim/autograd.hpp"

namespace layerslim {

enum class HeadType { LanguageModeling, Classification };

std::string to_string(HeadType head);
HeadType head_type_from_string(const std::string& text);

struct ModelConfig {
  int64_t vocab_size = 0;
  int64_t d_model = 0;
  int64_t n_heads = 0;
  int64_t n_layers = 0;
  int64_t d_ff = 0;
  int64_t max_seq_len = 0;
  HeadType head_type = HeadType::LanguageModeling;
  int64_t num_classes = 0;  // only meaningful for Classification
  bool tie_lm_head = true;

  // Throws ConfigError describing the first violated constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Reference architectures.
ModelConfig gpt2_xl_config();
ModelConfig gpt2_small_config();
ModelConfig opt_1_3b_config();

struct DecoderLayer {
  DecoderLayer() = default;
  DecoderLayer(int64_t index, const ModelConfig& config);

  Parameter ln1_gain, ln1_bias;
  Parameter wq, bq, wk, bk, wv, bv, wo, bo;
  Parameter ln2_gain, ln2_bias;
  Parameter w1, b1, w2, b2;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

// Decoder-only transformer: token + position embeddings, a stack of pre-norm
// decoder layers, a final layer norm and one head. A tied language-modeling
// head has no parameter of its own and reads token_embedding directly.
class TransformerModel {
 public:
  // Builds the parameter set for `config` with zero weights and unit
  // layer-norm gains; see init_weights() for random initialisation.
  explicit TransformerModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  int64_t n_layers() const { return static_cast<int64_t>(layers_.size()); }

  Parameter& token_embedding() { return token_embedding_; }
  const Parameter& token_embedding() const { return token_embedding_; }
  Parameter& position_embedding() { return position_embedding_; }
  const Parameter& position_embedding() const { return position_embedding_; }
  DecoderLayer& layer(int64_t i) { return layers_.at(static_cast<size_t>(i)); }
  const DecoderLayer& layer(int64_t i) const { return layers_.at(static_cast<size_t>(i)); }
  Parameter& final_norm_gain() { return final_norm_gain_; }
  const Parameter& final_norm_gain() const { return final_norm_gain_; }
  Parameter& final_norm_bias() { return final_norm_bias_; }
  const Parameter& final_norm_bias() const { return final_norm_bias_; }

  // Head parameters; which exist depends on config().head_type/tie_lm_head.
  Parameter& lm_head();
  const Parameter& lm_head() const;
  Parameter& cls_weight();
  const Parameter& cls_weight() const;
  Parameter& cls_bias();
  const Parameter& cls_bias() const;

  // Every trainable parameter exactly once, in canonical order.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  int64_t num_parameters() const;
  void zero_grads();

  // Bit-exact equality of config and every parameter value.
  bool identical(const TransformerModel& other) const;

 private:
  friend TransformerModel drop_top_layers(const TransformerModel& model, int64_t k);
  friend TransformerModel with_classification_head(const TransformerModel& model, int64_t num_classes);

  ModelConfig config_;
  Parameter token_embedding_;
  Parameter position_embedding_;
  std::vector<DecoderLayer> layers_;
  Parameter final_norm_gain_;
  Parameter final_norm_bias_;
  Parameter lm_head_;
  Parameter cls_weight_;
  Parameter cls_bias_;
};

// Weights ~ Normal(0, 0.02); biases 0; layer-norm gains 1. Deterministic per seed.
TransformerModel init_weights(const ModelConfig& config, uint64_t seed);

// Replaces the head with a zero-initialised classification head over
// `num_classes`; everything below the head is copied unchanged.
TransformerModel with_classification_head(const TransformerModel& model, int64_t num_classes);

// Hidden states of the stack. `layer_outputs`, when given, receives the
// residual stream after each decoder layer (before final_norm).
Var forward_hidden(Graph& graph, TransformerModel& model, std::span<const int32_t> ids,
                   std::vector<Tensor>* layer_outputs = nullptr);
Tensor forward_hidden(const TransformerModel& model, std::span<const int32_t> ids,
                      std::vector<Tensor>* layer_outputs = nullptr);

// Language-modeling logits at the given positions of the input, [rows x vocab].
Var lm_logits_at(Graph& graph, TransformerModel& model, std::span<const int32_t> ids,
                 std::span<const int64_t> positions);
Tensor lm_logits_at(const TransformerModel& model, std::span<const int32_t> ids, std::span<const int64_t> positions);

// Next-token logits after the final input position, [vocab].
Tensor lm_logits(const TransformerModel& model, std::span<const int32_t> ids);

// Classification logits from the last token's hidden state; graph form is [1 x classes].
Var cls_logits(Graph& graph, TransformerModel& model, std::span<const int32_t> ids);
Tensor cls_logits(const TransformerModel& model, std::span<const int32_t> ids);

}  // namespace layerslim
