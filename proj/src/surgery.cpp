#include "layerslim/surgery.hpp"

#include <cmath>

#include "layerslim/errors.hpp"

namespace layerslim {

ParamReport count_params(const ModelConfig& config) {
  config.validate();
  const int64_t d = config.d_model;
  ParamReport r;
  r.token_embedding = config.vocab_size * d;
  r.position_embedding = config.max_seq_len * d;
  const int64_t attention = 4 * (d * d + d);
  const int64_t mlp = d * config.d_ff + config.d_ff + config.d_ff * d + d;
  const int64_t norms = 2 * (2 * d);
  r.per_layer = attention + mlp + norms;
  r.layers_retained = config.n_layers;
  r.layers_total = r.per_layer * config.n_layers;
  r.final_norm = 2 * d;
  if (config.head_type == HeadType::LanguageModeling) {
    r.head = config.tie_lm_head ? 0 : d * config.vocab_size;
  } else {
    r.head = d * config.num_classes + config.num_classes;
  }
  r.total_params = r.embeddings() + r.layers_total + r.final_norm + r.head;
  return r;
}

ParamReport count_params(const TransformerModel& model) { return count_params(model.config()); }

double reduction_percent(const ParamReport& before, const ParamReport& after) {
  if (before.total_params <= 0) return 0.0;
  return 100.0 * (1.0 - static_cast<double>(after.total_params) / static_cast<double>(before.total_params));
}

nlohmann::json to_json(const ParamReport& r) {
  return nlohmann::json{{"total_params", r.total_params},
                        {"layers_retained", r.layers_retained},
                        {"breakdown",
                         {{"token_embedding", r.token_embedding},
                          {"position_embedding", r.position_embedding},
                          {"per_layer", r.per_layer},
                          {"layers", r.layers_total},
                          {"final_norm", r.final_norm},
                          {"head", r.head}}}};
}

TransformerModel drop_top_layers(const TransformerModel& model, int64_t k) {
  const int64_t n = model.n_layers();
  if (k < 0 || k > n - 1) {
    throw PruneError("cannot remove " + std::to_string(k) + " of " + std::to_string(n) +
                     " layers; k must be in [0, " + std::to_string(n - 1) + "]");
  }
  TransformerModel out = model;
  out.layers_.resize(static_cast<size_t>(n - k));
  out.config_.n_layers = n - k;
  return out;
}

double verify_prefix_equivalence(const TransformerModel& full, const TransformerModel& pruned,
                                 std::span<const int32_t> ids) {
  const ModelConfig& a = full.config();
  const ModelConfig& b = pruned.config();
  if (a.vocab_size != b.vocab_size || a.d_model != b.d_model || a.n_heads != b.n_heads || a.d_ff != b.d_ff ||
      a.max_seq_len != b.max_seq_len || b.n_layers > a.n_layers) {
    throw ComparisonError("pruned model is not structurally a prefix of the full model");
  }
  std::vector<Tensor> full_layers;
  std::vector<Tensor> pruned_layers;
  forward_hidden(full, ids, &full_layers);
  forward_hidden(pruned, ids, &pruned_layers);
  const Tensor& reference = full_layers.at(static_cast<size_t>(b.n_layers - 1));
  const Tensor& candidate = pruned_layers.back();
  return static_cast<double>(max_abs_diff(reference, candidate));
}

}  // namespace layerslim
