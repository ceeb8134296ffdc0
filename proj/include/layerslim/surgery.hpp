#pragma once

#include <cstdint>
#include <span>

#include "json.hpp"
#include "layerslim/model.hpp"

namespace layerslim {

struct PruneSpec {
  int64_t k = 0;  // number of top layers to remove
};

// Exact count of trainable scalars, broken down by component.
struct ParamReport {
  int64_t token_embedding = 0;
  int64_t position_embedding = 0;
  int64_t per_layer = 0;
  int64_t layers_retained = 0;
  int64_t layers_total = 0;  // per_layer * layers_retained
  int64_t final_norm = 0;
  int64_t head = 0;
  int64_t total_params = 0;

  int64_t embeddings() const { return token_embedding + position_embedding; }
};

ParamReport count_params(const ModelConfig& config);
ParamReport count_params(const TransformerModel& model);

// Percentage of `before` removed to reach `after`, in [0, 100].
double reduction_percent(const ParamReport& before, const ParamReport& after);

nlohmann::json to_json(const ParamReport& report);

// Removes the top k decoder layers. Embeddings, the lower n-k layers,
// final_norm and the head are copied bit-exactly; the input is untouched.
TransformerModel drop_top_layers(const TransformerModel& model, int64_t k);
inline TransformerModel drop_top_layers(const TransformerModel& model, PruneSpec spec) {
  return drop_top_layers(model, spec.k);
}

// Max |full hidden after layer n-k - pruned hidden after its last layer|,
// both taken before final_norm. Zero for an untouched pruned copy.
double verify_prefix_equivalence(const TransformerModel& full, const TransformerModel& pruned,
                                 std::span<const int32_t> ids);

}  // namespace layerslim
