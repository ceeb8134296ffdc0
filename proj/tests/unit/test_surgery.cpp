#include <gtest/gtest.h>

#include <cmath>

#include "layerslim/errors.hpp"
#include "layerslim/experiment.hpp"
#include "layerslim/surgery.hpp"
#include "layerslim/training.hpp"
#include "reference.hpp"

using namespace layerslim;

namespace {

ModelConfig toy8() {
  ModelConfig c;
  c.vocab_size = 40;
  c.d_model = 16;
  c.n_heads = 4;
  c.n_layers = 8;
  c.d_ff = 32;
  c.max_seq_len = 12;
  return c;
}

ModelConfig with_layers(ModelConfig c, int64_t n) {
  c.n_layers = n;
  return c;
}

void expect_within(int64_t value, double target, double tolerance, const std::string& label) {
  EXPECT_LE(std::abs(static_cast<double>(value) - target) / target, tolerance)
      << label << ": " << value << " vs " << target;
}

}  // namespace

TEST(CountParams, Gpt2XlColumn) {
  const ModelConfig xl = gpt2_xl_config();
  // "1.6B" is a two-digit rounding; the count it stands for is about 1.56e9.
  expect_within(count_params(with_layers(xl, 48)).total_params, 1.56e9, 0.02, "n=48");
  EXPECT_EQ(humanize_params(count_params(with_layers(xl, 48)).total_params), "1.6B");
  expect_within(count_params(with_layers(xl, 24)).total_params, 819e6, 0.02, "n=24");
  expect_within(count_params(with_layers(xl, 12)).total_params, 450e6, 0.02, "n=12");
  expect_within(count_params(with_layers(xl, 2)).total_params, 143e6, 0.02, "n=2");
  expect_within(count_params(with_layers(xl, 1)).total_params, 112e6, 0.02, "n=1");
}

TEST(CountParams, OptColumn) {
  const ModelConfig opt = opt_1_3b_config();
  expect_within(count_params(with_layers(opt, 24)).total_params, 1.3e9, 0.02, "n=24");
  expect_within(count_params(with_layers(opt, 12)).total_params, 711e6, 0.02, "n=12");
  expect_within(count_params(with_layers(opt, 6)).total_params, 409e6, 0.02, "n=6");
  expect_within(count_params(with_layers(opt, 1)).total_params, 157e6, 0.02, "n=1");
}

TEST(CountParams, Gpt2XlExact) {
  // 50257*1600 + 1024*1600 + 48*(2*1600 + 4*(1600^2+1600) + 2*1600 + 2*1600*6400 + 6400 + 1600) + 2*1600
  EXPECT_EQ(count_params(gpt2_xl_config()).total_params, 1557611200);
  EXPECT_EQ(count_params(gpt2_small_config()).total_params, 124439808);
}

TEST(CountParams, BreakdownSumsAndMonotone) {
  for (const ModelConfig& base : {gpt2_xl_config(), opt_1_3b_config(), toy8()}) {
    int64_t previous = 0;
    for (int64_t n = 1; n <= base.n_layers; ++n) {
      const ParamReport r = count_params(with_layers(base, n));
      EXPECT_EQ(r.total_params, r.embeddings() + r.layers_total + r.final_norm + r.head);
      EXPECT_EQ(r.layers_total, r.per_layer * n);
      EXPECT_EQ(r.layers_retained, n);
      EXPECT_EQ(r.total_params, ref::count_scalars(with_layers(base, n)));
      EXPECT_GT(r.total_params, previous);
      previous = r.total_params;
    }
  }
}

TEST(CountParams, HeadVariants) {
  ModelConfig c = toy8();
  const int64_t tied = count_params(c).total_params;
  c.tie_lm_head = false;
  EXPECT_EQ(count_params(c).total_params, tied + 16 * 40);
  c.head_type = HeadType::Classification;
  c.num_classes = 4;
  EXPECT_EQ(count_params(c).total_params, tied + 16 * 4 + 4);
}

TEST(Reduction, HeadlinePercentages) {
  const double xl = reduction_percent(count_params(gpt2_xl_config()), count_params(with_layers(gpt2_xl_config(), 1)));
  const double opt =
      reduction_percent(count_params(opt_1_3b_config()), count_params(with_layers(opt_1_3b_config(), 1)));
  EXPECT_GE(xl, 92.0);
  EXPECT_LE(xl, 94.0);
  EXPECT_GE(opt, 87.0);
  EXPECT_LE(opt, 89.0);
  EXPECT_NEAR(xl, 93.0, 1.0);
  EXPECT_NEAR(opt, 88.0, 1.0);
}

TEST(DropTopLayers, IdentityAtZero) {
  const TransformerModel m = init_weights(toy8(), 1);
  EXPECT_TRUE(drop_top_layers(m, 0).identical(m));
}

TEST(DropTopLayers, RangeChecks) {
  const TransformerModel m = init_weights(toy8(), 1);
  EXPECT_THROW(drop_top_layers(m, 8), PruneError);
  EXPECT_THROW(drop_top_layers(m, -1), PruneError);
  EXPECT_NO_THROW(drop_top_layers(m, PruneSpec{7}));
}

TEST(DropTopLayers, KeepsPrefixBitExact) {
  const TransformerModel m = init_weights(toy8(), 2);
  const TransformerModel snapshot = init_weights(toy8(), 2);
  const TransformerModel pruned = drop_top_layers(m, 7);
  EXPECT_TRUE(m.identical(snapshot));  // input untouched
  EXPECT_EQ(pruned.n_layers(), 1);
  EXPECT_EQ(pruned.config().n_layers, 1);
  for (const Parameter* p : pruned.parameters()) {
    const Parameter* source = m.find(p->name);
    ASSERT_NE(source, nullptr) << p->name;
    EXPECT_TRUE(p->value.identical(source->value)) << p->name;
  }

  const std::vector<int32_t> ids = {0, 7, 3, 30, 12};
  std::vector<Tensor> full_layers, pruned_layers;
  forward_hidden(m, ids, &full_layers);
  forward_hidden(pruned, ids, &pruned_layers);
  EXPECT_TRUE(full_layers[0].identical(pruned_layers[0]));
}

TEST(DropTopLayers, ParamCountDropsPerLayer) {
  const TransformerModel m = init_weights(toy8(), 3);
  const ParamReport before = count_params(m);
  for (int64_t k = 0; k < 8; ++k) {
    EXPECT_EQ(count_params(drop_top_layers(m, k)).total_params, before.total_params - k * before.per_layer);
  }
}

TEST(DropTopLayers, Composition) {
  const TransformerModel m = init_weights(toy8(), 4);
  for (int64_t a = 0; a < 8; ++a) {
    for (int64_t b = 0; a + b < 8; ++b) {
      EXPECT_TRUE(drop_top_layers(drop_top_layers(m, a), b).identical(drop_top_layers(m, a + b)))
          << a << "+" << b;
    }
  }
}

TEST(DropTopLayers, Gpt2XlDownToOneLayer) {
  ModelConfig c = gpt2_xl_config();
  c.n_layers = 1;
  expect_within(count_params(c).total_params, 112e6, 0.02, "k=47");
}

TEST(PrefixEquivalence, ExactZero) {
  TransformerModel m = init_weights(toy8(), 5);
  const std::vector<int32_t> ids = {0, 1, 2, 3, 39, 8};
  for (int64_t k = 0; k < 8; ++k) {
    EXPECT_EQ(verify_prefix_equivalence(m, drop_top_layers(m, k), ids), 0.0) << k;
  }
  EXPECT_TRUE(lm_logits(m, ids).identical(lm_logits(drop_top_layers(m, 0), ids)));
}

TEST(PrefixEquivalence, DetectsTraining) {
  TransformerModel m = init_weights(toy8(), 6);
  TransformerModel pruned = drop_top_layers(m, 5);
  const std::vector<int32_t> ids = {0, 4, 9, 13};
  Graph g;
  g.backward(cross_entropy_rows(lm_logits_at(g, pruned, ids, std::vector<int64_t>{3}), std::vector<int64_t>{7}));
  AdamWState state;
  AdamWConfig cfg;
  cfg.learning_rate = 1e-2;
  std::vector<Parameter*> params = pruned.parameters();
  adamw_step(params, state, cfg);
  EXPECT_GT(verify_prefix_equivalence(m, pruned, ids), 0.0);
}

TEST(PrefixEquivalence, IncompatibleModels) {
  const TransformerModel m = init_weights(toy8(), 7);
  ModelConfig other = toy8();
  other.d_model = 8;
  other.n_heads = 2;
  const std::vector<int32_t> ids = {0, 1};
  EXPECT_THROW(verify_prefix_equivalence(m, init_weights(other, 1), ids), ComparisonError);
  EXPECT_THROW(verify_prefix_equivalence(drop_top_layers(m, 3), m, ids), ComparisonError);
}

TEST(ParamReport, Json) {
  const nlohmann::json j = to_json(count_params(gpt2_xl_config()));
  EXPECT_EQ(j.at("total_params").get<int64_t>(), 1557611200);
  EXPECT_EQ(j.at("layers_retained").get<int64_t>(), 48);
}
