#include <gtest/gtest.h>

#include <cmath>

#include "layerslim/errors.hpp"
#include "layerslim/prompting.hpp"
#include "layerslim/training.hpp"

using namespace layerslim;

namespace {

const TaskSpec& task(const std::string& name) {
  static const TemplateRegistry reg = TemplateRegistry::builtin();
  return reg.get(name);
}

std::vector<LabeledExample> one_per_class(const TaskSpec& t) {
  std::vector<LabeledExample> out;
  for (int64_t c = 0; c < t.num_classes(); ++c) {
    out.push_back({"demo " + std::to_string(c), c, t.label_words[static_cast<size_t>(c)]});
  }
  return out;
}

size_t count_of(const std::string& haystack, const std::string& needle) {
  size_t n = 0;
  for (size_t pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST(Templates, GoldenPatterns) {
  EXPECT_EQ(render_pattern(task("agnews").prompt, "Stocks rallied.", "Business"),
            "Article: Stocks rallied. Answer: Business");
  EXPECT_EQ(render_pattern(task("emoc").prompt, "I enjoyed it a lot!", "Happy"),
            "Dialogue: I enjoyed it a lot! Emotion: Happy");
  EXPECT_EQ(render_pattern(task("sst2").prompt, "a gripping story", "Positive"),
            "Review: a gripping story Sentiment: Positive");
  EXPECT_EQ(render_pattern(task("trec").prompt, "Who wrote Hamlet?", "Person"),
            "Question: Who wrote Hamlet? Answer Type: Person");
}

TEST(Templates, EmptyLabelEndsOnCue) {
  EXPECT_EQ(render_pattern(task("agnews").prompt, "x", ""), "Article: x Answer:");
  const std::string sst = render_pattern(task("sst2").prompt, "fine", "");
  EXPECT_TRUE(sst.ends_with("Sentiment:")) << sst;
  EXPECT_EQ(render_pattern(task("emoc").prompt, "ok", ""), "Dialogue: ok Emotion:");
  EXPECT_EQ(render_pattern(task("trec").prompt, "Why?", ""), "Question: Why? Answer Type:");
}

TEST(Templates, LabelWordsMatchTable) {
  EXPECT_EQ(task("agnews").label_words, (std::vector<std::string>{"World", "Sports", "Business", "Technology"}));
  EXPECT_EQ(task("emoc").label_words, (std::vector<std::string>{"Happy", "Sad", "Angry", "Others"}));
  EXPECT_EQ(task("sst2").label_words, (std::vector<std::string>{"Positive", "Negative"}));
  EXPECT_EQ(task("trec").label_words, (std::vector<std::string>{"Abbreviation", "Entity", "Description", "Person",
                                                                 "Location", "Number"}));
}

TEST(BuildPrompt, Sst2Golden) {
  const std::vector<LabeledExample> demos = {{"great film", 0, "Positive"}, {"dull plot", 1, "Negative"}};
  EXPECT_EQ(build_prompt(task("sst2"), demos, "fine acting"),
            "Review: great film Sentiment: Positive Review: dull plot Sentiment: Negative Review: fine acting "
            "Sentiment:");
}

TEST(BuildPrompt, GoldenForAllTasks) {
  EXPECT_EQ(build_prompt(task("agnews"), one_per_class(task("agnews")), "q"),
            "Article: demo 0 Answer: World Article: demo 1 Answer: Sports Article: demo 2 Answer: Business "
            "Article: demo 3 Answer: Technology Article: q Answer:");
  EXPECT_EQ(build_prompt(task("emoc"), one_per_class(task("emoc")), "q"),
            "Dialogue: demo 0 Emotion: Happy Dialogue: demo 1 Emotion: Sad Dialogue: demo 2 Emotion: Angry "
            "Dialogue: demo 3 Emotion: Others Dialogue: q Emotion:");
  EXPECT_EQ(build_prompt(task("trec"), one_per_class(task("trec")), "q"),
            "Question: demo 0 Answer Type: Abbreviation Question: demo 1 Answer Type: Entity Question: demo 2 "
            "Answer Type: Description Question: demo 3 Answer Type: Person Question: demo 4 Answer Type: Location "
            "Question: demo 5 Answer Type: Number Question: q Answer Type:");
}

TEST(BuildPrompt, OrdersByLabelAndEndsOnCue) {
  std::vector<LabeledExample> demos = one_per_class(task("agnews"));
  std::reverse(demos.begin(), demos.end());
  const std::string prompt = build_prompt(task("agnews"), demos, "q");
  EXPECT_EQ(prompt, build_prompt(task("agnews"), one_per_class(task("agnews")), "q"));
  EXPECT_TRUE(prompt.ends_with(task("agnews").prompt.answer_prefix));
}

TEST(BuildPrompt, TrecCueCount) {
  const std::string prompt = build_prompt(task("trec"), one_per_class(task("trec")), "What is DNA?");
  EXPECT_EQ(count_of(prompt, "Answer Type:"), 7u);
}

TEST(BuildPrompt, DegenerateAndErrors) {
  const std::vector<LabeledExample> none;
  EXPECT_EQ(build_prompt(task("sst2").prompt, none, "solo"), "Review: solo Sentiment:");
  std::vector<LabeledExample> missing = one_per_class(task("agnews"));
  missing.pop_back();
  EXPECT_THROW(build_prompt(task("agnews"), missing, "q"), PromptError);
  std::vector<LabeledExample> doubled = one_per_class(task("sst2"));
  doubled[1].label_id = 0;
  doubled[1].label_word = "Positive";
  EXPECT_THROW(build_prompt(task("sst2"), doubled, "q"), PromptError);
}

TEST(Verbalizer, InjectiveAndRoundTrip) {
  EXPECT_THROW(Verbalizer(std::vector<std::string>{"Happy", "Happy"}), ConfigError);
  const Verbalizer v(task("trec").label_words);
  for (int64_t c = 0; c < v.num_classes(); ++c) EXPECT_EQ(v.label_of(v.word(c)), c);
  EXPECT_EQ(v.label_of("Unknown"), -1);
  const Vocab vocab = build_vocab(std::vector<std::string>{"Positive"}, 10);
  EXPECT_THROW(Verbalizer(std::vector<std::string>{"Positive", "   "}, vocab), ConfigError);
}

TEST(Truncate, FitsUnchanged) {
  const Vocab vocab = build_vocab(std::vector<std::string>{"Review : Sentiment Positive Negative a b c d e"}, 50);
  const std::vector<LabeledExample> demos = {{"a b", 0, "Positive"}, {"c d", 1, "Negative"}};
  const EncodedPrompt p = encode_prompt(vocab, task("sst2").prompt, demos, "e");
  EXPECT_EQ(truncate_prompt(p, p.length()), p.ids());
  EXPECT_EQ(p.ids(), encode(vocab, build_prompt(task("sst2"), demos, "e")));
}

TEST(Truncate, DropsOldestDemonstration) {
  const Vocab vocab = build_vocab(std::vector<std::string>{"Review : Sentiment Positive Negative a b c d e"}, 50);
  const std::vector<LabeledExample> demos = {{"a b", 0, "Positive"}, {"c d", 1, "Negative"}};
  const EncodedPrompt p = encode_prompt(vocab, task("sst2").prompt, demos, "e");
  const std::vector<int32_t> cut = truncate_prompt(p, p.length() - 1);
  const std::vector<LabeledExample> rest = {demos[1]};
  EXPECT_EQ(cut, encode(vocab, build_prompt(task("sst2").prompt, rest, "e")));
  EXPECT_EQ(cut.front(), Vocab::kBos);
  const std::vector<int32_t> bare = truncate_prompt(p, static_cast<int64_t>(p.query.size()) + 1);
  EXPECT_EQ(bare, encode(vocab, "Review: e Sentiment:"));
  EXPECT_THROW(truncate_prompt(p, static_cast<int64_t>(p.query.size())), LengthError);
}

TEST(ScoreLabels, LogProbabilities) {
  const TaskSpec& t = task("sst2");
  const Vocab vocab = build_vocab(std::vector<std::string>{"Review : Sentiment Positive Negative good bad"}, 50);
  ModelConfig c{.vocab_size = vocab.size(), .d_model = 8, .n_heads = 2, .n_layers = 1, .d_ff = 16,
                .max_seq_len = 32};
  const TransformerModel m = init_weights(c, 3);
  const Verbalizer v(t.label_words, vocab);
  const std::vector<double> scores = score_labels(m, vocab, v, "Review: good Sentiment:");
  ASSERT_EQ(scores.size(), 2u);
  for (double s : scores) EXPECT_LE(s, 0.0);

  // Single-token label words: score is the log-softmax entry of the next-token logits.
  const std::vector<int32_t> ids = encode(vocab, "Review: good Sentiment:");
  const Tensor logits = lm_logits(m, ids);
  const std::vector<double> logp = log_softmax(logits.data());
  EXPECT_NEAR(scores[0], logp[static_cast<size_t>(vocab.id("Positive"))], 1e-6);
  EXPECT_NEAR(scores[1], logp[static_cast<size_t>(vocab.id("Negative"))], 1e-6);

  TransformerModel cls = with_classification_head(m, 2);
  EXPECT_THROW(score_labels(cls, vocab, v, "Review: good Sentiment:"), ConfigError);
}

TEST(ScoreLabels, ShiftInvariance) {
  const std::vector<float> logits = {0.3f, -1.2f, 2.0f, 0.7f};
  std::vector<float> shifted = logits;
  for (float& x : shifted) x += 37.5f;
  const std::vector<double> a = log_softmax(logits);
  const std::vector<double> b = log_softmax(shifted);
  for (size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5);
  EXPECT_EQ(argmax(std::span<const double>(a)), argmax(std::span<const double>(b)));
}

TEST(ScoreLabels, MultiTokenLabelsAreSummed) {
  const Vocab vocab = build_vocab(std::vector<std::string>{"Q : Answer Type x y z"}, 50);
  ModelConfig c{.vocab_size = vocab.size(), .d_model = 8, .n_heads = 2, .n_layers = 1, .d_ff = 16,
                .max_seq_len = 32};
  const TransformerModel m = init_weights(c, 4);
  const Verbalizer v(std::vector<std::string>{"x y", "z"}, vocab);
  const std::vector<int32_t> prompt = encode(vocab, "Q : x Answer Type :");
  const std::vector<double> scores = score_labels(m, v, prompt);

  std::vector<int32_t> ext = prompt;
  ext.push_back(vocab.id("x"));
  const std::vector<double> first = log_softmax(lm_logits(m, prompt).data());
  const std::vector<double> second = log_softmax(lm_logits(m, ext).data());
  EXPECT_NEAR(scores[0], first[static_cast<size_t>(vocab.id("x"))] + second[static_cast<size_t>(vocab.id("y"))],
              1e-5);
  EXPECT_NEAR(scores[1], first[static_cast<size_t>(vocab.id("z"))], 1e-6);
}

TEST(ScoreLabels, OverfitClassWins) {
  const TaskSpec& t = task("agnews");
  std::vector<std::string> corpus = {"Article : Answer : World Sports Business Technology alpha beta gamma"};
  const Vocab vocab = build_vocab(corpus, 50);
  ModelConfig c{.vocab_size = vocab.size(), .d_model = 16, .n_heads = 2, .n_layers = 1, .d_ff = 32,
                .max_seq_len = 64};
  TransformerModel m = init_weights(c, 5);
  const TaskContext ctx(t, vocab);
  const std::vector<LabeledExample> train = {{"alpha", 2, "Business"}, {"beta gamma", 2, "Business"}};
  const std::vector<LabeledExample> demos = {
      {"alpha", 0, "World"}, {"beta", 1, "Sports"}, {"gamma", 2, "Business"}, {"alpha beta", 3, "Technology"}};
  const auto prepared = prepare_examples(train, demos, Paradigm::PromptLM, ctx, c.max_seq_len);
  AdamWState state;
  AdamWConfig opt;
  opt.learning_rate = 1e-2;
  std::vector<Parameter*> params = m.parameters();
  for (int step = 0; step < 60; ++step) {
    for (const PreparedExample& ex : prepared) {
      m.zero_grads();
      Graph g;
      g.backward(training_example_loss(g, m, ex, Paradigm::PromptLM, ctx.verbalizer));
      adamw_step(params, state, opt);
    }
  }
  for (const PreparedExample& ex : prepared) {
    const std::vector<double> scores = score_labels(m, ctx.verbalizer, ex.ids);
    for (int64_t k = 0; k < 4; ++k) {
      if (k != 2) EXPECT_GT(scores[2], scores[static_cast<size_t>(k)]);
    }
    EXPECT_EQ(ctx.verbalizer.label_of(ctx.verbalizer.word(argmax(std::span<const double>(scores)))), 2);
  }
}

TEST(Registry, JsonRoundTripAndMerge) {
  const TemplateRegistry reg = TemplateRegistry::builtin();
  const TemplateRegistry again = TemplateRegistry::from_json(reg.to_json());
  EXPECT_EQ(again.names(), reg.names());
  EXPECT_EQ(again.get("trec").prompt, reg.get("trec").prompt);
  nlohmann::json extra = {{"custom", {{"input_prefix", "Text: "}, {"answer_prefix", " Topic:"},
                                      {"label_words", {"A", "B"}}}}};
  TemplateRegistry merged = TemplateRegistry::builtin();
  merged.merge(TemplateRegistry::from_json(extra));
  EXPECT_EQ(render_pattern(merged.get("custom").prompt, "s", "A"), "Text: s Topic: A");
  EXPECT_THROW(merged.get("missing"), ConfigError);
  nlohmann::json bad = {{"x", {{"input_prefix", "a"}, {"answer_prefix", "b"}, {"label_words", {"A", "B"}},
                               {"typo", 1}}}};
  EXPECT_THROW(TemplateRegistry::from_json(bad), ConfigError);
}
