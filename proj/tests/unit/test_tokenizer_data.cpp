#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "layerslim/data.hpp"
#include "layerslim/errors.hpp"
#include "layerslim/experiment.hpp"
#include "layerslim/prompting.hpp"
#include "layerslim/task.hpp"
#include "layerslim/tokenizer.hpp"

using namespace layerslim;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& content) {
  const fs::path dir = fs::temp_directory_path() / "layerslim_data_test";
  fs::create_directories(dir);
  const fs::path path = dir / name;
  std::ofstream(path, std::ios::binary) << content;
  return path;
}

const TaskSpec& task(const std::string& name) {
  static const TemplateRegistry reg = TemplateRegistry::builtin();
  return reg.get(name);
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Tokenize, SplitsPunctuation) {
  EXPECT_EQ(tokenize("I enjoyed it a lot!"), (std::vector<std::string>{"I", "enjoyed", "it", "a", "lot", "!"}));
  EXPECT_EQ(tokenize("  Sentiment:x_y "), (std::vector<std::string>{"Sentiment", ":", "x_y"}));
  EXPECT_TRUE(tokenize("").empty());
}

TEST(BuildVocab, FrequencyOrderAndSpecials) {
  const std::vector<std::string> corpus = {"a a b"};
  const Vocab v = build_vocab(corpus, 100);
  ASSERT_EQ(v.size(), 5);
  EXPECT_EQ(v.token(0), "<s>");
  EXPECT_EQ(v.token(1), "[PAD]");
  EXPECT_EQ(v.token(2), "[UNK]");
  EXPECT_LT(v.id("a"), v.id("b"));
  EXPECT_THROW(build_vocab(std::vector<std::string>{}, 10), DataError);
}

TEST(BuildVocab, ForcedLabelWordsSurviveTruncation) {
  const std::vector<std::string> corpus = {"x x x y y z q q q q w"};
  for (const std::string name : {"agnews", "emoc", "sst2", "trec"}) {
    const Vocab v = build_vocab(corpus, 3 + 2 + 12, task(name).label_words);
    for (const std::string& word : task(name).label_words) {
      for (const std::string& tok : tokenize(word)) EXPECT_TRUE(v.contains(tok)) << name << " " << tok;
    }
    const Verbalizer verbalizer(task(name).label_words, v);
    for (int64_t c = 0; c < verbalizer.num_classes(); ++c) {
      for (int32_t id : verbalizer.tokens(c)) EXPECT_NE(id, Vocab::kUnk);
    }
  }
}

TEST(BuildVocab, Deterministic) {
  const std::vector<std::string> corpus = {"d c b a", "c b a", "b a", "a"};
  EXPECT_EQ(build_vocab(corpus, 6), build_vocab(corpus, 6));
  const Vocab v = build_vocab(corpus, 6);
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"<s>", "[PAD]", "[UNK]", "a", "b", "c"}));
}

TEST(Encode, BosAndUnknown) {
  const Vocab v = build_vocab(std::vector<std::string>{"hello world"}, 10);
  EXPECT_EQ(encode(v, ""), std::vector<int32_t>{Vocab::kBos});
  const std::vector<int32_t> ids = encode(v, "hello stranger");
  ASSERT_EQ(ids.size(), 3u);
  EXPECT_EQ(ids[0], Vocab::kBos);
  EXPECT_EQ(ids[2], Vocab::kUnk);
  EXPECT_EQ(std::count(ids.begin(), ids.end(), Vocab::kBos), 1);
}

TEST(Encode, RoundTrip) {
  const std::string text = "Review: the movie was great . Sentiment: Positive";
  const Vocab v = build_vocab(std::vector<std::string>{text}, 100);
  const std::vector<int32_t> ids = encode(v, text);
  EXPECT_EQ(encode(v, decode(v, ids)), ids);

  // A rendered prompt decodes to the same token sequence, modulo UNK.
  const std::vector<LabeledExample> demos = {{"great fun", 0, "Positive"}, {"dull plot", 1, "Negative"}};
  const std::string prompt = build_prompt(task("sst2"), demos, "a new film");
  const std::vector<int32_t> prompt_ids = encode(v, prompt);
  const std::vector<std::string> expected = tokenize(prompt);
  ASSERT_EQ(prompt_ids.size(), expected.size() + 1);
  int64_t unknown = 0;
  for (size_t i = 0; i < expected.size(); ++i) {
    const int32_t id = prompt_ids[i + 1];
    if (id == Vocab::kUnk) {
      ++unknown;
    } else {
      EXPECT_EQ(v.token(id), expected[i]);
    }
  }
  EXPECT_GT(unknown, 0);
}

TEST(VocabFile, SaveLoadKeepsIds) {
  const Vocab v = build_vocab(std::vector<std::string>{"b b a c"}, 10);
  const fs::path path = write_temp("vocab.txt", "");
  v.save(path);
  const Vocab loaded = Vocab::load(path);
  EXPECT_EQ(loaded, v);
  EXPECT_EQ(loaded.id("[PAD]"), Vocab::kPad);
  EXPECT_THROW(Vocab(std::vector<std::string>{"a", "b", "c"}), VocabError);
  EXPECT_THROW(Vocab(std::vector<std::string>{"<s>", "[PAD]", "[UNK]", "a", "a"}), VocabError);
}

TEST(LoadDataset, Sst2Csv) {
  const fs::path path = write_temp("sst2.csv", "text,label\n\"good, really\",Positive\nbad,Negative\n");
  const auto examples = load_dataset(path, DatasetFormat::Csv, task("sst2"));
  ASSERT_EQ(examples.size(), 2u);
  EXPECT_EQ(examples[0].text, "good, really");
  EXPECT_EQ(examples[0].label_id, 0);
  EXPECT_EQ(examples[1].label_id, 1);
  EXPECT_EQ(examples[1].label_word, "Negative");
}

TEST(LoadDataset, AgnewsJsonl) {
  const fs::path path = write_temp("ag.jsonl", "{\"text\": \"match report\", \"label\": \"Sports\"}\n{\"text\": \"x\", \"label\": 3}\n");
  const auto examples = load_dataset(path, DatasetFormat::Jsonl, task("agnews"));
  ASSERT_EQ(examples.size(), 2u);
  EXPECT_EQ(examples[0].label_id, 1);
  EXPECT_EQ(examples[1].label_word, "Technology");
  EXPECT_EQ(dataset_format_from_path(path), DatasetFormat::Jsonl);
}

TEST(LoadDataset, Errors) {
  EXPECT_THROW(load_dataset(write_temp("empty.csv", ""), DatasetFormat::Csv, task("sst2")), DataError);
  EXPECT_THROW(load_dataset(write_temp("empty.jsonl", ""), DatasetFormat::Jsonl, task("sst2")), DataError);
  const fs::path bad_label = write_temp("bad.csv", "text,label\nfine,Positive\nhmm,Neutral\n");
  EXPECT_NE(error_of([&] { load_dataset(bad_label, DatasetFormat::Csv, task("sst2")); }).find("line 3"),
            std::string::npos);
  const fs::path short_row = write_temp("short.csv", "text,label\nonly one field\n");
  EXPECT_NE(error_of([&] { load_dataset(short_row, DatasetFormat::Csv, task("sst2")); }).find("line 2"),
            std::string::npos);
  const fs::path bad_json = write_temp("bad.jsonl", "{\"text\": \"a\", \"label\": \"Positive\"}\n{oops\n");
  EXPECT_NE(error_of([&] { load_dataset(bad_json, DatasetFormat::Jsonl, task("sst2")); }).find("line 2"),
            std::string::npos);
  EXPECT_THROW(load_dataset(write_temp("q.csv", "text,label\n\"open,Positive\n"), DatasetFormat::Csv, task("sst2")),
               DataError);
  EXPECT_THROW(dataset_format_from_path("data.txt"), DataError);
}

TEST(Csv, QuotingRoundTrip) {
  const std::vector<std::string> fields = {"plain", "with,comma", "with \"quote\"", "line\nbreak", ""};
  std::string line;
  for (size_t i = 0; i < fields.size(); ++i) line += (i ? "," : "") + csv_field(fields[i]);
  const auto records = parse_csv(line + "\n");
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].second, fields);
}

TEST(FewShot, SizesAndDisjointness) {
  const Dataset data = generate_synthetic_task(3, task("synthetic"));
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const FewShotSplit s = sample_few_shot(data, seed, 4);
    ASSERT_EQ(s.demonstrations.size(), 4u);
    for (int64_t c = 0; c < 4; ++c) EXPECT_EQ(s.demonstrations[c].label_id, c);
    EXPECT_EQ(s.train.size(), 200u);
    EXPECT_EQ(s.val.size(), 1000u);
    EXPECT_EQ(s.test.size(), 1000u);
    std::set<int64_t> used(s.demonstration_indices.begin(), s.demonstration_indices.end());
    for (int64_t i : s.train_indices) EXPECT_TRUE(used.insert(i).second);
    for (int64_t i : s.val_indices) EXPECT_TRUE(used.insert(i).second);
    EXPECT_EQ(used.size(), 1204u);
    EXPECT_EQ(std::set<int64_t>(s.test_indices.begin(), s.test_indices.end()).size(), 1000u);
  }
}

TEST(FewShot, SmallTestPoolUsedWhole) {
  Dataset data = generate_synthetic_task(3, task("synthetic"), {}, {1500, 300});
  const FewShotSplit s = sample_few_shot(data, 1, 4);
  EXPECT_EQ(s.test.size(), 300u);
}

TEST(FewShot, InsufficientDataReportsCounts) {
  const Dataset data = generate_synthetic_task(3, task("synthetic"), {}, {500, 100});
  const std::string msg = error_of([&] { sample_few_shot(data, 0, 4); });
  EXPECT_NE(msg.find("1204"), std::string::npos) << msg;
  EXPECT_NE(msg.find("500"), std::string::npos) << msg;
}

TEST(FewShot, DeterministicAndSeedSensitive) {
  const Dataset data = generate_synthetic_task(9, task("synthetic"));
  const FewShotSplit a = sample_few_shot(data, 42, 4);
  const FewShotSplit b = sample_few_shot(data, 42, 4);
  EXPECT_EQ(a.train_indices, b.train_indices);
  EXPECT_EQ(a.val_indices, b.val_indices);
  EXPECT_EQ(a.demonstration_indices, b.demonstration_indices);

  std::set<std::vector<int64_t>> demo_sets;
  for (uint64_t seed : default_seeds()) demo_sets.insert(sample_few_shot(data, seed, 4).demonstration_indices);
  EXPECT_EQ(demo_sets.size(), 5u);
}

TEST(Synthetic, SignalTokensPresentAndDisjoint) {
  const SyntheticSpec spec;
  const Dataset data = generate_synthetic_task(5, task("synthetic"), spec);
  std::vector<std::set<std::string>> signals(4);
  for (int64_t c = 0; c < 4; ++c)
    for (int64_t i = 0; i < spec.signal_per_class; ++i) signals[c].insert(synthetic_signal_token(c, i));
  for (const auto& pool : {data.train, data.test}) {
    for (const LabeledExample& ex : pool) {
      bool has_own = false;
      for (const std::string& tok : tokenize(ex.text)) {
        has_own = has_own || signals[ex.label_id].contains(tok);
        for (int64_t c = 0; c < 4; ++c) {
          if (c != ex.label_id) EXPECT_FALSE(signals[c].contains(tok)) << ex.text;
        }
      }
      EXPECT_TRUE(has_own) << ex.text;
      EXPECT_EQ(ex.label_word, task("synthetic").label_words[ex.label_id]);
    }
  }
}

TEST(Synthetic, CountingClassifierOracle) {
  const Dataset data = generate_synthetic_task(6, task("synthetic"));
  // Per-class token counts from the training pool, then argmax of summed counts.
  std::map<std::string, std::vector<double>> counts;
  std::vector<double> class_totals(4, 0.0);
  for (const LabeledExample& ex : data.train) {
    for (const std::string& tok : tokenize(ex.text)) {
      auto& row = counts.try_emplace(tok, std::vector<double>(4, 0.0)).first->second;
      row[ex.label_id] += 1.0;
      class_totals[ex.label_id] += 1.0;
    }
  }
  int64_t correct = 0;
  for (const LabeledExample& ex : data.test) {
    std::vector<double> score(4, 0.0);
    for (const std::string& tok : tokenize(ex.text)) {
      auto it = counts.find(tok);
      if (it == counts.end()) continue;
      for (int64_t c = 0; c < 4; ++c) score[c] += std::log((it->second[c] + 1.0) / (class_totals[c] + counts.size()));
    }
    correct += std::max_element(score.begin(), score.end()) - score.begin() == ex.label_id;
  }
  EXPECT_GE(static_cast<double>(correct) / data.test.size(), 0.99);
}

TEST(Synthetic, Deterministic) {
  const Dataset a = generate_synthetic_task(8, task("synthetic"));
  const Dataset b = generate_synthetic_task(8, task("synthetic"));
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(a.train, generate_synthetic_task(9, task("synthetic")).train);
  const SyntheticSizes sizes;
  EXPECT_EQ(static_cast<int64_t>(a.train.size()), sizes.train);
  EXPECT_EQ(static_cast<int64_t>(a.test.size()), sizes.test);
}

TEST(Synthetic, PretrainingCorpusUsesLexicon) {
  const SyntheticSpec spec;
  const auto lexicon = synthetic_lexicon(task("synthetic"), spec);
  const std::set<std::string> known(lexicon.begin(), lexicon.end());
  const auto corpus = synthetic_pretraining_corpus(1, task("synthetic"), 50, spec);
  ASSERT_EQ(corpus.size(), 50u);
  std::vector<std::string> all_tokens;
  const Vocab vocab = build_vocab(corpus, 10000);
  for (const std::string& doc : corpus) {
    for (const std::string& tok : tokenize(doc)) {
      if (!known.contains(tok)) all_tokens.push_back(tok);
    }
  }
  // Everything else comes from the prompt template and the label words.
  const std::string pattern = task("synthetic").prompt.input_prefix + task("synthetic").prompt.answer_prefix;
  auto template_tokens = tokenize(pattern);
  for (const std::string& word : task("synthetic").label_words) template_tokens.push_back(word);
  for (const std::string& tok : all_tokens) {
    EXPECT_NE(std::find(template_tokens.begin(), template_tokens.end(), tok), template_tokens.end()) << tok;
  }
  EXPECT_GT(vocab.size(), 3);
}
