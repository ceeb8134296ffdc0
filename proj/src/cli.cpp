#include "layerslim/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "json.hpp"
#include "layerslim/checkpoint.hpp"
#include "layerslim/data.hpp"
#include "layerslim/errors.hpp"
#include "layerslim/experiment.hpp"
#include "layerslim/surgery.hpp"
#include "layerslim/task.hpp"
#include "layerslim/tokenizer.hpp"
#include "layerslim/training.hpp"

namespace layerslim {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void log_event(std::ostream& log, const std::string& event, json fields = json::object()) {
  fields["event"] = event;
  log << fields.dump() << '\n';
  log.flush();
}

void check_keys(const json& doc, const std::set<std::string>& allowed, const std::string& section) {
  if (!doc.is_object()) throw ConfigError("runfile section '" + section + "' must be a JSON object");
  for (const auto& [key, _] : doc.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("runfile: unknown key '" + (section.empty() ? key : section + "." + key) + "'");
    }
  }
}

template <typename T>
T field(const json& doc, const char* key, T fallback, const std::string& section) {
  if (!doc.contains(key)) return fallback;
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("runfile: '" + section + "." + key + "' has the wrong type");
  }
}

struct PretrainSettings {
  PretrainConfig config;
  uint64_t init_seed = 0;
  int64_t documents = 3000;
  int64_t vocab_size = 2000;
  std::optional<fs::path> corpus;
};

// Everything a command may need, validated before any computation starts.
struct RunFile {
  std::string task = "synthetic";
  std::optional<fs::path> templates;
  std::optional<fs::path> train_data;
  std::optional<fs::path> test_data;
  uint64_t synthetic_seed = 1;
  SyntheticSpec synthetic;
  SyntheticSizes synthetic_sizes;
  json model = json::object();
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> vocab;
  PretrainSettings pretrain;
  TrainConfig train;
  std::vector<int64_t> layer_counts;
  std::vector<Paradigm> paradigms{Paradigm::PromptLM, Paradigm::VanillaCLS, Paradigm::PromptCLS};
  std::vector<uint64_t> seeds = default_seeds();
  int64_t threads = 1;
  SplitSizes split;
  fs::path output = "layerslim-out";
};

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

// "a.b.c=value": value is parsed as JSON, or taken as a string when that fails.
void apply_override(json& doc, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &doc;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) path.push_back(part);
  for (size_t i = 0; i + 1 < path.size(); ++i) {
    if (!node->contains(path[i])) (*node)[path[i]] = json::object();
    node = &(*node)[path[i]];
    if (!node->is_object()) throw ConfigError("--set " + key + ": '" + path[i] + "' is not a section");
  }
  (*node)[path.back()] = value;
}

RunFile parse_runfile(const json& doc, const fs::path& base) {
  check_keys(doc, {"task", "templates", "data", "synthetic", "model", "checkpoint", "vocab", "pretrain", "train",
                   "grid", "split", "output"},
             "");
  RunFile rf;
  rf.task = field<std::string>(doc, "task", rf.task, "");
  if (doc.contains("templates")) rf.templates = resolve(base, field<std::string>(doc, "templates", "", ""));
  if (doc.contains("data")) {
    const json& d = doc["data"];
    check_keys(d, {"train", "test"}, "data");
    if (!d.contains("train") || !d.contains("test")) throw ConfigError("runfile: data needs both train and test");
    rf.train_data = resolve(base, field<std::string>(d, "train", "", "data"));
    rf.test_data = resolve(base, field<std::string>(d, "test", "", "data"));
  }
  if (doc.contains("synthetic")) {
    const json& s = doc["synthetic"];
    check_keys(s, {"seed", "noise_vocab", "signal_per_class", "text_length", "signal_per_example", "train", "test"},
               "synthetic");
    rf.synthetic_seed = field<uint64_t>(s, "seed", rf.synthetic_seed, "synthetic");
    rf.synthetic.noise_vocab = field<int64_t>(s, "noise_vocab", rf.synthetic.noise_vocab, "synthetic");
    rf.synthetic.signal_per_class = field<int64_t>(s, "signal_per_class", rf.synthetic.signal_per_class, "synthetic");
    rf.synthetic.text_length = field<int64_t>(s, "text_length", rf.synthetic.text_length, "synthetic");
    rf.synthetic.signal_per_example =
        field<int64_t>(s, "signal_per_example", rf.synthetic.signal_per_example, "synthetic");
    rf.synthetic_sizes.train = field<int64_t>(s, "train", rf.synthetic_sizes.train, "synthetic");
    rf.synthetic_sizes.test = field<int64_t>(s, "test", rf.synthetic_sizes.test, "synthetic");
  }
  if (doc.contains("model")) {
    rf.model = doc["model"];
    check_keys(rf.model,
               {"vocab_size", "d_model", "n_heads", "n_layers", "d_ff", "max_seq_len", "head_type", "num_classes",
                "tie_lm_head"},
               "model");
  }
  if (doc.contains("checkpoint")) rf.checkpoint = resolve(base, field<std::string>(doc, "checkpoint", "", ""));
  if (doc.contains("vocab")) rf.vocab = resolve(base, field<std::string>(doc, "vocab", "", ""));
  if (doc.contains("pretrain")) {
    const json& p = doc["pretrain"];
    check_keys(p, {"epochs", "learning_rate", "weight_decay", "grad_clip", "seed", "init_seed", "documents",
                   "vocab_size", "corpus"},
               "pretrain");
    PretrainSettings& s = rf.pretrain;
    s.config.epochs = field<int64_t>(p, "epochs", s.config.epochs, "pretrain");
    s.config.learning_rate = field<double>(p, "learning_rate", s.config.learning_rate, "pretrain");
    s.config.weight_decay = field<double>(p, "weight_decay", s.config.weight_decay, "pretrain");
    s.config.grad_clip = field<double>(p, "grad_clip", s.config.grad_clip, "pretrain");
    s.config.seed = field<uint64_t>(p, "seed", s.config.seed, "pretrain");
    s.init_seed = field<uint64_t>(p, "init_seed", s.init_seed, "pretrain");
    s.documents = field<int64_t>(p, "documents", s.documents, "pretrain");
    s.vocab_size = field<int64_t>(p, "vocab_size", s.vocab_size, "pretrain");
    if (p.contains("corpus")) s.corpus = resolve(base, field<std::string>(p, "corpus", "", "pretrain"));
    if (s.config.epochs < 1) throw ConfigError("runfile: pretrain.epochs must be >= 1");
    if (s.documents < 1) throw ConfigError("runfile: pretrain.documents must be >= 1");
    if (s.vocab_size < 4) throw ConfigError("runfile: pretrain.vocab_size must be >= 4");
    if (!(s.config.learning_rate >= 0.0)) throw ConfigError("runfile: pretrain.learning_rate must be >= 0");
  }
  if (doc.contains("train")) rf.train = train_config_from_json(doc["train"]);
  if (doc.contains("grid")) {
    const json& g = doc["grid"];
    check_keys(g, {"layer_counts", "paradigms", "seeds", "threads"}, "grid");
    rf.layer_counts = field<std::vector<int64_t>>(g, "layer_counts", {}, "grid");
    if (g.contains("paradigms")) {
      rf.paradigms.clear();
      for (const std::string& name : field<std::vector<std::string>>(g, "paradigms", {}, "grid")) {
        rf.paradigms.push_back(paradigm_from_string(name));
      }
    }
    rf.seeds = field<std::vector<uint64_t>>(g, "seeds", rf.seeds, "grid");
    rf.threads = field<int64_t>(g, "threads", rf.threads, "grid");
    if (rf.threads < 1) throw ConfigError("runfile: grid.threads must be >= 1");
  }
  if (doc.contains("split")) {
    const json& s = doc["split"];
    check_keys(s, {"train", "val", "test"}, "split");
    rf.split.train = field<int64_t>(s, "train", rf.split.train, "split");
    rf.split.val = field<int64_t>(s, "val", rf.split.val, "split");
    rf.split.test = field<int64_t>(s, "test", rf.split.test, "split");
  }
  if (doc.contains("output")) rf.output = resolve(base, field<std::string>(doc, "output", "", ""));
  return rf;
}

json read_json_file(const fs::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ConfigError(std::string("cannot open ") + what + " '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + " '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
}

TaskSpec resolve_task(const RunFile& rf) {
  TemplateRegistry registry = TemplateRegistry::builtin();
  if (rf.templates) registry.merge(TemplateRegistry::load(*rf.templates));
  if (!registry.contains(rf.task)) throw ConfigError("unknown task '" + rf.task + "'");
  return registry.get(rf.task);
}

Dataset load_task_dataset(const RunFile& rf, const TaskSpec& task) {
  if (rf.train_data) {
    Dataset ds;
    ds.train = load_dataset(*rf.train_data, dataset_format_from_path(*rf.train_data), task);
    ds.test = load_dataset(*rf.test_data, dataset_format_from_path(*rf.test_data), task);
    return ds;
  }
  if (rf.task != "synthetic") throw ConfigError("task '" + rf.task + "' needs data.train and data.test paths");
  return generate_synthetic_task(rf.synthetic_seed, task, rf.synthetic, rf.synthetic_sizes);
}

struct LoadedModel {
  TransformerModel model;
  Vocab vocab;
  json metadata;
};

LoadedModel load_model(const RunFile& rf) {
  if (!rf.checkpoint) throw ConfigError("no checkpoint given (runfile 'checkpoint' or --checkpoint)");
  json metadata;
  TransformerModel model = load_checkpoint(*rf.checkpoint, &metadata);
  std::optional<Vocab> vocab;
  if (rf.vocab) {
    vocab = Vocab::load(*rf.vocab);
  } else if (metadata.contains("vocab") && metadata["vocab"].is_array()) {
    vocab = Vocab(metadata["vocab"].get<std::vector<std::string>>());
  } else {
    throw ConfigError("checkpoint carries no vocabulary; give runfile 'vocab'");
  }
  if (vocab->size() != model.config().vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(vocab->size()) + " tokens, model expects " +
                      std::to_string(model.config().vocab_size));
  }
  return {std::move(model), std::move(*vocab), std::move(metadata)};
}

json base_metadata(const Vocab& vocab, const std::string& task) {
  return json{{"vocab", vocab.tokens()}, {"task", task}};
}

std::string report_lines(const ParamReport& r) {
  std::ostringstream s;
  s << "  layers:            " << r.layers_retained << "\n"
    << "  embeddings:        " << r.embeddings() << "\n"
    << "  per layer:         " << r.per_layer << "\n"
    << "  decoder layers:    " << r.layers_total << "\n"
    << "  final norm + head: " << r.final_norm + r.head << "\n"
    << "  total:             " << r.total_params << " (" << humanize_params(r.total_params) << ")\n";
  return s.str();
}

std::string format_percent(double v, int decimals) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_pretrain(const RunFile& rf, const std::optional<fs::path>& out_path, std::ostream& out, std::ostream& log) {
  const TaskSpec task = resolve_task(rf);
  std::vector<std::string> corpus;
  if (rf.pretrain.corpus) {
    std::ifstream in(*rf.pretrain.corpus);
    if (!in) throw ConfigError("cannot open corpus '" + rf.pretrain.corpus->string() + "'");
    for (std::string line; std::getline(in, line);) {
      if (!tokenize(line).empty()) corpus.push_back(line);
    }
    if (corpus.empty()) throw DataError("corpus '" + rf.pretrain.corpus->string() + "' has no text");
  } else if (rf.task == "synthetic") {
    corpus = synthetic_pretraining_corpus(rf.pretrain.config.seed, task, rf.pretrain.documents, rf.synthetic);
  } else {
    throw ConfigError("pretrain needs pretrain.corpus for task '" + rf.task + "'");
  }

  Vocab vocab;
  if (rf.vocab) {
    vocab = Vocab::load(*rf.vocab);
  } else {
    std::vector<std::string> forced = task.label_words;
    for (const std::string& t : tokenize(task.prompt.input_prefix + " " + task.prompt.answer_prefix)) {
      forced.push_back(t);
    }
    if (rf.task == "synthetic") {
      for (const std::string& t : synthetic_lexicon(task, rf.synthetic)) forced.push_back(t);
    }
    vocab = build_vocab(corpus, rf.pretrain.vocab_size, forced);
  }
  for (const std::string& word : task.label_words) {
    for (const std::string& t : tokenize(word)) {
      if (!vocab.contains(t)) throw ConfigError("vocabulary lacks label-word token '" + t + "'");
    }
  }

  json model_doc = rf.model;
  if (!model_doc.contains("vocab_size")) model_doc["vocab_size"] = vocab.size();
  if (!model_doc.contains("head_type")) model_doc["head_type"] = "language_modeling";
  if (!model_doc.contains("num_classes")) model_doc["num_classes"] = 0;
  if (!model_doc.contains("tie_lm_head")) model_doc["tie_lm_head"] = true;
  const ModelConfig config = model_config_from_json(model_doc);
  if (config.vocab_size != vocab.size()) {
    throw ConfigError("model.vocab_size " + std::to_string(config.vocab_size) + " differs from the vocabulary's " +
                      std::to_string(vocab.size()));
  }
  if (config.head_type != HeadType::LanguageModeling) throw ConfigError("pretraining needs a language-modeling head");

  std::vector<std::vector<int32_t>> sequences;
  for (const std::string& doc : corpus) {
    std::vector<int32_t> ids = encode(vocab, doc);
    if (static_cast<int64_t>(ids.size()) > config.max_seq_len) ids.resize(static_cast<size_t>(config.max_seq_len));
    if (ids.size() >= 2) sequences.push_back(std::move(ids));
  }
  if (sequences.empty()) throw DataError("corpus yields no sequence of two or more tokens");

  TransformerModel model = init_weights(config, rf.pretrain.init_seed);
  log_event(log, "pretrain_start", {{"documents", sequences.size()}, {"vocab_size", vocab.size()},
                                    {"params", model.num_parameters()}});
  const PretrainHistory history = pretrain(model, sequences, rf.pretrain.config, [&](int64_t epoch, double loss, double) {
    log_event(log, "pretrain_epoch", {{"epoch", epoch}, {"loss", loss}});
  });

  const fs::path ckpt = out_path ? *out_path : rf.output / "pretrained.lslm";
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(model, ckpt, base_metadata(vocab, rf.task));
  write_text(rf.output / "pretrain_loss.json",
             json{{"initial_loss", history.initial_loss}, {"epoch_loss", history.epoch_loss}}.dump(2) + "\n");
  out << "pretrained " << config.n_layers << "-layer model (" << model.num_parameters() << " params, vocab "
      << vocab.size() << ")\n"
      << "loss: " << history.initial_loss << " -> " << history.epoch_loss.back() << "\n"
      << "checkpoint: " << ckpt.string() << "\n";
  return kExitOk;
}

int cmd_prune(const fs::path& in, int64_t keep, const fs::path& out_path, std::ostream& out, std::ostream& log) {
  const CheckpointInfo before = read_checkpoint_info(in);
  if (keep < 1 || keep > before.config.n_layers) {
    throw PruneError("--keep must be in [1, " + std::to_string(before.config.n_layers) + "], got " +
                     std::to_string(keep));
  }
  const CheckpointInfo after = prune_checkpoint(in, keep, out_path);
  const ParamReport rb = count_params(before.config);
  const ParamReport ra = count_params(after.config);
  const double reduction = reduction_percent(rb, ra);
  log_event(log, "prune", {{"before", to_json(rb)}, {"after", to_json(ra)}, {"reduction_percent", reduction}});
  out << "before:\n"
      << report_lines(rb) << "after:\n"
      << report_lines(ra) << "reduction: " << format_percent(reduction, 2) << "% (≈"
      << format_percent(reduction, 0) << "%)\n"
      << "checkpoint: " << out_path.string() << "\n";
  return kExitOk;
}

struct CellInputs {
  TransformerModel model;
  FewShotSplit split;
};

CellInputs prepare_cell(const TransformerModel& base, int64_t layers, Paradigm paradigm, uint64_t seed,
                        const Dataset& dataset, const TaskSpec& task, const SplitSizes& sizes) {
  if (layers < 1 || layers > base.n_layers()) {
    throw ConfigError("layers must be in [1, " + std::to_string(base.n_layers()) + "], got " + std::to_string(layers));
  }
  TransformerModel model = drop_top_layers(base, base.n_layers() - layers);
  if (!uses_lm_head(paradigm) && model.config().head_type == HeadType::LanguageModeling) {
    model = with_classification_head(model, task.num_classes());
  }
  return {std::move(model), sample_few_shot(dataset, seed, task.num_classes(), sizes)};
}

int cmd_finetune(const RunFile& rf, std::optional<int64_t> layers, const std::optional<fs::path>& out_path,
                 std::ostream& out, std::ostream& log) {
  const TaskSpec task = resolve_task(rf);
  const Dataset dataset = load_task_dataset(rf, task);
  LoadedModel loaded = load_model(rf);
  const TaskContext ctx(task, loaded.vocab);
  CellInputs cell = prepare_cell(loaded.model, layers.value_or(loaded.model.n_layers()), rf.train.paradigm,
                                 rf.train.seed, dataset, task, rf.split);
  FinetuneResult result = finetune(cell.model, cell.split, rf.train, ctx, [&](int64_t epoch, double loss, double acc) {
    log_event(log, "epoch", {{"epoch", epoch}, {"train_loss", loss}, {"val_accuracy", acc}});
  });
  const double test_acc =
      evaluate_accuracy(result.best_model, cell.split.test, cell.split.demonstrations, rf.train.paradigm, ctx);

  json metadata = base_metadata(loaded.vocab, rf.task);
  metadata["paradigm"] = to_string(rf.train.paradigm);
  metadata["seed"] = rf.train.seed;
  const fs::path ckpt = out_path ? *out_path : rf.output / "finetuned.lslm";
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(result.best_model, ckpt, metadata);
  json history = to_json(result.history);
  history["test_accuracy"] = test_acc;
  history["train_config"] = to_json(rf.train);
  write_text(rf.output / "history.json", history.dump(2) + "\n");
  out << to_string(rf.train.paradigm) << " on " << rf.task << ", " << result.best_model.n_layers() << " layers, seed "
      << rf.train.seed << "\n"
      << "best epoch " << result.history.best_epoch << " of " << result.history.epochs_run()
      << ", val accuracy " << format_percent(100.0 * result.history.best_val_accuracy, 2) << "%\n"
      << "test accuracy " << format_percent(100.0 * test_acc, 2) << "%\n"
      << "checkpoint: " << ckpt.string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const RunFile& rf, std::optional<std::string> paradigm_flag, std::optional<uint64_t> seed_flag,
                 std::ostream& out, std::ostream& log) {
  const TaskSpec task = resolve_task(rf);
  const Dataset dataset = load_task_dataset(rf, task);
  LoadedModel loaded = load_model(rf);
  Paradigm paradigm = rf.train.paradigm;
  if (paradigm_flag) {
    paradigm = paradigm_from_string(*paradigm_flag);
  } else if (loaded.metadata.contains("paradigm")) {
    paradigm = paradigm_from_string(loaded.metadata["paradigm"].get<std::string>());
  }
  uint64_t seed = rf.train.seed;
  if (seed_flag) {
    seed = *seed_flag;
  } else if (loaded.metadata.contains("seed")) {
    seed = loaded.metadata["seed"].get<uint64_t>();
  }
  const TaskContext ctx(task, loaded.vocab);
  const FewShotSplit split = sample_few_shot(dataset, seed, task.num_classes(), rf.split);
  const double acc = evaluate_accuracy(loaded.model, split.test, split.demonstrations, paradigm, ctx);
  log_event(log, "evaluate", {{"paradigm", to_string(paradigm)}, {"seed", seed}, {"accuracy", acc},
                              {"examples", split.test.size()}});
  out << "test accuracy " << format_percent(100.0 * acc, 2) << "% over " << split.test.size() << " examples ("
      << to_string(paradigm) << ", seed " << seed << ")\n";
  return kExitOk;
}

std::string render_tables(const ExperimentResult& result) {
  std::string md;
  for (Paradigm p : result.paradigms()) {
    md += "## " + series_label(p) + " (" + to_string(p) + ")\n\n" + render_table(result, p).markdown + "\n";
  }
  return md;
}

void write_reports(const ExperimentResult& result, const fs::path& dir) {
  write_text(dir / "table.md", render_tables(result));
  write_text(dir / "plot.tsv", emit_plot_data(result));
}

int cmd_grid(const RunFile& rf, std::ostream& out, std::ostream& log) {
  const TaskSpec task = resolve_task(rf);
  const Dataset dataset = load_task_dataset(rf, task);
  LoadedModel loaded = load_model(rf);
  ExperimentGrid grid;
  grid.layer_counts = rf.layer_counts.empty() ? std::vector<int64_t>{loaded.model.n_layers()} : rf.layer_counts;
  grid.paradigms = rf.paradigms;
  grid.seeds = rf.seeds;
  grid.task = rf.task;
  grid.validate();
  const TaskContext ctx(task, loaded.vocab);
  GridOptions options;
  options.split_sizes = rf.split;
  options.threads = std::min(rf.threads, thread_limit(rf.threads));
  options.on_cell = [&](const CellResult& c) {
    json fields{{"layers", c.layers}, {"paradigm", to_string(c.paradigm)}, {"seed", c.seed}, {"ok", c.ok}};
    if (c.ok) {
      fields["accuracy"] = c.accuracy;
      fields["epochs"] = c.history.epochs_run();
    } else {
      fields["error"] = c.error;
    }
    log_event(log, "cell", fields);
  };
  log_event(log, "grid_start", {{"cells", grid.cell_count()}, {"threads", options.threads}});
  const ExperimentResult result = run_grid(grid, loaded.model, dataset, ctx, rf.train, options);

  fs::create_directories(rf.output / "histories");
  {
    std::ostringstream csv;
    write_results_csv(result, csv);
    write_text(rf.output / "results.csv", csv.str());
  }
  for (const CellResult& c : result.cells) {
    if (!c.ok) continue;
    const std::string name = series_label(c.paradigm) + "_L" + std::to_string(c.layers) + "_s" +
                             std::to_string(c.seed) + ".json";
    write_text(rf.output / "histories" / name, to_json(c.history).dump(2) + "\n");
  }
  write_reports(result, rf.output);
  out << render_tables(result);
  const int64_t failed = result.failed_count();
  out << result.cells.size() - static_cast<size_t>(failed) << " of " << result.cells.size() << " cells succeeded; "
      << "results in " << rf.output.string() << "\n";
  return failed == static_cast<int64_t>(result.cells.size()) ? kExitGridFailed : kExitOk;
}

int cmd_report(const fs::path& results, const std::optional<fs::path>& out_dir, std::ostream& out) {
  std::ifstream in(results, std::ios::binary);
  if (!in) throw ConfigError("cannot open results '" + results.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const ExperimentResult result = read_results_csv(buf.str());
  if (result.cells.empty()) throw DataError("results '" + results.string() + "' has no cells");
  write_reports(result, out_dir ? *out_dir : results.parent_path());
  out << render_tables(result);
  return kExitOk;
}

int cmd_import(const fs::path& archive, const std::optional<fs::path>& mapping_path, int64_t n_heads,
               const std::optional<fs::path>& vocab_path, const fs::path& out_path, std::ostream& out,
               std::ostream& log) {
  const NameMapping mapping = mapping_path ? load_name_mapping(*mapping_path) : NameMapping{};
  std::optional<Vocab> vocab;
  if (vocab_path) vocab = Vocab::load(*vocab_path);
  ImportResult imported = import_external(archive, mapping, n_heads);
  json metadata = json::object();
  if (vocab) {
    if (vocab->size() != imported.model.config().vocab_size) {
      throw ConfigError("vocabulary has " + std::to_string(vocab->size()) + " tokens, archive embeds " +
                        std::to_string(imported.model.config().vocab_size));
    }
    metadata["vocab"] = vocab->tokens();
  }
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  save_checkpoint(imported.model, out_path, metadata);
  log_event(log, "import", {{"ignored", imported.ignored}, {"params", imported.model.num_parameters()}});
  for (const std::string& name : imported.ignored) out << "ignored unmapped tensor: " << name << "\n";
  out << "imported " << imported.model.n_layers() << "-layer model, " << imported.model.num_parameters()
      << " params (" << humanize_params(imported.model.num_parameters()) << ")\n"
      << "checkpoint: " << out_path.string() << "\n";
  return kExitOk;
}

struct RunfileOptions {
  std::string runfile;
  std::vector<std::string> sets;
  std::string output;
  std::string checkpoint;
  std::string task;
};

void add_runfile_options(CLI::App* cmd, RunfileOptions& o) {
  cmd->add_option("-r,--runfile", o.runfile, "JSON runfile")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.sets, "Override a runfile key, e.g. train.max_epochs=5");
  cmd->add_option("-o,--output", o.output, "Output directory");
  cmd->add_option("-c,--checkpoint", o.checkpoint, "Model checkpoint");
  cmd->add_option("--task", o.task, "Task id");
}

RunFile build_runfile(const RunfileOptions& o, const std::vector<std::string>& extra_sets) {
  json doc = json::object();
  fs::path base;
  if (!o.runfile.empty()) {
    doc = read_json_file(o.runfile, "runfile");
    if (!doc.is_object()) throw ConfigError("runfile must be a JSON object");
    base = fs::path(o.runfile).parent_path();
  }
  for (const std::string& s : o.sets) apply_override(doc, s);
  for (const std::string& s : extra_sets) apply_override(doc, s);
  RunFile rf = parse_runfile(doc, base);
  if (!o.output.empty()) rf.output = o.output;
  if (!o.checkpoint.empty()) rf.checkpoint = fs::path(o.checkpoint);
  if (!o.task.empty()) rf.task = o.task;
  return rf;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& log) {
  CLI::App app{"Layer pruning and few-shot fine-tuning of decoder-only transformers", "layerslim"};
  app.require_subcommand(1);

  RunfileOptions pre_opts;
  std::string pre_out;
  auto* pre = app.add_subcommand("pretrain", "Pretrain a toy language model");
  add_runfile_options(pre, pre_opts);
  pre->add_option("--out", pre_out, "Checkpoint path (default <output>/pretrained.lslm)");

  std::string prune_in, prune_out;
  int64_t keep = 0;
  auto* prune = app.add_subcommand("prune", "Keep the bottom N decoder layers of a checkpoint");
  prune->add_option("--in", prune_in, "Input checkpoint")->required()->check(CLI::ExistingFile);
  prune->add_option("--keep", keep, "Layers to keep")->required();
  prune->add_option("--out", prune_out, "Output checkpoint")->required();

  RunfileOptions ft_opts;
  std::optional<int64_t> ft_layers;
  std::string ft_out, ft_paradigm;
  std::optional<uint64_t> ft_seed;
  auto* ft = app.add_subcommand("finetune", "Fine-tune one (layers, paradigm, seed) cell");
  add_runfile_options(ft, ft_opts);
  ft->add_option("--layers", ft_layers, "Prune to this many layers first");
  ft->add_option("--paradigm", ft_paradigm, "PromptLM, VanillaCLS or PromptCLS");
  ft->add_option("--seed", ft_seed, "Run seed");
  ft->add_option("--out", ft_out, "Checkpoint path (default <output>/finetuned.lslm)");

  RunfileOptions ev_opts;
  std::optional<std::string> ev_paradigm;
  std::optional<uint64_t> ev_seed;
  auto* ev = app.add_subcommand("evaluate", "Test accuracy of a checkpoint");
  add_runfile_options(ev, ev_opts);
  ev->add_option("--paradigm", ev_paradigm, "PromptLM, VanillaCLS or PromptCLS");
  ev->add_option("--seed", ev_seed, "Seed of the few-shot split");

  RunfileOptions grid_opts;
  std::optional<int64_t> grid_threads;
  auto* grid = app.add_subcommand("grid", "Run a layers x paradigms x seeds grid");
  add_runfile_options(grid, grid_opts);
  grid->add_option("--threads", grid_threads, "Parallel cells");

  std::string report_in, report_out;
  auto* report = app.add_subcommand("report", "Render table.md and plot.tsv from results.csv");
  report->add_option("--results", report_in, "results.csv")->required()->check(CLI::ExistingFile);
  report->add_option("-o,--output", report_out, "Output directory (default: next to results.csv)");

  std::string imp_archive, imp_mapping, imp_vocab, imp_out;
  int64_t imp_heads = 0;
  auto* imp = app.add_subcommand("import", "Convert a safetensors archive into a checkpoint");
  imp->add_option("--archive", imp_archive, "safetensors file")->required()->check(CLI::ExistingFile);
  imp->add_option("--mapping", imp_mapping, "JSON {external: internal} name map")->check(CLI::ExistingFile);
  imp->add_option("--n-heads", imp_heads, "Attention heads (default: archive metadata)");
  imp->add_option("--vocab", imp_vocab, "Vocabulary file, one token per line")->check(CLI::ExistingFile);
  imp->add_option("--out", imp_out, "Output checkpoint")->required();

  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, log);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*pre) {
      return cmd_pretrain(build_runfile(pre_opts, {}), pre_out.empty() ? std::nullopt : std::optional<fs::path>(pre_out),
                          out, log);
    }
    if (*prune) return cmd_prune(prune_in, keep, prune_out, out, log);
    if (*ft) {
      std::vector<std::string> sets;
      if (!ft_paradigm.empty()) sets.push_back("train.paradigm=\"" + ft_paradigm + "\"");
      if (ft_seed) sets.push_back("train.seed=" + std::to_string(*ft_seed));
      return cmd_finetune(build_runfile(ft_opts, sets), ft_layers,
                          ft_out.empty() ? std::nullopt : std::optional<fs::path>(ft_out), out, log);
    }
    if (*ev) return cmd_evaluate(build_runfile(ev_opts, {}), ev_paradigm, ev_seed, out, log);
    if (*grid) {
      std::vector<std::string> sets;
      if (grid_threads) sets.push_back("grid.threads=" + std::to_string(*grid_threads));
      return cmd_grid(build_runfile(grid_opts, sets), out, log);
    }
    if (*report) {
      return cmd_report(report_in, report_out.empty() ? std::nullopt : std::optional<fs::path>(report_out), out);
    }
    if (*imp) {
      return cmd_import(imp_archive, imp_mapping.empty() ? std::nullopt : std::optional<fs::path>(imp_mapping),
                        imp_heads, imp_vocab.empty() ? std::nullopt : std::optional<fs::path>(imp_vocab), imp_out,
                        out, log);
    }
  } catch (const NumericError& e) {
    log_event(log, "error", {{"kind", "numeric"}, {"message", e.what()}});
    out << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    log_event(log, "error", {{"kind", "config"}, {"message", e.what()}});
    out << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const json::exception& e) {
    log_event(log, "error", {{"kind", "config"}, {"message", e.what()}});
    out << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    log_event(log, "error", {{"kind", "internal"}, {"message", e.what()}});
    out << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitConfig;
}

}  // namespace layerslim
