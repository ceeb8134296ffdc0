#include "layerslim/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "layerslim/errors.hpp"
#include "layerslim/surgery.hpp"

namespace layerslim {

namespace {

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string percent(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

template <typename T>
T parse_number(const std::string& text, const char* what, int64_t line) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw DataError("line " + std::to_string(line) + ": bad " + what + " '" + text + "'");
  }
  return value;
}

// Canonical series order used by the plot file.
int series_rank(Paradigm p) {
  switch (p) {
    case Paradigm::PromptLM: return 0;
    case Paradigm::PromptCLS: return 1;
    case Paradigm::VanillaCLS: return 2;
  }
  return 3;
}

}  // namespace

std::vector<uint64_t> default_seeds() { return {0, 42, 421, 520, 1218}; }

void ExperimentGrid::validate() const {
  if (layer_counts.empty()) throw ConfigError("grid needs at least one layer count");
  if (paradigms.empty()) throw ConfigError("grid needs at least one paradigm");
  if (seeds.empty()) throw ConfigError("grid needs at least one seed");
  for (int64_t n : layer_counts) {
    if (n < 1) throw ConfigError("layer counts must be >= 1, got " + std::to_string(n));
  }
  if (std::set<int64_t>(layer_counts.begin(), layer_counts.end()).size() != layer_counts.size()) {
    throw ConfigError("layer counts must be distinct");
  }
  if (std::set<Paradigm>(paradigms.begin(), paradigms.end()).size() != paradigms.size()) {
    throw ConfigError("paradigms must be distinct");
  }
  if (std::set<uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
}

int64_t ExperimentGrid::cell_count() const {
  return static_cast<int64_t>(layer_counts.size() * paradigms.size() * seeds.size());
}

std::vector<int64_t> ExperimentResult::layer_counts() const {
  std::vector<int64_t> out;
  for (const CellResult& c : cells) {
    if (std::find(out.begin(), out.end(), c.layers) == out.end()) out.push_back(c.layers);
  }
  return out;
}

std::vector<Paradigm> ExperimentResult::paradigms() const {
  std::vector<Paradigm> out;
  for (const CellResult& c : cells) {
    if (std::find(out.begin(), out.end(), c.paradigm) == out.end()) out.push_back(c.paradigm);
  }
  return out;
}

std::optional<double> ExperimentResult::mean(int64_t layers, Paradigm paradigm) const {
  double sum = 0.0;
  int64_t count = 0;
  for (const CellResult& c : cells) {
    if (c.ok && c.layers == layers && c.paradigm == paradigm) {
      sum += c.accuracy;
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

std::optional<int64_t> ExperimentResult::params(int64_t layers, Paradigm paradigm) const {
  for (const CellResult& c : cells) {
    if (c.layers == layers && c.paradigm == paradigm && c.params > 0) return c.params;
  }
  return std::nullopt;
}

int64_t ExperimentResult::failed_count() const {
  return std::count_if(cells.begin(), cells.end(), [](const CellResult& c) { return !c.ok; });
}

int64_t thread_limit(int64_t fallback) {
  const char* env = std::getenv("LAYERSLIM_THREADS");
  if (env == nullptr) return fallback;
  int64_t value = 0;
  const std::string text(env);
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || value < 1) return fallback;
  return value;
}

ExperimentResult run_grid(const ExperimentGrid& grid, const TransformerModel& base, const Dataset& dataset,
                          const TaskContext& ctx, const TrainConfig& train, const GridOptions& options) {
  grid.validate();
  train.validate();
  if (!grid.task.empty() && grid.task != ctx.task.name) {
    throw ConfigError("grid task '" + grid.task + "' does not match task context '" + ctx.task.name + "'");
  }
  if (base.config().head_type != HeadType::LanguageModeling) {
    throw ConfigError("base model for a grid must have a language-modeling head");
  }
  for (int64_t n : grid.layer_counts) {
    if (n > base.n_layers()) {
      throw ConfigError("layer count " + std::to_string(n) + " exceeds the base model's " +
                        std::to_string(base.n_layers()) + " layers");
    }
  }
  if (options.threads < 1) throw ConfigError("threads must be >= 1");

  ExperimentResult result;
  result.task = ctx.task.name;
  for (int64_t n : grid.layer_counts) {
    for (Paradigm p : grid.paradigms) {
      for (uint64_t s : grid.seeds) {
        CellResult cell;
        cell.layers = n;
        cell.paradigm = p;
        cell.seed = s;
        result.cells.push_back(cell);
      }
    }
  }

  std::mutex report_mutex;
  auto run_cell = [&](CellResult& cell) {
    try {
      TransformerModel model = drop_top_layers(base, base.n_layers() - cell.layers);
      if (!uses_lm_head(cell.paradigm)) model = with_classification_head(model, ctx.task.num_classes());
      cell.params = count_params(model).total_params;
      const FewShotSplit split = sample_few_shot(dataset, cell.seed, ctx.task.num_classes(), options.split_sizes);
      TrainConfig config = train;
      config.seed = cell.seed;
      config.paradigm = cell.paradigm;
      FinetuneResult tuned = finetune(model, split, config, ctx);
      cell.accuracy = evaluate_accuracy(tuned.best_model, split.test, split.demonstrations, cell.paradigm, ctx);
      cell.history = std::move(tuned.history);
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.accuracy = 0.0;
      cell.error = e.what();
    }
    if (options.on_cell) {
      std::lock_guard lock(report_mutex);
      options.on_cell(cell);
    }
  };

  const auto workers = static_cast<size_t>(std::min<int64_t>(options.threads, grid.cell_count()));
  if (workers <= 1) {
    for (CellResult& cell : result.cells) run_cell(cell);
    return result;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (size_t i = next++; i < result.cells.size(); i = next++) run_cell(result.cells[i]);
    });
  }
  for (std::thread& t : pool) t.join();
  return result;
}

std::string humanize_params(int64_t params) {
  char buf[40];
  if (params >= 1'000'000'000) {
    std::snprintf(buf, sizeof buf, "%.1fB", static_cast<double>(params) / 1e9);
  } else if (params >= 1'000'000) {
    std::snprintf(buf, sizeof buf, "%lldM", static_cast<long long>(params / 1'000'000));
  } else {
    std::snprintf(buf, sizeof buf, "%lldK", static_cast<long long>(params / 1'000));
  }
  return buf;
}

RenderedTable render_table(std::span<const ExperimentResult> results, Paradigm paradigm) {
  std::vector<int64_t> layers;
  for (const ExperimentResult& r : results) {
    for (int64_t n : r.layer_counts()) {
      if (std::find(layers.begin(), layers.end(), n) == layers.end()) layers.push_back(n);
    }
  }
  std::sort(layers.begin(), layers.end(), std::greater<>());

  RenderedTable out;
  std::string md_header = "| n | Param |";
  std::string md_rule = "|---|---|";
  std::string csv_header = "n,params";
  for (const ExperimentResult& r : results) {
    md_header += " " + r.task + " |";
    md_rule += "---|";
    csv_header += "," + csv_field(r.task);
  }
  out.markdown = md_header + " Average |\n" + md_rule + "---|\n";
  out.csv = csv_header + ",average\n";

  for (int64_t n : layers) {
    std::optional<int64_t> params;
    double sum = 0.0;
    int64_t count = 0;
    std::string md_cells;
    std::string csv_cells;
    for (const ExperimentResult& r : results) {
      if (!params) params = r.params(n, paradigm);
      const std::optional<double> m = r.mean(n, paradigm);
      md_cells += " " + (m ? percent(*m) : std::string("failed")) + " |";
      csv_cells += "," + (m ? exact(*m) : std::string());
      if (m) {
        sum += *m;
        ++count;
      }
    }
    const std::optional<double> avg = count > 0 ? std::optional<double>(sum / static_cast<double>(count)) : std::nullopt;
    out.markdown += "| " + std::to_string(n) + " | " + (params ? humanize_params(*params) : std::string("?")) + " |" +
                    md_cells + " " + (avg ? percent(*avg) : std::string("failed")) + " |\n";
    out.csv += std::to_string(n) + "," + (params ? std::to_string(*params) : std::string()) + csv_cells + "," +
               (avg ? exact(*avg) : std::string()) + "\n";
  }
  return out;
}

RenderedTable render_table(const ExperimentResult& result, Paradigm paradigm) {
  return render_table(std::span<const ExperimentResult>(&result, 1), paradigm);
}

std::string emit_plot_data(const ExperimentResult& result, std::span<const Paradigm> paradigms) {
  if (paradigms.empty()) throw EvaluationError("plot data needs at least one paradigm");
  std::vector<Paradigm> series(paradigms.begin(), paradigms.end());
  std::sort(series.begin(), series.end(), [](Paradigm a, Paradigm b) { return series_rank(a) < series_rank(b); });
  series.erase(std::unique(series.begin(), series.end()), series.end());
  std::vector<int64_t> layers = result.layer_counts();
  std::sort(layers.begin(), layers.end());

  std::string out = "layers";
  for (Paradigm p : series) out += "\t" + series_label(p);
  out += "\n";
  for (int64_t n : layers) {
    out += std::to_string(n);
    for (Paradigm p : series) {
      const std::optional<double> m = result.mean(n, p);
      out += "\t" + (m ? exact(*m) : std::string("NA"));
    }
    out += "\n";
  }
  return out;
}

std::string emit_plot_data(const ExperimentResult& result) {
  const std::vector<Paradigm> paradigms = result.paradigms();
  return emit_plot_data(result, paradigms);
}

void write_results_csv(const ExperimentResult& result, std::ostream& out) {
  out << "task,paradigm,layers,seed,params,accuracy,status,error\n";
  for (const CellResult& c : result.cells) {
    out << csv_field(result.task) << ',' << to_string(c.paradigm) << ',' << c.layers << ',' << c.seed << ','
        << c.params << ',' << exact(c.accuracy) << ',' << (c.ok ? "ok" : "failed") << ',' << csv_field(c.error)
        << '\n';
  }
}

ExperimentResult read_results_csv(const std::string& content) {
  const auto records = parse_csv(content);
  const std::vector<std::string> header{"task", "paradigm", "layers", "seed", "params", "accuracy", "status", "error"};
  if (records.empty() || records.front().second != header) {
    throw DataError("results CSV must start with the header " + [&] {
      std::string h;
      for (const std::string& f : header) h += (h.empty() ? "" : ",") + f;
      return h;
    }());
  }
  ExperimentResult result;
  for (size_t i = 1; i < records.size(); ++i) {
    const auto& [line, f] = records[i];
    if (f.size() != header.size()) {
      throw DataError("line " + std::to_string(line) + ": expected " + std::to_string(header.size()) + " fields");
    }
    if (i == 1) {
      result.task = f[0];
    } else if (f[0] != result.task) {
      throw DataError("line " + std::to_string(line) + ": results CSV mixes tasks");
    }
    CellResult c;
    try {
      c.paradigm = paradigm_from_string(f[1]);
    } catch (const ConfigError& e) {
      throw DataError("line " + std::to_string(line) + ": " + e.what());
    }
    c.layers = parse_number<int64_t>(f[2], "layer count", line);
    c.seed = parse_number<uint64_t>(f[3], "seed", line);
    c.params = parse_number<int64_t>(f[4], "parameter count", line);
    c.accuracy = parse_number<double>(f[5], "accuracy", line);
    if (f[6] != "ok" && f[6] != "failed") throw DataError("line " + std::to_string(line) + ": bad status '" + f[6] + "'");
    c.ok = f[6] == "ok";
    c.error = f[7];
    result.cells.push_back(std::move(c));
  }
  return result;
}

}  // namespace layerslim
