#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "layerslim/data.hpp"
#include "layerslim/model.hpp"
#include "layerslim/training.hpp"

namespace layerslim {

std::vector<uint64_t> default_seeds();  // 0, 42, 421, 520, 1218

struct ExperimentGrid {
  std::vector<int64_t> layer_counts;
  std::vector<Paradigm> paradigms;
  std::vector<uint64_t> seeds = default_seeds();
  std::string task;

  // Non-empty axes, positive and distinct layer counts, distinct paradigms and seeds.
  void validate() const;
  int64_t cell_count() const;
};

struct CellResult {
  int64_t layers = 0;
  Paradigm paradigm = Paradigm::PromptLM;
  uint64_t seed = 0;
  int64_t params = 0;
  double accuracy = 0.0;
  bool ok = false;
  std::string error;     // diagnostic when !ok
  TrainHistory history;  // empty when loaded from CSV
};

struct ExperimentResult {
  std::string task;
  std::vector<CellResult> cells;  // grid order: layer count, paradigm, seed

  // Distinct values in first-appearance order.
  std::vector<int64_t> layer_counts() const;
  std::vector<Paradigm> paradigms() const;

  // Arithmetic mean over successful seeds in cell order; nullopt when none succeeded.
  std::optional<double> mean(int64_t layers, Paradigm paradigm) const;
  // Parameter count shared by the cells of a (layer count, paradigm) pair.
  std::optional<int64_t> params(int64_t layers, Paradigm paradigm) const;
  int64_t failed_count() const;
};

struct GridOptions {
  SplitSizes split_sizes;
  int64_t threads = 1;
  // Called once per finished cell, possibly from worker threads, serialized.
  std::function<void(const CellResult&)> on_cell;
};

// For each (layer count, paradigm, seed): prune the base model to that many
// layers, attach a zero-initialised classification head for CLS paradigms,
// draw the few-shot split for the seed, fine-tune, and measure test accuracy.
// A failing cell is recorded and the rest still run. Output order and values
// do not depend on the thread count.
ExperimentResult run_grid(const ExperimentGrid& grid, const TransformerModel& base, const Dataset& dataset,
                          const TaskContext& ctx, const TrainConfig& train, const GridOptions& options = {});

// LAYERSLIM_THREADS when set to a positive integer, else `fallback`.
int64_t thread_limit(int64_t fallback);

// 1.6B for counts of a billion and more; otherwise whole millions (819M),
// or whole thousands below a million (92K).
std::string humanize_params(int64_t params);

struct RenderedTable {
  std::string markdown;
  std::string csv;
};

// One row per layer count, descending: n | Param | one column per task | Average.
// Markdown shows accuracies in percent with 2 decimals; the CSV keeps exact
// mean accuracies as fractions so it re-parses to the same numbers.
RenderedTable render_table(std::span<const ExperimentResult> results, Paradigm paradigm);
RenderedTable render_table(const ExperimentResult& result, Paradigm paradigm);

// Tab-separated series, one column per paradigm (LM, P-CLS, CLS order),
// one row per layer count ascending; failed points are "NA".
std::string emit_plot_data(const ExperimentResult& result, std::span<const Paradigm> paradigms);
std::string emit_plot_data(const ExperimentResult& result);

// Cell-level CSV: task,paradigm,layers,seed,params,accuracy,status,error.
void write_results_csv(const ExperimentResult& result, std::ostream& out);
ExperimentResult read_results_csv(const std::string& content);

}  // namespace layerslim
