#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmtab/ensemble.hpp"
#include "mmtab/featurize.hpp"
#include "mmtab/metrics.hpp"
#include "mmtab/models.hpp"
#include "mmtab/schema.hpp"
#include "mmtab/synth.hpp"
#include "mmtab/table.hpp"

namespace mmtab {

#ifndef MMTAB_VERSION
#define MMTAB_VERSION "0.1.0+unknown"
#endif
inline constexpr const char* kVersion = "mmtab " MMTAB_VERSION;

// The closed strategy set, in canonical order. Per-strategy model seeds mix
// the run seed with the canonical index, so a config listing a subset scores
// each strategy exactly as the full run would.
const std::vector<std::string>& strategy_ids();
bool is_strategy_id(const std::string& id);

struct DatasetConfig {
  std::string name;
  // Exactly one source: a train CSV (optionally with a test CSV) or an
  // inline synthetic spec.
  std::string train_csv;
  std::string test_csv;
  std::optional<SyntheticSpec> synthetic;
  std::string target;
  Task task = Task::binary;
  MetricKind metric = MetricKind::auc;  // must equal metric_for(task)
  std::map<std::string, Modality> type_overrides;
  double test_fraction = 0.2;  // test carve when no test CSV is given
};

struct RunConfig {
  std::vector<DatasetConfig> datasets;
  std::vector<std::string> strategies;  // default: all of strategy_ids()
  std::vector<std::uint64_t> seeds = {0};
  double validation_fraction = 0.1;
  FitOptions options;
  int ngram_cap = 512;
  int ngram_min_df = 2;
  int stack_folds = 5;
  bool save_models = true;  // per-cell manifests under <out>/models
};

// Throws Error on unknown strategy ids, task/metric mismatches, duplicate or
// sourceless datasets, and out-of-range fractions.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& config);
RunConfig load_run_config(const std::string& path);

// Train and test tables for one dataset: CSVs read with the configured type
// overrides, or the synthetic pair. Without a test CSV, a test split is
// carved with a fixed internal seed so every run seed scores the same rows.
struct LoadedDataset {
  DataTable train;
  DataTable test;
};
LoadedDataset load_dataset(const DatasetConfig& config);

// The shared-split contract: one train/validation split per (dataset, seed),
// reused by every strategy. Feature schema and standardization are fitted on
// the fit rows only; the label codec sees the full training table.
struct PreparedData {
  std::string dataset;
  std::uint64_t seed = 0;
  Task task = Task::binary;
  MetricKind metric = MetricKind::auc;
  SplitIndices split;  // into the loaded training table
  DataTable fit_raw, val_raw, test_raw;
  DataTable fit_tf, val_tf, test_tf;
  FeatureSchema schema;
  LabelCodec codec;
  Labels fit_labels, val_labels, test_labels;
  bool has_text = false;
  bool has_tabular = false;
  std::vector<std::string> warnings;

  // Fit context with the shared validation attached.
  FitContext context() const;
};

PreparedData prepare_data(const DatasetConfig& config,
                          const LoadedDataset& data, std::uint64_t seed,
                          double validation_fraction);

// A fitted strategy behind one closure: raw table in, predictions out. The
// closure owns every fitted artifact it needs.
struct FittedStrategy {
  std::function<PredictionMatrix(const DataTable& raw)> predict;
  std::vector<std::string> warnings;
  nlohmann::json detail;  // strategy-specific audit info (weights, folds, ...)
};

// Throws StrategySkip when the strategy cannot run on this data shape (for
// example a text strategy on a text-free table).
struct StrategySkip : Error {
  using Error::Error;
};

FittedStrategy fit_strategy(const std::string& id, const PreparedData& prep,
                            const RunConfig& config);

struct CellResult {
  std::string method;
  std::string dataset;
  std::uint64_t seed = 0;
  std::optional<double> score;
  std::string skip_reason;  // set when score is absent
  std::vector<std::string> warnings;
  nlohmann::json manifest;
};

// Fits and scores one (dataset, strategy, seed) cell.
CellResult run_cell(const std::string& strategy, const PreparedData& prep,
                    const DatasetConfig& dataset, const RunConfig& config);

struct BenchmarkResult {
  std::vector<CellResult> cells;          // dataset-major, strategy, then seed
  std::vector<ResultRecord> mean_scores;  // per (method, dataset), over seeds
  std::vector<std::string> errors;        // hard dataset errors
  int exit_code = 0;
};

// Executes every cell (up to `workers` at a time), then writes results.csv,
// results_per_seed.csv, results.txt, skipped.csv, manifest.json, and model
// manifests into out_dir. Hard dataset errors (unreadable CSV, unseen test
// label, empty split) give exit code 2; incompatible cells are skipped and
// the run continues.
BenchmarkResult run_benchmark(const RunConfig& config,
                              const std::string& out_dir, int workers = 1);

// Renders the table over the methods that scored on every dataset present in
// `records`; methods with missing cells are listed below the grid instead of
// silently defaulting.
std::string render_partial_results(const std::vector<ResultRecord>& records);

// Rebuilds the predictor a model manifest describes and reports the
// permutation importance of `column` measured on `table`.
double manifest_importance(const nlohmann::json& manifest,
                           const DataTable& table, const std::string& column,
                           int repeats = 5, std::uint64_t seed = 0);

}  // namespace mmtab
