#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mmtab/table.hpp"
#include "mmtab/types.hpp"

namespace mmtab {

enum class MetricKind { accuracy, auc, r2 };

const char* to_string(MetricKind kind);
MetricKind metric_from_string(const std::string& name);

// Benchmark binding: multiclass scores accuracy, binary AUC, regression R².
MetricKind metric_for(Task task);

// All three metrics are higher-better. preds: class probabilities for
// accuracy; positive-class score (single column, or column 1 of two) for AUC;
// point predictions for R².
double score(MetricKind kind, const PredictionMatrix& preds,
             const Eigen::VectorXd& y);

struct ResultRecord {
  std::string method;
  std::string dataset;
  double score = 0.0;
};

struct AggregateRow {
  std::string method;
  double avg = 0.0;
  double mrr = 0.0;
};

// avg = mean score per method; mrr = mean of 1/rank per dataset with rank 1
// best and ties sharing the mean of their positions. Every (method, dataset)
// cell must be present exactly once.
std::vector<AggregateRow> aggregate(const std::vector<ResultRecord>& results);

// Plain-text grid: one row per method, one column per dataset plus avg/mrr.
std::string render_results_table(const std::vector<ResultRecord>& results);

// Full pipeline behind one closure; codec maps target cells onto the same
// class order the prediction columns use.
struct PipelinePredictor {
  std::function<PredictionMatrix(const DataTable&)> predict;
  LabelCodec codec;
};

// score(intact) minus the mean score over `repeats` column shuffles. Cells
// move whole (a text field travels as one unit). `forced_permutation`, when
// given, replaces the random draw in every repeat.
double permutation_importance(const PipelinePredictor& predictor,
                              const DataTable& test, const std::string& column,
                              MetricKind kind, int repeats = 5,
                              std::uint64_t seed = 0,
                              const std::vector<int>* forced_permutation = nullptr);

}  // namespace mmtab
