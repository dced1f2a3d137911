#include "mmtab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "mmtab/rng.hpp"

namespace mmtab {

const char* to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::accuracy: return "accuracy";
    case MetricKind::auc: return "auc";
    case MetricKind::r2: return "r2";
  }
  return "unknown";
}

MetricKind metric_from_string(const std::string& name) {
  if (name == "accuracy") return MetricKind::accuracy;
  if (name == "auc") return MetricKind::auc;
  if (name == "r2") return MetricKind::r2;
  throw Error("unknown metric: " + name);
}

MetricKind metric_for(Task task) {
  switch (task) {
    case Task::multiclass: return MetricKind::accuracy;
    case Task::binary: return MetricKind::auc;
    case Task::regression: return MetricKind::r2;
  }
  throw Error("unknown task");
}

namespace {

double accuracy_score(const PredictionMatrix& preds, const Eigen::VectorXd& y) {
  if (preds.rows() != y.size()) throw Error("accuracy: length mismatch");
  if (preds.rows() == 0) throw Error("accuracy: empty input");
  int hits = 0;
  for (Eigen::Index r = 0; r < preds.rows(); ++r) {
    Eigen::Index best = 0;
    if (preds.cols() == 1) {
      // Single positive-class probability column: threshold at one half.
      best = preds(r, 0) >= 0.5 ? 1 : 0;
    } else {
      preds.row(r).maxCoeff(&best);  // first maximal column wins ties
    }
    if (static_cast<double>(best) == y[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.rows());
}

// Mann-Whitney formulation with mid-ranks, so tied scores count half.
double auc_score(const PredictionMatrix& preds, const Eigen::VectorXd& y) {
  if (preds.rows() != y.size()) throw Error("auc: length mismatch");
  if (preds.cols() != 1 && preds.cols() != 2) {
    throw Error("auc: expected 1 score column or 2 probability columns");
  }
  const Eigen::Index score_col = preds.cols() == 2 ? 1 : 0;

  const Eigen::Index n = preds.rows();
  std::vector<std::pair<double, int>> scored(static_cast<std::size_t>(n));
  long long positives = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool positive = y[i] == 1.0;
    scored[static_cast<std::size_t>(i)] = {preds(i, score_col), positive ? 1 : 0};
    if (positive) ++positives;
  }
  const long long negatives = static_cast<long long>(n) - positives;
  if (positives == 0 || negatives == 0) {
    throw Error("auc: need at least one positive and one negative label");
  }

  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double positive_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < scored.size()) {
    std::size_t j = i;
    int tied_positives = 0;
    while (j < scored.size() && scored[j].first == scored[i].first) {
      tied_positives += scored[j].second;
      ++j;
    }
    const double mid_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    positive_rank_sum += mid_rank * tied_positives;
    i = j;
  }
  const double u = positive_rank_sum -
                   0.5 * static_cast<double>(positives) *
                       (static_cast<double>(positives) + 1.0);
  return u / (static_cast<double>(positives) * static_cast<double>(negatives));
}

double r2_score(const PredictionMatrix& preds, const Eigen::VectorXd& y) {
  if (preds.rows() != y.size()) throw Error("r2: length mismatch");
  if (preds.cols() != 1) throw Error("r2: expected a single prediction column");
  if (preds.rows() == 0) throw Error("r2: empty input");
  const double mean = y.mean();
  const double ss_tot = (y.array() - mean).square().sum();
  if (ss_tot == 0.0) throw Error("r2: labels are constant");
  const double ss_res = (preds.col(0).array() - y.array()).square().sum();
  return 1.0 - ss_res / ss_tot;
}

}  // namespace

double score(MetricKind kind, const PredictionMatrix& preds,
             const Eigen::VectorXd& y) {
  switch (kind) {
    case MetricKind::accuracy: return accuracy_score(preds, y);
    case MetricKind::auc: return auc_score(preds, y);
    case MetricKind::r2: return r2_score(preds, y);
  }
  throw Error("unknown metric");
}

namespace {

struct ResultGrid {
  std::vector<std::string> methods;   // first-appearance order
  std::vector<std::string> datasets;  // first-appearance order
  std::map<std::pair<std::string, std::string>, double> cells;
};

ResultGrid build_grid(const std::vector<ResultRecord>& results) {
  ResultGrid grid;
  std::set<std::string> method_seen, dataset_seen;
  for (const ResultRecord& record : results) {
    if (method_seen.insert(record.method).second) {
      grid.methods.push_back(record.method);
    }
    if (dataset_seen.insert(record.dataset).second) {
      grid.datasets.push_back(record.dataset);
    }
    const auto key = std::make_pair(record.method, record.dataset);
    if (grid.cells.count(key)) {
      throw Error("duplicate result for (" + record.method + ", " +
                  record.dataset + ")");
    }
    grid.cells[key] = record.score;
  }
  std::string holes;
  for (const std::string& method : grid.methods) {
    for (const std::string& dataset : grid.datasets) {
      if (!grid.cells.count({method, dataset})) {
        holes += " (" + method + ", " + dataset + ")";
      }
    }
  }
  if (!holes.empty()) throw Error("missing result cells:" + holes);
  return grid;
}

// Rank of each method on one dataset, 1 = best, ties share the mean position.
std::map<std::string, double> dataset_ranks(const ResultGrid& grid,
                                            const std::string& dataset) {
  std::vector<std::pair<double, std::string>> order;
  for (const std::string& method : grid.methods) {
    order.emplace_back(grid.cells.at({method, dataset}), method);
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::map<std::string, double> ranks;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && order[j].first == order[i].first) ++j;
    const double mean_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) ranks[order[k].second] = mean_rank;
    i = j;
  }
  return ranks;
}

}  // namespace

std::vector<AggregateRow> aggregate(const std::vector<ResultRecord>& results) {
  if (results.empty()) throw Error("aggregate: no results");
  const ResultGrid grid = build_grid(results);

  std::map<std::string, double> reciprocal_sum;
  for (const std::string& dataset : grid.datasets) {
    const std::map<std::string, double> ranks = dataset_ranks(grid, dataset);
    for (const auto& [method, rank] : ranks) reciprocal_sum[method] += 1.0 / rank;
  }

  std::vector<AggregateRow> rows;
  const double n_datasets = static_cast<double>(grid.datasets.size());
  for (const std::string& method : grid.methods) {
    AggregateRow row;
    row.method = method;
    double total = 0.0;
    for (const std::string& dataset : grid.datasets) {
      total += grid.cells.at({method, dataset});
    }
    row.avg = total / n_datasets;
    row.mrr = reciprocal_sum[method] / n_datasets;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string render_results_table(const std::vector<ResultRecord>& results) {
  const ResultGrid grid = build_grid(results);
  const std::vector<AggregateRow> rows = aggregate(results);

  std::vector<std::string> headers = {"method"};
  headers.insert(headers.end(), grid.datasets.begin(), grid.datasets.end());
  headers.push_back("avg");
  headers.push_back("mrr");

  auto fmt = [](double v) {
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%.3f", v);
    return std::string(buffer);
  };

  std::vector<std::vector<std::string>> body;
  for (std::size_t m = 0; m < grid.methods.size(); ++m) {
    std::vector<std::string> line = {grid.methods[m]};
    for (const std::string& dataset : grid.datasets) {
      line.push_back(fmt(grid.cells.at({grid.methods[m], dataset})));
    }
    line.push_back(fmt(rows[m].avg));
    line.push_back(fmt(rows[m].mrr));
    body.push_back(std::move(line));
  }

  std::vector<std::size_t> widths(headers.size());
  for (std::size_t c = 0; c < headers.size(); ++c) {
    widths[c] = headers[c].size();
    for (const auto& line : body) widths[c] = std::max(widths[c], line[c].size());
  }

  std::ostringstream out;
  auto emit_row = [&](const std::vector<std::string>& line) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c) out << "  ";
      out << line[c];
      for (std::size_t pad = line[c].size(); pad < widths[c]; ++pad) out << ' ';
    }
    out << '\n';
  };
  emit_row(headers);
  {
    std::vector<std::string> rule;
    for (const std::size_t w : widths) rule.push_back(std::string(w, '-'));
    emit_row(rule);
  }
  for (const auto& line : body) emit_row(line);
  return out.str();
}

namespace {

DataTable shuffle_column(const DataTable& table, int column_index,
                         const std::vector<int>& permutation) {
  DataTable out = table;
  Column& column = out.columns[static_cast<std::size_t>(column_index)];
  std::vector<Cell> shuffled(column.cells.size());
  for (std::size_t i = 0; i < permutation.size(); ++i) {
    shuffled[i] = column.cells[static_cast<std::size_t>(permutation[i])];
  }
  column.cells = std::move(shuffled);
  return out;
}

}  // namespace

double permutation_importance(const PipelinePredictor& predictor,
                              const DataTable& test, const std::string& column,
                              MetricKind kind, int repeats, std::uint64_t seed,
                              const std::vector<int>* forced_permutation) {
  const int column_index = test.column_index(column);
  if (column_index < 0) throw Error("importance: column not found: " + column);
  if (repeats < 1) throw Error("importance: repeats must be >= 1");

  const Labels labels = predictor.codec.encode(test);
  const double baseline = score(kind, predictor.predict(test), labels.values);

  double shuffled_total = 0.0;
  for (int repeat = 0; repeat < repeats; ++repeat) {
    std::vector<int> permutation;
    if (forced_permutation) {
      permutation = *forced_permutation;
      if (static_cast<int>(permutation.size()) != test.n_rows()) {
        throw Error("importance: forced permutation has wrong length");
      }
    } else {
      Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(repeat) + 1));
      permutation = rng.permutation(test.n_rows());
    }
    const DataTable shuffled = shuffle_column(test, column_index, permutation);
    shuffled_total += score(kind, predictor.predict(shuffled), labels.values);
  }
  return baseline - shuffled_total / static_cast<double>(repeats);
}

}  // namespace mmtab
