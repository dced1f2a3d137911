#pragma once

#include <map>
#include <string>
#include <vector>

#include "mmtab/table.hpp"
#include "mmtab/types.hpp"

namespace mmtab {

struct NumericStats {
  double mean = 0.0;
  double std = 1.0;
};

// Reserved last-slot vocab entry that absorbs unseen and missing categories.
inline constexpr const char* kUnknownCategory = "__unknown__";

struct FeatureSchema {
  // Non-target columns in source order.
  std::vector<std::string> feature_columns;
  std::map<std::string, Modality> assignments;
  // Sorted category lists, each ending with kUnknownCategory.
  std::map<std::string, std::vector<std::string>> categorical_vocab;
  std::map<std::string, NumericStats> numeric_stats;
  std::vector<std::string> warnings;

  Modality modality(const std::string& column) const;
  // Vocab position; unseen values land on the Unknown (last) index.
  int category_index(const std::string& column, const std::string& value) const;
  int unknown_index(const std::string& column) const;
  std::vector<std::string> columns_of(Modality modality) const;
};

// Columns whose cells are all numeric (or pinned numeric) become numeric;
// string columns with <= threshold distinct non-missing values become
// categorical, the rest text. All-missing columns become categorical with a
// vocab of {Unknown} and are noted in schema.warnings.
FeatureSchema infer_schema(const DataTable& table, int categorical_threshold = 20);

// When fit is true, computes numeric (mean, population std) and fills any
// absent categorical vocabs from the table, then transforms. Numeric cells:
// impute mean, then standardize (imputed cells map to exactly 0). Categorical
// cells: vocab index as a numeric cell. Text cells: missing becomes "".
DataTable fit_transform(FeatureSchema& schema, const DataTable& table, bool fit);

// Dense view of a transformed table for tabular models.
struct TabularView {
  Eigen::MatrixXd numeric;      // n x n_numeric, standardized
  Eigen::MatrixXi categorical;  // n x n_categorical, vocab indices
  std::vector<std::string> numeric_names;
  std::vector<std::string> categorical_names;
  std::vector<int> cardinalities;  // per categorical column, Unknown included
};

TabularView tabular_view(const FeatureSchema& schema, const DataTable& transformed);

}  // namespace mmtab
