#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmtab/types.hpp"

namespace mmtab {

struct Cell {
  enum class Kind { missing, numeric, categorical, text };

  Kind kind = Kind::missing;
  double number = 0.0;
  std::string str;

  static Cell missing() { return Cell{}; }
  static Cell numeric(double value);  // non-finite values normalize to missing
  static Cell categorical(std::string value) {
    return Cell{Kind::categorical, 0.0, std::move(value)};
  }
  static Cell text(std::string value) {
    return Cell{Kind::text, 0.0, std::move(value)};
  }

  bool is_missing() const { return kind == Kind::missing; }
  bool is_numeric() const { return kind == Kind::numeric; }
  bool is_string() const {
    return kind == Kind::categorical || kind == Kind::text;
  }
};

struct Column {
  std::string name;
  std::vector<Cell> cells;
};

// Columnar table. Treated as immutable once built; all operations below are
// pure functions returning new tables.
struct DataTable {
  std::string name;
  std::vector<Column> columns;
  std::optional<std::string> target;
  Task task = Task::regression;
  // Modality pins that bypass schema inference (from the override file).
  std::map<std::string, Modality> type_overrides;

  int n_rows() const {
    return columns.empty() ? 0 : static_cast<int>(columns.front().cells.size());
  }
  int n_cols() const { return static_cast<int>(columns.size()); }
  const Column* find_column(const std::string& column_name) const;
  int column_index(const std::string& column_name) const;  // -1 when absent
};

// Throws Error when column lengths differ, names repeat, or target is absent.
void validate(const DataTable& table);

// RFC-4180 CSV with a mandatory header row. Columns listed in type_overrides
// parse according to the pinned modality; remaining columns become numeric
// when at least 99% of their non-missing cells parse as floats (stragglers
// turn into Missing), otherwise their cells stay as text.
DataTable read_csv(const std::string& path,
                   const std::map<std::string, Modality>& type_overrides = {});

void write_csv(const DataTable& table, const std::string& path);

// Full-string float parse; empty/partial/non-finite input yields nullopt.
std::optional<double> parse_number(const std::string& text);

// Shortest round-trip decimal form of a finite double.
std::string number_to_string(double value);

DataTable select_rows(const DataTable& table, const std::vector<int>& rows);

struct SplitSpec {
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  bool stratify = true;
};

struct SplitIndices {
  std::vector<int> train;
  std::vector<int> validation;
};

// Index-level split; stratification applies only to classification tasks.
// One-row classes fall back to a pooled unstratified split and add a warning.
SplitIndices split_indices(const DataTable& table, const SplitSpec& spec,
                           std::vector<std::string>* warnings = nullptr);

std::pair<DataTable, DataTable> split_train_val(
    const DataTable& table, const SplitSpec& spec,
    std::vector<std::string>* warnings = nullptr);

struct Labels {
  Task task = Task::regression;
  Eigen::VectorXd values;  // class index for classification, target otherwise
  int n_classes = 0;
};

// Maps target cells to class indices (classification) or doubles
// (regression). Class names are ordered numerically when every label parses
// as a number, lexicographically otherwise.
struct LabelCodec {
  Task task = Task::regression;
  std::vector<std::string> classes;

  static LabelCodec fit(const DataTable& table);
  Labels encode(const DataTable& table) const;
  int n_classes() const { return static_cast<int>(classes.size()); }
};

// Canonical string key of a target cell (numeric cells use the shortest
// round-trip form so "1", "1.0" and Numeric(1) agree).
std::string label_key(const Cell& cell);

}  // namespace mmtab
