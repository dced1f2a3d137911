#include "mmtab/schema.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace mmtab {

Modality FeatureSchema::modality(const std::string& column) const {
  const auto it = assignments.find(column);
  if (it == assignments.end()) throw Error("column not in schema: " + column);
  return it->second;
}

int FeatureSchema::category_index(const std::string& column,
                                  const std::string& value) const {
  const auto it = categorical_vocab.find(column);
  if (it == categorical_vocab.end()) {
    throw Error("no vocab for column: " + column);
  }
  const std::vector<std::string>& vocab = it->second;
  const auto pos = std::find(vocab.begin(), vocab.end(), value);
  if (pos == vocab.end() || *pos == kUnknownCategory) {
    return static_cast<int>(vocab.size()) - 1;
  }
  return static_cast<int>(pos - vocab.begin());
}

int FeatureSchema::unknown_index(const std::string& column) const {
  const auto it = categorical_vocab.find(column);
  if (it == categorical_vocab.end()) {
    throw Error("no vocab for column: " + column);
  }
  return static_cast<int>(it->second.size()) - 1;
}

std::vector<std::string> FeatureSchema::columns_of(Modality modality) const {
  std::vector<std::string> out;
  for (const std::string& column : feature_columns) {
    if (assignments.at(column) == modality) out.push_back(column);
  }
  return out;
}

namespace {

// String form used for vocab building; numeric cells in string columns keep
// their round-trip text so mixed columns stay consistent.
std::string cell_string(const Cell& cell) {
  if (cell.is_numeric()) return number_to_string(cell.number);
  return cell.str;
}

std::vector<std::string> build_vocab(const Column& column) {
  std::set<std::string> values;
  for (const Cell& cell : column.cells) {
    if (cell.is_missing()) continue;
    const std::string value = cell_string(cell);
    if (value != kUnknownCategory) values.insert(value);
  }
  std::vector<std::string> vocab(values.begin(), values.end());
  vocab.push_back(kUnknownCategory);
  return vocab;
}

}  // namespace

FeatureSchema infer_schema(const DataTable& table, int categorical_threshold) {
  if (table.n_rows() == 0 || table.n_cols() == 0) {
    throw Error("cannot infer schema of an empty table");
  }
  FeatureSchema schema;
  for (const Column& column : table.columns) {
    if (table.target && column.name == *table.target) continue;
    schema.feature_columns.push_back(column.name);

    const auto override_it = table.type_overrides.find(column.name);
    if (override_it != table.type_overrides.end()) {
      schema.assignments[column.name] = override_it->second;
      if (override_it->second == Modality::categorical) {
        schema.categorical_vocab[column.name] = build_vocab(column);
      }
      continue;
    }

    bool all_numeric = true;
    bool all_missing = true;
    std::set<std::string> distinct;
    for (const Cell& cell : column.cells) {
      if (cell.is_missing()) continue;
      all_missing = false;
      if (!cell.is_numeric()) {
        all_numeric = false;
        distinct.insert(cell.str);
      }
    }

    if (all_missing) {
      schema.assignments[column.name] = Modality::categorical;
      schema.categorical_vocab[column.name] = {kUnknownCategory};
      schema.warnings.push_back("column '" + column.name +
                                "' is entirely missing; treated as categorical");
      continue;
    }
    if (all_numeric) {
      schema.assignments[column.name] = Modality::numeric;
      continue;
    }
    if (static_cast<int>(distinct.size()) <= categorical_threshold) {
      schema.assignments[column.name] = Modality::categorical;
      schema.categorical_vocab[column.name] = build_vocab(column);
    } else {
      schema.assignments[column.name] = Modality::text;
    }
  }
  return schema;
}

namespace {

NumericStats fit_numeric(const Column& column) {
  double sum = 0.0;
  int count = 0;
  for (const Cell& cell : column.cells) {
    if (cell.is_numeric()) {
      sum += cell.number;
      ++count;
    } else if (cell.is_string()) {
      const std::optional<double> parsed = parse_number(cell.str);
      if (parsed) {
        sum += *parsed;
        ++count;
      }
    }
  }
  NumericStats stats;
  if (count == 0) return stats;  // all missing: mean 0, std 1
  stats.mean = sum / count;
  double ss = 0.0;
  for (const Cell& cell : column.cells) {
    double value;
    if (cell.is_numeric()) {
      value = cell.number;
    } else if (cell.is_string()) {
      const std::optional<double> parsed = parse_number(cell.str);
      if (!parsed) continue;
      value = *parsed;
    } else {
      continue;
    }
    const double d = value - stats.mean;
    ss += d * d;
  }
  const double variance = ss / count;  // population variance
  stats.std = variance > 0.0 ? std::sqrt(variance) : 1.0;
  return stats;
}

std::optional<double> numeric_value(const Cell& cell) {
  if (cell.is_numeric()) return cell.number;
  if (cell.is_string()) return parse_number(cell.str);
  return std::nullopt;
}

}  // namespace

DataTable fit_transform(FeatureSchema& schema, const DataTable& table, bool fit) {
  for (const Column& column : table.columns) {
    if (table.target && column.name == *table.target) continue;
    if (!schema.assignments.count(column.name)) {
      throw Error("schema mismatch: column '" + column.name +
                  "' not covered by schema");
    }
  }
  for (const std::string& column : schema.feature_columns) {
    if (!table.find_column(column)) {
      throw Error("schema mismatch: column '" + column + "' absent from table");
    }
  }

  if (fit) {
    for (const std::string& name : schema.feature_columns) {
      const Column* column = table.find_column(name);
      switch (schema.assignments.at(name)) {
        case Modality::numeric:
          schema.numeric_stats[name] = fit_numeric(*column);
          break;
        case Modality::categorical:
          if (!schema.categorical_vocab.count(name)) {
            schema.categorical_vocab[name] = build_vocab(*column);
          }
          break;
        case Modality::text:
          break;
      }
    }
  }

  DataTable out;
  out.name = table.name;
  out.target = table.target;
  out.task = table.task;
  out.columns.reserve(table.columns.size());
  for (const Column& column : table.columns) {
    if (table.target && column.name == *table.target) {
      out.columns.push_back(column);
      continue;
    }
    Column transformed;
    transformed.name = column.name;
    transformed.cells.reserve(column.cells.size());
    switch (schema.assignments.at(column.name)) {
      case Modality::numeric: {
        const auto stats_it = schema.numeric_stats.find(column.name);
        if (stats_it == schema.numeric_stats.end()) {
          throw Error("no numeric stats for column: " + column.name);
        }
        const NumericStats& stats = stats_it->second;
        for (const Cell& cell : column.cells) {
          const std::optional<double> value = numeric_value(cell);
          const double imputed = value.value_or(stats.mean);
          transformed.cells.push_back(
              Cell::numeric((imputed - stats.mean) / stats.std));
        }
        break;
      }
      case Modality::categorical: {
        const int unknown = schema.unknown_index(column.name);
        for (const Cell& cell : column.cells) {
          const int index = cell.is_missing()
                                ? unknown
                                : schema.category_index(column.name, cell_string(cell));
          transformed.cells.push_back(Cell::numeric(index));
        }
        break;
      }
      case Modality::text: {
        for (const Cell& cell : column.cells) {
          if (cell.is_missing()) {
            transformed.cells.push_back(Cell::text(""));
          } else if (cell.is_numeric()) {
            transformed.cells.push_back(Cell::text(number_to_string(cell.number)));
          } else {
            transformed.cells.push_back(Cell::text(cell.str));
          }
        }
        break;
      }
    }
    out.columns.push_back(std::move(transformed));
  }
  return out;
}

TabularView tabular_view(const FeatureSchema& schema, const DataTable& transformed) {
  TabularView view;
  view.numeric_names = schema.columns_of(Modality::numeric);
  view.categorical_names = schema.columns_of(Modality::categorical);
  const int n = transformed.n_rows();
  view.numeric.resize(n, static_cast<int>(view.numeric_names.size()));
  view.categorical.resize(n, static_cast<int>(view.categorical_names.size()));

  for (std::size_t c = 0; c < view.numeric_names.size(); ++c) {
    const Column* column = transformed.find_column(view.numeric_names[c]);
    if (!column) throw Error("column absent: " + view.numeric_names[c]);
    for (int r = 0; r < n; ++r) {
      const Cell& cell = column->cells[static_cast<std::size_t>(r)];
      if (!cell.is_numeric()) {
        throw Error("numeric column '" + view.numeric_names[c] +
                    "' holds a non-numeric cell; transform the table first");
      }
      view.numeric(r, static_cast<int>(c)) = cell.number;
    }
  }
  for (std::size_t c = 0; c < view.categorical_names.size(); ++c) {
    const std::string& name = view.categorical_names[c];
    const Column* column = transformed.find_column(name);
    if (!column) throw Error("column absent: " + name);
    const int cardinality = schema.unknown_index(name) + 1;
    view.cardinalities.push_back(cardinality);
    for (int r = 0; r < n; ++r) {
      const Cell& cell = column->cells[static_cast<std::size_t>(r)];
      if (!cell.is_numeric()) {
        throw Error("categorical column '" + name +
                    "' holds a non-index cell; transform the table first");
      }
      const int index = static_cast<int>(cell.number);
      if (index < 0 || index >= cardinality) {
        throw Error("categorical index out of range in column " + name);
      }
      view.categorical(r, static_cast<int>(c)) = index;
    }
  }
  return view;
}

}  // namespace mmtab
