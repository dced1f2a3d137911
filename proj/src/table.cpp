#include "mmtab/table.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "mmtab/rng.hpp"

namespace mmtab {

Cell Cell::numeric(double value) {
  if (!std::isfinite(value)) return Cell{};
  return Cell{Kind::numeric, value, {}};
}

const Column* DataTable::find_column(const std::string& column_name) const {
  for (const Column& column : columns) {
    if (column.name == column_name) return &column;
  }
  return nullptr;
}

int DataTable::column_index(const std::string& column_name) const {
  for (int i = 0; i < n_cols(); ++i) {
    if (columns[static_cast<std::size_t>(i)].name == column_name) return i;
  }
  return -1;
}

void validate(const DataTable& table) {
  std::set<std::string> seen;
  const std::size_t expected =
      table.columns.empty() ? 0 : table.columns.front().cells.size();
  for (const Column& column : table.columns) {
    if (!seen.insert(column.name).second) {
      throw Error("duplicate column name: " + column.name);
    }
    if (column.cells.size() != expected) {
      throw Error("column " + column.name + " has " +
                  std::to_string(column.cells.size()) + " cells, expected " +
                  std::to_string(expected));
    }
  }
  if (table.target && !table.find_column(*table.target)) {
    throw Error("target column not present: " + *table.target);
  }
}

std::optional<double> parse_number(const std::string& text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && (text[begin] == ' ' || text[begin] == '\t')) ++begin;
  while (end > begin && (text[end - 1] == ' ' || text[end - 1] == '\t')) --end;
  if (begin == end) return std::nullopt;
  const char* first = text.data() + begin;
  const char* last = text.data() + end;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) return std::nullopt;
  if (!std::isfinite(value)) return std::nullopt;
  return value;
}

std::string number_to_string(double value) {
  char buffer[64];
  auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  if (ec != std::errc{}) throw Error("number formatting failed");
  return std::string(buffer, ptr);
}

namespace {

// One RFC-4180 record; handles quoted fields, embedded quotes ("") and
// embedded newlines. Returns false on clean EOF before any character.
bool read_record(std::istream& in, std::vector<std::string>& fields,
                 int& line_number) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool saw_any = false;
  int ch = in.get();
  if (ch == EOF) return false;
  while (true) {
    if (ch == EOF) {
      if (in_quotes) {
        throw Error("csv parse error at line " + std::to_string(line_number) +
                    ": unterminated quoted field");
      }
      fields.push_back(field);
      return true;
    }
    const char c = static_cast<char>(ch);
    saw_any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line_number;
        field.push_back(c);
      }
    } else if (c == '"') {
      if (!field.empty()) {
        throw Error("csv parse error at line " + std::to_string(line_number) +
                    ": quote inside unquoted field");
      }
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\r') {
      if (in.peek() == '\n') in.get();
      ++line_number;
      fields.push_back(field);
      return true;
    } else if (c == '\n') {
      ++line_number;
      fields.push_back(field);
      return true;
    } else {
      field.push_back(c);
    }
    ch = in.get();
  }
  (void)saw_any;
}

}  // namespace

DataTable read_csv(const std::string& path,
                   const std::map<std::string, Modality>& type_overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open csv file: " + path);

  int line_number = 1;
  std::vector<std::string> header;
  if (!read_record(in, header, line_number)) {
    throw Error("csv parse error: empty file " + path);
  }
  {
    std::set<std::string> seen;
    for (const std::string& name : header) {
      if (!seen.insert(name).second) {
        throw Error("duplicate header name: " + name);
      }
    }
  }

  const std::size_t width = header.size();
  std::vector<std::vector<std::string>> raw(width);
  std::vector<std::string> record;
  int record_line = line_number;
  while (read_record(in, record, line_number)) {
    if (record.size() == 1 && record[0].empty() && in.peek() == EOF) {
      break;  // trailing newline at EOF
    }
    if (record.size() != width) {
      throw Error("csv parse error at line " + std::to_string(record_line) +
                  ": expected " + std::to_string(width) + " fields, got " +
                  std::to_string(record.size()));
    }
    record_line = line_number;
    for (std::size_t i = 0; i < width; ++i) {
      raw[i].push_back(std::move(record[i]));
    }
  }

  DataTable table;
  table.name = path;
  table.type_overrides = type_overrides;
  table.columns.resize(width);
  for (std::size_t i = 0; i < width; ++i) {
    Column& column = table.columns[i];
    column.name = header[i];
    column.cells.reserve(raw[i].size());

    const auto override_it = type_overrides.find(column.name);
    bool numeric_column;
    if (override_it != type_overrides.end()) {
      numeric_column = override_it->second == Modality::numeric;
    } else {
      std::size_t non_missing = 0;
      std::size_t parsed = 0;
      for (const std::string& value : raw[i]) {
        if (value.empty()) continue;
        ++non_missing;
        if (parse_number(value)) ++parsed;
      }
      numeric_column =
          non_missing > 0 &&
          static_cast<double>(parsed) >= 0.99 * static_cast<double>(non_missing);
    }

    const bool tag_categorical =
        override_it != type_overrides.end() &&
        override_it->second == Modality::categorical;
    for (std::string& value : raw[i]) {
      if (value.empty()) {
        column.cells.push_back(Cell::missing());
      } else if (numeric_column) {
        const std::optional<double> parsed = parse_number(value);
        column.cells.push_back(parsed ? Cell::numeric(*parsed)
                                      : Cell::missing());
      } else if (tag_categorical) {
        column.cells.push_back(Cell::categorical(std::move(value)));
      } else {
        column.cells.push_back(Cell::text(std::move(value)));
      }
    }
  }
  validate(table);
  return table;
}

namespace {

std::string csv_escape(const std::string& value) {
  const bool needs_quotes =
      value.find_first_of(",\"\r\n") != std::string::npos;
  if (!needs_quotes) return value;
  std::string out = "\"";
  for (const char c : value) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

std::string cell_to_csv(const Cell& cell) {
  switch (cell.kind) {
    case Cell::Kind::missing: return "";
    case Cell::Kind::numeric: return number_to_string(cell.number);
    case Cell::Kind::categorical:
    case Cell::Kind::text: return csv_escape(cell.str);
  }
  return "";
}

}  // namespace

void write_csv(const DataTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open csv for writing: " + path);
  for (int c = 0; c < table.n_cols(); ++c) {
    if (c) out << ',';
    out << csv_escape(table.columns[static_cast<std::size_t>(c)].name);
  }
  out << '\n';
  for (int r = 0; r < table.n_rows(); ++r) {
    for (int c = 0; c < table.n_cols(); ++c) {
      if (c) out << ',';
      out << cell_to_csv(
          table.columns[static_cast<std::size_t>(c)].cells[static_cast<std::size_t>(r)]);
    }
    out << '\n';
  }
  if (!out) throw Error("write failed: " + path);
}

DataTable select_rows(const DataTable& table, const std::vector<int>& rows) {
  DataTable out;
  out.name = table.name;
  out.target = table.target;
  out.task = table.task;
  out.type_overrides = table.type_overrides;
  out.columns.reserve(table.columns.size());
  for (const Column& column : table.columns) {
    Column picked;
    picked.name = column.name;
    picked.cells.reserve(rows.size());
    for (const int r : rows) {
      if (r < 0 || r >= table.n_rows()) {
        throw Error("row index out of range: " + std::to_string(r));
      }
      picked.cells.push_back(column.cells[static_cast<std::size_t>(r)]);
    }
    out.columns.push_back(std::move(picked));
  }
  return out;
}

std::string label_key(const Cell& cell) {
  switch (cell.kind) {
    case Cell::Kind::missing:
      throw Error("missing label cell");
    case Cell::Kind::numeric:
      return number_to_string(cell.number);
    case Cell::Kind::categorical:
    case Cell::Kind::text:
      return cell.str;
  }
  throw Error("missing label cell");
}

namespace {

// Validation count for one stratum: round(fraction * n) clamped to [0, n].
int stratum_take(double fraction, int n) {
  int take = static_cast<int>(std::floor(fraction * n + 0.5));
  return std::clamp(take, 0, n);
}

}  // namespace

SplitIndices split_indices(const DataTable& table, const SplitSpec& spec,
                           std::vector<std::string>* warnings) {
  const int n = table.n_rows();
  if (spec.validation_fraction <= 0.0 || spec.validation_fraction >= 1.0) {
    throw Error("validation_fraction must lie in (0,1)");
  }
  if (n < 2) throw Error("need at least 2 rows to split");

  const bool stratified = spec.stratify && table.task != Task::regression &&
                          table.target.has_value();

  std::vector<int> validation;
  if (!stratified) {
    Rng rng(Rng::mix(spec.seed, 0x5eed));
    std::vector<int> order = rng.permutation(n);
    int take = stratum_take(spec.validation_fraction, n);
    take = std::clamp(take, 1, n - 1);
    validation.assign(order.begin(), order.begin() + take);
  } else {
    const Column* target = table.find_column(*table.target);
    if (!target) throw Error("target column not present: " + *table.target);

    // Strata keyed by first appearance so tie-breaking is stable.
    std::vector<std::string> class_order;
    std::map<std::string, std::vector<int>> strata;
    for (int r = 0; r < n; ++r) {
      const std::string key = label_key(target->cells[static_cast<std::size_t>(r)]);
      auto [it, inserted] = strata.try_emplace(key);
      if (inserted) class_order.push_back(key);
      it->second.push_back(r);
    }

    std::vector<int> singleton_pool;
    std::uint64_t stratum_id = 0;
    for (const std::string& key : class_order) {
      std::vector<int>& rows = strata[key];
      ++stratum_id;
      if (rows.size() < 2) {
        if (warnings) {
          warnings->push_back("class '" + key +
                              "' has a single row; splitting it unstratified");
        }
        singleton_pool.insert(singleton_pool.end(), rows.begin(), rows.end());
        continue;
      }
      Rng rng(Rng::mix(spec.seed, stratum_id));
      rng.shuffle(rows);
      const int take = stratum_take(spec.validation_fraction,
                                    static_cast<int>(rows.size()));
      validation.insert(validation.end(), rows.begin(), rows.begin() + take);
    }
    if (!singleton_pool.empty()) {
      Rng rng(Rng::mix(spec.seed, 0x9001));
      rng.shuffle(singleton_pool);
      const int take = stratum_take(spec.validation_fraction,
                                    static_cast<int>(singleton_pool.size()));
      validation.insert(validation.end(), singleton_pool.begin(),
                        singleton_pool.begin() + take);
    }

    // Both sides must stay non-empty.
    if (validation.empty()) {
      Rng rng(Rng::mix(spec.seed, 0xfa11));
      validation.push_back(rng.index(n));
    }
    if (static_cast<int>(validation.size()) == n) validation.pop_back();
  }

  std::sort(validation.begin(), validation.end());
  std::vector<char> in_validation(static_cast<std::size_t>(n), 0);
  for (const int r : validation) in_validation[static_cast<std::size_t>(r)] = 1;
  SplitIndices out;
  out.validation = std::move(validation);
  out.train.reserve(static_cast<std::size_t>(n) - out.validation.size());
  for (int r = 0; r < n; ++r) {
    if (!in_validation[static_cast<std::size_t>(r)]) out.train.push_back(r);
  }
  return out;
}

std::pair<DataTable, DataTable> split_train_val(
    const DataTable& table, const SplitSpec& spec,
    std::vector<std::string>* warnings) {
  const SplitIndices idx = split_indices(table, spec, warnings);
  return {select_rows(table, idx.train), select_rows(table, idx.validation)};
}

LabelCodec LabelCodec::fit(const DataTable& table) {
  if (!table.target) throw Error("table has no target column");
  const Column* target = table.find_column(*table.target);
  if (!target) throw Error("target column not present: " + *table.target);

  LabelCodec codec;
  codec.task = table.task;
  if (table.task == Task::regression) return codec;

  std::set<std::string> values;
  for (const Cell& cell : target->cells) values.insert(label_key(cell));
  codec.classes.assign(values.begin(), values.end());

  bool all_numeric = true;
  std::vector<std::pair<double, std::string>> keyed;
  keyed.reserve(codec.classes.size());
  for (const std::string& name : codec.classes) {
    const std::optional<double> parsed = parse_number(name);
    if (!parsed) {
      all_numeric = false;
      break;
    }
    keyed.emplace_back(*parsed, name);
  }
  if (all_numeric) {
    std::sort(keyed.begin(), keyed.end());
    for (std::size_t i = 0; i < keyed.size(); ++i) codec.classes[i] = keyed[i].second;
  }

  if (table.task == Task::binary && codec.classes.size() != 2) {
    throw Error("binary task has " + std::to_string(codec.classes.size()) +
                " distinct labels");
  }
  if (codec.classes.size() < 2) throw Error("classification needs >= 2 classes");
  return codec;
}

Labels LabelCodec::encode(const DataTable& table) const {
  if (!table.target) throw Error("table has no target column");
  const Column* target = table.find_column(*table.target);
  if (!target) throw Error("target column not present: " + *table.target);

  Labels labels;
  labels.task = task;
  labels.n_classes = n_classes();
  labels.values.resize(table.n_rows());
  for (int r = 0; r < table.n_rows(); ++r) {
    const Cell& cell = target->cells[static_cast<std::size_t>(r)];
    if (task == Task::regression) {
      if (!cell.is_numeric()) {
        if (cell.is_string()) {
          const std::optional<double> parsed = parse_number(cell.str);
          if (parsed) {
            labels.values[r] = *parsed;
            continue;
          }
        }
        throw Error("non-numeric regression target at row " + std::to_string(r));
      }
      labels.values[r] = cell.number;
    } else {
      const std::string key = label_key(cell);
      const auto it = std::find(classes.begin(), classes.end(), key);
      if (it == classes.end()) throw Error("unseen class label: " + key);
      labels.values[r] = static_cast<double>(it - classes.begin());
    }
  }
  return labels;
}

}  // namespace mmtab
