#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mmtab/rng.hpp"
#include "mmtab/schema.hpp"
#include "mmtab/table.hpp"
#include "test_util.hpp"

using namespace mmtab;

namespace {

DataTable make_table(const std::vector<std::pair<std::string, std::vector<Cell>>>& cols,
                     const std::string& target = "", Task task = Task::regression) {
  DataTable t;
  t.name = "inline";
  for (const auto& [name, cells] : cols) t.columns.push_back({name, cells});
  if (!target.empty()) t.target = target;
  t.task = task;
  validate(t);
  return t;
}

std::vector<Cell> numeric_cells(const std::vector<double>& values) {
  std::vector<Cell> cells;
  for (const double v : values) cells.push_back(Cell::numeric(v));
  return cells;
}

std::vector<Cell> string_cells(const std::vector<std::string>& values) {
  std::vector<Cell> cells;
  for (const std::string& v : values) cells.push_back(Cell::text(v));
  return cells;
}

}  // namespace

TEST_CASE("csv parses quoting, missing fields and numeric coercion") {
  testutil::TempDir tmp("frame_csv");
  testutil::write_file(tmp.path("t.csv"),
                       "a,b,price\n"
                       "1,x,3.5\n"
                       ",y,\"1,200\"\n"
                       "3,\"z\"\"q\n\",2\n");
  const DataTable t = read_csv(tmp.path("t.csv").string());
  REQUIRE(t.n_rows() == 3);
  REQUIRE(t.n_cols() == 3);

  const Column* a = t.find_column("a");
  CHECK(a->cells[0].is_numeric());
  CHECK(a->cells[0].number == 1.0);
  CHECK(a->cells[1].is_missing());
  CHECK(a->cells[2].number == 3.0);

  const Column* b = t.find_column("b");
  CHECK(b->cells[1].str == "y");
  CHECK(b->cells[2].str == "z\"q\n");

  // "1,200" does not parse as a float, so with 2/3 parsing the column stays
  // text; "3.5" remains a string cell.
  const Column* price = t.find_column("price");
  CHECK(price->cells[0].is_string());
  CHECK(price->cells[0].str == "3.5");
}

TEST_CASE("csv errors carry row numbers; duplicate headers rejected") {
  testutil::TempDir tmp("frame_csv_err");
  testutil::write_file(tmp.path("ragged.csv"), "a,b\n1,2\n3\n");
  bool threw = false;
  try {
    read_csv(tmp.path("ragged.csv").string());
  } catch (const Error& e) {
    threw = true;
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK(threw);

  testutil::write_file(tmp.path("dup.csv"), "a,a\n1,2\n");
  CHECK_THROWS_AS(read_csv(tmp.path("dup.csv").string()), Error);

  testutil::write_file(tmp.path("quote.csv"), "a,b\n\"open,2\n");
  CHECK_THROWS_AS(read_csv(tmp.path("quote.csv").string()), Error);
}

TEST_CASE("csv numeric coercion tolerates <=1% stragglers") {
  testutil::TempDir tmp("frame_csv_coerce");
  std::ostringstream body;
  body << "v,y\n";
  for (int i = 0; i < 199; ++i) body << i << ".5,0\n";
  body << "oops,1\n";  // 1 bad cell out of 200 -> still numeric
  testutil::write_file(tmp.path("t.csv"), body.str());
  const DataTable t = read_csv(tmp.path("t.csv").string());
  const Column* v = t.find_column("v");
  CHECK(v->cells[0].is_numeric());
  CHECK(v->cells[199].is_missing());
}

TEST_CASE("csv type overrides pin parsing") {
  testutil::TempDir tmp("frame_csv_override");
  testutil::write_file(tmp.path("t.csv"), "code,y\n1,0\n2,1\n3,0\n");
  const DataTable t = read_csv(tmp.path("t.csv").string(),
                               {{"code", Modality::categorical}});
  const Column* code = t.find_column("code");
  CHECK(code->cells[0].is_string());
  CHECK(code->cells[0].str == "1");

  const FeatureSchema schema = infer_schema(t);
  CHECK(schema.modality("code") == Modality::categorical);
}

TEST_CASE("non-finite numerics normalize to missing") {
  CHECK(Cell::numeric(std::nan("")).is_missing());
  CHECK(Cell::numeric(1.0 / 0.0).is_missing());
  CHECK(!parse_number("nan").has_value());
  CHECK(!parse_number("inf").has_value());
  CHECK(!parse_number("1.5x").has_value());
  CHECK(parse_number(" 2.25 ").value() == 2.25);
}

TEST_CASE("csv round trip via write_csv is exact") {
  testutil::TempDir tmp("frame_csv_rt");
  DataTable t = make_table({
      {"num", numeric_cells({0.1, -3.25, 1e-7})},
      {"txt", string_cells({"plain", "with,comma", "multi\nline \"q\""})},
  });
  t.columns[0].cells.push_back(Cell::missing());
  t.columns[1].cells.push_back(Cell::text(""));
  write_csv(t, tmp.path("rt.csv").string());
  const DataTable back = read_csv(tmp.path("rt.csv").string());
  REQUIRE(back.n_rows() == 4);
  CHECK(back.find_column("num")->cells[0].number == 0.1);
  CHECK(back.find_column("num")->cells[1].number == -3.25);
  CHECK(back.find_column("num")->cells[2].number == 1e-7);
  CHECK(back.find_column("num")->cells[3].is_missing());
  CHECK(back.find_column("txt")->cells[1].str == "with,comma");
  CHECK(back.find_column("txt")->cells[2].str == "multi\nline \"q\"");
  CHECK(back.find_column("txt")->cells[3].is_missing());  // empty string
}

TEST_CASE("benchmark-scale csv loads") {
  // 18,316 rows by 90 columns: 37 categorical + 24 numeric + 28 text + target.
  testutil::TempDir tmp("frame_big");
  const int rows = 18316;
  std::ofstream out(tmp.path("big.csv"), std::ios::binary);
  for (int c = 0; c < 37; ++c) out << "cat" << c << ",";
  for (int c = 0; c < 24; ++c) out << "num" << c << ",";
  for (int c = 0; c < 28; ++c) out << "text" << c << ",";
  out << "label\n";
  Rng rng(7);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < 37; ++c) out << "v" << rng.index(12) << ",";
    for (int c = 0; c < 24; ++c) out << rng.uniform(-5, 5) << ",";
    for (int c = 0; c < 28; ++c) out << "word" << rng.index(1000) << " tail,";
    out << rng.index(2) << "\n";
  }
  out.close();
  const DataTable t = read_csv(tmp.path("big.csv").string());
  CHECK(t.n_rows() == rows);
  CHECK(t.n_cols() == 90);
}

TEST_CASE("schema inference thresholds") {
  std::vector<Cell> twenty, twenty_one, numbers;
  for (int i = 0; i < 1000; ++i) {
    twenty.push_back(Cell::text("c" + std::to_string(i % 20)));
    twenty_one.push_back(Cell::text("c" + std::to_string(i % 21)));
    numbers.push_back(Cell::numeric(i * 0.5));
  }
  const DataTable t = make_table(
      {{"cat20", twenty}, {"txt21", twenty_one}, {"num", numbers}});
  const FeatureSchema schema = infer_schema(t, 20);
  CHECK(schema.modality("cat20") == Modality::categorical);
  CHECK(schema.modality("txt21") == Modality::text);
  CHECK(schema.modality("num") == Modality::numeric);

  // Unknown sits exactly once, at the last index.
  const auto& vocab = schema.categorical_vocab.at("cat20");
  REQUIRE(vocab.size() == 21);
  CHECK(vocab.back() == kUnknownCategory);
  CHECK(std::count(vocab.begin(), vocab.end(), std::string(kUnknownCategory)) == 1);
}

TEST_CASE("all-missing column warns and becomes categorical") {
  const DataTable t = make_table({
      {"empty", {Cell::missing(), Cell::missing()}},
      {"num", numeric_cells({1, 2})},
  });
  const FeatureSchema schema = infer_schema(t);
  CHECK(schema.modality("empty") == Modality::categorical);
  CHECK(schema.categorical_vocab.at("empty") ==
        std::vector<std::string>{kUnknownCategory});
  CHECK(schema.warnings.size() == 1);
}

TEST_CASE("standardization matches the closed form") {
  DataTable t = make_table({{"x", numeric_cells({1, 2, 3})}});
  FeatureSchema schema = infer_schema(t);
  const DataTable out = fit_transform(schema, t, true);
  const Column* x = out.find_column("x");
  // sigma = sqrt(2/3); (1-2)/sigma = -sqrt(3/2)
  const double expected = 1.224744871391589;
  CHECK(x->cells[0].number == doctest::Approx(-expected).epsilon(1e-12));
  CHECK(x->cells[1].number == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(x->cells[2].number == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("imputed cells land exactly at zero") {
  DataTable t = make_table({{"x", {Cell::numeric(1), Cell::missing(), Cell::numeric(3)}}});
  FeatureSchema schema = infer_schema(t);
  const DataTable out = fit_transform(schema, t, true);
  CHECK(out.find_column("x")->cells[1].number == 0.0);
  CHECK(schema.numeric_stats.at("x").mean == 2.0);
}

TEST_CASE("constant columns store std=1 and transform to zero") {
  DataTable t = make_table({{"x", numeric_cells({4, 4, 4})}});
  FeatureSchema schema = infer_schema(t);
  const DataTable out = fit_transform(schema, t, true);
  CHECK(schema.numeric_stats.at("x").std == 1.0);
  CHECK(out.find_column("x")->cells[0].number == 0.0);
}

TEST_CASE("unseen categories map to the Unknown index") {
  DataTable fit_table = make_table({{"country", string_cells({"US", "GB", "US"})}});
  FeatureSchema schema = infer_schema(fit_table);
  (void)fit_transform(schema, fit_table, true);

  DataTable apply = make_table({{"country", string_cells({"NZ", "GB"})}});
  apply.columns[0].cells.push_back(Cell::missing());
  const DataTable out = fit_transform(schema, apply, false);
  const int unknown = schema.unknown_index("country");
  CHECK(out.find_column("country")->cells[0].number == unknown);
  CHECK(out.find_column("country")->cells[1].number ==
        schema.category_index("country", "GB"));
  CHECK(out.find_column("country")->cells[2].number == unknown);
}

TEST_CASE("text missing becomes the empty string") {
  std::vector<Cell> cells;
  for (int i = 0; i < 30; ++i) cells.push_back(Cell::text("sentence " + std::to_string(i)));
  cells.push_back(Cell::missing());
  DataTable t = make_table({{"desc", cells}});
  FeatureSchema schema = infer_schema(t);
  REQUIRE(schema.modality("desc") == Modality::text);
  const DataTable out = fit_transform(schema, t, true);
  CHECK(out.find_column("desc")->cells[30].is_string());
  CHECK(out.find_column("desc")->cells[30].str.empty());
}

TEST_CASE("transform rejects unknown columns") {
  DataTable fit_table = make_table({{"a", numeric_cells({1, 2})}});
  FeatureSchema schema = infer_schema(fit_table);
  (void)fit_transform(schema, fit_table, true);
  const DataTable other = make_table({{"b", numeric_cells({1, 2})}});
  CHECK_THROWS_AS(fit_transform(schema, other, false), Error);
}

TEST_CASE("transform is idempotent in the schema") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 5 + rng.index(40);
    std::vector<Cell> num, cat;
    for (int i = 0; i < n; ++i) {
      num.push_back(rng.uniform() < 0.2 ? Cell::missing()
                                        : Cell::numeric(rng.normal(0, 3)));
      cat.push_back(rng.uniform() < 0.2
                        ? Cell::missing()
                        : Cell::text("k" + std::to_string(rng.index(5))));
    }
    DataTable t = make_table({{"num", num}, {"cat", cat}});
    FeatureSchema schema = infer_schema(t);
    const DataTable once = fit_transform(schema, t, true);
    const DataTable twice = fit_transform(schema, t, false);
    for (int c = 0; c < once.n_cols(); ++c) {
      for (int r = 0; r < once.n_rows(); ++r) {
        const Cell& lhs = once.columns[c].cells[r];
        const Cell& rhs = twice.columns[c].cells[r];
        CHECK(lhs.kind == rhs.kind);
        CHECK(lhs.number == rhs.number);
        CHECK(lhs.str == rhs.str);
      }
    }
  }
}

TEST_CASE("fuzzed schemas: one modality each; numeric never converts") {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + rng.index(60);
    const int cols = 1 + rng.index(6);
    std::vector<std::pair<std::string, std::vector<Cell>>> spec;
    for (int c = 0; c < cols; ++c) {
      std::vector<Cell> cells;
      const int flavor = rng.index(3);
      for (int i = 0; i < n; ++i) {
        if (rng.uniform() < 0.1) {
          cells.push_back(Cell::missing());
        } else if (flavor == 0) {
          cells.push_back(Cell::numeric(rng.normal()));
        } else {
          cells.push_back(Cell::text("v" + std::to_string(rng.index(flavor == 1 ? 8 : 200))));
        }
      }
      spec.emplace_back("c" + std::to_string(c), cells);
    }
    const DataTable t = make_table(spec);
    const FeatureSchema narrow = infer_schema(t, 20);
    const FeatureSchema wide = infer_schema(t, 1 << 30);
    for (const std::string& column : narrow.feature_columns) {
      CHECK(narrow.assignments.count(column) == 1);
      if (narrow.modality(column) == Modality::numeric) {
        CHECK(wide.modality(column) == Modality::numeric);
      }
      if (wide.modality(column) == Modality::numeric) {
        CHECK(narrow.modality(column) == Modality::numeric);
      }
    }
  }
}

TEST_CASE("standardized columns have mean 0 and population std 1") {
  Rng rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + rng.index(200);
    std::vector<double> values;
    for (int i = 0; i < n; ++i) values.push_back(rng.normal(rng.uniform(-9, 9), 0.5 + rng.uniform()));
    DataTable t = make_table({{"x", numeric_cells(values)}});
    FeatureSchema schema = infer_schema(t);
    const DataTable out = fit_transform(schema, t, true);
    double sum = 0.0, ss = 0.0;
    for (const Cell& cell : out.find_column("x")->cells) {
      sum += cell.number;
      ss += cell.number * cell.number;
    }
    const double mean = sum / n;
    const double var = ss / n - mean * mean;
    CHECK(std::fabs(mean) < 1e-9);
    CHECK(std::fabs(var - 1.0) < 1e-9);
  }
}

TEST_CASE("split determinism and disjointness") {
  DataTable t = make_table({{"x", numeric_cells(std::vector<double>(100, 1.0))}});
  for (int i = 0; i < 100; ++i) t.columns[0].cells[i] = Cell::numeric(i);
  const SplitSpec spec{0.2, 99, false};
  const SplitIndices a = split_indices(t, spec);
  const SplitIndices b = split_indices(t, spec);
  CHECK(a.train == b.train);
  CHECK(a.validation == b.validation);
  CHECK(a.validation.size() == 20);
  CHECK(a.train.size() == 80);
  std::set<int> all(a.train.begin(), a.train.end());
  all.insert(a.validation.begin(), a.validation.end());
  CHECK(all.size() == 100);
}

TEST_CASE("stratified split allocates 18+2 on a 90/10 binary table") {
  std::vector<Cell> y;
  for (int i = 0; i < 90; ++i) y.push_back(Cell::text("maj"));
  for (int i = 0; i < 10; ++i) y.push_back(Cell::text("min"));
  std::vector<Cell> x;
  for (int i = 0; i < 100; ++i) x.push_back(Cell::numeric(i));
  DataTable t = make_table({{"x", x}, {"y", y}}, "y", Task::binary);

  const SplitIndices idx = split_indices(t, SplitSpec{0.2, 5, true});
  int majority = 0, minority = 0;
  for (const int r : idx.validation) (r < 90 ? majority : minority)++;
  CHECK(std::abs(majority - 18) <= 1);
  CHECK(std::abs(minority - 2) <= 1);
}

TEST_CASE("one-row classes fall back with a warning") {
  std::vector<Cell> y;
  for (int i = 0; i < 20; ++i) y.push_back(Cell::text(i == 0 ? "solo" : "bulk"));
  std::vector<Cell> x;
  for (int i = 0; i < 20; ++i) x.push_back(Cell::numeric(i));
  DataTable t = make_table({{"x", x}, {"y", y}}, "y", Task::multiclass);
  std::vector<std::string> warnings;
  const SplitIndices idx = split_indices(t, SplitSpec{0.25, 3, true}, &warnings);
  CHECK(warnings.size() == 1);
  CHECK(idx.train.size() + idx.validation.size() == 20);
}

TEST_CASE("regression ignores the stratify flag") {
  std::vector<Cell> x, y;
  for (int i = 0; i < 50; ++i) {
    x.push_back(Cell::numeric(i));
    y.push_back(Cell::numeric(i * 0.5));
  }
  DataTable t = make_table({{"x", x}, {"y", y}}, "y", Task::regression);
  const SplitIndices with = split_indices(t, SplitSpec{0.2, 7, true});
  const SplitIndices without = split_indices(t, SplitSpec{0.2, 7, false});
  CHECK(with.validation == without.validation);
}

TEST_CASE("label codec orders numerically when possible") {
  std::vector<Cell> y = {Cell::numeric(10), Cell::numeric(2), Cell::numeric(10),
                         Cell::numeric(-1)};
  std::vector<Cell> x = numeric_cells({1, 2, 3, 4});
  DataTable t = make_table({{"x", x}, {"y", y}}, "y", Task::multiclass);
  const LabelCodec codec = LabelCodec::fit(t);
  CHECK(codec.classes == std::vector<std::string>{"-1", "2", "10"});
  const Labels labels = codec.encode(t);
  CHECK(labels.values[0] == 2.0);
  CHECK(labels.values[3] == 0.0);

  DataTable unseen = make_table({{"x", numeric_cells({1})},
                                 {"y", {Cell::numeric(99)}}},
                                "y", Task::multiclass);
  CHECK_THROWS_AS(codec.encode(unseen), Error);
}

TEST_CASE("label codec rejects degenerate class sets") {
  std::vector<Cell> x = numeric_cells({1, 2, 3});
  DataTable three = make_table(
      {{"x", x}, {"y", string_cells({"a", "b", "c"})}}, "y", Task::binary);
  CHECK_THROWS_AS(LabelCodec::fit(three), Error);
}
