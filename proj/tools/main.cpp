#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmtab/runner.hpp"

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream stream(path);
  if (!stream) throw mmtab::Error("cannot read " + path);
  nlohmann::json j;
  try {
    stream >> j;
  } catch (const nlohmann::json::exception& e) {
    throw mmtab::Error(path + ": " + e.what());
  }
  return j;
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            int workers) {
  const mmtab::RunConfig config = mmtab::load_run_config(config_path);
  const mmtab::BenchmarkResult result =
      mmtab::run_benchmark(config, out_dir, workers);
  for (const std::string& error : result.errors) {
    std::fprintf(stderr, "error: %s\n", error.c_str());
  }
  std::printf("%zu cells -> %s\n", result.cells.size(), out_dir.c_str());
  return result.exit_code;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  const mmtab::SyntheticSpec spec =
      mmtab::synthetic_spec_from_json(read_json(spec_path));
  const mmtab::SyntheticData data = mmtab::gen_synthetic(spec);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path out(out_dir);
  mmtab::write_csv(data.train, (out / "train.csv").string());
  mmtab::write_csv(data.test, (out / "test.csv").string());
  std::ofstream echo(out / "spec.json");
  echo << mmtab::synthetic_spec_to_json(spec).dump(2) << "\n";
  std::printf("%s: %d train rows, %d test rows -> %s\n", spec.name.c_str(),
              data.train.n_rows(), data.test.n_rows(), out_dir.c_str());
  return 0;
}

int cmd_importance(const std::string& manifest_path,
                   const std::string& data_path, const std::string& column,
                   int repeats, std::uint64_t seed) {
  const nlohmann::json manifest = read_json(manifest_path);
  // Reuse the validated config parser for the dataset block.
  nlohmann::json wrapper;
  wrapper["datasets"] = nlohmann::json::array({manifest.at("dataset")});
  wrapper["strategies"] = nlohmann::json::array({"tab_weighted"});
  const mmtab::DatasetConfig ds =
      mmtab::run_config_from_json(wrapper).datasets.front();
  mmtab::DataTable table = mmtab::read_csv(data_path, ds.type_overrides);
  table.target = ds.target;
  table.task = ds.task;
  mmtab::validate(table);
  const double drop =
      mmtab::manifest_importance(manifest, table, column, repeats, seed);
  std::printf("column %s importance %s\n", column.c_str(),
              mmtab::number_to_string(drop).c_str());
  return 0;
}

int cmd_report(const std::string& results_path) {
  const mmtab::DataTable table = mmtab::read_csv(results_path);
  const int method = table.column_index("method");
  const int dataset = table.column_index("dataset");
  const int score = table.column_index("score");
  if (method < 0 || dataset < 0 || score < 0) {
    throw mmtab::Error(results_path +
                       ": need method, dataset and score columns");
  }
  const int seed = table.column_index("seed");

  // Per-seed files collapse to seed means before rendering.
  std::map<std::pair<std::string, std::string>, std::pair<double, int>> sums;
  std::vector<std::pair<std::string, std::string>> order;
  for (int r = 0; r < table.n_rows(); ++r) {
    const mmtab::Cell& m = table.columns[static_cast<std::size_t>(method)]
                               .cells[static_cast<std::size_t>(r)];
    const mmtab::Cell& d = table.columns[static_cast<std::size_t>(dataset)]
                               .cells[static_cast<std::size_t>(r)];
    const mmtab::Cell& s = table.columns[static_cast<std::size_t>(score)]
                               .cells[static_cast<std::size_t>(r)];
    if (!s.is_numeric()) {
      throw mmtab::Error(results_path + ": non-numeric score in row " +
                         std::to_string(r + 1));
    }
    const std::pair<std::string, std::string> key{m.str, d.str};
    auto [it, inserted] = sums.emplace(key, std::pair<double, int>{0.0, 0});
    if (inserted) order.push_back(key);
    it->second.first += s.number;
    it->second.second += 1;
  }
  (void)seed;
  std::vector<mmtab::ResultRecord> records;
  for (const auto& key : order) {
    const auto& [sum, count] = sums.at(key);
    records.push_back({key.first, key.second, sum / count});
  }
  std::fputs(mmtab::render_partial_results(records).c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal text+tabular benchmark harness"};
  app.require_subcommand(1);

  std::string config_path, out_dir, spec_path, manifest_path, data_path,
      column, results_path;
  int workers = 1;
  int repeats = 5;
  std::uint64_t seed = 0;

  CLI::App* run = app.add_subcommand("run", "execute a benchmark config");
  run->add_option("--config", config_path, "run config JSON")->required();
  run->add_option("--out", out_dir, "output directory")->required();
  run->add_option("--workers", workers, "concurrent cells")
      ->check(CLI::PositiveNumber);

  CLI::App* synth =
      app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--spec", spec_path, "synthetic spec JSON")->required();
  synth->add_option("--out", out_dir, "output directory")->required();

  CLI::App* importance = app.add_subcommand(
      "importance", "permutation importance of one column");
  importance->add_option("--model", manifest_path, "model manifest JSON")
      ->required();
  importance->add_option("--data", data_path, "evaluation CSV")->required();
  importance->add_option("--column", column, "column to permute")->required();
  importance->add_option("--repeats", repeats, "shuffle repeats")
      ->check(CLI::PositiveNumber);
  importance->add_option("--seed", seed, "shuffle seed");

  CLI::App* report = app.add_subcommand("report", "render a results CSV");
  report->add_option("--results", results_path, "results CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir, workers);
    if (synth->parsed()) return cmd_synth(spec_path, out_dir);
    if (importance->parsed()) {
      return cmd_importance(manifest_path, data_path, column, repeats, seed);
    }
    if (report->parsed()) return cmd_report(results_path);
  } catch (const std::exception& error) {
    std::fprintf(stderr, "error: %s\n", error.what());
    return 2;
  }
  return 0;
}
