#include "mmtab/runner.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <thread>

#include "mmtab/rng.hpp"

namespace mmtab {

namespace {

const std::vector<std::string> kStrategyIds = {
    "text_net",          "all_text",
    "fuse_early",        "fuse_late",
    "pre_embedding",     "text_embedding",
    "multimodal_embedding", "weighted_ensemble",
    "stack_ensemble",    "tab_weighted",
    "tab_stack",         "tab_weighted_ngram",
    "tab_stack_ngram"};

const std::vector<ModelKind> kTabZoo = {ModelKind::ert, ModelKind::gbm_a,
                                        ModelKind::gbm_b, ModelKind::tab_mlp};
const std::vector<ModelKind> kStackers = {ModelKind::gbm_a, ModelKind::gbm_b,
                                          ModelKind::ert};

// Test rows are carved with a fixed seed so every run seed is scored on the
// same holdout; seeds vary the train/validation split and the model fits.
constexpr std::uint64_t kTestCarveSeed = 0x7e57;
constexpr std::uint64_t kSplitSalt = 0x5b117;
constexpr std::uint64_t kStrategySalt = 0x57a7;
constexpr std::uint64_t kAggregatorSalt = 0xa66;

int strategy_index(const std::string& id) {
  const auto it = std::find(kStrategyIds.begin(), kStrategyIds.end(), id);
  if (it == kStrategyIds.end()) throw Error("unknown strategy: " + id);
  return static_cast<int>(it - kStrategyIds.begin());
}

std::uint64_t strategy_seed(const PreparedData& prep, const std::string& id) {
  return Rng::mix(prep.seed,
                  kStrategySalt + static_cast<std::uint64_t>(strategy_index(id)));
}

// Model kinds that can run on this data shape: tabular models need at least
// one numeric or categorical column, the net needs text to be worth joining.
std::vector<ModelKind> zoo_for(const PreparedData& prep, bool include_net) {
  std::vector<ModelKind> zoo;
  if (prep.has_tabular) zoo = kTabZoo;
  if (include_net && prep.has_text) zoo.push_back(ModelKind::fusion_net);
  return zoo;
}

struct TransformedSet {
  std::shared_ptr<FeatureSchema> schema;
  DataTable fit_raw, val_raw;
  DataTable fit_tf, val_tf;
};

// Re-derives a schema on a strategy-transformed table pair (embeddings,
// n-gram counts) and standardizes against the fit rows.
TransformedSet refit_schema(DataTable fit_raw, DataTable val_raw) {
  TransformedSet set;
  set.fit_raw = std::move(fit_raw);
  set.val_raw = std::move(val_raw);
  set.schema = std::make_shared<FeatureSchema>(infer_schema(set.fit_raw));
  set.fit_tf = fit_transform(*set.schema, set.fit_raw, true);
  set.val_tf = fit_transform(*set.schema, set.val_raw, false);
  return set;
}

FittedStrategy fit_net_strategy(NetVariant variant, const PreparedData& prep,
                                const RunConfig& config, std::uint64_t seed) {
  if (variant != NetVariant::all_text && !prep.has_text) {
    throw StrategySkip("no text columns");
  }
  FitOptions opts = config.options;
  opts.net_variant = variant;
  auto model = std::make_shared<FittedModel>(
      fit_model(ModelKind::fusion_net, prep.context(), seed, opts));
  auto schema = std::make_shared<FeatureSchema>(prep.schema);

  FittedStrategy out;
  out.warnings = model->warnings;
  out.detail = {{"kind", "fusion_net"}, {"variant", to_string(variant)}};
  out.predict = [model, schema](const DataTable& raw) {
    FeatureSchema local = *schema;
    const DataTable transformed = fit_transform(local, raw, false);
    return predict(*model, raw, transformed, *schema);
  };
  return out;
}

FittedStrategy fit_weighted_strategy(const std::vector<ModelKind>& zoo,
                                     const PreparedData& prep,
                                     const RunConfig& config,
                                     std::uint64_t seed) {
  if (zoo.empty()) throw StrategySkip("no usable feature columns");
  auto ensemble = std::make_shared<WeightedEnsemble>(
      fit_weighted_ensemble(zoo, prep.context(), seed, prep.metric,
                            config.options, config.validation_fraction));
  auto schema = std::make_shared<FeatureSchema>(prep.schema);

  FittedStrategy out;
  out.warnings = ensemble->warnings;
  out.detail = weighted_manifest(*ensemble);
  out.predict = [ensemble, schema](const DataTable& raw) {
    FeatureSchema local = *schema;
    const DataTable transformed = fit_transform(local, raw, false);
    return predict_weighted(*ensemble, raw, transformed, *schema);
  };
  return out;
}

FittedStrategy fit_stack_strategy(const std::vector<ModelKind>& zoo,
                                  const PreparedData& prep,
                                  const RunConfig& config, std::uint64_t seed) {
  if (zoo.empty()) throw StrategySkip("no usable feature columns");
  auto stack = std::make_shared<StackEnsemble>(
      fit_stack(prep.context(), zoo, kStackers, config.stack_folds, seed,
                prep.metric, config.options));
  auto schema = std::make_shared<FeatureSchema>(prep.schema);

  FittedStrategy out;
  out.warnings = stack->warnings;
  out.detail = stack_manifest(*stack);
  out.predict = [stack, schema](const DataTable& raw) {
    FeatureSchema local = *schema;
    const DataTable transformed = fit_transform(local, raw, false);
    return predict_stack(*stack, raw, transformed, *schema);
  };
  return out;
}

FittedStrategy fit_embed_strategy(EmbedKind kind, const PreparedData& prep,
                                  const RunConfig& config, std::uint64_t seed) {
  if (!prep.has_text) throw StrategySkip("no text columns");
  auto embedder = std::make_shared<Embedder>(
      fit_embedder(kind, prep.context(), seed, config.options));

  FittedStrategy out;
  TransformedSet set = refit_schema(
      embed_transform(*embedder, prep.fit_raw, &out.warnings),
      embed_transform(*embedder, prep.val_raw));
  FitContext ctx{set.fit_raw,      set.fit_tf,  *set.schema,
                 prep.fit_labels,  prep.codec};
  ctx.val_raw = &set.val_raw;
  ctx.val_transformed = &set.val_tf;
  ctx.val_labels = &prep.val_labels;
  auto ensemble = std::make_shared<WeightedEnsemble>(fit_weighted_ensemble(
      kTabZoo, ctx, Rng::mix(seed, kAggregatorSalt), prep.metric,
      config.options, config.validation_fraction));
  auto schema = std::make_shared<FeatureSchema>(*set.schema);

  out.warnings.insert(out.warnings.end(), ensemble->warnings.begin(),
                      ensemble->warnings.end());
  out.detail = {{"kind", to_string(kind)},
                {"aggregator", weighted_manifest(*ensemble)}};
  out.predict = [embedder, ensemble, schema](const DataTable& raw) {
    const DataTable embedded = embed_transform(*embedder, raw);
    FeatureSchema local = *schema;
    const DataTable transformed = fit_transform(local, embedded, false);
    return predict_weighted(*ensemble, embedded, transformed, *schema);
  };
  return out;
}

FittedStrategy fit_ngram_strategy(bool stacked, const PreparedData& prep,
                                  const RunConfig& config, std::uint64_t seed) {
  if (!prep.has_text) throw StrategySkip("no text columns");
  auto vocab = std::make_shared<NgramVocab>(fit_ngram(
      prep.fit_raw, prep.schema, config.ngram_cap, config.ngram_min_df));

  TransformedSet set = refit_schema(ngram_transform(*vocab, prep.fit_raw),
                                    ngram_transform(*vocab, prep.val_raw));
  FitContext ctx{set.fit_raw,     set.fit_tf, *set.schema,
                 prep.fit_labels, prep.codec};
  ctx.val_raw = &set.val_raw;
  ctx.val_transformed = &set.val_tf;
  ctx.val_labels = &prep.val_labels;

  FittedStrategy out;
  auto schema = std::make_shared<FeatureSchema>(*set.schema);
  if (stacked) {
    auto stack = std::make_shared<StackEnsemble>(
        fit_stack(ctx, kTabZoo, kStackers, config.stack_folds, seed,
                  prep.metric, config.options));
    out.warnings = stack->warnings;
    out.detail = {{"kind", "ngram"}, {"aggregator", stack_manifest(*stack)}};
    out.predict = [vocab, stack, schema](const DataTable& raw) {
      const DataTable counts = ngram_transform(*vocab, raw);
      FeatureSchema local = *schema;
      const DataTable transformed = fit_transform(local, counts, false);
      return predict_stack(*stack, counts, transformed, *schema);
    };
  } else {
    auto ensemble = std::make_shared<WeightedEnsemble>(
        fit_weighted_ensemble(kTabZoo, ctx, seed, prep.metric, config.options,
                              config.validation_fraction));
    out.warnings = ensemble->warnings;
    out.detail = {{"kind", "ngram"},
                  {"aggregator", weighted_manifest(*ensemble)}};
    out.predict = [vocab, ensemble, schema](const DataTable& raw) {
      const DataTable counts = ngram_transform(*vocab, raw);
      FeatureSchema local = *schema;
      const DataTable transformed = fit_transform(local, counts, false);
      return predict_weighted(*ensemble, counts, transformed, *schema);
    };
  }
  return out;
}

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n\r") == std::string::npos) return value;
  std::string quoted = "\"";
  for (const char c : value) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  quoted += '"';
  return quoted;
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& content) {
  std::ofstream stream(path, std::ios::binary);
  if (!stream) throw Error("cannot write " + path.string());
  stream << content;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"peak_lr", cfg.peak_lr},
          {"warmup_fraction", cfg.warmup_fraction},
          {"batch_size", cfg.batch_size},
          {"weight_decay", cfg.weight_decay},
          {"epochs", cfg.epochs},
          {"layer_decay", cfg.layer_decay},
          {"checkpoints_to_average", cfg.checkpoints_to_average},
          {"patience", cfg.patience}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig cfg) {
  cfg.peak_lr = j.value("peak_lr", cfg.peak_lr);
  cfg.warmup_fraction = j.value("warmup_fraction", cfg.warmup_fraction);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.layer_decay = j.value("layer_decay", cfg.layer_decay);
  cfg.checkpoints_to_average =
      j.value("checkpoints_to_average", cfg.checkpoints_to_average);
  cfg.patience = j.value("patience", cfg.patience);
  return cfg;
}

nlohmann::json fit_options_to_json(const FitOptions& options) {
  const NetConfig& net = options.net_template;
  return {{"ert_trees", options.ert_trees},
          {"mlp", train_config_to_json(options.mlp_train)},
          {"mlp_holdout_fraction", options.mlp_holdout_fraction},
          {"net",
           {{"hidden_size", net.hidden_size},
            {"layers", net.n_layers},
            {"heads", net.n_heads},
            {"ffn", net.ffn_size},
            {"cat_embed_units", net.cat_embed_units},
            {"cat_bottleneck", net.cat_bottleneck},
            {"late_bottleneck", net.late_bottleneck},
            {"max_length", net.max_length},
            {"vocab", options.net_vocab_size},
            {"holdout_fraction", options.net_holdout_fraction},
            {"fuse_encoder",
             {{"layers", net.fuse_early_encoder.layers},
              {"units", net.fuse_early_encoder.units},
              {"heads", net.fuse_early_encoder.heads},
              {"ffn", net.fuse_early_encoder.ffn}}},
            {"train", train_config_to_json(options.net_train)}}}};
}

FitOptions fit_options_from_json(const nlohmann::json& j) {
  FitOptions options;
  options.ert_trees = j.value("ert_trees", options.ert_trees);
  if (j.contains("mlp")) {
    options.mlp_train = train_config_from_json(j.at("mlp"), options.mlp_train);
  }
  options.mlp_holdout_fraction =
      j.value("mlp_holdout_fraction", options.mlp_holdout_fraction);
  if (j.contains("net")) {
    const nlohmann::json& net = j.at("net");
    NetConfig& tpl = options.net_template;
    tpl.hidden_size = net.value("hidden_size", tpl.hidden_size);
    tpl.n_layers = net.value("layers", tpl.n_layers);
    tpl.n_heads = net.value("heads", tpl.n_heads);
    tpl.ffn_size = net.value("ffn", tpl.ffn_size);
    tpl.cat_embed_units = net.value("cat_embed_units", tpl.cat_embed_units);
    tpl.cat_bottleneck = net.value("cat_bottleneck", tpl.cat_bottleneck);
    tpl.late_bottleneck = net.value("late_bottleneck", tpl.late_bottleneck);
    tpl.max_length = net.value("max_length", tpl.max_length);
    if (net.contains("fuse_encoder")) {
      const nlohmann::json& fe = net.at("fuse_encoder");
      tpl.fuse_early_encoder.layers =
          fe.value("layers", tpl.fuse_early_encoder.layers);
      tpl.fuse_early_encoder.units =
          fe.value("units", tpl.fuse_early_encoder.units);
      tpl.fuse_early_encoder.heads =
          fe.value("heads", tpl.fuse_early_encoder.heads);
      tpl.fuse_early_encoder.ffn = fe.value("ffn", tpl.fuse_early_encoder.ffn);
    }
    options.net_vocab_size = net.value("vocab", options.net_vocab_size);
    options.net_holdout_fraction =
        net.value("holdout_fraction", options.net_holdout_fraction);
    if (net.contains("train")) {
      options.net_train =
          train_config_from_json(net.at("train"), options.net_train);
    }
  }
  return options;
}

nlohmann::json dataset_config_to_json(const DatasetConfig& ds) {
  nlohmann::json j{{"name", ds.name},
                   {"task", to_string(ds.task)},
                   {"metric", to_string(ds.metric)}};
  if (ds.synthetic) {
    j["synthetic"] = synthetic_spec_to_json(*ds.synthetic);
  } else {
    j["train_csv"] = ds.train_csv;
    if (!ds.test_csv.empty()) j["test_csv"] = ds.test_csv;
    j["target"] = ds.target;
    j["test_fraction"] = ds.test_fraction;
  }
  if (!ds.type_overrides.empty()) {
    nlohmann::json overrides;
    for (const auto& [column, modality] : ds.type_overrides) {
      overrides[column] = to_string(modality);
    }
    j["type_overrides"] = overrides;
  }
  return j;
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig ds;
  ds.name = j.value("name", "");
  if (ds.name.empty()) throw Error("dataset config: missing name");

  if (j.contains("synthetic")) {
    if (j.contains("train_csv")) {
      throw Error("dataset config: '" + ds.name +
                  "' cannot mix synthetic and train_csv sources");
    }
    ds.synthetic = synthetic_spec_from_json(j.at("synthetic"));
    ds.synthetic->name = ds.name;
    ds.task = ds.synthetic->task;
    ds.target = "target";
    if (j.contains("task") &&
        task_from_string(j.at("task").get<std::string>()) != ds.task) {
      throw Error("dataset config: '" + ds.name +
                  "' task disagrees with its synthetic spec");
    }
  } else {
    ds.train_csv = j.value("train_csv", "");
    if (ds.train_csv.empty()) {
      throw Error("dataset config: '" + ds.name +
                  "' needs a train_csv or synthetic source");
    }
    ds.test_csv = j.value("test_csv", "");
    ds.target = j.value("target", "");
    if (ds.target.empty()) {
      throw Error("dataset config: '" + ds.name + "' missing target column");
    }
    if (!j.contains("task")) {
      throw Error("dataset config: '" + ds.name + "' missing task");
    }
    const std::string task_name = j.at("task").get<std::string>();
    const std::optional<Task> task = task_from_string(task_name);
    if (!task) throw Error("dataset config: unknown task: " + task_name);
    ds.task = *task;
    ds.test_fraction = j.value("test_fraction", ds.test_fraction);
    if (ds.test_csv.empty() &&
        (ds.test_fraction <= 0.0 || ds.test_fraction >= 1.0)) {
      throw Error("dataset config: test_fraction must lie in (0, 1)");
    }
  }

  // §5 binding: the scored metric is a function of the task.
  ds.metric = metric_for(ds.task);
  if (j.contains("metric")) {
    const MetricKind given =
        metric_from_string(j.at("metric").get<std::string>());
    if (given != ds.metric) {
      throw Error("dataset config: '" + ds.name + "' pairs task " +
                  to_string(ds.task) + " with metric " + to_string(given) +
                  "; expected " + to_string(ds.metric));
    }
  }
  if (j.contains("type_overrides")) {
    for (const auto& [column, value] : j.at("type_overrides").items()) {
      const std::string modality_name = value.get<std::string>();
      const std::optional<Modality> modality =
          modality_from_string(modality_name);
      if (!modality) {
        throw Error("dataset config: unknown modality: " + modality_name);
      }
      ds.type_overrides[column] = *modality;
    }
  }
  return ds;
}

void validate_run_config(const RunConfig& config) {
  if (config.datasets.empty()) throw Error("run config: no datasets");
  std::set<std::string> names;
  for (const DatasetConfig& ds : config.datasets) {
    if (!names.insert(ds.name).second) {
      throw Error("run config: duplicate dataset name: " + ds.name);
    }
    if (ds.metric != metric_for(ds.task)) {
      throw Error("run config: dataset '" + ds.name +
                  "' metric does not match its task");
    }
  }
  if (config.strategies.empty()) throw Error("run config: no strategies");
  std::set<std::string> strategies;
  for (const std::string& id : config.strategies) {
    if (!is_strategy_id(id)) throw Error("unknown strategy: " + id);
    if (!strategies.insert(id).second) {
      throw Error("run config: duplicate strategy: " + id);
    }
  }
  if (config.seeds.empty()) throw Error("run config: no seeds");
  if (std::set<std::uint64_t>(config.seeds.begin(), config.seeds.end()).size() !=
      config.seeds.size()) {
    throw Error("run config: duplicate seeds");
  }
  if (config.validation_fraction <= 0.0 || config.validation_fraction >= 1.0) {
    throw Error("run config: validation_fraction must lie in (0, 1)");
  }
  if (config.stack_folds < 2) throw Error("run config: stack_folds must be >= 2");
  if (config.ngram_cap < 1 || config.ngram_min_df < 1) {
    throw Error("run config: n-gram cap and min_df must be >= 1");
  }
}

}  // namespace

const std::vector<std::string>& strategy_ids() { return kStrategyIds; }

bool is_strategy_id(const std::string& id) {
  return std::find(kStrategyIds.begin(), kStrategyIds.end(), id) !=
         kStrategyIds.end();
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig config;
  if (!j.contains("datasets")) throw Error("run config: no datasets");
  for (const nlohmann::json& ds : j.at("datasets")) {
    config.datasets.push_back(dataset_config_from_json(ds));
  }
  if (j.contains("strategies")) {
    config.strategies = j.at("strategies").get<std::vector<std::string>>();
  } else {
    config.strategies = kStrategyIds;
  }
  if (j.contains("seeds")) {
    config.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  }
  config.validation_fraction =
      j.value("validation_fraction", config.validation_fraction);
  config.options = fit_options_from_json(j);
  if (j.contains("ngram")) {
    config.ngram_cap = j.at("ngram").value("cap", config.ngram_cap);
    config.ngram_min_df = j.at("ngram").value("min_df", config.ngram_min_df);
  }
  config.stack_folds = j.value("stack_folds", config.stack_folds);
  config.save_models = j.value("save_models", config.save_models);
  validate_run_config(config);
  return config;
}

nlohmann::json run_config_to_json(const RunConfig& config) {
  nlohmann::json j = fit_options_to_json(config.options);
  j["datasets"] = nlohmann::json::array();
  for (const DatasetConfig& ds : config.datasets) {
    j["datasets"].push_back(dataset_config_to_json(ds));
  }
  j["strategies"] = config.strategies;
  j["seeds"] = config.seeds;
  j["validation_fraction"] = config.validation_fraction;
  j["ngram"] = {{"cap", config.ngram_cap}, {"min_df", config.ngram_min_df}};
  j["stack_folds"] = config.stack_folds;
  j["save_models"] = config.save_models;
  return j;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream stream(path);
  if (!stream) throw Error("cannot read config: " + path);
  nlohmann::json j;
  try {
    stream >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("config " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

LoadedDataset load_dataset(const DatasetConfig& config) {
  LoadedDataset out;
  if (config.synthetic) {
    SyntheticData data = gen_synthetic(*config.synthetic);
    out.train = std::move(data.train);
    out.test = std::move(data.test);
    return out;
  }
  DataTable train = read_csv(config.train_csv, config.type_overrides);
  train.name = config.name;
  train.target = config.target;
  train.task = config.task;
  validate(train);
  if (!config.test_csv.empty()) {
    DataTable test = read_csv(config.test_csv, config.type_overrides);
    test.name = config.name + "_test";
    test.target = config.target;
    test.task = config.task;
    validate(test);
    out.train = std::move(train);
    out.test = std::move(test);
    return out;
  }
  SplitSpec carve;
  carve.validation_fraction = config.test_fraction;
  carve.seed = kTestCarveSeed;
  carve.stratify = config.task != Task::regression;
  const SplitIndices split = split_indices(train, carve);
  out.test = select_rows(train, split.validation);
  out.test.name = config.name + "_test";
  out.train = select_rows(train, split.train);
  return out;
}

FitContext PreparedData::context() const {
  FitContext ctx{fit_raw, fit_tf, schema, fit_labels, codec};
  ctx.val_raw = &val_raw;
  ctx.val_transformed = &val_tf;
  ctx.val_labels = &val_labels;
  return ctx;
}

PreparedData prepare_data(const DatasetConfig& config,
                          const LoadedDataset& data, std::uint64_t seed,
                          double validation_fraction) {
  PreparedData prep;
  prep.dataset = config.name;
  prep.seed = seed;
  prep.task = config.task;
  prep.metric = config.metric;

  if (data.train.n_rows() < 10) {
    throw Error("dataset '" + config.name +
                "': need at least 10 training rows");
  }
  if (data.test.n_rows() == 0) {
    throw Error("dataset '" + config.name + "': empty test split");
  }

  SplitSpec spec;
  spec.validation_fraction = validation_fraction;
  spec.seed = Rng::mix(seed, kSplitSalt);
  spec.stratify = config.task != Task::regression;
  prep.split = split_indices(data.train, spec, &prep.warnings);

  prep.fit_raw = select_rows(data.train, prep.split.train);
  prep.val_raw = select_rows(data.train, prep.split.validation);
  prep.test_raw = data.test;

  // The class set comes from the full training table so a class that fell
  // entirely into validation still has an output slot.
  prep.codec = LabelCodec::fit(data.train);
  prep.schema = infer_schema(prep.fit_raw);
  prep.fit_tf = fit_transform(prep.schema, prep.fit_raw, true);
  prep.val_tf = fit_transform(prep.schema, prep.val_raw, false);
  prep.test_tf = fit_transform(prep.schema, prep.test_raw, false);
  prep.fit_labels = prep.codec.encode(prep.fit_raw);
  prep.val_labels = prep.codec.encode(prep.val_raw);
  prep.test_labels = prep.codec.encode(prep.test_raw);

  prep.has_text = !prep.schema.columns_of(Modality::text).empty();
  prep.has_tabular = !prep.schema.columns_of(Modality::numeric).empty() ||
                     !prep.schema.columns_of(Modality::categorical).empty();
  prep.warnings.insert(prep.warnings.end(), prep.schema.warnings.begin(),
                       prep.schema.warnings.end());
  return prep;
}

FittedStrategy fit_strategy(const std::string& id, const PreparedData& prep,
                            const RunConfig& config) {
  const std::uint64_t seed = strategy_seed(prep, id);
  if (id == "text_net") {
    return fit_net_strategy(NetVariant::text_only, prep, config, seed);
  }
  if (id == "all_text") {
    return fit_net_strategy(NetVariant::all_text, prep, config, seed);
  }
  if (id == "fuse_early") {
    return fit_net_strategy(NetVariant::fuse_early, prep, config, seed);
  }
  if (id == "fuse_late") {
    return fit_net_strategy(NetVariant::fuse_late, prep, config, seed);
  }
  if (id == "pre_embedding") {
    return fit_embed_strategy(EmbedKind::pre_embedding, prep, config, seed);
  }
  if (id == "text_embedding") {
    return fit_embed_strategy(EmbedKind::text_embedding, prep, config, seed);
  }
  if (id == "multimodal_embedding") {
    return fit_embed_strategy(EmbedKind::multimodal_embedding, prep, config,
                              seed);
  }
  if (id == "weighted_ensemble") {
    return fit_weighted_strategy(zoo_for(prep, true), prep, config, seed);
  }
  if (id == "stack_ensemble") {
    return fit_stack_strategy(zoo_for(prep, true), prep, config, seed);
  }
  if (id == "tab_weighted" || id == "tab_stack") {
    if (!prep.has_tabular) throw StrategySkip("no tabular columns");
    return id == "tab_weighted"
               ? fit_weighted_strategy(kTabZoo, prep, config, seed)
               : fit_stack_strategy(kTabZoo, prep, config, seed);
  }
  if (id == "tab_weighted_ngram") {
    return fit_ngram_strategy(false, prep, config, seed);
  }
  if (id == "tab_stack_ngram") {
    return fit_ngram_strategy(true, prep, config, seed);
  }
  throw Error("unknown strategy: " + id);
}

CellResult run_cell(const std::string& strategy, const PreparedData& prep,
                    const DatasetConfig& dataset, const RunConfig& config) {
  CellResult cell;
  cell.method = strategy;
  cell.dataset = prep.dataset;
  cell.seed = prep.seed;
  try {
    FittedStrategy fitted = fit_strategy(strategy, prep, config);
    const PredictionMatrix preds = fitted.predict(prep.test_raw);
    cell.score = score(prep.metric, preds, prep.test_labels.values);
    cell.warnings = prep.warnings;
    cell.warnings.insert(cell.warnings.end(), fitted.warnings.begin(),
                         fitted.warnings.end());
    cell.manifest = {{"version", kVersion},
                     {"strategy", strategy},
                     {"seed", prep.seed},
                     {"metric", to_string(prep.metric)},
                     {"score", *cell.score},
                     {"validation_fraction", config.validation_fraction},
                     {"stack_folds", config.stack_folds},
                     {"ngram",
                      {{"cap", config.ngram_cap},
                       {"min_df", config.ngram_min_df}}},
                     {"dataset", dataset_config_to_json(dataset)},
                     {"options", fit_options_to_json(config.options)},
                     {"detail", fitted.detail},
                     {"warnings", cell.warnings}};
  } catch (const StrategySkip& skip) {
    cell.skip_reason = skip.what();
  } catch (const Error& error) {
    cell.skip_reason = std::string("fit failed: ") + error.what();
  }
  return cell;
}

namespace {

struct CellJob {
  int dataset_index = 0;  // into the prepared subset
  int strategy_index = 0;
  int seed_index = 0;
  const PreparedData* prep = nullptr;
  const DatasetConfig* dataset = nullptr;
};

void write_outputs(const RunConfig& config, const std::string& out_dir,
                   BenchmarkResult& result) {
  namespace fs = std::filesystem;
  const fs::path out(out_dir);
  fs::create_directories(out);

  std::string per_seed = "method,dataset,seed,score\n";
  std::string skipped = "method,dataset,seed,reason\n";
  for (const CellResult& cell : result.cells) {
    if (cell.score) {
      per_seed += csv_field(cell.method) + "," + csv_field(cell.dataset) +
                  "," + std::to_string(cell.seed) + "," +
                  number_to_string(*cell.score) + "\n";
    } else {
      skipped += csv_field(cell.method) + "," + csv_field(cell.dataset) + "," +
                 std::to_string(cell.seed) + "," + csv_field(cell.skip_reason) +
                 "\n";
    }
  }
  write_text_file(out / "results_per_seed.csv", per_seed);
  write_text_file(out / "skipped.csv", skipped);

  // A (method, dataset) pair enters the mean table only when every seed
  // scored; partial coverage goes to skipped.csv, never to a silent default.
  std::map<std::pair<std::string, std::string>, std::vector<double>> scores;
  for (const CellResult& cell : result.cells) {
    if (cell.score) scores[{cell.method, cell.dataset}].push_back(*cell.score);
  }
  const std::size_t n_seeds = config.seeds.size();
  std::set<std::string> present_datasets;
  for (const CellResult& cell : result.cells) {
    present_datasets.insert(cell.dataset);
  }
  std::string mean_csv = "method,dataset,score\n";
  for (const DatasetConfig& ds : config.datasets) {
    if (!present_datasets.count(ds.name)) continue;
    for (const std::string& method : config.strategies) {
      const auto it = scores.find({method, ds.name});
      if (it == scores.end() || it->second.size() != n_seeds) continue;
      double sum = 0.0;
      for (const double value : it->second) sum += value;
      const double mean = sum / static_cast<double>(it->second.size());
      result.mean_scores.push_back({method, ds.name, mean});
      mean_csv += csv_field(method) + "," + csv_field(ds.name) + "," +
                  number_to_string(mean) + "\n";
    }
  }
  write_text_file(out / "results.csv", mean_csv);

  std::string table = render_partial_results(result.mean_scores);
  for (const std::string& error : result.errors) {
    table += "dataset error: " + error + "\n";
  }
  write_text_file(out / "results.txt", table);

  nlohmann::json manifest{{"version", kVersion},
                          {"seeds", config.seeds},
                          {"config", run_config_to_json(config)},
                          {"cells", result.cells.size()},
                          {"errors", result.errors}};
  write_text_file(out / "manifest.json", manifest.dump(2) + "\n");

  if (config.save_models) {
    for (const CellResult& cell : result.cells) {
      if (!cell.score) continue;
      const fs::path dir = out / "models" / cell.dataset / cell.method;
      fs::create_directories(dir);
      write_text_file(dir / ("seed_" + std::to_string(cell.seed) + ".json"),
                      cell.manifest.dump(2) + "\n");
    }
  }
}

}  // namespace

BenchmarkResult run_benchmark(const RunConfig& config,
                              const std::string& out_dir, int workers) {
  validate_run_config(config);
  BenchmarkResult result;

  struct PreparedDataset {
    const DatasetConfig* config = nullptr;
    std::vector<PreparedData> per_seed;
  };
  std::vector<PreparedDataset> prepared;
  for (const DatasetConfig& ds : config.datasets) {
    try {
      const LoadedDataset loaded = load_dataset(ds);
      PreparedDataset entry;
      entry.config = &ds;
      for (const std::uint64_t seed : config.seeds) {
        entry.per_seed.push_back(
            prepare_data(ds, loaded, seed, config.validation_fraction));
      }
      prepared.push_back(std::move(entry));
    } catch (const Error& error) {
      result.errors.push_back(ds.name + ": " + error.what());
      result.exit_code = 2;
    }
  }

  std::vector<CellJob> jobs;
  for (std::size_t d = 0; d < prepared.size(); ++d) {
    for (std::size_t s = 0; s < config.strategies.size(); ++s) {
      for (std::size_t k = 0; k < config.seeds.size(); ++k) {
        CellJob job;
        job.dataset_index = static_cast<int>(d);
        job.strategy_index = static_cast<int>(s);
        job.seed_index = static_cast<int>(k);
        job.prep = &prepared[d].per_seed[k];
        job.dataset = prepared[d].config;
        jobs.push_back(job);
      }
    }
  }

  result.cells.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  const auto work = [&]() {
    for (std::size_t i = next.fetch_add(1); i < jobs.size();
         i = next.fetch_add(1)) {
      const CellJob& job = jobs[i];
      result.cells[i] = run_cell(config.strategies[static_cast<std::size_t>(
                                     job.strategy_index)],
                                 *job.prep, *job.dataset, config);
    }
  };
  if (workers <= 1 || jobs.size() <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    const int n = std::min<int>(workers, static_cast<int>(jobs.size()));
    pool.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pool.emplace_back(work);
    for (std::thread& thread : pool) thread.join();
  }

  write_outputs(config, out_dir, result);
  return result;
}

std::string render_partial_results(const std::vector<ResultRecord>& records) {
  std::set<std::string> datasets;
  std::map<std::string, std::set<std::string>> covered;
  std::vector<std::string> methods;  // first-appearance order
  for (const ResultRecord& record : records) {
    datasets.insert(record.dataset);
    if (!covered.count(record.method)) methods.push_back(record.method);
    covered[record.method].insert(record.dataset);
  }
  std::vector<ResultRecord> grid;
  std::vector<std::string> partial;
  for (const std::string& method : methods) {
    if (covered.at(method).size() == datasets.size()) continue;
    partial.push_back(method);
  }
  for (const ResultRecord& record : records) {
    if (std::find(partial.begin(), partial.end(), record.method) ==
        partial.end()) {
      grid.push_back(record);
    }
  }
  std::string table = grid.empty()
                          ? std::string("no complete method rows\n")
                          : render_results_table(grid);
  for (const std::string& method : partial) {
    table += "method " + method + " is missing cells; see skipped.csv\n";
  }
  return table;
}

double manifest_importance(const nlohmann::json& manifest,
                           const DataTable& table, const std::string& column,
                           int repeats, std::uint64_t seed) {
  RunConfig config;
  config.datasets.push_back(
      dataset_config_from_json(manifest.at("dataset")));
  config.strategies = {manifest.at("strategy").get<std::string>()};
  config.seeds = {manifest.at("seed").get<std::uint64_t>()};
  config.validation_fraction =
      manifest.value("validation_fraction", config.validation_fraction);
  config.stack_folds = manifest.value("stack_folds", config.stack_folds);
  if (manifest.contains("ngram")) {
    config.ngram_cap = manifest.at("ngram").value("cap", config.ngram_cap);
    config.ngram_min_df =
        manifest.at("ngram").value("min_df", config.ngram_min_df);
  }
  if (manifest.contains("options")) {
    config.options = fit_options_from_json(manifest.at("options"));
  }

  const DatasetConfig& ds = config.datasets.front();
  const LoadedDataset loaded = load_dataset(ds);
  const PreparedData prep = prepare_data(ds, loaded, config.seeds.front(),
                                         config.validation_fraction);
  FittedStrategy fitted =
      fit_strategy(config.strategies.front(), prep, config);

  PipelinePredictor predictor;
  predictor.predict = fitted.predict;
  predictor.codec = prep.codec;
  return permutation_importance(predictor, table, column, prep.metric, repeats,
                                seed);
}

}  // namespace mmtab
