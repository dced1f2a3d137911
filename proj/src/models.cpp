#include "mmtab/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mmtab/graph.hpp"
#include "mmtab/metrics.hpp"
#include "mmtab/rng.hpp"
#include "mmtab/text.hpp"

namespace mmtab {

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::ert: return "ert";
    case ModelKind::gbm_a: return "gbm_a";
    case ModelKind::gbm_b: return "gbm_b";
    case ModelKind::tab_mlp: return "tab_mlp";
    case ModelKind::fusion_net: return "fusion_net";
  }
  return "unknown";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "ert") return ModelKind::ert;
  if (name == "gbm_a") return ModelKind::gbm_a;
  if (name == "gbm_b") return ModelKind::gbm_b;
  if (name == "tab_mlp") return ModelKind::tab_mlp;
  if (name == "fusion_net") return ModelKind::fusion_net;
  throw Error("unknown model kind: " + name);
}

FeatureSignature signature_of(const FeatureSchema& schema) {
  FeatureSignature signature;
  for (const std::string& column : schema.feature_columns) {
    signature.columns.push_back(column);
    signature.modalities.push_back(schema.modality(column));
  }
  return signature;
}

namespace {

void check_signature(const FeatureSignature& expected, const FeatureSchema& schema) {
  const FeatureSignature got = signature_of(schema);
  if (got == expected) return;

  std::vector<std::string> complaints;
  for (std::size_t i = 0; i < expected.columns.size(); ++i) {
    const auto at = std::find(got.columns.begin(), got.columns.end(),
                              expected.columns[i]);
    if (at == got.columns.end()) {
      complaints.push_back("missing column '" + expected.columns[i] + "'");
    } else {
      const auto j = static_cast<std::size_t>(at - got.columns.begin());
      if (got.modalities[j] != expected.modalities[i]) {
        complaints.push_back("column '" + expected.columns[i] + "' is " +
                             to_string(got.modalities[j]) + ", expected " +
                             to_string(expected.modalities[i]));
      }
    }
  }
  for (const std::string& column : got.columns) {
    if (std::find(expected.columns.begin(), expected.columns.end(), column) ==
        expected.columns.end()) {
      complaints.push_back("unexpected column '" + column + "'");
    }
  }
  if (complaints.empty()) complaints.push_back("column order differs");

  std::ostringstream message;
  message << "feature signature mismatch:";
  for (const std::string& complaint : complaints) message << " " << complaint << ";";
  throw Error(message.str());
}

int prediction_width(Task task, int n_classes) {
  return task == Task::regression ? 1 : n_classes;
}

// ---------------------------------------------------------------------------
// GBM preset b: categorical columns become smoothed target statistics.

Eigen::MatrixXd encode_design_b(const TabularView& view,
                                const std::vector<TargetStat>& stats) {
  const Eigen::Index n = view.numeric.rows();
  Eigen::MatrixXd design(n, view.numeric.cols() + view.categorical.cols());
  design.leftCols(view.numeric.cols()) = view.numeric;
  for (Eigen::Index j = 0; j < view.categorical.cols(); ++j) {
    const TargetStat& stat = stats[static_cast<std::size_t>(j)];
    for (Eigen::Index r = 0; r < n; ++r) {
      const int c = view.categorical(r, j);
      design(r, view.numeric.cols() + j) =
          c >= 0 && c < stat.encoding.size() ? stat.encoding[c] : stat.fallback;
    }
  }
  return design;
}

GbmModel fit_gbm_model(const TabularView& view, const Labels& labels, bool preset_b) {
  GbmModel model;
  if (!preset_b) {
    const DesignView design{&view.numeric, &view.categorical};
    model.ensemble = fit_gbm_ensemble(design, labels, gbm_preset_a());
    return model;
  }
  // Class indices double as the statistic target: the mean for regression,
  // the positive rate for binary, an ordinal encoding for multiclass.
  for (Eigen::Index j = 0; j < view.categorical.cols(); ++j) {
    model.cat_stats.push_back(
        fit_target_stat(view.categorical.col(j), labels.values, 10.0));
  }
  const Eigen::MatrixXd design_matrix = encode_design_b(view, model.cat_stats);
  const Eigen::MatrixXi empty_cats(design_matrix.rows(), 0);
  const DesignView design{&design_matrix, &empty_cats};
  model.ensemble = fit_gbm_ensemble(design, labels, gbm_preset_b());
  return model;
}

PredictionMatrix predict_gbm_model(const GbmModel& model, const TabularView& view) {
  if (model.cat_stats.empty()) {
    const DesignView design{&view.numeric, &view.categorical};
    return predict_gbm(model.ensemble, design);
  }
  const Eigen::MatrixXd design_matrix = encode_design_b(view, model.cat_stats);
  const Eigen::MatrixXi empty_cats(design_matrix.rows(), 0);
  const DesignView design{&design_matrix, &empty_cats};
  return predict_gbm(model.ensemble, design);
}

// ---------------------------------------------------------------------------
// Tabular MLP

Eigen::MatrixXd one_hot_design(const TabularView& view,
                               const std::vector<int>& cardinalities) {
  const Eigen::Index n = view.numeric.rows();
  Eigen::Index width = view.numeric.cols();
  for (const int c : cardinalities) width += c;
  Eigen::MatrixXd design = Eigen::MatrixXd::Zero(n, width);
  design.leftCols(view.numeric.cols()) = view.numeric;
  Eigen::Index offset = view.numeric.cols();
  for (Eigen::Index j = 0; j < view.categorical.cols(); ++j) {
    const int cardinality = cardinalities[static_cast<std::size_t>(j)];
    for (Eigen::Index r = 0; r < n; ++r) {
      const int c = view.categorical(r, j);
      if (c >= 0 && c < cardinality) design(r, offset + c) = 1.0;
    }
    offset += cardinality;
  }
  return design;
}

Eigen::MatrixXd mlp_logits(const MlpModel& model, const Eigen::MatrixXd& design) {
  const Eigen::MatrixXd h1 =
      ((design * model.params.at("w1")).rowwise() +
       model.params.at("b1").row(0))
          .cwiseMax(0.0);
  const Eigen::MatrixXd h2 =
      ((h1 * model.params.at("w2")).rowwise() + model.params.at("b2").row(0))
          .cwiseMax(0.0);
  return (h2 * model.params.at("w3")).rowwise() + model.params.at("b3").row(0);
}

PredictionMatrix link_logits(Task task, const Eigen::MatrixXd& logits) {
  switch (task) {
    case Task::regression:
      return logits;
    case Task::binary: {
      PredictionMatrix probs(logits.rows(), 2);
      for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double z = logits(r, 0);
        const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                  : std::exp(z) / (1.0 + std::exp(z));
        probs(r, 0) = 1.0 - p;
        probs(r, 1) = p;
      }
      return probs;
    }
    case Task::multiclass:
      return ad::softmax_rows_value(logits);
  }
  throw Error("unknown task");
}

}  // namespace

namespace {

// Skeleton with He-scaled normal initialization, biases zero.
MlpModel init_mlp(const TabularView& view, const Labels& labels, int width,
                  std::uint64_t seed) {
  MlpModel model;
  model.n_numeric = static_cast<int>(view.numeric.cols());
  model.cardinalities = view.cardinalities;
  model.output_dim =
      labels.task == Task::multiclass ? labels.n_classes : 1;

  constexpr int kHidden1 = 128;
  constexpr int kHidden2 = 64;
  Rng rng(Rng::mix(seed, 0x317b));
  const auto init = [&rng](int rows, int cols, double fan_in) {
    Eigen::MatrixXd m(rows, cols);
    const double scale = std::sqrt(2.0 / fan_in);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.normal(0.0, scale);
    }
    return m;
  };
  model.params["w1"] = init(width, kHidden1, width);
  model.params["b1"] = Eigen::MatrixXd::Zero(1, kHidden1);
  model.params["w2"] = init(kHidden1, kHidden2, kHidden1);
  model.params["b2"] = Eigen::MatrixXd::Zero(1, kHidden2);
  model.params["w3"] = init(kHidden2, model.output_dim, kHidden2);
  model.params["b3"] = Eigen::MatrixXd::Zero(1, model.output_dim);
  return model;
}

// AdamW over train_rows of `design`, validated once per epoch on val_design;
// the best epoch's parameters win.
MlpModel fit_mlp_loop(MlpModel model, const Eigen::MatrixXd& design,
                      const Labels& labels, const std::vector<int>& train_rows,
                      const Eigen::MatrixXd& val_design,
                      const Eigen::VectorXd& val_labels, const TrainConfig& cfg,
                      std::uint64_t seed) {
  const int width = static_cast<int>(design.cols());
  const MetricKind metric = metric_for(labels.task);
  const int n_train = static_cast<int>(train_rows.size());
  const int steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const long long total_steps =
      static_cast<long long>(steps_per_epoch) * cfg.epochs;

  ParamMap m1, m2;
  for (const auto& [name, value] : model.params) {
    m1[name] = Eigen::MatrixXd::Zero(value.rows(), value.cols());
    m2[name] = Eigen::MatrixXd::Zero(value.rows(), value.cols());
  }
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;

  ParamMap best_params = model.params;
  double best_score = -std::numeric_limits<double>::infinity();
  int stale_epochs = 0;
  long long global_step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng order_rng(Rng::mix(cfg.seed ^ seed, 0x6e0c + static_cast<std::uint64_t>(epoch)));
    std::vector<int> epoch_order(train_rows);
    order_rng.shuffle(epoch_order);

    for (int start = 0; start < n_train; start += cfg.batch_size) {
      const int stop = std::min(n_train, start + cfg.batch_size);
      const int batch = stop - start;
      ++global_step;

      Eigen::MatrixXd batch_design(batch, width);
      for (int i = 0; i < batch; ++i) {
        batch_design.row(i) =
            design.row(epoch_order[static_cast<std::size_t>(start + i)]);
      }

      ad::Tape tape;
      std::map<std::string, ad::Var> leaves;
      for (const auto& [name, value] : model.params) {
        leaves.emplace(name, tape.leaf(value, true));
      }
      ad::Var x = tape.leaf(batch_design, false);
      ad::Var h1 = ad::leaky_relu(
          tape,
          ad::add_rowwise(tape, ad::matmul(tape, x, leaves.at("w1")), leaves.at("b1")),
          0.0);
      ad::Var h2 = ad::leaky_relu(
          tape,
          ad::add_rowwise(tape, ad::matmul(tape, h1, leaves.at("w2")), leaves.at("b2")),
          0.0);
      ad::Var logits =
          ad::add_rowwise(tape, ad::matmul(tape, h2, leaves.at("w3")), leaves.at("b3"));

      ad::Var loss;
      if (labels.task == Task::multiclass) {
        std::vector<int> batch_labels(static_cast<std::size_t>(batch));
        for (int i = 0; i < batch; ++i) {
          batch_labels[static_cast<std::size_t>(i)] = static_cast<int>(
              labels.values[epoch_order[static_cast<std::size_t>(start + i)]]);
        }
        loss = ad::softmax_cross_entropy(tape, logits, batch_labels);
      } else {
        Eigen::VectorXd batch_targets(batch);
        for (int i = 0; i < batch; ++i) {
          batch_targets[i] =
              labels.values[epoch_order[static_cast<std::size_t>(start + i)]];
        }
        loss = labels.task == Task::binary
                   ? ad::logistic_loss(tape, logits, batch_targets)
                   : ad::squared_loss(tape, logits, batch_targets);
      }
      if (!std::isfinite(loss->value(0, 0))) {
        throw Error("tab mlp diverged: non-finite loss at epoch " +
                    std::to_string(epoch));
      }
      tape.backward(loss);

      const double lr = lr_at(global_step, total_steps, cfg);
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(global_step));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(global_step));
      for (auto& [name, value] : model.params) {
        const Eigen::MatrixXd& grad = leaves.at(name)->grad;
        Eigen::MatrixXd& mom1 = m1[name];
        Eigen::MatrixXd& mom2 = m2[name];
        mom1 = kBeta1 * mom1 + (1.0 - kBeta1) * grad;
        mom2 = (kBeta2 * mom2.array() + (1.0 - kBeta2) * grad.array().square())
                   .matrix();
        Eigen::MatrixXd update =
            ((mom1.array() / bc1) / ((mom2.array() / bc2).sqrt() + kEps)).matrix();
        if (name[0] == 'w' && cfg.weight_decay > 0.0) {
          update += cfg.weight_decay * value;
        }
        value -= lr * update;
      }
    }

    const PredictionMatrix val_preds =
        link_logits(labels.task, mlp_logits(model, val_design));
    const double val_score = score(metric, val_preds, val_labels);
    if (val_score > best_score) {
      best_score = val_score;
      best_params = model.params;
      stale_epochs = 0;
    } else if (++stale_epochs >= cfg.patience) {
      break;
    }
  }
  model.params = std::move(best_params);
  return model;
}

}  // namespace

MlpModel fit_mlp_model(const TabularView& view, const Labels& labels,
                       const TrainConfig& cfg, double holdout_fraction,
                       std::uint64_t seed) {
  const int n = static_cast<int>(view.numeric.rows());
  if (n < 2) throw Error("fit_mlp_model: need at least 2 rows");
  if (labels.values.size() != n) throw Error("fit_mlp_model: label count mismatch");

  const Eigen::MatrixXd design = one_hot_design(view, view.cardinalities);
  MlpModel model = init_mlp(view, labels, static_cast<int>(design.cols()), seed);

  // Internal holdout for early stopping.
  Rng split_rng(Rng::mix(seed, 0x4a1d));
  std::vector<int> order = split_rng.permutation(n);
  int n_val = std::max(1, static_cast<int>(std::lround(holdout_fraction * n)));
  n_val = std::min(n_val, n - 1);
  const std::vector<int> val_rows(order.begin(), order.begin() + n_val);
  const std::vector<int> train_rows(order.begin() + n_val, order.end());
  Eigen::MatrixXd val_design(n_val, design.cols());
  Eigen::VectorXd val_labels(n_val);
  for (int i = 0; i < n_val; ++i) {
    val_design.row(i) = design.row(val_rows[static_cast<std::size_t>(i)]);
    val_labels[i] = labels.values[val_rows[static_cast<std::size_t>(i)]];
  }
  return fit_mlp_loop(std::move(model), design, labels, train_rows, val_design,
                      val_labels, cfg, seed);
}

MlpModel fit_mlp_model(const TabularView& view, const Labels& labels,
                       const TabularView& val_view, const Labels& val_labels,
                       const TrainConfig& cfg, std::uint64_t seed) {
  const int n = static_cast<int>(view.numeric.rows());
  if (n < 1) throw Error("fit_mlp_model: need at least 1 row");
  if (labels.values.size() != n) throw Error("fit_mlp_model: label count mismatch");
  if (val_view.numeric.rows() == 0) {
    throw Error("fit_mlp_model: empty validation set");
  }
  if (val_labels.values.size() != val_view.numeric.rows()) {
    throw Error("fit_mlp_model: validation label count mismatch");
  }

  const Eigen::MatrixXd design = one_hot_design(view, view.cardinalities);
  MlpModel model = init_mlp(view, labels, static_cast<int>(design.cols()), seed);
  const Eigen::MatrixXd val_design = one_hot_design(val_view, model.cardinalities);
  std::vector<int> train_rows(static_cast<std::size_t>(n));
  std::iota(train_rows.begin(), train_rows.end(), 0);
  return fit_mlp_loop(std::move(model), design, labels, train_rows, val_design,
                      val_labels.values, cfg, seed);
}

PredictionMatrix predict_mlp(const MlpModel& model, const TabularView& view,
                             Task task) {
  const Eigen::MatrixXd design = one_hot_design(view, model.cardinalities);
  if (design.rows() == 0) {
    return PredictionMatrix(0, task == Task::regression ? 1 : std::max(2, model.output_dim));
  }
  return link_logits(task, mlp_logits(model, design));
}

namespace {

// ---------------------------------------------------------------------------
// Fusion nets

NetModel fit_net_model(const FitContext& ctx, std::uint64_t seed,
                       const FitOptions& options) {
  const TabularView view = tabular_view(ctx.schema, ctx.transformed);

  // Vocabulary over everything the variant will see as text.
  std::vector<std::string> corpus;
  for (const std::string& name : ctx.schema.columns_of(Modality::text)) {
    const Column* column = ctx.transformed.find_column(name);
    for (const Cell& cell : column->cells) {
      if (cell.is_string()) corpus.push_back(cell.str);
    }
  }
  if (options.net_variant == NetVariant::all_text) {
    for (const std::string& name : ctx.schema.feature_columns) {
      const Modality modality = ctx.schema.modality(name);
      if (modality == Modality::text) continue;
      const Column* column = ctx.raw.find_column(name);
      if (!column) throw Error("column absent from raw table: " + name);
      for (const Cell& cell : column->cells) {
        corpus.push_back(stringify_cell(cell, modality));
      }
    }
  }
  NetModel model;
  model.vocab = build_vocab(corpus, options.net_vocab_size);
  model.codec = ctx.codec;

  NetConfig cfg = options.net_template;
  cfg.variant = options.net_variant;
  cfg.task = ctx.labels.task;
  cfg.output_dim =
      ctx.labels.task == Task::multiclass ? ctx.labels.n_classes : 1;
  cfg.vocab_size = model.vocab.size();
  cfg.n_numeric = static_cast<int>(view.numeric.cols());
  cfg.categorical_cardinalities = view.cardinalities;
  cfg.n_text_fields =
      static_cast<int>(ctx.schema.columns_of(Modality::text).size());
  if (cfg.variant == NetVariant::all_text) {
    cfg.n_text_fields = static_cast<int>(ctx.schema.feature_columns.size());
  }
  model.max_length = cfg.max_length;

  // Fusion variants need tabular branches; degrade to the text tower when the
  // table has no tabular columns so every strategy stays runnable.
  if ((cfg.variant == NetVariant::fuse_early ||
       cfg.variant == NetVariant::fuse_late) &&
      cfg.n_numeric == 0 && cfg.categorical_cardinalities.empty()) {
    cfg.variant = NetVariant::text_only;
  }

  NetDataset train_data, val_data;
  if (ctx.val_raw && ctx.val_transformed) {
    // Shared holdout: train on every fit row, select on the provided split.
    train_data = prepare_net_dataset(ctx.raw, ctx.transformed, ctx.schema,
                                     model.vocab, model.codec, cfg.variant,
                                     cfg.max_length);
    val_data = prepare_net_dataset(*ctx.val_raw, *ctx.val_transformed,
                                   ctx.schema, model.vocab, model.codec,
                                   cfg.variant, cfg.max_length);
  } else {
    SplitSpec split_spec;
    split_spec.validation_fraction = options.net_holdout_fraction;
    split_spec.seed = Rng::mix(seed, 0x7a11);
    split_spec.stratify = ctx.labels.task != Task::regression;
    const SplitIndices split = split_indices(ctx.transformed, split_spec);
    const DataTable train_raw = select_rows(ctx.raw, split.train);
    const DataTable train_transformed = select_rows(ctx.transformed, split.train);
    const DataTable val_raw = select_rows(ctx.raw, split.validation);
    const DataTable val_transformed =
        select_rows(ctx.transformed, split.validation);
    train_data = prepare_net_dataset(train_raw, train_transformed, ctx.schema,
                                     model.vocab, model.codec, cfg.variant,
                                     cfg.max_length);
    val_data = prepare_net_dataset(val_raw, val_transformed, ctx.schema,
                                   model.vocab, model.codec, cfg.variant,
                                   cfg.max_length);
  }

  model.net = build_net(cfg, Rng::mix(seed, 0xbe7));
  TrainConfig train_cfg = options.net_train;
  train_cfg.seed = Rng::mix(seed, train_cfg.seed);
  train(model.net, train_data, val_data, train_cfg, metric_for(ctx.labels.task));
  return model;
}

PredictionMatrix predict_net_model(const NetModel& model, const DataTable& raw,
                                   const DataTable& transformed,
                                   const FeatureSchema& schema, Task task) {
  const NetDataset data =
      prepare_net_dataset(raw, transformed, schema, model.vocab, model.codec,
                          model.net.config.variant, model.max_length);
  if (data.n_rows() == 0) {
    return PredictionMatrix(0, task == Task::regression ? 1 : 2);
  }
  const PredictionMatrix outputs = forward(model.net, data);
  if (task == Task::binary) {
    // Expand the positive-class column to the two-column zoo contract.
    PredictionMatrix probs(outputs.rows(), 2);
    probs.col(1) = outputs.col(0);
    probs.col(0) = (1.0 - outputs.col(0).array()).matrix();
    return probs;
  }
  return outputs;
}

}  // namespace

FittedModel fit_model(ModelKind kind, const FitContext& ctx, std::uint64_t seed,
                      const FitOptions& options) {
  if (ctx.raw.n_rows() != ctx.transformed.n_rows()) {
    throw Error("fit_model: raw/transformed row mismatch");
  }
  if (ctx.labels.values.size() != ctx.transformed.n_rows()) {
    throw Error("fit_model: label count mismatch");
  }

  FittedModel model;
  model.kind = kind;
  model.task = ctx.labels.task;
  model.signature = signature_of(ctx.schema);

  switch (kind) {
    case ModelKind::ert: {
      const TabularView view = tabular_view(ctx.schema, ctx.transformed);
      const DesignView design{&view.numeric, &view.categorical};
      ErtModel ert{fit_ert_forest(design, ctx.labels, options.ert_trees, seed)};
      model.warnings = ert.forest.warnings;
      model.impl = std::move(ert);
      break;
    }
    case ModelKind::gbm_a:
    case ModelKind::gbm_b: {
      const TabularView view = tabular_view(ctx.schema, ctx.transformed);
      GbmModel gbm = fit_gbm_model(view, ctx.labels, kind == ModelKind::gbm_b);
      model.warnings = gbm.ensemble.warnings;
      model.impl = std::move(gbm);
      break;
    }
    case ModelKind::tab_mlp: {
      const TabularView view = tabular_view(ctx.schema, ctx.transformed);
      if (ctx.val_transformed && ctx.val_labels) {
        const TabularView val_view =
            tabular_view(ctx.schema, *ctx.val_transformed);
        model.impl = fit_mlp_model(view, ctx.labels, val_view, *ctx.val_labels,
                                   options.mlp_train, seed);
      } else {
        model.impl = fit_mlp_model(view, ctx.labels, options.mlp_train,
                                   options.mlp_holdout_fraction, seed);
      }
      break;
    }
    case ModelKind::fusion_net: {
      model.impl = fit_net_model(ctx, seed, options);
      break;
    }
  }
  return model;
}

PredictionMatrix predict(const FittedModel& model, const DataTable& raw,
                         const DataTable& transformed, const FeatureSchema& schema) {
  check_signature(model.signature, schema);
  if (raw.n_rows() != transformed.n_rows()) {
    throw Error("predict: raw/transformed row mismatch");
  }

  if (const auto* ert = std::get_if<ErtModel>(&model.impl)) {
    const TabularView view = tabular_view(schema, transformed);
    const DesignView design{&view.numeric, &view.categorical};
    return predict_forest(ert->forest, design);
  }
  if (const auto* gbm = std::get_if<GbmModel>(&model.impl)) {
    const TabularView view = tabular_view(schema, transformed);
    return predict_gbm_model(*gbm, view);
  }
  if (const auto* mlp = std::get_if<MlpModel>(&model.impl)) {
    const TabularView view = tabular_view(schema, transformed);
    return predict_mlp(*mlp, view, model.task);
  }
  const auto& net = std::get<NetModel>(model.impl);
  return predict_net_model(net, raw, transformed, schema, model.task);
}

}  // namespace mmtab
