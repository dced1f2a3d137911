#include "mmtab/ensemble.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <utility>

#include "mmtab/rng.hpp"

namespace mmtab {

namespace {

void check_aligned(const std::vector<PredictionMatrix>& preds,
                   const Eigen::VectorXd& y) {
  if (preds.empty()) throw Error("ensemble selection needs at least one model");
  for (const PredictionMatrix& p : preds) {
    if (p.rows() != preds.front().rows() || p.cols() != preds.front().cols()) {
      throw Error("ensemble selection: prediction shapes differ");
    }
  }
  if (preds.front().rows() != y.size()) {
    throw Error("ensemble selection: predictions not aligned with labels");
  }
}

std::vector<int> rows_where(const std::vector<int>& fold_of, int fold,
                            bool equal) {
  std::vector<int> rows;
  for (std::size_t r = 0; r < fold_of.size(); ++r) {
    if ((fold_of[r] == fold) == equal) rows.push_back(static_cast<int>(r));
  }
  return rows;
}

// Original numeric/categorical raw cells that ride along as stacker features;
// text never enters the stacker table.
std::vector<std::string> tabular_columns(const FeatureSchema& schema) {
  std::vector<std::string> names;
  for (const std::string& name : schema.feature_columns) {
    if (schema.modality(name) != Modality::text) names.push_back(name);
  }
  return names;
}

// [base prediction columns | original tabular columns | target?] with
// modalities pinned so re-inference cannot drift.
DataTable stack_feature_table(const std::vector<std::string>& base_columns,
                              const std::vector<PredictionMatrix>& base_preds,
                              const std::vector<std::string>& tab_columns,
                              const FeatureSchema& schema,
                              const DataTable& source, bool with_target) {
  DataTable out;
  out.name = source.name + "#stack";
  std::size_t next = 0;
  for (const PredictionMatrix& preds : base_preds) {
    for (int j = 0; j < preds.cols(); ++j) {
      Column column;
      column.name = base_columns.at(next++);
      column.cells.reserve(preds.rows());
      for (int r = 0; r < preds.rows(); ++r) {
        column.cells.push_back(Cell::numeric(preds(r, j)));
      }
      out.type_overrides[column.name] = Modality::numeric;
      out.columns.push_back(std::move(column));
    }
  }
  if (next != base_columns.size()) {
    throw Error("stack features: base prediction width changed");
  }
  for (const std::string& name : tab_columns) {
    const Column* column = source.find_column(name);
    if (!column) throw Error("stack features: column absent: " + name);
    out.type_overrides[name] = schema.modality(name);
    out.columns.push_back(*column);
  }
  if (with_target) {
    const Column* target = source.find_column(*source.target);
    if (!target) throw Error("stack features: target column absent");
    out.columns.push_back(*target);
    out.target = source.target;
    out.task = source.task;
  }
  return out;
}

}  // namespace

EnsembleWeights ensemble_selection(const std::vector<PredictionMatrix>& preds,
                                   const Eigen::VectorXd& y, MetricKind metric,
                                   int rounds) {
  check_aligned(preds, y);
  if (rounds <= 0) throw Error("ensemble selection needs at least one round");

  const int m = static_cast<int>(preds.size());
  Eigen::MatrixXd sum =
      Eigen::MatrixXd::Zero(preds.front().rows(), preds.front().cols());
  std::vector<int> counts(static_cast<std::size_t>(m), 0);
  int selections = 0;
  double current = -std::numeric_limits<double>::infinity();

  for (int round = 0; round < rounds; ++round) {
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < m; ++i) {
      const PredictionMatrix candidate = (sum + preds[i]) / (selections + 1);
      const double s = score(metric, candidate, y);
      if (s > best_score) {  // strict: ties keep the lowest index
        best_score = s;
        best = i;
      }
    }
    if (selections > 0 && best_score <= current) break;
    sum += preds[best];
    ++counts[best];
    ++selections;
    current = best_score;
  }

  EnsembleWeights out;
  out.selections = selections;
  out.validation_score = current;
  out.weights.resize(static_cast<std::size_t>(m), 0.0);
  for (int i = 0; i < m; ++i) {
    out.weights[i] = static_cast<double>(counts[i]) / selections;
  }
  return out;
}

PredictionMatrix blend_predictions(const std::vector<PredictionMatrix>& preds,
                                   const std::vector<double>& weights) {
  if (preds.size() != weights.size()) {
    throw Error("blend: one weight per prediction matrix required");
  }
  if (preds.empty()) throw Error("blend: nothing to blend");
  PredictionMatrix out =
      Eigen::MatrixXd::Zero(preds.front().rows(), preds.front().cols());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].rows() != out.rows() || preds[i].cols() != out.cols()) {
      throw Error("blend: prediction shapes differ");
    }
    out += weights[i] * preds[i];
  }
  return out;
}

std::vector<int> make_folds(const Labels& labels, int k, std::uint64_t seed) {
  const int n = static_cast<int>(labels.values.size());
  if (k < 2) throw Error("bagging needs at least two folds");
  if (n < k) throw Error("bagging needs at least one row per fold");

  Rng rng(Rng::mix(seed, 0xf01d5));
  std::vector<int> order;
  if (labels.task != Task::regression && labels.n_classes > 0) {
    // Deal each class's shuffled rows into the round-robin stream; fold sizes
    // stay within one both overall and within every class.
    std::vector<std::vector<int>> by_class(
        static_cast<std::size_t>(labels.n_classes));
    for (int r = 0; r < n; ++r) {
      by_class[static_cast<std::size_t>(labels.values(r))].push_back(r);
    }
    for (std::vector<int>& rows : by_class) {
      rng.shuffle(rows);
      order.insert(order.end(), rows.begin(), rows.end());
    }
  } else {
    order = rng.permutation(n);
  }

  std::vector<int> fold_of(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) fold_of[order[i]] = i % k;
  return fold_of;
}

Labels select_labels(const Labels& labels, const std::vector<int>& rows) {
  Labels out;
  out.task = labels.task;
  out.n_classes = labels.n_classes;
  out.values.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.values(static_cast<Eigen::Index>(i)) = labels.values(rows[i]);
  }
  return out;
}

BaggedModel oof_fit(ModelKind kind, const FitContext& ctx,
                    const std::vector<int>& fold_of, int k, std::uint64_t seed,
                    const FitOptions& options) {
  const int n = ctx.raw.n_rows();
  if (static_cast<int>(fold_of.size()) != n) {
    throw Error("oof_fit: fold assignment not aligned with table");
  }
  if (k < 2) throw Error("oof_fit: need at least two folds");

  FitOptions opts = options;
  if (kind == ModelKind::fusion_net) {
    opts.net_train.epochs = std::min(opts.net_train.epochs, 5);
  }

  BaggedModel out;
  out.kind = kind;
  for (int fold = 0; fold < k; ++fold) {
    const std::vector<int> train_rows = rows_where(fold_of, fold, false);
    const std::vector<int> held_rows = rows_where(fold_of, fold, true);
    if (train_rows.empty() || held_rows.empty()) {
      throw Error("oof_fit: fold " + std::to_string(fold) + " is degenerate");
    }

    const Labels train_labels = select_labels(ctx.labels, train_rows);
    if (ctx.labels.task != Task::regression) {
      std::set<int> present;
      for (Eigen::Index i = 0; i < train_labels.values.size(); ++i) {
        present.insert(static_cast<int>(train_labels.values(i)));
      }
      for (int c = 0; c < ctx.labels.n_classes; ++c) {
        if (!present.count(c)) {
          out.warnings.push_back("fold " + std::to_string(fold) +
                                 ": class '" + ctx.codec.classes[c] +
                                 "' absent from training rows");
        }
      }
    }

    const DataTable train_raw = select_rows(ctx.raw, train_rows);
    const DataTable train_transformed = select_rows(ctx.transformed, train_rows);
    const FitContext fold_ctx{train_raw, train_transformed, ctx.schema,
                              train_labels, ctx.codec};
    FittedModel model = fit_model(kind, fold_ctx, Rng::mix(seed, fold + 1), opts);
    for (const std::string& warning : model.warnings) {
      out.warnings.push_back("fold " + std::to_string(fold) + ": " + warning);
    }

    const DataTable held_raw = select_rows(ctx.raw, held_rows);
    const DataTable held_transformed = select_rows(ctx.transformed, held_rows);
    const PredictionMatrix held =
        predict(model, held_raw, held_transformed, ctx.schema);
    if (out.oof.size() == 0) out.oof = Eigen::MatrixXd::Zero(n, held.cols());
    for (std::size_t i = 0; i < held_rows.size(); ++i) {
      out.oof.row(held_rows[i]) = held.row(static_cast<Eigen::Index>(i));
    }
    out.fold_models.push_back(std::move(model));
  }
  return out;
}

PredictionMatrix predict_bagged(const BaggedModel& model, const DataTable& raw,
                                const DataTable& transformed,
                                const FeatureSchema& schema) {
  if (model.fold_models.empty()) throw Error("bagged model has no folds");
  PredictionMatrix sum;
  for (const FittedModel& fold_model : model.fold_models) {
    const PredictionMatrix preds = predict(fold_model, raw, transformed, schema);
    if (sum.size() == 0) {
      sum = preds;
    } else {
      sum += preds;
    }
  }
  return sum / static_cast<double>(model.fold_models.size());
}

WeightedEnsemble fit_weighted_ensemble(const std::vector<ModelKind>& kinds,
                                       const FitContext& ctx,
                                       std::uint64_t seed, MetricKind metric,
                                       const FitOptions& options,
                                       double validation_fraction, int rounds) {
  if (kinds.empty()) throw Error("weighted ensemble needs at least one model");

  WeightedEnsemble out;
  out.kinds = kinds;
  out.seed = seed;

  // Members fit on the train side and are scored on a single shared
  // validation table; selection weights come from those scores. When the
  // caller already holds out a validation split it is reused verbatim,
  // otherwise one is carved here.
  DataTable train_raw, train_transformed, val_raw, val_transformed;
  Labels train_labels, val_labels;
  if (ctx.val_raw && ctx.val_transformed && ctx.val_labels) {
    train_raw = ctx.raw;
    train_transformed = ctx.transformed;
    train_labels = ctx.labels;
    val_raw = *ctx.val_raw;
    val_transformed = *ctx.val_transformed;
    val_labels = *ctx.val_labels;
  } else {
    SplitSpec spec;
    spec.validation_fraction = validation_fraction;
    spec.seed = Rng::mix(seed, 0x3e1ec7);
    spec.stratify = ctx.labels.task != Task::regression;
    const SplitIndices split = split_indices(ctx.raw, spec, &out.warnings);
    train_raw = select_rows(ctx.raw, split.train);
    train_transformed = select_rows(ctx.transformed, split.train);
    train_labels = select_labels(ctx.labels, split.train);
    val_raw = select_rows(ctx.raw, split.validation);
    val_transformed = select_rows(ctx.transformed, split.validation);
    val_labels = select_labels(ctx.labels, split.validation);
  }
  FitContext train_ctx{train_raw, train_transformed, ctx.schema,
                       train_labels, ctx.codec};
  train_ctx.val_raw = &val_raw;
  train_ctx.val_transformed = &val_transformed;
  train_ctx.val_labels = &val_labels;

  std::vector<PredictionMatrix> val_preds;
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    FittedModel model =
        fit_model(kinds[i], train_ctx, Rng::mix(seed, 0xab1 + i), options);
    out.warnings.insert(out.warnings.end(), model.warnings.begin(),
                        model.warnings.end());
    val_preds.push_back(predict(model, val_raw, val_transformed, ctx.schema));
    out.models.push_back(std::move(model));
  }
  out.weights = ensemble_selection(val_preds, val_labels.values, metric, rounds);
  return out;
}

PredictionMatrix predict_weighted(const WeightedEnsemble& ensemble,
                                  const DataTable& raw,
                                  const DataTable& transformed,
                                  const FeatureSchema& schema) {
  if (ensemble.models.empty()) throw Error("weighted ensemble is empty");
  PredictionMatrix out;
  for (std::size_t i = 0; i < ensemble.models.size(); ++i) {
    const double w = ensemble.weights.weights[i];
    if (w == 0.0) continue;  // unselected models never run at inference
    const PredictionMatrix preds =
        predict(ensemble.models[i], raw, transformed, schema);
    if (out.size() == 0) {
      out = w * preds;
    } else {
      out += w * preds;
    }
  }
  return out;
}

StackEnsemble fit_stack(const FitContext& ctx,
                        const std::vector<ModelKind>& base_specs,
                        const std::vector<ModelKind>& stacker_specs, int k,
                        std::uint64_t seed, MetricKind metric,
                        const FitOptions& options) {
  if (base_specs.empty()) throw Error("stack needs at least one base model");
  if (stacker_specs.empty()) throw Error("stack needs at least one stacker");
  for (const ModelKind kind : stacker_specs) {
    if (kind == ModelKind::fusion_net) {
      throw Error("the fusion net cannot be a stacker");
    }
  }

  StackEnsemble out;
  out.k = k;
  out.seed = seed;
  out.fold_of = make_folds(ctx.labels, k, seed);
  out.tab_columns = tabular_columns(ctx.schema);

  std::vector<PredictionMatrix> base_oof;
  for (std::size_t i = 0; i < base_specs.size(); ++i) {
    BaggedModel base = oof_fit(base_specs[i], ctx, out.fold_of, k,
                               Rng::mix(seed, 0xba5e + i), options);
    for (const std::string& warning : base.warnings) {
      out.warnings.push_back(std::string(to_string(base.kind)) + ": " + warning);
    }
    base_oof.push_back(base.oof);
    for (int j = 0; j < base.oof.cols(); ++j) {
      out.base_columns.push_back("b" + std::to_string(i) + "_" +
                                 to_string(base.kind) + "_p" +
                                 std::to_string(j));
    }
    out.base.push_back(std::move(base));
  }

  const DataTable stack_raw = stack_feature_table(
      out.base_columns, base_oof, out.tab_columns, ctx.schema, ctx.raw, true);
  out.feature_schema = infer_schema(stack_raw);
  const DataTable stack_transformed =
      fit_transform(out.feature_schema, stack_raw, true);
  const FitContext stack_ctx{stack_raw, stack_transformed, out.feature_schema,
                             ctx.labels, ctx.codec};

  std::vector<PredictionMatrix> stacker_oof;
  for (std::size_t i = 0; i < stacker_specs.size(); ++i) {
    BaggedModel stacker = oof_fit(stacker_specs[i], stack_ctx, out.fold_of, k,
                                  Rng::mix(seed, 0x57ac + i), options);
    for (const std::string& warning : stacker.warnings) {
      out.warnings.push_back("stacker " + std::string(to_string(stacker.kind)) +
                             ": " + warning);
    }
    stacker_oof.push_back(stacker.oof);
    out.stackers.push_back(std::move(stacker));
  }
  out.final_weights =
      ensemble_selection(stacker_oof, ctx.labels.values, metric, 100);
  return out;
}

PredictionMatrix predict_stack(const StackEnsemble& stack,
                               const DataTable& raw,
                               const DataTable& transformed,
                               const FeatureSchema& schema) {
  std::vector<PredictionMatrix> base_preds;
  for (const BaggedModel& base : stack.base) {
    base_preds.push_back(predict_bagged(base, raw, transformed, schema));
  }
  const DataTable features = stack_feature_table(
      stack.base_columns, base_preds, stack.tab_columns, schema, raw, false);
  FeatureSchema feature_schema = stack.feature_schema;
  const DataTable features_transformed =
      fit_transform(feature_schema, features, false);

  PredictionMatrix out;
  for (std::size_t i = 0; i < stack.stackers.size(); ++i) {
    const double w = stack.final_weights.weights[i];
    if (w == 0.0) continue;
    const PredictionMatrix preds = predict_bagged(
        stack.stackers[i], features, features_transformed, stack.feature_schema);
    if (out.size() == 0) {
      out = w * preds;
    } else {
      out += w * preds;
    }
  }
  return out;
}

nlohmann::json weighted_manifest(const WeightedEnsemble& ensemble) {
  nlohmann::json object;
  object["type"] = "weighted";
  object["seed"] = ensemble.seed;
  nlohmann::json kinds = nlohmann::json::array();
  for (const ModelKind kind : ensemble.kinds) kinds.push_back(to_string(kind));
  object["kinds"] = std::move(kinds);
  object["weights"] = ensemble.weights.weights;
  object["selections"] = ensemble.weights.selections;
  object["validation_score"] = ensemble.weights.validation_score;
  return object;
}

nlohmann::json stack_manifest(const StackEnsemble& stack) {
  nlohmann::json object;
  object["type"] = "stack";
  object["seed"] = stack.seed;
  object["k"] = stack.k;
  object["fold_assignment"] = stack.fold_of;
  nlohmann::json base = nlohmann::json::array();
  for (const BaggedModel& model : stack.base) base.push_back(to_string(model.kind));
  object["base"] = std::move(base);
  nlohmann::json stackers = nlohmann::json::array();
  for (const BaggedModel& model : stack.stackers) {
    stackers.push_back(to_string(model.kind));
  }
  object["stackers"] = std::move(stackers);
  object["weights"] = stack.final_weights.weights;
  object["validation_score"] = stack.final_weights.validation_score;
  return object;
}

}  // namespace mmtab
