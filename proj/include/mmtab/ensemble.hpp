#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmtab/metrics.hpp"
#include "mmtab/models.hpp"
#include "mmtab/schema.hpp"
#include "mmtab/table.hpp"

namespace mmtab {

// Output of forward selection: non-negative weights aligned with the
// candidate order, summing to 1 over the rounds actually used.
struct EnsembleWeights {
  std::vector<double> weights;
  double validation_score = 0.0;  // metric of the blend on the selection set
  int selections = 0;             // rounds used before early stop
};

// Greedy selection with replacement: each round adds the candidate whose
// inclusion maximizes the metric of the uniform average over the selected
// multiset (ties keep the lowest index), stopping early once no addition
// improves. The blend therefore never scores below the best single model.
EnsembleWeights ensemble_selection(const std::vector<PredictionMatrix>& preds,
                                   const Eigen::VectorXd& y, MetricKind metric,
                                   int rounds = 100);

// Literal weighted sum; prediction shapes must agree.
PredictionMatrix blend_predictions(const std::vector<PredictionMatrix>& preds,
                                   const std::vector<double>& weights);

// Fold id per row. Sizes differ by at most one; classification tasks are
// additionally stratified, spreading every class across folds within one row.
std::vector<int> make_folds(const Labels& labels, int k, std::uint64_t seed);

Labels select_labels(const Labels& labels, const std::vector<int>& rows);

// One model spec trained k times, each fit excluding one fold. oof(r) comes
// from the model whose held-out fold contains r, so no prediction in it was
// made by a model that saw that row's label.
struct BaggedModel {
  ModelKind kind = ModelKind::ert;
  std::vector<FittedModel> fold_models;  // index = held-out fold
  PredictionMatrix oof;
  std::vector<std::string> warnings;
};

// Fusion-net folds train with at most 5 epochs to bound the k-fold cost.
BaggedModel oof_fit(ModelKind kind, const FitContext& ctx,
                    const std::vector<int>& fold_of, int k, std::uint64_t seed,
                    const FitOptions& options = {});

// Bagged inference: mean of the k fold models' predictions.
PredictionMatrix predict_bagged(const BaggedModel& model, const DataTable& raw,
                                const DataTable& transformed,
                                const FeatureSchema& schema);

// Base models independently trained on a common train/validation split, then
// combined by ensemble_selection on the shared validation predictions.
struct WeightedEnsemble {
  std::vector<ModelKind> kinds;
  std::vector<FittedModel> models;  // fitted on the shared train split
  EnsembleWeights weights;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

WeightedEnsemble fit_weighted_ensemble(const std::vector<ModelKind>& kinds,
                                       const FitContext& ctx,
                                       std::uint64_t seed, MetricKind metric,
                                       const FitOptions& options = {},
                                       double validation_fraction = 0.1,
                                       int rounds = 100);

PredictionMatrix predict_weighted(const WeightedEnsemble& ensemble,
                                  const DataTable& raw,
                                  const DataTable& transformed,
                                  const FeatureSchema& schema);

// One stacker level over an OOF-fitted base layer. Stacker features are every
// base model's prediction columns concatenated with the original numeric and
// categorical columns, never raw text.
struct StackEnsemble {
  int k = 5;
  std::vector<int> fold_of;
  std::vector<BaggedModel> base;
  std::vector<BaggedModel> stackers;
  EnsembleWeights final_weights;  // over stackers, from their OOF predictions
  FeatureSchema feature_schema;   // schema of the stacker feature table
  std::vector<std::string> base_columns;  // stacker feature names, base part
  std::vector<std::string> tab_columns;   // original tabular columns kept
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

// Rejects fusion_net stacker specs: the net only ever joins the base layer.
StackEnsemble fit_stack(const FitContext& ctx,
                        const std::vector<ModelKind>& base_specs,
                        const std::vector<ModelKind>& stacker_specs, int k,
                        std::uint64_t seed, MetricKind metric,
                        const FitOptions& options = {});

PredictionMatrix predict_stack(const StackEnsemble& stack,
                               const DataTable& raw,
                               const DataTable& transformed,
                               const FeatureSchema& schema);

// Audit manifests: model kinds, seed, weights, fold assignment.
nlohmann::json weighted_manifest(const WeightedEnsemble& ensemble);
nlohmann::json stack_manifest(const StackEnsemble& stack);

}  // namespace mmtab
