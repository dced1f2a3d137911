#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "mmtab/net.hpp"
#include "mmtab/schema.hpp"
#include "mmtab/table.hpp"
#include "mmtab/trees.hpp"

namespace mmtab {

enum class ModelKind { ert, gbm_a, gbm_b, tab_mlp, fusion_net };

const char* to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

// Feature columns and modalities a fitted model expects; predict rejects
// tables that disagree.
struct FeatureSignature {
  std::vector<std::string> columns;
  std::vector<Modality> modalities;

  bool operator==(const FeatureSignature&) const = default;
};

FeatureSignature signature_of(const FeatureSchema& schema);

struct ErtModel {
  ErtForest forest;
};

struct GbmModel {
  GbmEnsemble ensemble;
  // Preset b replaces categorical columns with smoothed target statistics;
  // one entry per categorical column, empty for preset a.
  std::vector<TargetStat> cat_stats;
};

// Two ReLU hidden layers (128, 64) over [numeric | one-hot categorical].
struct MlpModel {
  ParamMap params;
  int n_numeric = 0;
  std::vector<int> cardinalities;
  int output_dim = 1;  // network outputs: 1 (regression, binary logit) or K
};

struct NetModel {
  TrainedNet net;
  Vocab vocab;
  LabelCodec codec;
  int max_length = 512;
};

struct FittedModel {
  ModelKind kind = ModelKind::ert;
  Task task = Task::binary;
  FeatureSignature signature;
  std::vector<std::string> warnings;
  std::variant<ErtModel, GbmModel, MlpModel, NetModel> impl;
};

struct FitOptions {
  int ert_trees = 100;
  // tab_mlp: batch 128 / 10 epochs from TrainConfig defaults; the peak rate
  // suits a from-scratch MLP on standardized inputs.
  TrainConfig mlp_train = {.peak_lr = 1e-3};
  double mlp_holdout_fraction = 0.1;
  // fusion_net settings; data-dependent NetConfig fields are filled at fit.
  NetVariant net_variant = NetVariant::fuse_late;
  NetConfig net_template;
  TrainConfig net_train;
  int net_vocab_size = 2000;
  double net_holdout_fraction = 0.1;
};

// Everything fit needs: the raw table (pre-standardization cells, used by the
// all_text variant), its transformed counterpart, the fitted schema, encoded
// labels, and the label codec.
struct FitContext {
  const DataTable& raw;
  const DataTable& transformed;
  const FeatureSchema& schema;
  const Labels& labels;
  const LabelCodec& codec;
  // Optional shared holdout. When set, validation-driven fits (net, MLP)
  // select on these rows instead of carving their own split from the fit
  // table; the fit table is then used for training in full.
  const DataTable* val_raw = nullptr;
  const DataTable* val_transformed = nullptr;
  const Labels* val_labels = nullptr;
};

FittedModel fit_model(ModelKind kind, const FitContext& ctx, std::uint64_t seed,
                      const FitOptions& options = {});

// Class probabilities (binary included: two columns) or regression scalars.
// Throws when the table's feature signature differs from fit time, naming the
// offending columns.
PredictionMatrix predict(const FittedModel& model, const DataTable& raw,
                         const DataTable& transformed, const FeatureSchema& schema);

// Matrix-level MLP fitting, exposed for direct tests. Holdout rows early-stop
// the optimizer; the best-scoring epoch's parameters are kept. The first form
// carves the holdout from `view`; the second validates on an explicit set.
MlpModel fit_mlp_model(const TabularView& view, const Labels& labels,
                       const TrainConfig& cfg, double holdout_fraction,
                       std::uint64_t seed);
MlpModel fit_mlp_model(const TabularView& view, const Labels& labels,
                       const TabularView& val_view, const Labels& val_labels,
                       const TrainConfig& cfg, std::uint64_t seed);
PredictionMatrix predict_mlp(const MlpModel& model, const TabularView& view,
                             Task task);

}  // namespace mmtab
