#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mmtab/metrics.hpp"
#include "mmtab/schema.hpp"
#include "mmtab/table.hpp"
#include "mmtab/text.hpp"
#include "mmtab/types.hpp"

namespace mmtab {

enum class NetVariant { text_only, all_text, fuse_early, fuse_late };

const char* to_string(NetVariant variant);

struct FuseEncoderConfig {
  int layers = 6;
  int units = 64;
  int heads = 4;
  int ffn = 256;
};

struct NetConfig {
  NetVariant variant = NetVariant::text_only;
  int hidden_size = 64;  // d
  int n_layers = 2;
  int n_heads = 4;
  int ffn_size = 256;
  // Fusion encoder used by fuse_early; defaults follow the benchmark setup.
  FuseEncoderConfig fuse_early_encoder;
  int cat_embed_units = 32;
  int cat_bottleneck = 64;
  int late_bottleneck = 128;
  double leaky_slope = 0.1;
  int vocab_size = 0;
  int max_length = 512;
  int n_numeric = 0;
  std::vector<int> categorical_cardinalities;
  int n_text_fields = 0;
  // 1 for regression and binary (logistic link), n_classes for multiclass.
  int output_dim = 1;
  Task task = Task::binary;
};

struct TrainConfig {
  double peak_lr = 5e-5;
  double warmup_fraction = 0.1;
  int batch_size = 128;
  double weight_decay = 1e-4;
  int epochs = 10;
  double layer_decay = 0.8;  // tau
  int checkpoints_to_average = 3;
  int patience = 3;
  std::uint64_t seed = 0;
};

using ParamMap = std::map<std::string, Eigen::MatrixXd>;

struct Checkpoint {
  int epoch = 0;
  double validation_score = 0.0;
  ParamMap params;
};

struct TrainedNet {
  NetConfig config;
  ParamMap params;  // live weights, mutated by train()
  // Distance from the output head (head = 0), per parameter.
  std::map<std::string, int> param_depth;
  std::vector<Checkpoint> checkpoint_log;
  ParamMap final_params;  // average of the best checkpoints; empty before train
  // Effective learning rate (schedule x layer multiplier) applied at the most
  // recent optimizer step, per parameter.
  std::map<std::string, double> last_step_scale;

  const ParamMap& inference_params() const {
    return final_params.empty() ? params : final_params;
  }
};

// Tokenized, transformed rows ready for the net.
struct NetDataset {
  std::vector<MergedInput> text;
  Eigen::MatrixXd numeric;      // n x n_numeric (standardized)
  Eigen::MatrixXi categorical;  // n x n_categorical (vocab indices)
  Labels labels;                // empty values when the table is unlabeled
  int n_rows() const { return static_cast<int>(text.size()); }
};

// Builds model inputs. Text fields come from the text columns in schema
// order; the all_text variant appends each non-text column as an extra field,
// stringified from the raw (pre-standardization) table. Labels are encoded
// when the table carries its target column.
NetDataset prepare_net_dataset(const DataTable& raw, const DataTable& transformed,
                               const FeatureSchema& schema, const Vocab& vocab,
                               const LabelCodec& codec, NetVariant variant,
                               int max_length = 512);

// Deterministic initialization; same (config, seed) gives bit-identical
// parameters. Fusion variants require at least one tabular column.
TrainedNet build_net(const NetConfig& config, std::uint64_t seed);

// Probabilities for classification (binary: single column through the
// logistic link), raw predictions for regression. The two-argument form runs
// the inference parameters over all rows in internal batches.
PredictionMatrix forward(const TrainedNet& net, const ParamMap& params,
                         const NetDataset& data, const std::vector<int>& rows);
PredictionMatrix forward(const TrainedNet& net, const NetDataset& data);

// Top-layer CLS vector (text_only/all_text/fuse_early) or the text-branch CLS
// (fuse_late), one row per input row.
Eigen::MatrixXd embed(const TrainedNet& net, const NetDataset& data);

// Loss and parameter gradients at `params` on one batch; used by train() and
// by the finite-difference checks.
double loss_value(const TrainedNet& net, const ParamMap& params,
                  const NetDataset& data, const std::vector<int>& rows);
ParamMap loss_grads(const TrainedNet& net, const ParamMap& params,
                    const NetDataset& data, const std::vector<int>& rows,
                    double* loss_out = nullptr);

// Slanted triangular schedule: 0 at step 0, peak_lr at ceil(warmup * total),
// 0 again at total_steps.
double lr_at(long long step, long long total_steps, const TrainConfig& cfg);

// tau^depth, depth counted from the output head.
double layer_multiplier(int depth, double tau);

// Runs the decoupled-weight-decay Adam loop with per-parameter step size
// lr_at(step) * layer_multiplier(depth), scores validation once per epoch,
// logs a checkpoint per epoch, stops early after `patience` epochs without
// improvement, and averages the best checkpoints into final_params.
void train(TrainedNet& net, const NetDataset& train_data,
           const NetDataset& val_data, const TrainConfig& cfg, MetricKind metric);

void save_params(const std::string& path, const ParamMap& params);
ParamMap load_params(const std::string& path);

}  // namespace mmtab
