#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmtab/schema.hpp"
#include "mmtab/table.hpp"
#include "mmtab/types.hpp"

namespace mmtab {

enum class TreeLoss { squared, logistic, softmax };

// Combined design over a tabular view: numeric columns first, then the
// categorical columns as vocab indices.
struct DesignView {
  const Eigen::MatrixXd* numeric = nullptr;
  const Eigen::MatrixXi* categorical = nullptr;

  int n_rows() const { return static_cast<int>(numeric->rows()); }
  int n_numeric() const { return static_cast<int>(numeric->cols()); }
  int n_features() const {
    return n_numeric() + static_cast<int>(categorical->cols());
  }
  bool is_categorical(int feature) const { return feature >= n_numeric(); }
  double value(int row, int feature) const {
    return (*numeric)(row, feature);
  }
  int category(int row, int feature) const {
    return (*categorical)(row, feature - n_numeric());
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  bool categorical = false;
  double threshold = 0.0;       // numeric split: x <= threshold goes left
  std::vector<int> categories;  // categorical split: membership goes left
  int left = -1;
  int right = -1;
  Eigen::VectorXd value;  // leaf payload, width = ensemble output_dim
};

// Nodes in creation order; node 0 is the root.
struct Tree {
  std::vector<TreeNode> nodes;
};

struct TreeEnsemble {
  TreeLoss loss = TreeLoss::squared;
  int output_dim = 1;
  double learning_rate = 1.0;  // GBM shrinkage; 1 for averaging forests
  Eigen::VectorXd base;        // GBM initial scores, one per output
  std::vector<Tree> trees;
};

// Leaf payload of `tree` for one design row.
const Eigen::VectorXd& tree_leaf(const Tree& tree, const DesignView& design,
                                 int row);

// Extremely randomized forest: every tree sees the full sample; at each node
// sqrt(n_features) random candidate features each draw one uniformly random
// split, and the best impurity reduction (Gini for classification, variance
// for regression) wins. Unbounded depth. For classification each tree votes
// its leaf's majority class; `predict_forest` returns vote fractions.
struct ErtForest {
  Task task = Task::regression;
  int n_classes = 0;  // 0 for regression
  std::vector<Tree> trees;
  std::vector<std::string> warnings;
};

ErtForest fit_ert_forest(const DesignView& design, const Labels& labels,
                         int n_trees, std::uint64_t seed);
PredictionMatrix predict_forest(const ErtForest& forest, const DesignView& design);

struct GbmParams {
  int n_trees = 100;
  int max_depth = 6;
  double learning_rate = 0.1;
  int min_rows_leaf = 20;
  // 0 disables binning (exact splits over sorted values); otherwise split
  // candidates come from at most this many equal-frequency bins per feature.
  int histogram_bins = 0;
};

inline GbmParams gbm_preset_a() { return {100, 6, 0.1, 20, 0}; }
inline GbmParams gbm_preset_b() { return {150, 4, 0.05, 20, 63}; }

// Gradient boosting. Stage k fits a least-squares tree to the negative
// gradient of the loss at the current scores, then fills each leaf with the
// loss-specific Newton step. Classification losses: logistic for binary (one
// tree per stage), softmax for multiclass (one tree per class per stage).
// Numeric features split exactly or by histogram per `params`; categorical
// features always scan one-vs-rest over the categories present in the node.
struct GbmEnsemble {
  Task task = Task::regression;
  int n_classes = 0;
  GbmParams params;
  TreeEnsemble ensemble;
  std::vector<double> stage_losses;  // training loss after each stage
  std::vector<std::string> warnings;
};

GbmEnsemble fit_gbm_ensemble(const DesignView& design, const Labels& labels,
                             const GbmParams& params);
// Scores through the link: probabilities for classification (binary gets two
// columns), raw predictions for regression.
PredictionMatrix predict_gbm(const GbmEnsemble& model, const DesignView& design);
// Raw ensemble scores before any link (regression predictions, binary logit,
// multiclass logits).
Eigen::MatrixXd gbm_scores(const GbmEnsemble& model, const DesignView& design);

// Smoothed target statistics for one categorical feature: index c maps to
// (sum_y(c) + prior_weight * global_mean) / (count(c) + prior_weight).
// Indices never seen at fit time fall back to the global mean.
struct TargetStat {
  Eigen::VectorXd encoding;  // by category index
  double fallback = 0.0;
};

TargetStat fit_target_stat(const Eigen::VectorXi& categories,
                           const Eigen::VectorXd& targets, double prior_weight);

}  // namespace mmtab
