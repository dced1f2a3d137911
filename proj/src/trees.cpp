#include "mmtab/trees.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "mmtab/rng.hpp"

namespace mmtab {

namespace {

bool goes_left(const TreeNode& node, const DesignView& design, int row) {
  if (node.categorical) {
    const int c = design.category(row, node.feature);
    return std::binary_search(node.categories.begin(), node.categories.end(), c);
  }
  return design.value(row, node.feature) <= node.threshold;
}

}  // namespace

const Eigen::VectorXd& tree_leaf(const Tree& tree, const DesignView& design,
                                 int row) {
  int at = 0;
  while (tree.nodes[static_cast<std::size_t>(at)].feature >= 0) {
    const TreeNode& node = tree.nodes[static_cast<std::size_t>(at)];
    at = goes_left(node, design, row) ? node.left : node.right;
  }
  return tree.nodes[static_cast<std::size_t>(at)].value;
}

namespace {

// ---------------------------------------------------------------------------
// Extremely randomized trees

struct ErtContext {
  const DesignView& design;
  const Eigen::VectorXd& y;  // class indices or regression targets
  int n_classes;             // 0 for regression
  Rng rng;
  std::vector<TreeNode> nodes;
};

double gini(const Eigen::VectorXd& counts, double total) {
  if (total <= 0.0) return 0.0;
  double sum_sq = 0.0;
  for (Eigen::Index c = 0; c < counts.size(); ++c) sum_sq += counts[c] * counts[c];
  return 1.0 - sum_sq / (total * total);
}

// Node impurity times row count, so gains telescope without re-weighting.
double ert_impurity(const ErtContext& ctx, const std::vector<int>& rows) {
  if (ctx.n_classes > 0) {
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(ctx.n_classes);
    for (const int r : rows) counts[static_cast<int>(ctx.y[r])] += 1.0;
    return gini(counts, static_cast<double>(rows.size())) *
           static_cast<double>(rows.size());
  }
  double mean = 0.0;
  for (const int r : rows) mean += ctx.y[r];
  mean /= static_cast<double>(rows.size());
  double ss = 0.0;
  for (const int r : rows) ss += (ctx.y[r] - mean) * (ctx.y[r] - mean);
  return ss;
}

Eigen::VectorXd ert_leaf_value(const ErtContext& ctx, const std::vector<int>& rows) {
  if (ctx.n_classes > 0) {
    Eigen::VectorXd dist = Eigen::VectorXd::Zero(ctx.n_classes);
    for (const int r : rows) dist[static_cast<int>(ctx.y[r])] += 1.0;
    dist /= static_cast<double>(rows.size());
    return dist;
  }
  double mean = 0.0;
  for (const int r : rows) mean += ctx.y[r];
  Eigen::VectorXd value(1);
  value[0] = mean / static_cast<double>(rows.size());
  return value;
}

bool ert_pure(const ErtContext& ctx, const std::vector<int>& rows) {
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (ctx.y[rows[i]] != ctx.y[rows[0]]) return false;
  }
  return true;
}

struct ErtSplit {
  bool valid = false;
  int feature = -1;
  bool categorical = false;
  double threshold = 0.0;
  int category = -1;
  double gain = 0.0;
  std::vector<int> left, right;
};

// One uniformly random split for a candidate feature, or invalid when the
// feature is constant over the node.
ErtSplit ert_random_split(ErtContext& ctx, const std::vector<int>& rows,
                          int feature, double parent_impurity) {
  ErtSplit split;
  split.feature = feature;
  if (ctx.design.is_categorical(feature)) {
    split.categorical = true;
    std::vector<int> seen;
    for (const int r : rows) seen.push_back(ctx.design.category(r, feature));
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    if (seen.size() < 2) return split;
    split.category = seen[static_cast<std::size_t>(
        ctx.rng.index(static_cast<int>(seen.size())))];
    for (const int r : rows) {
      (ctx.design.category(r, feature) == split.category ? split.left
                                                         : split.right)
          .push_back(r);
    }
  } else {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const int r : rows) {
      lo = std::min(lo, ctx.design.value(r, feature));
      hi = std::max(hi, ctx.design.value(r, feature));
    }
    if (!(lo < hi)) return split;
    split.threshold = ctx.rng.uniform(lo, hi);
    for (const int r : rows) {
      (ctx.design.value(r, feature) <= split.threshold ? split.left : split.right)
          .push_back(r);
    }
  }
  if (split.left.empty() || split.right.empty()) return split;
  split.gain = parent_impurity - ert_impurity(ctx, split.left) -
               ert_impurity(ctx, split.right);
  split.valid = true;
  return split;
}

int ert_grow(ErtContext& ctx, const std::vector<int>& rows) {
  const int id = static_cast<int>(ctx.nodes.size());
  ctx.nodes.emplace_back();
  const int n_features = ctx.design.n_features();
  if (rows.size() < 2 || n_features == 0 || ert_pure(ctx, rows)) {
    ctx.nodes[static_cast<std::size_t>(id)].value = ert_leaf_value(ctx, rows);
    return id;
  }
  const int k = std::max(
      1, static_cast<int>(std::sqrt(static_cast<double>(n_features))));
  std::vector<int> candidates(static_cast<std::size_t>(n_features));
  std::iota(candidates.begin(), candidates.end(), 0);
  // Partial Fisher-Yates: the first k entries become the candidate draw.
  for (int i = 0; i < k; ++i) {
    const int j = i + ctx.rng.index(n_features - i);
    std::swap(candidates[static_cast<std::size_t>(i)],
              candidates[static_cast<std::size_t>(j)]);
  }

  const double parent = ert_impurity(ctx, rows);
  ErtSplit best;
  for (int i = 0; i < k; ++i) {
    ErtSplit split =
        ert_random_split(ctx, rows, candidates[static_cast<std::size_t>(i)], parent);
    if (split.valid && (!best.valid || split.gain > best.gain)) {
      best = std::move(split);
    }
  }
  if (!best.valid || best.gain <= 1e-12) {
    ctx.nodes[static_cast<std::size_t>(id)].value = ert_leaf_value(ctx, rows);
    return id;
  }

  ctx.nodes[static_cast<std::size_t>(id)].feature = best.feature;
  ctx.nodes[static_cast<std::size_t>(id)].categorical = best.categorical;
  ctx.nodes[static_cast<std::size_t>(id)].threshold = best.threshold;
  if (best.categorical) {
    ctx.nodes[static_cast<std::size_t>(id)].categories = {best.category};
  }
  const int left = ert_grow(ctx, best.left);
  const int right = ert_grow(ctx, best.right);
  ctx.nodes[static_cast<std::size_t>(id)].left = left;
  ctx.nodes[static_cast<std::size_t>(id)].right = right;
  return id;
}

}  // namespace

ErtForest fit_ert_forest(const DesignView& design, const Labels& labels,
                         int n_trees, std::uint64_t seed) {
  if (design.n_rows() < 2) throw Error("fit_ert_forest: need at least 2 rows");
  if (labels.values.size() != design.n_rows()) {
    throw Error("fit_ert_forest: label count mismatch");
  }
  if (n_trees < 1) throw Error("fit_ert_forest: n_trees must be positive");

  ErtForest forest;
  forest.task = labels.task;
  forest.n_classes = labels.task == Task::regression ? 0 : labels.n_classes;

  bool constant = true;
  for (Eigen::Index i = 1; i < labels.values.size(); ++i) {
    constant = constant && labels.values[i] == labels.values[0];
  }
  if (constant && forest.n_classes > 0) {
    forest.warnings.push_back(
        "single-class target: fitted a constant predictor");
    ErtContext ctx{design, labels.values, forest.n_classes, Rng(seed), {}};
    std::vector<int> rows(static_cast<std::size_t>(design.n_rows()));
    std::iota(rows.begin(), rows.end(), 0);
    Tree tree;
    TreeNode leaf;
    leaf.value = ert_leaf_value(ctx, rows);
    tree.nodes.push_back(std::move(leaf));
    forest.trees.push_back(std::move(tree));
    return forest;
  }

  std::vector<int> rows(static_cast<std::size_t>(design.n_rows()));
  std::iota(rows.begin(), rows.end(), 0);
  forest.trees.reserve(static_cast<std::size_t>(n_trees));
  for (int t = 0; t < n_trees; ++t) {
    ErtContext ctx{design, labels.values, forest.n_classes,
                   Rng(Rng::mix(seed, static_cast<std::uint64_t>(t) + 1)), {}};
    ert_grow(ctx, rows);
    Tree tree;
    tree.nodes = std::move(ctx.nodes);
    forest.trees.push_back(std::move(tree));
  }
  return forest;
}

PredictionMatrix predict_forest(const ErtForest& forest, const DesignView& design) {
  const int n = design.n_rows();
  const int width = forest.n_classes > 0 ? forest.n_classes : 1;
  PredictionMatrix out = PredictionMatrix::Zero(n, width);
  const double inv = 1.0 / static_cast<double>(forest.trees.size());
  for (int r = 0; r < n; ++r) {
    for (const Tree& tree : forest.trees) {
      const Eigen::VectorXd& leaf = tree_leaf(tree, design, r);
      if (forest.n_classes > 0) {
        Eigen::Index vote = 0;
        leaf.maxCoeff(&vote);  // first maximal class wins ties
        out(r, vote) += inv;
      } else {
        out(r, 0) += inv * leaf[0];
      }
    }
  }
  return out;
}

namespace {

// ---------------------------------------------------------------------------
// Gradient boosting

struct FeatureBins {
  // Upper edge per bin (last bin open-ended); empty means exact splits.
  std::vector<double> edges;
  // Bin index per training row, aligned with the fit-time design.
  std::vector<int> ids;
};

std::vector<double> bin_edges(std::vector<double> values, int max_bins) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  if (static_cast<int>(values.size()) <= max_bins) return values;
  std::vector<double> edges;
  const double n = static_cast<double>(values.size());
  for (int b = 1; b <= max_bins; ++b) {
    const auto at = static_cast<std::size_t>(
        std::min(n - 1.0, std::floor(n * static_cast<double>(b) /
                                     static_cast<double>(max_bins)) -
                              1.0));
    edges.push_back(values[at]);
  }
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

int bin_of(const std::vector<double>& edges, double value) {
  const auto it = std::lower_bound(edges.begin(), edges.end(), value);
  const auto at = static_cast<std::size_t>(it - edges.begin());
  return static_cast<int>(std::min(at, edges.size() - 1));
}

struct GbmContext {
  const DesignView& design;
  const Eigen::VectorXd* grad = nullptr;  // per-row negative gradient
  const Eigen::VectorXd* hess = nullptr;
  const GbmParams* params = nullptr;
  const std::vector<FeatureBins>* bins = nullptr;  // per numeric feature
  std::vector<TreeNode> nodes;
};

struct GbmSplit {
  bool valid = false;
  int feature = -1;
  bool categorical = false;
  double threshold = 0.0;
  int category = -1;
  double gain = 0.0;
};

// Least-squares gain of a left/right partition of the node's gradients:
// GL^2/nL + GR^2/nR - G^2/n, the variance reduction up to a constant.
double partition_gain(double g_left, double n_left, double g_total, double n_total) {
  const double g_right = g_total - g_left;
  const double n_right = n_total - n_left;
  return g_left * g_left / n_left + g_right * g_right / n_right -
         g_total * g_total / n_total;
}

void scan_numeric_exact(const GbmContext& ctx, const std::vector<int>& rows,
                        int feature, double g_total, GbmSplit& best) {
  std::vector<std::pair<double, double>> ordered;  // (value, grad)
  ordered.reserve(rows.size());
  for (const int r : rows) {
    ordered.emplace_back(ctx.design.value(r, feature), (*ctx.grad)[r]);
  }
  std::sort(ordered.begin(), ordered.end());
  const double n_total = static_cast<double>(rows.size());
  const int min_leaf = ctx.params->min_rows_leaf;
  double g_left = 0.0;
  for (std::size_t i = 0; i + 1 < ordered.size(); ++i) {
    g_left += ordered[i].second;
    if (ordered[i].first == ordered[i + 1].first) continue;  // no boundary
    const double n_left = static_cast<double>(i + 1);
    if (n_left < min_leaf || n_total - n_left < min_leaf) continue;
    const double gain = partition_gain(g_left, n_left, g_total, n_total);
    if (gain > best.gain) {
      best.valid = true;
      best.feature = feature;
      best.categorical = false;
      // Midpoint keeps the threshold strictly between observed values.
      best.threshold = 0.5 * (ordered[i].first + ordered[i + 1].first);
      best.gain = gain;
    }
  }
}

void scan_numeric_binned(const GbmContext& ctx, const std::vector<int>& rows,
                         int feature, double g_total, GbmSplit& best) {
  const FeatureBins& fb = (*ctx.bins)[static_cast<std::size_t>(feature)];
  const int n_bins = static_cast<int>(fb.edges.size());
  if (n_bins < 2) return;
  std::vector<double> bin_grad(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> bin_count(static_cast<std::size_t>(n_bins), 0.0);
  for (const int r : rows) {
    const int b = fb.ids[static_cast<std::size_t>(r)];
    bin_grad[static_cast<std::size_t>(b)] += (*ctx.grad)[r];
    bin_count[static_cast<std::size_t>(b)] += 1.0;
  }
  const double n_total = static_cast<double>(rows.size());
  const int min_leaf = ctx.params->min_rows_leaf;
  double g_left = 0.0, n_left = 0.0;
  for (int b = 0; b + 1 < n_bins; ++b) {
    g_left += bin_grad[static_cast<std::size_t>(b)];
    n_left += bin_count[static_cast<std::size_t>(b)];
    if (n_left < min_leaf || n_total - n_left < min_leaf) continue;
    const double gain = partition_gain(g_left, n_left, g_total, n_total);
    if (gain > best.gain) {
      best.valid = true;
      best.feature = feature;
      best.categorical = false;
      best.threshold = fb.edges[static_cast<std::size_t>(b)];
      best.gain = gain;
    }
  }
}

void scan_categorical(const GbmContext& ctx, const std::vector<int>& rows,
                      int feature, double g_total, GbmSplit& best) {
  std::map<int, std::pair<double, double>> stats;  // category -> (grad, count)
  for (const int r : rows) {
    auto& entry = stats[ctx.design.category(r, feature)];
    entry.first += (*ctx.grad)[r];
    entry.second += 1.0;
  }
  if (stats.size() < 2) return;
  const double n_total = static_cast<double>(rows.size());
  const int min_leaf = ctx.params->min_rows_leaf;
  for (const auto& [category, entry] : stats) {
    const double n_left = entry.second;
    if (n_left < min_leaf || n_total - n_left < min_leaf) continue;
    const double gain = partition_gain(entry.first, n_left, g_total, n_total);
    if (gain > best.gain) {
      best.valid = true;
      best.feature = feature;
      best.categorical = true;
      best.category = category;
      best.gain = gain;
    }
  }
}

Eigen::VectorXd gbm_leaf_value(const GbmContext& ctx, const std::vector<int>& rows,
                               int output, int output_dim, double scale) {
  double g = 0.0, h = 0.0;
  for (const int r : rows) {
    g += (*ctx.grad)[r];
    h += (*ctx.hess)[r];
  }
  double step = scale * g / (h + 1e-12);
  step = std::clamp(step, -10.0, 10.0);  // guard near-pure leaves
  Eigen::VectorXd value = Eigen::VectorXd::Zero(output_dim);
  value[output] = step;
  return value;
}

int gbm_grow(GbmContext& ctx, const std::vector<int>& rows, int depth, int output,
             int output_dim, double leaf_scale) {
  const int id = static_cast<int>(ctx.nodes.size());
  ctx.nodes.emplace_back();

  GbmSplit best;
  best.gain = 1e-12;  // require a strictly positive gain
  if (depth < ctx.params->max_depth &&
      static_cast<int>(rows.size()) >= 2 * ctx.params->min_rows_leaf) {
    double g_total = 0.0;
    for (const int r : rows) g_total += (*ctx.grad)[r];
    for (int f = 0; f < ctx.design.n_features(); ++f) {
      if (ctx.design.is_categorical(f)) {
        scan_categorical(ctx, rows, f, g_total, best);
      } else if (ctx.params->histogram_bins > 0) {
        scan_numeric_binned(ctx, rows, f, g_total, best);
      } else {
        scan_numeric_exact(ctx, rows, f, g_total, best);
      }
    }
  }
  if (!best.valid) {
    ctx.nodes[static_cast<std::size_t>(id)].value =
        gbm_leaf_value(ctx, rows, output, output_dim, leaf_scale);
    return id;
  }

  std::vector<int> left_rows, right_rows;
  for (const int r : rows) {
    const bool left =
        best.categorical
            ? ctx.design.category(r, best.feature) == best.category
            : ctx.design.value(r, best.feature) <= best.threshold;
    (left ? left_rows : right_rows).push_back(r);
  }

  ctx.nodes[static_cast<std::size_t>(id)].feature = best.feature;
  ctx.nodes[static_cast<std::size_t>(id)].categorical = best.categorical;
  ctx.nodes[static_cast<std::size_t>(id)].threshold = best.threshold;
  if (best.categorical) {
    ctx.nodes[static_cast<std::size_t>(id)].categories = {best.category};
  }
  const int left = gbm_grow(ctx, left_rows, depth + 1, output, output_dim, leaf_scale);
  const int right = gbm_grow(ctx, right_rows, depth + 1, output, output_dim, leaf_scale);
  ctx.nodes[static_cast<std::size_t>(id)].left = left;
  ctx.nodes[static_cast<std::size_t>(id)].right = right;
  return id;
}

double sigmoid_stable(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

double clip_probability(double p) { return std::clamp(p, 1e-12, 1.0 - 1e-12); }

}  // namespace

TargetStat fit_target_stat(const Eigen::VectorXi& categories,
                           const Eigen::VectorXd& targets, double prior_weight) {
  if (categories.size() != targets.size() || categories.size() == 0) {
    throw Error("fit_target_stat: size mismatch or empty input");
  }
  TargetStat stat;
  stat.fallback = targets.mean();
  const int width = categories.maxCoeff() + 1;
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(width);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(width);
  for (Eigen::Index i = 0; i < categories.size(); ++i) {
    sums[categories[i]] += targets[i];
    counts[categories[i]] += 1.0;
  }
  stat.encoding.resize(width);
  for (int c = 0; c < width; ++c) {
    stat.encoding[c] = (sums[c] + prior_weight * stat.fallback) /
                       (counts[c] + prior_weight);
  }
  return stat;
}

GbmEnsemble fit_gbm_ensemble(const DesignView& design, const Labels& labels,
                             const GbmParams& params) {
  const int n = design.n_rows();
  if (n < 2) throw Error("fit_gbm_ensemble: need at least 2 rows");
  if (labels.values.size() != n) throw Error("fit_gbm_ensemble: label count mismatch");

  GbmEnsemble model;
  model.task = labels.task;
  model.n_classes = labels.task == Task::regression ? 0 : labels.n_classes;
  model.params = params;

  const bool classification = model.n_classes > 0;
  // Score columns: one for regression and binary (logit), K for multiclass.
  const int n_scores =
      model.task == Task::multiclass ? model.n_classes : 1;
  model.ensemble.loss = model.task == Task::regression ? TreeLoss::squared
                        : model.task == Task::binary   ? TreeLoss::logistic
                                                       : TreeLoss::softmax;
  model.ensemble.output_dim = n_scores;
  model.ensemble.learning_rate = params.learning_rate;

  if (classification) {
    bool constant = true;
    for (Eigen::Index i = 1; i < labels.values.size(); ++i) {
      constant = constant && labels.values[i] == labels.values[0];
    }
    if (constant) {
      model.warnings.push_back(
          "single-class target: fitted a constant predictor");
      model.ensemble.base = Eigen::VectorXd::Zero(n_scores);
      if (model.task == Task::binary) {
        model.ensemble.base[0] = labels.values[0] == 1.0 ? 30.0 : -30.0;
      } else {
        model.ensemble.base.setConstant(-30.0);
        model.ensemble.base[static_cast<int>(labels.values[0])] = 0.0;
      }
      return model;
    }
  }

  // Initial scores.
  model.ensemble.base = Eigen::VectorXd::Zero(n_scores);
  if (model.task == Task::regression) {
    model.ensemble.base[0] = labels.values.mean();
  } else if (model.task == Task::binary) {
    const double p = clip_probability(labels.values.mean());
    model.ensemble.base[0] = std::log(p / (1.0 - p));
  } else {
    for (Eigen::Index i = 0; i < labels.values.size(); ++i) {
      model.ensemble.base[static_cast<int>(labels.values[i])] += 1.0;
    }
    for (int k = 0; k < n_scores; ++k) {
      model.ensemble.base[k] = std::log(
          clip_probability(model.ensemble.base[k] / static_cast<double>(n)));
    }
  }

  Eigen::MatrixXd scores(n, n_scores);
  scores.rowwise() = model.ensemble.base.transpose();

  // Histogram layout computed once from the training design.
  std::vector<FeatureBins> bins;
  if (params.histogram_bins > 0) {
    bins.resize(static_cast<std::size_t>(design.n_features()));
    for (int f = 0; f < design.n_numeric(); ++f) {
      std::vector<double> values(static_cast<std::size_t>(n));
      for (int r = 0; r < n; ++r) values[static_cast<std::size_t>(r)] = design.value(r, f);
      FeatureBins& fb = bins[static_cast<std::size_t>(f)];
      fb.edges = bin_edges(values, params.histogram_bins);
      fb.ids.resize(static_cast<std::size_t>(n));
      for (int r = 0; r < n; ++r) {
        fb.ids[static_cast<std::size_t>(r)] = bin_of(fb.edges, design.value(r, f));
      }
    }
  }

  std::vector<int> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  const double leaf_scale =
      model.task == Task::multiclass
          ? (static_cast<double>(model.n_classes) - 1.0) /
                static_cast<double>(model.n_classes)
          : 1.0;

  Eigen::VectorXd grad(n), hess(n);
  for (int stage = 0; stage < params.n_trees; ++stage) {
    for (int k = 0; k < n_scores; ++k) {
      // Negative gradient and hessian of the loss at the current scores.
      for (int r = 0; r < n; ++r) {
        switch (model.ensemble.loss) {
          case TreeLoss::squared:
            grad[r] = labels.values[r] - scores(r, 0);
            hess[r] = 1.0;
            break;
          case TreeLoss::logistic: {
            const double p = sigmoid_stable(scores(r, 0));
            grad[r] = labels.values[r] - p;
            hess[r] = std::max(p * (1.0 - p), 1e-12);
            break;
          }
          case TreeLoss::softmax: {
            Eigen::VectorXd row = scores.row(r);
            const double zmax = row.maxCoeff();
            const double denom = (row.array() - zmax).exp().sum();
            const double p = std::exp(scores(r, k) - zmax) / denom;
            const double yk = labels.values[r] == static_cast<double>(k) ? 1.0 : 0.0;
            grad[r] = yk - p;
            hess[r] = std::max(p * (1.0 - p), 1e-12);
            break;
          }
        }
      }

      GbmContext ctx{design, &grad, &hess, &params,
                     params.histogram_bins > 0 ? &bins : nullptr, {}};
      gbm_grow(ctx, all, 0, k, n_scores, leaf_scale);
      Tree tree;
      tree.nodes = std::move(ctx.nodes);
      for (int r = 0; r < n; ++r) {
        scores.row(r) += params.learning_rate * tree_leaf(tree, design, r).transpose();
      }
      model.ensemble.trees.push_back(std::move(tree));
    }

    // Mean training loss after the completed stage.
    double loss = 0.0;
    for (int r = 0; r < n; ++r) {
      switch (model.ensemble.loss) {
        case TreeLoss::squared: {
          const double d = labels.values[r] - scores(r, 0);
          loss += d * d;
          break;
        }
        case TreeLoss::logistic: {
          const double p = clip_probability(sigmoid_stable(scores(r, 0)));
          loss -= labels.values[r] == 1.0 ? std::log(p) : std::log(1.0 - p);
          break;
        }
        case TreeLoss::softmax: {
          Eigen::VectorXd row = scores.row(r);
          const double zmax = row.maxCoeff();
          const double denom = (row.array() - zmax).exp().sum();
          const double p = clip_probability(
              std::exp(scores(r, static_cast<int>(labels.values[r])) - zmax) /
              denom);
          loss -= std::log(p);
          break;
        }
      }
    }
    model.stage_losses.push_back(loss / static_cast<double>(n));
  }
  return model;
}

Eigen::MatrixXd gbm_scores(const GbmEnsemble& model, const DesignView& design) {
  const int n = design.n_rows();
  const int n_scores = model.ensemble.output_dim;
  Eigen::MatrixXd scores(n, n_scores);
  scores.rowwise() = model.ensemble.base.transpose();
  for (const Tree& tree : model.ensemble.trees) {
    for (int r = 0; r < n; ++r) {
      scores.row(r) +=
          model.ensemble.learning_rate * tree_leaf(tree, design, r).transpose();
    }
  }
  return scores;
}

PredictionMatrix predict_gbm(const GbmEnsemble& model, const DesignView& design) {
  const Eigen::MatrixXd scores = gbm_scores(model, design);
  switch (model.task) {
    case Task::regression:
      return scores;
    case Task::binary: {
      PredictionMatrix probs(scores.rows(), 2);
      for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        const double p = sigmoid_stable(scores(r, 0));
        probs(r, 0) = 1.0 - p;
        probs(r, 1) = p;
      }
      return probs;
    }
    case Task::multiclass: {
      PredictionMatrix probs(scores.rows(), scores.cols());
      for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        const double zmax = scores.row(r).maxCoeff();
        Eigen::VectorXd exps =
            (scores.row(r).array() - zmax).exp().matrix().transpose();
        probs.row(r) = (exps / exps.sum()).transpose();
      }
      return probs;
    }
  }
  throw Error("unknown task");
}

}  // namespace mmtab
