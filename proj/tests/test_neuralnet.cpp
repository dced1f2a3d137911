#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mmtab/graph.hpp"
#include "mmtab/net.hpp"
#include "mmtab/rng.hpp"
#include "test_util.hpp"

using namespace mmtab;
using testutil::TempDir;
using testutil::write_file;

namespace {

// Hand-assembled dataset: token ids written directly, no tokenizer involved.
MergedInput make_sequence(const std::vector<int>& body_tokens, int segment = 0) {
  MergedInput merged;
  merged.token_ids.push_back(Vocab::kCls);
  merged.segment_ids.push_back(0);
  for (const int t : body_tokens) {
    merged.token_ids.push_back(t);
    merged.segment_ids.push_back(segment);
  }
  merged.token_ids.push_back(Vocab::kSep);
  merged.segment_ids.push_back(segment);
  for (std::size_t i = 0; i < merged.token_ids.size(); ++i) {
    merged.positions.push_back(static_cast<int>(i));
  }
  merged.field_spans.push_back({1, static_cast<int>(body_tokens.size()) + 1});
  return merged;
}

NetConfig small_config(NetVariant variant, Task task) {
  NetConfig cfg;
  cfg.variant = variant;
  cfg.hidden_size = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.ffn_size = 24;
  cfg.fuse_early_encoder = {2, 16, 2, 24};
  cfg.cat_embed_units = 6;
  cfg.cat_bottleneck = 10;
  cfg.late_bottleneck = 12;
  cfg.vocab_size = 24;
  cfg.max_length = 32;
  cfg.task = task;
  cfg.output_dim = task == Task::multiclass ? 3 : 1;
  return cfg;
}

NetDataset toy_dataset(NetVariant variant, Task task, int rows, std::uint64_t seed) {
  NetDataset data;
  Rng rng(seed);
  const bool tabular = variant == NetVariant::fuse_early ||
                       variant == NetVariant::fuse_late;
  data.numeric.resize(rows, tabular ? 2 : 0);
  data.categorical.resize(rows, tabular ? 1 : 0);
  data.labels.task = task;
  data.labels.n_classes = task == Task::multiclass ? 3 : (task == Task::binary ? 2 : 0);
  data.labels.values.resize(rows);
  for (int r = 0; r < rows; ++r) {
    std::vector<int> body;
    const int len = 2 + rng.index(4);
    for (int t = 0; t < len; ++t) body.push_back(4 + rng.index(20));
    data.text.push_back(make_sequence(body));
    if (tabular) {
      data.numeric(r, 0) = rng.normal();
      data.numeric(r, 1) = rng.normal();
      data.categorical(r, 0) = rng.index(3);
    }
    switch (task) {
      case Task::binary: data.labels.values[r] = rng.index(2); break;
      case Task::multiclass: data.labels.values[r] = rng.index(3); break;
      case Task::regression: data.labels.values[r] = rng.normal(); break;
    }
  }
  return data;
}

NetConfig with_tabular(NetConfig cfg) {
  cfg.n_numeric = 2;
  cfg.categorical_cardinalities = {3};
  return cfg;
}

double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  return (a - b).cwiseAbs().maxCoeff();
}

// Central finite differences against analytic gradients over every parameter
// entry. Keeps configs tiny so the full sweep stays fast.
void check_net_gradients(const TrainedNet& net, const NetDataset& data,
                         const std::vector<int>& rows, double tolerance) {
  ParamMap params = net.params;
  const ParamMap grads = loss_grads(net, params, data, rows);
  const double h = 1e-5;
  double worst = 0.0;
  for (auto& [name, value] : params) {
    const Eigen::MatrixXd& analytic = grads.at(name);
    for (Eigen::Index r = 0; r < value.rows(); ++r) {
      for (Eigen::Index c = 0; c < value.cols(); ++c) {
        const double keep = value(r, c);
        value(r, c) = keep + h;
        const double up = loss_value(net, params, data, rows);
        value(r, c) = keep - h;
        const double down = loss_value(net, params, data, rows);
        value(r, c) = keep;
        const double numeric = (up - down) / (2.0 * h);
        const double denom =
            std::max({std::abs(numeric), std::abs(analytic(r, c)), 1e-4});
        worst = std::max(worst, std::abs(numeric - analytic(r, c)) / denom);
      }
    }
  }
  CHECK(worst < tolerance);
}

}  // namespace

TEST_CASE("initialization is deterministic and variant-shaped") {
  const NetConfig cfg = small_config(NetVariant::text_only, Task::binary);
  const TrainedNet a = build_net(cfg, 7);
  const TrainedNet b = build_net(cfg, 7);
  const TrainedNet c = build_net(cfg, 8);

  REQUIRE(a.params.size() == b.params.size());
  bool identical = true;
  bool all_same_as_c = true;
  for (const auto& [name, value] : a.params) {
    identical = identical && value == b.params.at(name);
    all_same_as_c = all_same_as_c && value == c.params.at(name);
  }
  CHECK(identical);
  CHECK_FALSE(all_same_as_c);

  // Text-only towers carry no tabular parameters.
  CHECK(a.params.count("emb.tok") == 1);
  CHECK(a.params.count("enc0.attn.q.w") == 1);
  CHECK(a.params.count("enc1.ln2.g") == 1);
  CHECK(a.params.count("head.2.w") == 1);
  CHECK(a.params.count("catmlp.1.w") == 0);
  CHECK(a.params.count("nummlp.1.w") == 0);
  CHECK(a.params.at("emb.tok").rows() == cfg.vocab_size);
  CHECK(a.params.at("emb.pos").rows() == cfg.max_length);
  CHECK(a.params.at("emb.seg").rows() == 2);
  CHECK(a.params.at("head.2.w").cols() == 1);

  // Biases start at zero, layer-norm gains at one.
  CHECK(a.params.at("enc0.attn.q.b").isZero(0.0));
  CHECK((a.params.at("enc0.ln1.g").array() == 1.0).all());
}

TEST_CASE("fusion variants register their tabular branches") {
  const NetConfig late = with_tabular(small_config(NetVariant::fuse_late, Task::binary));
  const TrainedNet l = build_net(late, 1);
  CHECK(l.params.count("cat0.emb") == 1);
  CHECK(l.params.count("catmlp.ln.g") == 1);
  CHECK(l.params.count("nummlp.1.w") == 1);
  // Head consumes CLS plus one vector per tabular branch.
  CHECK(l.params.at("head.1.w").rows() == 3 * late.hidden_size);

  const NetConfig early = with_tabular(small_config(NetVariant::fuse_early, Task::binary));
  const TrainedNet e = build_net(early, 1);
  CHECK(e.params.count("fus0.attn.q.w") == 1);
  CHECK(e.params.count("fus1.ffn.1.w") == 1);
  CHECK(e.params.count("cat0.mlp.1.w") == 1);
  CHECK(e.params.count("enc0.attn.q.w") == 0);  // no separate text tower
  CHECK(e.params.count("fproj.w") == 0);        // d == encoder units here
  CHECK(e.params.at("head.1.w").rows() == early.fuse_early_encoder.units);

  NetConfig projected = early;
  projected.hidden_size = 8;
  projected.n_heads = 2;
  const TrainedNet p = build_net(projected, 1);
  CHECK(p.params.count("fproj.w") == 1);
  CHECK(p.params.at("fproj.w").rows() == 8);
  CHECK(p.params.at("fproj.w").cols() == projected.fuse_early_encoder.units);
}

TEST_CASE("fusion variants without tabular columns are rejected") {
  NetConfig cfg = small_config(NetVariant::fuse_late, Task::binary);
  CHECK_THROWS_AS(build_net(cfg, 1), Error);
  cfg.variant = NetVariant::fuse_early;
  CHECK_THROWS_AS(build_net(cfg, 1), Error);
}

TEST_CASE("layer depths decay from the head down") {
  const NetConfig cfg = small_config(NetVariant::text_only, Task::binary);
  const TrainedNet net = build_net(cfg, 3);
  CHECK(net.param_depth.at("head.2.w") == 0);
  CHECK(net.param_depth.at("head.1.w") == 1);
  CHECK(net.param_depth.at("enc1.attn.q.w") == 2);  // top block
  CHECK(net.param_depth.at("enc0.attn.q.w") == 3);
  CHECK(net.param_depth.at("emb.tok") == 4);

  const NetConfig late = with_tabular(small_config(NetVariant::fuse_late, Task::binary));
  const TrainedNet l = build_net(late, 3);
  CHECK(l.param_depth.at("catmlp.1.w") == 2);
  CHECK(l.param_depth.at("nummlp.1.w") == 2);
  CHECK(l.param_depth.at("cat0.emb") == 3);
}

TEST_CASE("zeroed head yields exactly one half for binary outputs") {
  const NetConfig cfg = small_config(NetVariant::text_only, Task::binary);
  TrainedNet net = build_net(cfg, 5);
  net.params.at("head.2.w").setZero();
  net.params.at("head.2.b").setZero();
  const NetDataset data = toy_dataset(NetVariant::text_only, Task::binary, 6, 11);
  const PredictionMatrix preds = forward(net, data);
  REQUIRE(preds.rows() == 6);
  REQUIRE(preds.cols() == 1);
  for (Eigen::Index i = 0; i < preds.rows(); ++i) CHECK(preds(i, 0) == 0.5);
}

TEST_CASE("multiclass outputs lie on the probability simplex") {
  const NetConfig cfg = small_config(NetVariant::text_only, Task::multiclass);
  const TrainedNet net = build_net(cfg, 5);
  const NetDataset data = toy_dataset(NetVariant::text_only, Task::multiclass, 9, 13);
  const PredictionMatrix preds = forward(net, data);
  REQUIRE(preds.rows() == 9);
  REQUIRE(preds.cols() == 3);
  for (Eigen::Index i = 0; i < preds.rows(); ++i) {
    CHECK(preds.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(preds.row(i).minCoeff() >= 0.0);
  }
}

TEST_CASE("padding rows in a batch do not change other rows") {
  // Batch inference pads each sequence to the longest in the batch; a row's
  // output must match what it gets when run alone.
  const NetConfig cfg = small_config(NetVariant::text_only, Task::multiclass);
  const TrainedNet net = build_net(cfg, 21);
  NetDataset data = toy_dataset(NetVariant::text_only, Task::multiclass, 1, 17);
  data.text.push_back(make_sequence({4, 5, 6, 7, 8, 9, 10, 11, 12, 13}));
  data.labels.values.resize(2);
  data.labels.values.setZero();

  const PredictionMatrix together = forward(net, net.params, data, {0, 1});
  const PredictionMatrix alone = forward(net, net.params, data, {0});
  CHECK(max_abs_diff(together.row(0), alone.row(0)) < 1e-9);
}

TEST_CASE("rows are processed independently (permutation equivariance)") {
  const NetConfig cfg = with_tabular(small_config(NetVariant::fuse_late, Task::multiclass));
  const TrainedNet net = build_net(cfg, 23);
  const NetDataset data = toy_dataset(NetVariant::fuse_late, Task::multiclass, 5, 19);
  const PredictionMatrix forward_order = forward(net, net.params, data, {0, 1, 2, 3, 4});
  const PredictionMatrix reverse_order = forward(net, net.params, data, {4, 3, 2, 1, 0});
  for (int i = 0; i < 5; ++i) {
    CHECK(max_abs_diff(forward_order.row(i), reverse_order.row(4 - i)) < 1e-9);
  }
}

TEST_CASE("learning-rate schedule rises to the peak then decays to zero") {
  TrainConfig cfg;
  cfg.peak_lr = 5e-5;
  cfg.warmup_fraction = 0.1;
  // 100 steps: warmup spans ceil(0.1 * 100) = 10 steps.
  CHECK(lr_at(0, 100, cfg) == 0.0);
  CHECK(lr_at(5, 100, cfg) == doctest::Approx(2.5e-5));
  CHECK(lr_at(10, 100, cfg) == doctest::Approx(5e-5));
  CHECK(lr_at(55, 100, cfg) == doctest::Approx(5e-5 * 45.0 / 90.0));
  CHECK(lr_at(100, 100, cfg) == 0.0);
  // Warmup rounds up: 7 total steps -> peak at step 1.
  CHECK(lr_at(1, 7, cfg) == doctest::Approx(5e-5));
  CHECK_THROWS_AS(lr_at(101, 100, cfg), Error);
  CHECK_THROWS_AS(lr_at(1, 0, cfg), Error);
}

TEST_CASE("layer multiplier follows tau to the depth") {
  CHECK(layer_multiplier(0, 0.8) == 1.0);
  CHECK(layer_multiplier(1, 0.8) == doctest::Approx(0.8));
  CHECK(layer_multiplier(4, 0.8) == doctest::Approx(0.4096));
  CHECK_THROWS_AS(layer_multiplier(-1, 0.8), Error);
}

TEST_CASE("training applies layerwise-decayed step sizes") {
  const NetConfig cfg = small_config(NetVariant::text_only, Task::binary);
  TrainedNet net = build_net(cfg, 31);
  const NetDataset data = toy_dataset(NetVariant::text_only, Task::binary, 12, 37);
  TrainConfig tc;
  tc.peak_lr = 1e-3;
  tc.batch_size = 6;
  tc.epochs = 2;
  tc.patience = 10;
  tc.seed = 1;
  train(net, data, data, tc, MetricKind::auc);

  const double head_scale = net.last_step_scale.at("head.2.w");
  const double top_block = net.last_step_scale.at("enc1.attn.q.w");
  const double embedding = net.last_step_scale.at("emb.tok");
  CHECK(top_block / head_scale == doctest::Approx(0.64).epsilon(1e-9));
  CHECK(embedding / head_scale == doctest::Approx(0.4096).epsilon(1e-9));
}

TEST_CASE("checkpoint averaging keeps the best three by validation score") {
  // train() with patience past the horizon logs one checkpoint per epoch;
  // verify final_params equals the mean over the top three scores by
  // recomputing from the log.
  const NetConfig cfg = small_config(NetVariant::text_only, Task::binary);
  TrainedNet net = build_net(cfg, 41);
  const NetDataset data = toy_dataset(NetVariant::text_only, Task::binary, 10, 43);
  TrainConfig tc;
  tc.peak_lr = 1e-3;
  tc.batch_size = 5;
  tc.epochs = 5;
  tc.patience = 50;
  tc.checkpoints_to_average = 3;
  tc.seed = 2;
  train(net, data, data, tc, MetricKind::auc);
  REQUIRE(net.checkpoint_log.size() == 5);

  std::vector<int> order = {0, 1, 2, 3, 4};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return net.checkpoint_log[a].validation_score >
           net.checkpoint_log[b].validation_score;
  });
  for (const auto& [name, value] : net.final_params) {
    Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(value.rows(), value.cols());
    for (int i = 0; i < 3; ++i) {
      expected += net.checkpoint_log[order[i]].params.at(name);
    }
    expected /= 3.0;
    CHECK(max_abs_diff(value, expected) < 1e-12);
  }

  // k = 1 keeps the single best checkpoint verbatim.
  TrainedNet single = build_net(cfg, 41);
  TrainConfig tc1 = tc;
  tc1.checkpoints_to_average = 1;
  train(single, data, data, tc1, MetricKind::auc);
  std::size_t best = 0;
  for (std::size_t i = 1; i < single.checkpoint_log.size(); ++i) {
    if (single.checkpoint_log[i].validation_score >
        single.checkpoint_log[best].validation_score) {
      best = i;
    }
  }
  for (const auto& [name, value] : single.final_params) {
    CHECK(max_abs_diff(value, single.checkpoint_log[best].params.at(name)) == 0.0);
  }
}

TEST_CASE("early stopping halts after patience epochs without improvement") {
  const NetConfig cfg = small_config(NetVariant::text_only, Task::regression);
  TrainedNet net = build_net(cfg, 47);
  NetDataset data = toy_dataset(NetVariant::text_only, Task::regression, 8, 53);
  TrainConfig tc;
  tc.peak_lr = 0.0;  // frozen weights: score can never improve after epoch 1
  tc.batch_size = 8;
  tc.epochs = 10;
  tc.patience = 2;
  tc.seed = 3;
  train(net, data, data, tc, MetricKind::r2);
  CHECK(net.checkpoint_log.size() == 3);  // epoch 1 baseline + 2 stale epochs
}

TEST_CASE("gradients match finite differences per variant") {
  const std::vector<int> rows = {0, 1, 2, 3};
  SUBCASE("text_only multiclass") {
    NetConfig cfg = small_config(NetVariant::text_only, Task::multiclass);
    cfg.hidden_size = 8;
    cfg.n_heads = 2;
    cfg.ffn_size = 12;
    cfg.n_layers = 2;
    const TrainedNet net = build_net(cfg, 61);
    const NetDataset data = toy_dataset(NetVariant::text_only, Task::multiclass, 4, 67);
    check_net_gradients(net, data, rows, 1e-4);
  }
  SUBCASE("fuse_late binary") {
    NetConfig cfg = with_tabular(small_config(NetVariant::fuse_late, Task::binary));
    cfg.hidden_size = 8;
    cfg.n_heads = 2;
    cfg.ffn_size = 12;
    cfg.n_layers = 1;
    cfg.late_bottleneck = 6;
    cfg.cat_embed_units = 4;
    const TrainedNet net = build_net(cfg, 71);
    const NetDataset data = toy_dataset(NetVariant::fuse_late, Task::binary, 4, 73);
    check_net_gradients(net, data, rows, 1e-4);
  }
  SUBCASE("fuse_early regression") {
    NetConfig cfg = with_tabular(small_config(NetVariant::fuse_early, Task::regression));
    cfg.hidden_size = 8;
    cfg.n_heads = 2;
    cfg.fuse_early_encoder = {1, 8, 2, 12};
    cfg.cat_embed_units = 4;
    cfg.cat_bottleneck = 6;
    const TrainedNet net = build_net(cfg, 79);
    const NetDataset data = toy_dataset(NetVariant::fuse_early, Task::regression, 4, 83);
    check_net_gradients(net, data, rows, 1e-4);
  }
  SUBCASE("all_text with projection to narrower encoder") {
    NetConfig cfg = small_config(NetVariant::all_text, Task::binary);
    cfg.hidden_size = 8;
    cfg.n_heads = 2;
    cfg.ffn_size = 12;
    cfg.n_layers = 1;
    const TrainedNet net = build_net(cfg, 89);
    const NetDataset data = toy_dataset(NetVariant::all_text, Task::binary, 4, 97);
    check_net_gradients(net, data, rows, 1e-4);
  }
}

TEST_CASE("a small net learns a keyword rule from scratch") {
  // Label is 1 iff token 5 appears. 64 train rows, small tower, lifted
  // learning rate; the benchmark-scale defaults stay untouched in NetConfig.
  NetConfig cfg = small_config(NetVariant::text_only, Task::binary);
  cfg.n_layers = 1;
  TrainedNet net = build_net(cfg, 101);

  NetDataset train_data, val_data;
  Rng rng(103);
  auto fill = [&](NetDataset& data, int rows) {
    data.labels.task = Task::binary;
    data.labels.n_classes = 2;
    data.labels.values.resize(rows);
    data.numeric.resize(rows, 0);
    data.categorical.resize(rows, 0);
    for (int r = 0; r < rows; ++r) {
      const bool keyword = rng.index(2) == 1;
      std::vector<int> body;
      for (int t = 0; t < 5; ++t) body.push_back(6 + rng.index(16));
      if (keyword) body[rng.index(5)] = 5;
      data.text.push_back(make_sequence(body));
      data.labels.values[r] = keyword ? 1.0 : 0.0;
    }
  };
  fill(train_data, 64);
  fill(val_data, 32);

  TrainConfig tc;
  tc.peak_lr = 1.5e-2;
  tc.batch_size = 16;
  tc.epochs = 20;
  tc.patience = 20;
  tc.seed = 5;
  train(net, train_data, val_data, tc, MetricKind::accuracy);

  const PredictionMatrix preds = forward(net, val_data);
  int hits = 0;
  for (Eigen::Index i = 0; i < preds.rows(); ++i) {
    const int predicted = preds(i, 0) >= 0.5 ? 1 : 0;
    if (predicted == static_cast<int>(val_data.labels.values[i])) ++hits;
  }
  CHECK(static_cast<double>(hits) / static_cast<double>(preds.rows()) >= 0.95);
}

TEST_CASE("embeddings expose the CLS vector deterministically") {
  const NetConfig cfg = with_tabular(small_config(NetVariant::fuse_late, Task::binary));
  const TrainedNet net = build_net(cfg, 107);
  const NetDataset data = toy_dataset(NetVariant::fuse_late, Task::binary, 5, 109);
  const Eigen::MatrixXd first = embed(net, data);
  const Eigen::MatrixXd second = embed(net, data);
  REQUIRE(first.rows() == 5);
  CHECK(first.cols() == cfg.hidden_size);
  CHECK(max_abs_diff(first, second) == 0.0);

  // Different text must move the embedding.
  NetDataset other = data;
  other.text[0] = make_sequence({20, 21, 22});
  const Eigen::MatrixXd third = embed(net, other);
  CHECK(max_abs_diff(first.row(0), third.row(0)) > 1e-8);
}

TEST_CASE("parameter files round-trip bit-exactly") {
  const NetConfig cfg = small_config(NetVariant::text_only, Task::binary);
  const TrainedNet net = build_net(cfg, 113);
  const TempDir dir("params");
  const std::string path = dir.path("weights.bin").string();
  save_params(path, net.params);
  const ParamMap loaded = load_params(path);
  REQUIRE(loaded.size() == net.params.size());
  for (const auto& [name, value] : net.params) {
    CHECK(loaded.at(name) == value);
  }
  CHECK_THROWS_AS(load_params(dir.path("absent.bin").string()), Error);
}

TEST_CASE("dataset preparation merges text fields and encodes labels") {
  TempDir dir("prep");
  write_file(dir.path("data.csv"),
             "title,body,price,color,label\n"
             "red shoes,very comfy,10,red,1\n"
             "blue hat,warm and soft,20,blue,0\n"
             "green sock,thin,30,red,1\n");
  DataTable raw = read_csv(dir.path("data.csv").string(), {{"price", Modality::numeric}});
  raw.target = "label";
  raw.task = Task::binary;
  // Force the two string columns to text so the schema sees mixed modalities.
  DataTable pinned = read_csv(dir.path("data.csv").string(),
                              {{"title", Modality::text},
                               {"body", Modality::text},
                               {"price", Modality::numeric}});
  pinned.target = "label";
  pinned.task = Task::binary;

  FeatureSchema schema = infer_schema(pinned);
  const DataTable transformed = fit_transform(schema, pinned, true);
  const Vocab vocab = build_vocab(
      {"red", "shoes", "very", "comfy", "blue", "hat", "warm", "and", "soft",
       "green", "sock", "thin", "10", "20", "30"},
      64);
  const LabelCodec codec = LabelCodec::fit(pinned);

  const NetDataset plain = prepare_net_dataset(pinned, transformed, schema, vocab,
                                               codec, NetVariant::text_only);
  REQUIRE(plain.n_rows() == 3);
  // Two text fields -> CLS + field + SEP + field + SEP.
  CHECK(plain.text[0].field_spans.size() == 2);
  CHECK(plain.text[0].token_ids[0] == Vocab::kCls);
  CHECK(plain.numeric.cols() == 1);
  CHECK(plain.categorical.cols() == 1);
  CHECK(plain.labels.values.size() == 3);
  CHECK(plain.labels.values[0] == 1.0);
  CHECK(plain.labels.values[1] == 0.0);

  // all_text adds one extra field per non-text feature column.
  const NetDataset all = prepare_net_dataset(pinned, transformed, schema, vocab,
                                             codec, NetVariant::all_text);
  CHECK(all.text[0].field_spans.size() == 4);
  // The numeric field is stringified from the raw table: "10", not the
  // standardized value.
  const int token_ten = vocab.id_for("10");
  REQUIRE(token_ten != Vocab::kUnk);
  bool found = false;
  for (const int t : all.text[0].token_ids) found = found || t == token_ten;
  CHECK(found);

  // Unlabeled tables produce empty label vectors but keep the codec shape.
  DataTable unlabeled = pinned;
  unlabeled.target.reset();
  FeatureSchema schema2 = infer_schema(unlabeled);
  const DataTable unlabeled_transformed = fit_transform(schema2, unlabeled, true);
  const NetDataset bare = prepare_net_dataset(unlabeled, unlabeled_transformed,
                                              schema2, vocab, codec,
                                              NetVariant::text_only);
  CHECK(bare.labels.values.size() == 0);
  CHECK(bare.labels.n_classes == 2);
}

TEST_CASE("config validation rejects impossible shapes") {
  NetConfig cfg = small_config(NetVariant::text_only, Task::binary);
  cfg.n_heads = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(build_net(cfg, 1), Error);
  cfg = small_config(NetVariant::text_only, Task::multiclass);
  cfg.output_dim = 1;
  CHECK_THROWS_AS(build_net(cfg, 1), Error);
  cfg = small_config(NetVariant::text_only, Task::binary);
  cfg.vocab_size = 2;
  CHECK_THROWS_AS(build_net(cfg, 1), Error);
}
