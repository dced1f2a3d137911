#include "mmtab/net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mmtab/graph.hpp"
#include "mmtab/rng.hpp"

namespace mmtab {

const char* to_string(NetVariant variant) {
  switch (variant) {
    case NetVariant::text_only: return "text_only";
    case NetVariant::all_text: return "all_text";
    case NetVariant::fuse_early: return "fuse_early";
    case NetVariant::fuse_late: return "fuse_late";
  }
  return "unknown";
}

namespace {

enum ParamKind { kWeight = 0, kBias = 1, kLnGain = 2 };

struct ParamRegistry {
  std::map<std::string, Eigen::MatrixXd> shapes;
  std::map<std::string, int> depth;
  std::map<std::string, int> kind;

  void add(const std::string& name, int rows, int cols, int param_kind,
           int param_depth) {
    shapes[name] = Eigen::MatrixXd::Zero(rows, cols);
    depth[name] = param_depth;
    kind[name] = param_kind;
  }

  void add_linear(const std::string& prefix, int in, int out, int param_depth) {
    add(prefix + ".w", in, out, kWeight, param_depth);
    add(prefix + ".b", 1, out, kBias, param_depth);
  }

  void add_layer_norm(const std::string& prefix, int width, int param_depth) {
    add(prefix + ".g", 1, width, kLnGain, param_depth);
    add(prefix + ".b", 1, width, kBias, param_depth);
  }

  // One post-LN transformer block: self-attention + FFN, both with residual.
  void add_block(const std::string& prefix, int width, int ffn, int param_depth) {
    add_linear(prefix + ".attn.q", width, width, param_depth);
    add_linear(prefix + ".attn.k", width, width, param_depth);
    add_linear(prefix + ".attn.v", width, width, param_depth);
    add_linear(prefix + ".attn.o", width, width, param_depth);
    add_layer_norm(prefix + ".ln1", width, param_depth);
    add_linear(prefix + ".ffn.1", width, ffn, param_depth);
    add_linear(prefix + ".ffn.2", ffn, width, param_depth);
    add_layer_norm(prefix + ".ln2", width, param_depth);
  }

  // Bottleneck MLP: linear -> leaky relu -> linear -> layer norm.
  void add_bottleneck(const std::string& prefix, int in, int hidden, int out,
                      int param_depth) {
    add_linear(prefix + ".1", in, hidden, param_depth);
    add_linear(prefix + ".2", hidden, out, param_depth);
    add_layer_norm(prefix + ".ln", out, param_depth);
  }

  void add_embeddings(const std::string& prefix, const NetConfig& cfg,
                      int param_depth) {
    add(prefix + ".tok", cfg.vocab_size, cfg.hidden_size, kWeight, param_depth);
    add(prefix + ".pos", cfg.max_length, cfg.hidden_size, kWeight, param_depth);
    add(prefix + ".seg", 2, cfg.hidden_size, kWeight, param_depth);
    add_layer_norm(prefix + ".ln", cfg.hidden_size, param_depth);
  }

  void add_head(int in, int hidden, int out) {
    add_linear("head.1", in, hidden, 1);
    add_linear("head.2", hidden, out, 0);
  }
};

int tabular_token_count(const NetConfig& cfg) {
  return static_cast<int>(cfg.categorical_cardinalities.size()) +
         (cfg.n_numeric > 0 ? 1 : 0);
}

ParamRegistry registry_for(const NetConfig& cfg) {
  ParamRegistry reg;
  const int d = cfg.hidden_size;
  const int n_cat = static_cast<int>(cfg.categorical_cardinalities.size());

  switch (cfg.variant) {
    case NetVariant::text_only:
    case NetVariant::all_text: {
      // Depths: head 0/1, top block 2, ..., embeddings deepest.
      for (int i = 0; i < cfg.n_layers; ++i) {
        reg.add_block("enc" + std::to_string(i), d, cfg.ffn_size,
                      2 + (cfg.n_layers - 1 - i));
      }
      reg.add_embeddings("emb", cfg, cfg.n_layers + 2);
      reg.add_head(d, d, cfg.output_dim);
      break;
    }
    case NetVariant::fuse_late: {
      for (int i = 0; i < cfg.n_layers; ++i) {
        reg.add_block("enc" + std::to_string(i), d, cfg.ffn_size,
                      2 + (cfg.n_layers - 1 - i));
      }
      reg.add_embeddings("emb", cfg, cfg.n_layers + 2);
      // Tabular branches sit directly under the head, like the top block.
      if (n_cat > 0) {
        for (int j = 0; j < n_cat; ++j) {
          reg.add("cat" + std::to_string(j) + ".emb",
                  cfg.categorical_cardinalities[static_cast<std::size_t>(j)],
                  cfg.cat_embed_units, kWeight, 3);
        }
        reg.add_bottleneck("catmlp", cfg.cat_embed_units * n_cat,
                           cfg.late_bottleneck, d, 2);
      }
      if (cfg.n_numeric > 0) {
        reg.add_bottleneck("nummlp", cfg.n_numeric, cfg.late_bottleneck, d, 2);
      }
      const int branches = 1 + (n_cat > 0 ? 1 : 0) + (cfg.n_numeric > 0 ? 1 : 0);
      reg.add_head(branches * d, d, cfg.output_dim);
      break;
    }
    case NetVariant::fuse_early: {
      const FuseEncoderConfig& fe = cfg.fuse_early_encoder;
      for (int i = 0; i < fe.layers; ++i) {
        reg.add_block("fus" + std::to_string(i), fe.units, fe.ffn,
                      2 + (fe.layers - 1 - i));
      }
      const int below_encoder = 2 + fe.layers;
      if (d != fe.units) {
        reg.add_linear("fproj", d, fe.units, below_encoder);
      }
      reg.add_embeddings("emb", cfg, below_encoder + 1);
      for (int j = 0; j < n_cat; ++j) {
        const std::string name = "cat" + std::to_string(j);
        reg.add(name + ".emb",
                cfg.categorical_cardinalities[static_cast<std::size_t>(j)],
                cfg.cat_embed_units, kWeight, below_encoder + 1);
        reg.add_bottleneck(name + ".mlp", cfg.cat_embed_units,
                           cfg.cat_bottleneck, d, below_encoder);
      }
      if (cfg.n_numeric > 0) {
        reg.add_bottleneck("nummlp", cfg.n_numeric, cfg.cat_bottleneck, d,
                           below_encoder);
      }
      reg.add_head(fe.units, fe.units, cfg.output_dim);
      break;
    }
  }
  return reg;
}

void validate_config(const NetConfig& cfg) {
  if (cfg.hidden_size <= 0 || cfg.n_layers <= 0 || cfg.n_heads <= 0) {
    throw Error("net config: nonpositive dimensions");
  }
  if (cfg.hidden_size % cfg.n_heads != 0) {
    throw Error("net config: hidden_size must be divisible by n_heads");
  }
  if (cfg.fuse_early_encoder.units % cfg.fuse_early_encoder.heads != 0) {
    throw Error("net config: fusion encoder units must be divisible by heads");
  }
  if (cfg.vocab_size < 4) throw Error("net config: vocab_size below reserved ids");
  if (cfg.output_dim < 1) throw Error("net config: output_dim must be >= 1");
  if (cfg.task == Task::multiclass && cfg.output_dim < 2) {
    throw Error("net config: multiclass needs output_dim >= 2");
  }
  if ((cfg.task == Task::binary || cfg.task == Task::regression) &&
      cfg.output_dim != 1) {
    throw Error("net config: binary/regression use output_dim == 1");
  }
  if ((cfg.variant == NetVariant::fuse_early ||
       cfg.variant == NetVariant::fuse_late) &&
      cfg.n_numeric == 0 && cfg.categorical_cardinalities.empty()) {
    throw Error("fusion variants need tabular columns; use text_only instead");
  }
  for (const int cardinality : cfg.categorical_cardinalities) {
    if (cardinality < 1) throw Error("net config: empty categorical vocab");
  }
}

// Graph assembly over one batch. Parameters enter as tape leaves so the same
// builder serves training (needs_grad) and inference.
struct NetGraph {
  ad::Tape& tape;
  const NetConfig& cfg;
  std::map<std::string, ad::Var> P;

  NetGraph(ad::Tape& t, const NetConfig& c, const ParamMap& params,
           bool needs_grad)
      : tape(t), cfg(c) {
    for (const auto& [name, value] : params) {
      P.emplace(name, tape.leaf(value, needs_grad));
    }
  }

  ad::Var param(const std::string& name) {
    const auto it = P.find(name);
    if (it == P.end()) throw Error("missing parameter: " + name);
    return it->second;
  }

  ad::Var linear(const ad::Var& x, const std::string& prefix) {
    return ad::add_rowwise(tape, ad::matmul(tape, x, param(prefix + ".w")),
                           param(prefix + ".b"));
  }

  ad::Var layer_norm_at(const ad::Var& x, const std::string& prefix) {
    return ad::layer_norm(tape, x, param(prefix + ".g"), param(prefix + ".b"));
  }

  ad::Var bottleneck(const ad::Var& x, const std::string& prefix) {
    ad::Var hidden = ad::leaky_relu(tape, linear(x, prefix + ".1"), cfg.leaky_slope);
    return layer_norm_at(linear(hidden, prefix + ".2"), prefix + ".ln");
  }

  // x is (B*L) x width; masks[b] is an L x L additive attention mask.
  ad::Var transformer_block(const ad::Var& x, const std::string& prefix, int batch,
                            int length, int heads,
                            const std::vector<Eigen::MatrixXd>& masks) {
    const int width = static_cast<int>(x->value.cols());
    const int head_width = width / heads;
    ad::Var q = linear(x, prefix + ".attn.q");
    ad::Var k = linear(x, prefix + ".attn.k");
    ad::Var v = linear(x, prefix + ".attn.v");

    std::vector<ad::Var> contexts;
    contexts.reserve(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      ad::Var qb = ad::rows_of(tape, q, b * length, length);
      ad::Var kb = ad::rows_of(tape, k, b * length, length);
      ad::Var vb = ad::rows_of(tape, v, b * length, length);
      std::vector<ad::Var> heads_out;
      heads_out.reserve(static_cast<std::size_t>(heads));
      for (int h = 0; h < heads; ++h) {
        ad::Var qh = ad::cols_of(tape, qb, h * head_width, head_width);
        ad::Var kh = ad::cols_of(tape, kb, h * head_width, head_width);
        ad::Var vh = ad::cols_of(tape, vb, h * head_width, head_width);
        ad::Var scores = ad::scale(tape, ad::matmul_nt(tape, qh, kh),
                                   1.0 / std::sqrt(static_cast<double>(head_width)));
        ad::Var weights = ad::masked_softmax_rows(
            tape, scores, masks[static_cast<std::size_t>(b)]);
        heads_out.push_back(ad::matmul(tape, weights, vh));
      }
      contexts.push_back(ad::hconcat(tape, heads_out));
    }
    ad::Var context = ad::vconcat(tape, contexts);
    ad::Var attn = linear(context, prefix + ".attn.o");
    ad::Var first = layer_norm_at(ad::add(tape, x, attn), prefix + ".ln1");
    ad::Var ffn = linear(ad::gelu(tape, linear(first, prefix + ".ffn.1")),
                         prefix + ".ffn.2");
    return layer_norm_at(ad::add(tape, first, ffn), prefix + ".ln2");
  }

  ad::Var head(const ad::Var& pooled) {
    ad::Var hidden = ad::leaky_relu(tape, linear(pooled, "head.1"), cfg.leaky_slope);
    return linear(hidden, "head.2");
  }
};

struct BatchLayout {
  int batch = 0;
  int length = 0;                       // padded text length
  std::vector<int> token_ids;           // batch * length
  std::vector<int> positions;
  std::vector<int> segments;
  std::vector<int> pad_from;            // true length per row
};

BatchLayout layout_text(const NetDataset& data, const std::vector<int>& rows,
                        int max_length) {
  BatchLayout layout;
  layout.batch = static_cast<int>(rows.size());
  for (const int r : rows) {
    const int len = data.text[static_cast<std::size_t>(r)].length();
    if (len > max_length) {
      throw Error("sequence length " + std::to_string(len) +
                  " exceeds max_length " + std::to_string(max_length) +
                  "; inputs must be pre-truncated");
    }
    layout.length = std::max(layout.length, len);
  }
  layout.length = std::max(layout.length, 1);
  layout.token_ids.reserve(static_cast<std::size_t>(layout.batch) * layout.length);
  for (const int r : rows) {
    const MergedInput& merged = data.text[static_cast<std::size_t>(r)];
    layout.pad_from.push_back(merged.length());
    for (int t = 0; t < layout.length; ++t) {
      const bool real = t < merged.length();
      layout.token_ids.push_back(real ? merged.token_ids[static_cast<std::size_t>(t)]
                                      : Vocab::kPad);
      layout.positions.push_back(t);
      layout.segments.push_back(
          real ? merged.segment_ids[static_cast<std::size_t>(t)] : 0);
    }
  }
  return layout;
}

// masks[b](i, j) suppresses key j for every query i when j is padding.
std::vector<Eigen::MatrixXd> key_masks(const BatchLayout& layout, int extra_tokens) {
  const int full = layout.length + extra_tokens;
  std::vector<Eigen::MatrixXd> masks(
      static_cast<std::size_t>(layout.batch),
      Eigen::MatrixXd::Zero(full, full));
  for (int b = 0; b < layout.batch; ++b) {
    for (int j = layout.pad_from[static_cast<std::size_t>(b)]; j < layout.length; ++j) {
      masks[static_cast<std::size_t>(b)].col(j).setConstant(ad::kMaskedOut);
    }
  }
  return masks;
}

struct GraphOutputs {
  ad::Var logits;
  ad::Var cls;
  std::map<std::string, ad::Var> leaves;
};

GraphOutputs build_graph(ad::Tape& tape, const TrainedNet& net,
                         const ParamMap& params, const NetDataset& data,
                         const std::vector<int>& rows, bool needs_grad) {
  const NetConfig& cfg = net.config;
  NetGraph g(tape, cfg, params, needs_grad);
  const BatchLayout layout = layout_text(data, rows, cfg.max_length);
  const int batch = layout.batch;
  const int length = layout.length;

  // Shared embedding stack: token + position + segment, then layer norm.
  ad::Var x = ad::row_gather(tape, g.param("emb.tok"), layout.token_ids);
  x = ad::add(tape, x, ad::row_gather(tape, g.param("emb.pos"), layout.positions));
  x = ad::add(tape, x, ad::row_gather(tape, g.param("emb.seg"), layout.segments));
  x = g.layer_norm_at(x, "emb.ln");

  const int n_cat = static_cast<int>(cfg.categorical_cardinalities.size());

  auto gather_cat = [&](int j) {
    std::vector<int> ids;
    ids.reserve(rows.size());
    for (const int r : rows) ids.push_back(data.categorical(r, j));
    return ad::row_gather(tape, g.param("cat" + std::to_string(j) + ".emb"), ids);
  };
  auto numeric_leaf = [&]() {
    Eigen::MatrixXd numeric(batch, cfg.n_numeric);
    for (int i = 0; i < batch; ++i) numeric.row(i) = data.numeric.row(rows[static_cast<std::size_t>(i)]);
    return tape.leaf(std::move(numeric), false);
  };

  GraphOutputs out;
  switch (cfg.variant) {
    case NetVariant::text_only:
    case NetVariant::all_text: {
      const std::vector<Eigen::MatrixXd> masks = key_masks(layout, 0);
      for (int i = 0; i < cfg.n_layers; ++i) {
        x = g.transformer_block(x, "enc" + std::to_string(i), batch, length,
                                cfg.n_heads, masks);
      }
      std::vector<int> cls_ids;
      for (int b = 0; b < batch; ++b) cls_ids.push_back(b * length);
      out.cls = ad::row_gather(tape, x, cls_ids);
      out.logits = g.head(out.cls);
      break;
    }
    case NetVariant::fuse_late: {
      const std::vector<Eigen::MatrixXd> masks = key_masks(layout, 0);
      for (int i = 0; i < cfg.n_layers; ++i) {
        x = g.transformer_block(x, "enc" + std::to_string(i), batch, length,
                                cfg.n_heads, masks);
      }
      std::vector<int> cls_ids;
      for (int b = 0; b < batch; ++b) cls_ids.push_back(b * length);
      out.cls = ad::row_gather(tape, x, cls_ids);

      std::vector<ad::Var> branches = {out.cls};
      if (n_cat > 0) {
        std::vector<ad::Var> embedded;
        for (int j = 0; j < n_cat; ++j) embedded.push_back(gather_cat(j));
        branches.push_back(g.bottleneck(ad::hconcat(tape, embedded), "catmlp"));
      }
      if (cfg.n_numeric > 0) {
        branches.push_back(g.bottleneck(numeric_leaf(), "nummlp"));
      }
      out.logits = g.head(ad::hconcat(tape, branches));
      break;
    }
    case NetVariant::fuse_early: {
      // Tabular feature tokens, one per categorical column plus one for all
      // numerics, appended after the text tokens of each sequence.
      std::vector<ad::Var> tab_tokens;
      for (int j = 0; j < n_cat; ++j) {
        tab_tokens.push_back(
            g.bottleneck(gather_cat(j), "cat" + std::to_string(j) + ".mlp"));
      }
      if (cfg.n_numeric > 0) {
        tab_tokens.push_back(g.bottleneck(numeric_leaf(), "nummlp"));
      }
      const int extra = static_cast<int>(tab_tokens.size());

      std::vector<ad::Var> sequences;
      sequences.reserve(static_cast<std::size_t>(batch) * (1 + extra));
      for (int b = 0; b < batch; ++b) {
        sequences.push_back(ad::rows_of(tape, x, b * length, length));
        for (const ad::Var& token : tab_tokens) {
          sequences.push_back(ad::rows_of(tape, token, b, 1));
        }
      }
      ad::Var fused = ad::vconcat(tape, sequences);
      if (cfg.hidden_size != cfg.fuse_early_encoder.units) {
        fused = g.linear(fused, "fproj");
      }
      const int full = length + extra;
      const std::vector<Eigen::MatrixXd> masks = key_masks(layout, extra);
      for (int i = 0; i < cfg.fuse_early_encoder.layers; ++i) {
        fused = g.transformer_block(fused, "fus" + std::to_string(i), batch, full,
                                    cfg.fuse_early_encoder.heads, masks);
      }
      std::vector<int> cls_ids;
      for (int b = 0; b < batch; ++b) cls_ids.push_back(b * full);
      out.cls = ad::row_gather(tape, fused, cls_ids);
      out.logits = g.head(out.cls);
      break;
    }
  }
  out.leaves = g.P;
  return out;
}

ad::Var attach_loss(ad::Tape& tape, const TrainedNet& net, const ad::Var& logits,
                    const NetDataset& data, const std::vector<int>& rows) {
  if (data.labels.values.size() == 0) throw Error("dataset has no labels");
  switch (net.config.task) {
    case Task::multiclass: {
      std::vector<int> labels;
      labels.reserve(rows.size());
      for (const int r : rows) {
        labels.push_back(static_cast<int>(data.labels.values[r]));
      }
      return ad::softmax_cross_entropy(tape, logits, labels);
    }
    case Task::binary: {
      Eigen::VectorXd labels(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) labels[static_cast<Eigen::Index>(i)] = data.labels.values[rows[i]];
      return ad::logistic_loss(tape, logits, labels);
    }
    case Task::regression: {
      Eigen::VectorXd targets(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) targets[static_cast<Eigen::Index>(i)] = data.labels.values[rows[i]];
      return ad::squared_loss(tape, logits, targets);
    }
  }
  throw Error("unknown task");
}

PredictionMatrix link_outputs(const TrainedNet& net, const Eigen::MatrixXd& logits) {
  switch (net.config.task) {
    case Task::multiclass:
      return ad::softmax_rows_value(logits);
    case Task::binary: {
      PredictionMatrix probs(logits.rows(), 1);
      for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double z = logits(i, 0);
        probs(i, 0) = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                               : std::exp(z) / (1.0 + std::exp(z));
      }
      return probs;
    }
    case Task::regression:
      return logits;
  }
  throw Error("unknown task");
}

std::vector<int> all_rows(const NetDataset& data) {
  std::vector<int> rows(static_cast<std::size_t>(data.n_rows()));
  for (int i = 0; i < data.n_rows(); ++i) rows[static_cast<std::size_t>(i)] = i;
  return rows;
}

constexpr int kInferenceBatch = 128;

}  // namespace

TrainedNet build_net(const NetConfig& config, std::uint64_t seed) {
  validate_config(config);
  TrainedNet net;
  net.config = config;
  ParamRegistry reg = registry_for(config);
  net.param_depth = reg.depth;

  Rng rng(Rng::mix(seed, 0x11e7));
  for (auto& [name, matrix] : reg.shapes) {
    switch (reg.kind.at(name)) {
      case kWeight:
        for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
          for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
            matrix(r, c) = rng.normal(0.0, 0.02);
          }
        }
        break;
      case kBias:
        break;  // already zero
      case kLnGain:
        matrix.setOnes();
        break;
    }
    net.params[name] = std::move(matrix);
  }
  return net;
}

PredictionMatrix forward(const TrainedNet& net, const ParamMap& params,
                         const NetDataset& data, const std::vector<int>& rows) {
  ad::Tape tape;
  const GraphOutputs out = build_graph(tape, net, params, data, rows, false);
  return link_outputs(net, out.logits->value);
}

PredictionMatrix forward(const TrainedNet& net, const NetDataset& data) {
  const ParamMap& params = net.inference_params();
  const std::vector<int> rows = all_rows(data);
  PredictionMatrix result;
  for (std::size_t start = 0; start < rows.size(); start += kInferenceBatch) {
    const std::size_t stop = std::min(rows.size(), start + kInferenceBatch);
    const std::vector<int> chunk(rows.begin() + static_cast<long>(start),
                                 rows.begin() + static_cast<long>(stop));
    const PredictionMatrix part = forward(net, params, data, chunk);
    if (result.size() == 0) {
      result.resize(static_cast<Eigen::Index>(rows.size()), part.cols());
    }
    result.middleRows(static_cast<Eigen::Index>(start), part.rows()) = part;
  }
  return result;
}

Eigen::MatrixXd embed(const TrainedNet& net, const NetDataset& data) {
  const ParamMap& params = net.inference_params();
  const std::vector<int> rows = all_rows(data);
  Eigen::MatrixXd result;
  for (std::size_t start = 0; start < rows.size(); start += kInferenceBatch) {
    const std::size_t stop = std::min(rows.size(), start + kInferenceBatch);
    const std::vector<int> chunk(rows.begin() + static_cast<long>(start),
                                 rows.begin() + static_cast<long>(stop));
    ad::Tape tape;
    const GraphOutputs out = build_graph(tape, net, params, data, chunk, false);
    if (result.size() == 0) {
      result.resize(static_cast<Eigen::Index>(rows.size()), out.cls->value.cols());
    }
    result.middleRows(static_cast<Eigen::Index>(start), out.cls->value.rows()) =
        out.cls->value;
  }
  return result;
}

double loss_value(const TrainedNet& net, const ParamMap& params,
                  const NetDataset& data, const std::vector<int>& rows) {
  ad::Tape tape;
  const GraphOutputs out = build_graph(tape, net, params, data, rows, false);
  return attach_loss(tape, net, out.logits, data, rows)->value(0, 0);
}

ParamMap loss_grads(const TrainedNet& net, const ParamMap& params,
                    const NetDataset& data, const std::vector<int>& rows,
                    double* loss_out) {
  ad::Tape tape;
  const GraphOutputs out = build_graph(tape, net, params, data, rows, true);
  const ad::Var loss = attach_loss(tape, net, out.logits, data, rows);
  if (loss_out) *loss_out = loss->value(0, 0);
  tape.backward(loss);
  ParamMap grads;
  for (const auto& [name, leaf] : out.leaves) grads[name] = leaf->grad;
  return grads;
}

double lr_at(long long step, long long total_steps, const TrainConfig& cfg) {
  if (total_steps <= 0) throw Error("lr_at: total_steps must be positive");
  if (step < 0 || step > total_steps) throw Error("lr_at: step out of range");
  const long long warm =
      std::max<long long>(1, static_cast<long long>(
                                 std::ceil(cfg.warmup_fraction *
                                           static_cast<double>(total_steps))));
  if (step <= warm) {
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warm);
  }
  const long long tail = std::max<long long>(1, total_steps - warm);
  return cfg.peak_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(tail);
}

double layer_multiplier(int depth, double tau) {
  if (depth < 0) throw Error("layer_multiplier: negative depth");
  return std::pow(tau, depth);
}

namespace {

ParamMap average_checkpoints(const std::vector<const ParamMap*>& picks) {
  ParamMap mean;
  const double inv = 1.0 / static_cast<double>(picks.size());
  for (const auto& [name, value] : *picks.front()) {
    Eigen::MatrixXd total = Eigen::MatrixXd::Zero(value.rows(), value.cols());
    for (const ParamMap* pick : picks) total += pick->at(name);
    mean[name] = total * inv;
  }
  return mean;
}

}  // namespace

void train(TrainedNet& net, const NetDataset& train_data,
           const NetDataset& val_data, const TrainConfig& cfg, MetricKind metric) {
  if (train_data.labels.values.size() == 0 || val_data.labels.values.size() == 0) {
    throw Error("train: labeled train and validation data required");
  }
  if (cfg.warmup_fraction <= 0.0 || cfg.warmup_fraction >= 1.0) {
    throw Error("train: warmup_fraction must lie in (0,1)");
  }
  if (cfg.layer_decay <= 0.0 || cfg.layer_decay > 1.0) {
    throw Error("train: layer_decay must lie in (0,1]");
  }
  if (cfg.checkpoints_to_average < 1) {
    throw Error("train: checkpoints_to_average must be >= 1");
  }

  const int n = train_data.n_rows();
  const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const long long total_steps =
      static_cast<long long>(steps_per_epoch) * cfg.epochs;

  ParamMap m, v;
  for (const auto& [name, value] : net.params) {
    m[name] = Eigen::MatrixXd::Zero(value.rows(), value.cols());
    v[name] = Eigen::MatrixXd::Zero(value.rows(), value.cols());
  }
  const ParamRegistry reg = registry_for(net.config);
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;

  long long global_step = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  int epochs_without_improvement = 0;
  net.checkpoint_log.clear();
  net.final_params.clear();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng order_rng(Rng::mix(cfg.seed, 0xe90c + static_cast<std::uint64_t>(epoch)));
    const std::vector<int> order = order_rng.permutation(n);

    double last_lr = 0.0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int stop = std::min(n, start + cfg.batch_size);
      const std::vector<int> batch(order.begin() + start, order.begin() + stop);
      ++global_step;

      double batch_loss = 0.0;
      ParamMap grads = loss_grads(net, net.params, train_data, batch, &batch_loss);
      if (!std::isfinite(batch_loss)) {
        throw Error("training diverged: non-finite loss at epoch " +
                    std::to_string(epoch) + ", last lr " +
                    std::to_string(last_lr));
      }

      const double lr = lr_at(global_step, total_steps, cfg);
      last_lr = lr;
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(global_step));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(global_step));
      for (auto& [name, value] : net.params) {
        const Eigen::MatrixXd& grad = grads.at(name);
        Eigen::MatrixXd& m1 = m[name];
        Eigen::MatrixXd& m2 = v[name];
        m1 = kBeta1 * m1 + (1.0 - kBeta1) * grad;
        m2 = (kBeta2 * m2.array() + (1.0 - kBeta2) * grad.array().square()).matrix();
        const double step_scale =
            lr * layer_multiplier(net.param_depth.at(name), cfg.layer_decay);
        // The triangular schedule hits exactly 0 on the final step; keep the
        // last effective scale so the decay ratios stay observable.
        if (step_scale > 0.0) net.last_step_scale[name] = step_scale;
        Eigen::MatrixXd update =
            ((m1.array() / bc1) / ((m2.array() / bc2).sqrt() + kEps)).matrix();
        if (reg.kind.at(name) == kWeight && cfg.weight_decay > 0.0) {
          update += cfg.weight_decay * value;
        }
        value -= step_scale * update;
      }
    }

    const PredictionMatrix val_preds = [&]() {
      const std::vector<int> rows = all_rows(val_data);
      PredictionMatrix out;
      for (std::size_t s = 0; s < rows.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t e = std::min(rows.size(), s + static_cast<std::size_t>(cfg.batch_size));
        const std::vector<int> chunk(rows.begin() + static_cast<long>(s),
                                     rows.begin() + static_cast<long>(e));
        const PredictionMatrix part = forward(net, net.params, val_data, chunk);
        if (out.size() == 0) out.resize(static_cast<Eigen::Index>(rows.size()), part.cols());
        out.middleRows(static_cast<Eigen::Index>(s), part.rows()) = part;
      }
      return out;
    }();
    const double val_score = score(metric, val_preds, val_data.labels.values);

    Checkpoint checkpoint;
    checkpoint.epoch = epoch;
    checkpoint.validation_score = val_score;
    checkpoint.params = net.params;
    net.checkpoint_log.push_back(std::move(checkpoint));

    if (val_score > best_score) {
      best_score = val_score;
      epochs_without_improvement = 0;
    } else {
      ++epochs_without_improvement;
      if (epochs_without_improvement >= cfg.patience) break;
    }
  }

  // Average the best min(k, logged) checkpoints; ties keep the earlier epoch.
  std::vector<int> order(net.checkpoint_log.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return net.checkpoint_log[static_cast<std::size_t>(a)].validation_score >
           net.checkpoint_log[static_cast<std::size_t>(b)].validation_score;
  });
  const std::size_t k = std::min<std::size_t>(
      static_cast<std::size_t>(cfg.checkpoints_to_average), order.size());
  std::vector<const ParamMap*> picks;
  for (std::size_t i = 0; i < k; ++i) {
    picks.push_back(&net.checkpoint_log[static_cast<std::size_t>(order[i])].params);
  }
  net.final_params = average_checkpoints(picks);
}

void save_params(const std::string& path, const ParamMap& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  const char magic[4] = {'M', 'M', 'T', 'B'};
  out.write(magic, 4);
  const std::uint64_t count = params.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& [name, value] : params) {
    const std::uint64_t name_len = name.size();
    out.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
    out.write(name.data(), static_cast<std::streamsize>(name_len));
    const std::uint64_t rows = static_cast<std::uint64_t>(value.rows());
    const std::uint64_t cols = static_cast<std::uint64_t>(value.cols());
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    for (Eigen::Index r = 0; r < value.rows(); ++r) {
      for (Eigen::Index c = 0; c < value.cols(); ++c) {
        const double entry = value(r, c);
        out.write(reinterpret_cast<const char*>(&entry), sizeof(entry));
      }
    }
  }
  if (!out) throw Error("write failed: " + path);
}

ParamMap load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "MMTB") {
    throw Error("bad parameter file: " + path);
  }
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  ParamMap params;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    std::uint64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    Eigen::MatrixXd value(static_cast<Eigen::Index>(rows),
                          static_cast<Eigen::Index>(cols));
    for (std::uint64_t r = 0; r < rows; ++r) {
      for (std::uint64_t c = 0; c < cols; ++c) {
        double entry = 0.0;
        in.read(reinterpret_cast<char*>(&entry), sizeof(entry));
        value(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = entry;
      }
    }
    if (!in) throw Error("truncated parameter file: " + path);
    params[name] = std::move(value);
  }
  return params;
}

NetDataset prepare_net_dataset(const DataTable& raw, const DataTable& transformed,
                               const FeatureSchema& schema, const Vocab& vocab,
                               const LabelCodec& codec, NetVariant variant,
                               int max_length) {
  if (raw.n_rows() != transformed.n_rows()) {
    throw Error("prepare_net_dataset: raw/transformed row mismatch");
  }
  NetDataset data;
  const TabularView view = tabular_view(schema, transformed);
  data.numeric = view.numeric;
  data.categorical = view.categorical;

  const std::vector<std::string> text_columns = schema.columns_of(Modality::text);
  const int n = transformed.n_rows();
  data.text.reserve(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    std::vector<std::vector<int>> fields;
    for (const std::string& name : text_columns) {
      const Column* column = transformed.find_column(name);
      const Cell& cell = column->cells[static_cast<std::size_t>(r)];
      fields.push_back(tokenize(cell.is_string() ? cell.str : "", vocab));
    }
    if (variant == NetVariant::all_text) {
      for (const std::string& name : schema.feature_columns) {
        const Modality modality = schema.modality(name);
        if (modality == Modality::text) continue;
        const Column* column = raw.find_column(name);
        if (!column) throw Error("column absent from raw table: " + name);
        fields.push_back(tokenize(
            stringify_cell(column->cells[static_cast<std::size_t>(r)], modality),
            vocab));
      }
    }
    data.text.push_back(merge_fields(fields, max_length));
  }

  if (transformed.target && transformed.find_column(*transformed.target)) {
    data.labels = codec.encode(transformed);
  } else {
    data.labels.task = codec.task;
    data.labels.n_classes = codec.n_classes();
  }
  return data;
}

}  // namespace mmtab
