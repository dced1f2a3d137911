#include "mmtab/featurize.hpp"

#include <algorithm>
#include <set>
#include <utility>
#include <variant>

#include "mmtab/rng.hpp"

namespace mmtab {

namespace {

constexpr int kMaxGramOrder = 3;

// Word n-grams (n in 1..kMaxGramOrder) of one field, space-joined.
std::vector<std::string> field_ngrams(const std::string& text) {
  const std::vector<std::string> tokens = word_tokens(text);
  std::vector<std::string> grams;
  for (int n = 1; n <= kMaxGramOrder; ++n) {
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      std::string gram = tokens[i];
      for (int k = 1; k < n; ++k) {
        gram += ' ';
        gram += tokens[i + k];
      }
      grams.push_back(std::move(gram));
    }
  }
  return grams;
}

std::string ngram_column_name(const std::string& column, int index) {
  return column + "_ng" + std::to_string(index);
}

}  // namespace

NgramVocab fit_ngram(const DataTable& train, const FeatureSchema& schema,
                     int cap, int min_df) {
  NgramVocab vocab;
  vocab.cap = std::max(0, cap);
  vocab.min_df = std::max(1, min_df);
  vocab.columns = schema.columns_of(Modality::text);
  if (vocab.columns.empty()) {
    throw Error("n-gram featurization needs at least one text column");
  }
  for (const std::string& name : vocab.columns) {
    const Column* column = train.find_column(name);
    if (!column) throw Error("text column absent from table: " + name);

    std::map<std::string, int> df;
    for (const Cell& cell : column->cells) {
      if (!cell.is_string()) continue;
      std::set<std::string> in_row;
      for (std::string& gram : field_ngrams(cell.str)) {
        in_row.insert(std::move(gram));
      }
      for (const std::string& gram : in_row) ++df[gram];
    }

    std::vector<std::pair<std::string, int>> ranked;
    for (const auto& [gram, count] : df) {
      if (count >= vocab.min_df) ranked.emplace_back(gram, count);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    if (static_cast<int>(ranked.size()) > vocab.cap) ranked.resize(vocab.cap);

    ColumnNgrams retained;
    for (const auto& [gram, count] : ranked) {
      retained.index[gram] = static_cast<int>(retained.ngrams.size());
      retained.ngrams.push_back(gram);
      retained.document_frequency[gram] = count;
    }
    vocab.per_column[name] = std::move(retained);
  }
  return vocab;
}

DataTable ngram_transform(const NgramVocab& vocab, const DataTable& table) {
  for (const std::string& name : vocab.columns) {
    if (!table.find_column(name)) {
      throw Error("n-gram transform: fitted column absent from table: " + name);
    }
  }

  DataTable out;
  out.name = table.name;
  out.target = table.target;
  out.task = table.task;
  const int n = table.n_rows();

  for (const Column& column : table.columns) {
    const auto it = vocab.per_column.find(column.name);
    const bool is_target = table.target && column.name == *table.target;
    if (is_target || it == vocab.per_column.end()) {
      out.columns.push_back(column);
      const auto pin = table.type_overrides.find(column.name);
      if (pin != table.type_overrides.end()) {
        out.type_overrides[column.name] = pin->second;
      }
      continue;
    }

    const ColumnNgrams& retained = it->second;
    const int m = retained.size();
    std::vector<std::vector<double>> counts(
        static_cast<std::size_t>(m), std::vector<double>(n, 0.0));
    for (int r = 0; r < n; ++r) {
      const Cell& cell = column.cells[r];
      if (!cell.is_string()) continue;  // missing text counts as all zeros
      for (const std::string& gram : field_ngrams(cell.str)) {
        const auto hit = retained.index.find(gram);
        if (hit != retained.index.end()) counts[hit->second][r] += 1.0;
      }
    }
    for (int j = 0; j < m; ++j) {
      Column feature;
      feature.name = ngram_column_name(column.name, j);
      feature.cells.reserve(n);
      for (int r = 0; r < n; ++r) {
        feature.cells.push_back(Cell::numeric(counts[j][r]));
      }
      out.columns.push_back(std::move(feature));
    }
  }
  return out;
}

nlohmann::json ngram_vocab_to_json(const NgramVocab& vocab) {
  nlohmann::json object;
  object["cap"] = vocab.cap;
  object["min_df"] = vocab.min_df;
  object["columns"] = vocab.columns;
  nlohmann::json per_column = nlohmann::json::object();
  for (const auto& [name, retained] : vocab.per_column) {
    nlohmann::json entry;
    entry["ngrams"] = retained.ngrams;
    nlohmann::json df = nlohmann::json::object();
    for (const auto& [gram, count] : retained.document_frequency) {
      df[gram] = count;
    }
    entry["document_frequency"] = df;
    per_column[name] = std::move(entry);
  }
  object["per_column"] = std::move(per_column);
  return object;
}

NgramVocab ngram_vocab_from_json(const nlohmann::json& object) {
  NgramVocab vocab;
  vocab.cap = object.at("cap").get<int>();
  vocab.min_df = object.at("min_df").get<int>();
  vocab.columns = object.at("columns").get<std::vector<std::string>>();
  for (const auto& [name, entry] : object.at("per_column").items()) {
    ColumnNgrams retained;
    retained.ngrams = entry.at("ngrams").get<std::vector<std::string>>();
    for (std::size_t j = 0; j < retained.ngrams.size(); ++j) {
      retained.index[retained.ngrams[j]] = static_cast<int>(j);
    }
    for (const auto& [gram, count] : entry.at("document_frequency").items()) {
      retained.document_frequency[gram] = count.get<int>();
    }
    vocab.per_column[name] = std::move(retained);
  }
  return vocab;
}

const char* to_string(EmbedKind kind) {
  switch (kind) {
    case EmbedKind::pre_embedding: return "pre_embedding";
    case EmbedKind::text_embedding: return "text_embedding";
    case EmbedKind::multimodal_embedding: return "multimodal_embedding";
  }
  throw Error("unknown embedding kind");
}

EmbedKind embed_kind_from_string(const std::string& name) {
  if (name == "pre_embedding") return EmbedKind::pre_embedding;
  if (name == "text_embedding") return EmbedKind::text_embedding;
  if (name == "multimodal_embedding") return EmbedKind::multimodal_embedding;
  throw Error("unknown embedding kind: " + name);
}

Embedder fit_embedder(EmbedKind kind, const FitContext& ctx, std::uint64_t seed,
                      const FitOptions& options) {
  Embedder emb;
  emb.kind = kind;
  emb.schema = ctx.schema;
  emb.codec = ctx.codec;

  const std::vector<std::string> text_columns =
      ctx.schema.columns_of(Modality::text);
  if (text_columns.empty()) {
    emb.inert = true;
    emb.warnings.push_back(
        "no text columns: embedding transform is the identity");
    return emb;
  }

  if (kind == EmbedKind::pre_embedding) {
    // Frozen random initialization: the vocabulary comes from the training
    // text, but the labels are never read and train() is never run.
    std::vector<std::string> corpus;
    for (const std::string& name : text_columns) {
      const Column* column = ctx.transformed.find_column(name);
      if (!column) throw Error("text column absent from table: " + name);
      for (const Cell& cell : column->cells) {
        if (cell.is_string()) corpus.push_back(cell.str);
      }
    }
    emb.vocab = build_vocab(corpus, options.net_vocab_size);

    NetConfig cfg = options.net_template;
    cfg.variant = NetVariant::text_only;
    cfg.task = ctx.labels.task;
    cfg.output_dim =
        ctx.labels.task == Task::multiclass ? ctx.labels.n_classes : 1;
    cfg.vocab_size = emb.vocab.size();
    cfg.n_numeric = 0;
    cfg.categorical_cardinalities.clear();
    cfg.n_text_fields = static_cast<int>(text_columns.size());
    emb.encoder = build_net(cfg, Rng::mix(seed, 0xbe7));
    emb.max_length = cfg.max_length;
    return emb;
  }

  FitOptions opts = options;
  opts.net_variant = kind == EmbedKind::text_embedding ? NetVariant::text_only
                                                       : NetVariant::fuse_late;
  FittedModel fitted = fit_model(ModelKind::fusion_net, ctx, seed, opts);
  NetModel& net_model = std::get<NetModel>(fitted.impl);
  emb.encoder = std::move(net_model.net);
  emb.vocab = std::move(net_model.vocab);
  emb.codec = std::move(net_model.codec);
  emb.max_length = net_model.max_length;
  emb.warnings = std::move(fitted.warnings);
  return emb;
}

DataTable embed_transform(const Embedder& emb, const DataTable& table,
                          std::vector<std::string>* warnings) {
  if (warnings) {
    warnings->insert(warnings->end(), emb.warnings.begin(), emb.warnings.end());
  }
  if (emb.inert) return table;

  FeatureSchema schema = emb.schema;  // fit_transform mutates only when fitting
  const DataTable transformed = fit_transform(schema, table, false);
  const NetDataset data =
      prepare_net_dataset(table, transformed, emb.schema, emb.vocab, emb.codec,
                          emb.encoder.config.variant, emb.max_length);
  const Eigen::MatrixXd embedded = embed(emb.encoder, data);

  const std::vector<std::string> text_columns =
      emb.schema.columns_of(Modality::text);
  const std::set<std::string> text_set(text_columns.begin(),
                                       text_columns.end());

  DataTable out;
  out.name = table.name;
  out.target = table.target;
  out.task = table.task;
  bool spliced = false;
  for (const Column& column : table.columns) {
    if (text_set.count(column.name)) {
      if (spliced) continue;  // all text columns collapse into one block
      spliced = true;
      for (int j = 0; j < embedded.cols(); ++j) {
        Column feature;
        feature.name = "emb_" + std::to_string(j);
        feature.cells.reserve(table.n_rows());
        for (int r = 0; r < embedded.rows(); ++r) {
          feature.cells.push_back(Cell::numeric(embedded(r, j)));
        }
        out.columns.push_back(std::move(feature));
      }
      continue;
    }
    out.columns.push_back(column);
    const auto pin = table.type_overrides.find(column.name);
    if (pin != table.type_overrides.end()) {
      out.type_overrides[column.name] = pin->second;
    }
  }
  return out;
}

}  // namespace mmtab
