#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmtab/models.hpp"
#include "mmtab/net.hpp"
#include "mmtab/schema.hpp"
#include "mmtab/table.hpp"
#include "mmtab/text.hpp"

namespace mmtab {

// Word n-grams (n in 1..3) retained for one text column. Feature order is
// document frequency descending, ties lexicographic, so index 0 is the most
// common n-gram.
struct ColumnNgrams {
  std::vector<std::string> ngrams;
  std::map<std::string, int> index;               // ngram -> position in ngrams
  std::map<std::string, int> document_frequency;  // retained n-grams only

  int size() const { return static_cast<int>(ngrams.size()); }
};

struct NgramVocab {
  int cap = 512;
  int min_df = 2;
  std::vector<std::string> columns;  // fitted text columns in schema order
  std::map<std::string, ColumnNgrams> per_column;
};

// Per text column independently: tokenize, collect word uni/bi/tri-grams,
// drop those seen in fewer than min_df rows, keep the cap most frequent (ties
// lexicographic). A column with no qualifying n-grams yields zero features.
NgramVocab fit_ngram(const DataTable& train, const FeatureSchema& schema,
                     int cap = 512, int min_df = 2);

// Replaces each fitted text column, in place, with one numeric column per
// retained n-gram (named <column>_ng<index>) holding its occurrence count in
// that row's field; missing text counts as all zeros. Every other column,
// the target included, passes through verbatim.
DataTable ngram_transform(const NgramVocab& vocab, const DataTable& table);

nlohmann::json ngram_vocab_to_json(const NgramVocab& vocab);
NgramVocab ngram_vocab_from_json(const nlohmann::json& object);

enum class EmbedKind { pre_embedding, text_embedding, multimodal_embedding };

const char* to_string(EmbedKind kind);
EmbedKind embed_kind_from_string(const std::string& name);

// Text-to-vector featurizer. pre_embedding freezes a randomly initialized
// text tower; text_embedding fine-tunes a text tower on the labels;
// multimodal_embedding fine-tunes a late-fusion net and keeps its text-branch
// pooled vector, so the replacement columns still describe only the text.
struct Embedder {
  EmbedKind kind = EmbedKind::pre_embedding;
  TrainedNet encoder;
  Vocab vocab;
  FeatureSchema schema;  // fitted on the training table
  LabelCodec codec;
  int max_length = 512;
  std::vector<std::string> warnings;
  bool inert = false;  // fitted on a table with no text columns
};

Embedder fit_embedder(EmbedKind kind, const FitContext& ctx, std::uint64_t seed,
                      const FitOptions& options = {});

// Replaces all text columns jointly with d numeric columns emb_0..emb_{d-1}
// (spliced in at the first text column's position); numeric and categorical
// cells pass through verbatim for downstream tabular learning. An inert
// embedder returns the table unchanged and reports its warning.
DataTable embed_transform(const Embedder& emb, const DataTable& table,
                          std::vector<std::string>* warnings = nullptr);

}  // namespace mmtab
