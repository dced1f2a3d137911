#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mmtab/schema.hpp"
#include "mmtab/table.hpp"

namespace mmtab {

// Word-level vocabulary with four reserved ids. token_to_id holds the
// reserved names ("<pad>", "<unk>", "<cls>", "<sep>") plus learned tokens.
struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;

  std::map<std::string, int> token_to_id;
  int max_size = 0;

  int size() const { return static_cast<int>(token_to_id.size()); }
  int id_for(const std::string& token) const {
    const auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
  }
};

// Lowercased maximal runs of letters/digits; every other non-space byte is a
// single-character token.
std::vector<std::string> word_tokens(const std::string& text);

// Keeps the max_size most frequent tokens, ties broken lexicographically.
Vocab build_vocab(const std::vector<std::string>& corpus, int max_size);

std::vector<int> tokenize(const std::string& text, const Vocab& vocab);

struct MergedInput {
  std::vector<int> token_ids;
  std::vector<int> segment_ids;
  std::vector<int> positions;
  // Surviving token range [start, end) of each input field, SEP excluded.
  std::vector<std::pair<int, int>> field_spans;

  int length() const { return static_cast<int>(token_ids.size()); }
};

// Layout: CLS f1 SEP f2 SEP ... fk SEP. While the total exceeds max_length,
// one trailing token is removed from the currently longest field; among
// equally-longest fields the lowest index is spared, so the removal hits the
// highest tied index. Field i carries segment id i % 2; each SEP inherits the
// segment of the field it terminates; CLS is segment 0.
MergedInput merge_fields(const std::vector<std::vector<int>>& fields,
                         int max_length = 512);

// Rounds to exactly 3 significant digits, half-even. Fixed notation while the
// rounded magnitude stays in [1e-3, 1e6), scientific outside; zero → "0.00".
std::string format_sig3(double value);

// Text cells pass through, categorical cells render raw, numeric cells render
// with 3 significant digits, missing renders empty.
std::string stringify_cell(const Cell& cell, Modality modality);

// One string per feature column in schema order, via stringify_cell.
std::vector<std::string> stringify_row(const DataTable& table, int row,
                                       const FeatureSchema& schema);

nlohmann::json vocab_to_json(const Vocab& vocab);
Vocab vocab_from_json(const nlohmann::json& object);

}  // namespace mmtab
