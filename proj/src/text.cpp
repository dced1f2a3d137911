#include "mmtab/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

namespace mmtab {

namespace {

constexpr const char* kReservedNames[4] = {"<pad>", "<unk>", "<cls>", "<sep>"};

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0; }

}  // namespace

std::vector<std::string> word_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (is_word_char(c)) {
      std::string token;
      while (i < text.size() &&
             is_word_char(static_cast<unsigned char>(text[i]))) {
        token.push_back(static_cast<char>(
            std::tolower(static_cast<unsigned char>(text[i]))));
        ++i;
      }
      tokens.push_back(std::move(token));
    } else {
      tokens.push_back(std::string(1, text[i]));
      ++i;
    }
  }
  return tokens;
}

Vocab build_vocab(const std::vector<std::string>& corpus, int max_size) {
  std::map<std::string, long long> frequency;
  for (const std::string& document : corpus) {
    for (const std::string& token : word_tokens(document)) ++frequency[token];
  }

  std::vector<std::pair<long long, std::string>> ranked;
  ranked.reserve(frequency.size());
  for (const auto& [token, count] : frequency) ranked.emplace_back(-count, token);
  std::sort(ranked.begin(), ranked.end());

  Vocab vocab;
  vocab.max_size = max_size;
  for (int i = 0; i < 4; ++i) vocab.token_to_id[kReservedNames[i]] = i;
  int next_id = 4;
  for (const auto& [neg_count, token] : ranked) {
    if (next_id - 4 >= max_size) break;
    if (vocab.token_to_id.count(token)) continue;  // reserved-name collision
    vocab.token_to_id[token] = next_id++;
  }
  return vocab;
}

std::vector<int> tokenize(const std::string& text, const Vocab& vocab) {
  std::vector<int> ids;
  for (const std::string& token : word_tokens(text)) {
    ids.push_back(vocab.id_for(token));
  }
  return ids;
}

MergedInput merge_fields(const std::vector<std::vector<int>>& fields,
                         int max_length) {
  const int k = static_cast<int>(fields.size());
  const int overhead = 1 + k;  // CLS plus one SEP per field
  if (overhead > max_length) {
    throw Error("merge_fields: " + std::to_string(k) +
                " fields cannot fit in max_length " + std::to_string(max_length));
  }

  std::vector<int> lengths(fields.size());
  long long total = overhead;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    lengths[i] = static_cast<int>(fields[i].size());
    total += lengths[i];
  }
  while (total > max_length) {
    // Ties spare the lowest field index: the removal lands on the last of
    // the equally-longest fields.
    int longest = 0;
    for (std::size_t i = 1; i < lengths.size(); ++i) {
      if (lengths[i] >= lengths[longest]) longest = static_cast<int>(i);
    }
    --lengths[static_cast<std::size_t>(longest)];
    --total;
  }

  MergedInput merged;
  merged.token_ids.reserve(static_cast<std::size_t>(total));
  merged.segment_ids.reserve(static_cast<std::size_t>(total));
  merged.token_ids.push_back(Vocab::kCls);
  merged.segment_ids.push_back(0);
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const int segment = static_cast<int>(i % 2);
    const int start = static_cast<int>(merged.token_ids.size());
    for (int j = 0; j < lengths[i]; ++j) {
      merged.token_ids.push_back(fields[i][static_cast<std::size_t>(j)]);
      merged.segment_ids.push_back(segment);
    }
    merged.field_spans.emplace_back(start,
                                    static_cast<int>(merged.token_ids.size()));
    merged.token_ids.push_back(Vocab::kSep);
    merged.segment_ids.push_back(segment);
  }
  merged.positions.resize(merged.token_ids.size());
  for (std::size_t p = 0; p < merged.positions.size(); ++p) {
    merged.positions[p] = static_cast<int>(p);
  }
  return merged;
}

namespace {

// Round x >= 0 to the nearest integer, ties to even.
long long round_half_even(double x) {
  const double floor_part = std::floor(x);
  const double fraction = x - floor_part;
  long long n = static_cast<long long>(floor_part);
  if (fraction > 0.5) return n + 1;
  if (fraction < 0.5) return n;
  return (n % 2 == 0) ? n : n + 1;
}

}  // namespace

std::string format_sig3(double value) {
  if (value == 0.0 || !std::isfinite(value)) return "0.00";
  const bool negative = value < 0.0;
  const double magnitude = std::fabs(value);

  int exponent = static_cast<int>(std::floor(std::log10(magnitude)));
  long long digits = round_half_even(magnitude / std::pow(10.0, exponent - 2));
  if (digits >= 1000) {  // rounding rolled into the next decade
    digits /= 10;
    ++exponent;
  }
  if (digits < 100) {  // log10 landed one decade high
    --exponent;
    digits = round_half_even(magnitude / std::pow(10.0, exponent - 2));
    if (digits >= 1000) {
      digits /= 10;
      ++exponent;
    }
  }

  char buffer[64];
  const int d1 = static_cast<int>(digits / 100);
  const int d23 = static_cast<int>(digits % 100);
  std::string body;
  if (exponent >= -3 && exponent <= 5) {
    if (exponent >= 2) {
      body = std::to_string(digits);
      body.append(static_cast<std::size_t>(exponent - 2), '0');
    } else if (exponent == 1) {
      std::snprintf(buffer, sizeof(buffer), "%lld.%lld", digits / 10, digits % 10);
      body = buffer;
    } else if (exponent == 0) {
      std::snprintf(buffer, sizeof(buffer), "%d.%02d", d1, d23);
      body = buffer;
    } else {
      body = "0.";
      body.append(static_cast<std::size_t>(-exponent - 1), '0');
      std::snprintf(buffer, sizeof(buffer), "%03lld", digits);
      body += buffer;
    }
  } else {
    std::snprintf(buffer, sizeof(buffer), "%d.%02de%+03d", d1, d23, exponent);
    body = buffer;
  }
  return negative ? "-" + body : body;
}

std::string stringify_cell(const Cell& cell, Modality modality) {
  if (cell.is_missing()) return "";
  switch (modality) {
    case Modality::numeric: {
      if (cell.is_numeric()) return format_sig3(cell.number);
      const std::optional<double> parsed = parse_number(cell.str);
      return parsed ? format_sig3(*parsed) : "";
    }
    case Modality::categorical:
    case Modality::text:
      return cell.is_numeric() ? number_to_string(cell.number) : cell.str;
  }
  return "";
}

std::vector<std::string> stringify_row(const DataTable& table, int row,
                                       const FeatureSchema& schema) {
  std::vector<std::string> fields;
  fields.reserve(schema.feature_columns.size());
  for (const std::string& name : schema.feature_columns) {
    const Column* column = table.find_column(name);
    if (!column) throw Error("column absent: " + name);
    fields.push_back(stringify_cell(column->cells[static_cast<std::size_t>(row)],
                                    schema.modality(name)));
  }
  return fields;
}

nlohmann::json vocab_to_json(const Vocab& vocab) {
  nlohmann::json object = nlohmann::json::object();
  for (const auto& [token, id] : vocab.token_to_id) object[token] = id;
  return object;
}

Vocab vocab_from_json(const nlohmann::json& object) {
  Vocab vocab;
  for (const auto& [token, id] : object.items()) {
    vocab.token_to_id[token] = id.get<int>();
  }
  vocab.max_size = std::max(0, vocab.size() - 4);
  return vocab;
}

}  // namespace mmtab
