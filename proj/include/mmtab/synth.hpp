#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "mmtab/table.hpp"
#include "mmtab/types.hpp"

namespace mmtab {

// How the label signal is divided between the modalities. Fractions are the
// probabilities that a given row's label is carried by that component.
struct SignalAllocation {
  double text = 1.0;
  double tabular = 0.0;
  double interaction = 0.0;
};

struct SyntheticSpec {
  std::string name = "synthetic";
  int n_rows = 1000;
  int n_test = 250;
  int n_numeric = 2;
  int n_categorical = 1;
  int n_text_fields = 1;
  SignalAllocation allocation;
  // Probability that a row's label carries no feature signal at all
  // (classification), or the weight of the N(0,1) term in the target
  // (regression). noise = 1 leaves nothing to learn.
  double noise = 0.0;
  Task task = Task::binary;
  int n_classes = 2;
  std::uint64_t seed = 0;
};

// Throws Error when the allocation does not sum to 1, a nonzero component has
// no column to live in, or sizes/classes are out of range.
void validate(const SyntheticSpec& spec);

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec);

struct SyntheticData {
  DataTable train;
  DataTable test;
};

// Keyword-grammar generator. Each row draws one signal component per the
// allocation; that component's latent digit equals the row's class. Digits
// surface as: a class keyword in the first text field (text), the first
// categorical value and the second numeric column's mean (tabular), and
// XOR(interaction-keyword presence, first numeric column's sign)
// (interaction). Remaining columns are filler. Labels are exactly balanced
// within each split. Deterministic in spec.seed.
SyntheticData gen_synthetic(const SyntheticSpec& spec);

}  // namespace mmtab
