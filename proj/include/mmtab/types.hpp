#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>

namespace mmtab {

// Per-row class probabilities (one column per class, rows sum to 1) for
// classification, or a single column of point predictions for regression.
using PredictionMatrix = Eigen::MatrixXd;

enum class Task { binary, multiclass, regression };
enum class Modality { numeric, categorical, text };

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const char* to_string(Task task);
const char* to_string(Modality modality);
std::optional<Task> task_from_string(const std::string& name);
std::optional<Modality> modality_from_string(const std::string& name);

}  // namespace mmtab
