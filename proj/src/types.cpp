#include "mmtab/types.hpp"

namespace mmtab {

const char* to_string(Task task) {
  switch (task) {
    case Task::binary: return "binary";
    case Task::multiclass: return "multiclass";
    case Task::regression: return "regression";
  }
  return "unknown";
}

const char* to_string(Modality modality) {
  switch (modality) {
    case Modality::numeric: return "numeric";
    case Modality::categorical: return "categorical";
    case Modality::text: return "text";
  }
  return "unknown";
}

std::optional<Task> task_from_string(const std::string& name) {
  if (name == "binary") return Task::binary;
  if (name == "multiclass") return Task::multiclass;
  if (name == "regression") return Task::regression;
  return std::nullopt;
}

std::optional<Modality> modality_from_string(const std::string& name) {
  if (name == "numeric") return Modality::numeric;
  if (name == "categorical") return Modality::categorical;
  if (name == "text") return Modality::text;
  return std::nullopt;
}

}  // namespace mmtab
