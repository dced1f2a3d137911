#include "mmtab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "mmtab/rng.hpp"

namespace mmtab {

namespace {

// One keyword per class digit; the generator supports up to 8 classes.
const std::vector<std::string> kTextWords = {
    "quasar", "pellet", "marble", "lantern", "orchid", "gravel", "saffron",
    "cobalt"};
const std::vector<std::string> kInterWords = {
    "ember", "glint", "soot", "fjord", "prism", "tundra", "vellum", "zephyr"};
const std::vector<std::string> kColors = {
    "crimson", "teal", "amber", "violet", "olive", "sand", "plum", "mint"};
const std::vector<std::string> kFiller = {
    "the",    "a",      "of",    "and",   "to",     "in",     "for",
    "with",   "on",     "at",    "by",    "from",   "about",  "over",
    "under",  "near",   "through", "report", "notes", "entry", "record",
    "status", "update", "field"};

int digit_count(const SyntheticSpec& spec) {
  return spec.task == Task::multiclass ? spec.n_classes : 2;
}

// Class digit d maps to a numeric mean separated by 2 per step, centered at 0;
// binary digits land on -1/+1 so the digit is the value's sign.
double digit_mean(int digit, int n_digits) {
  return (digit - (n_digits - 1) / 2.0) * 2.0;
}

std::string class_name(int digit) { return "c" + std::to_string(digit); }

// Filler phrase with each keyword spliced in at a random position.
std::string build_text(Rng& rng, int n_filler,
                       const std::vector<std::string>& keywords) {
  std::vector<std::string> tokens;
  tokens.reserve(static_cast<std::size_t>(n_filler) + keywords.size());
  for (int i = 0; i < n_filler; ++i) {
    tokens.push_back(kFiller[static_cast<std::size_t>(rng.index(
        static_cast<int>(kFiller.size())))]);
  }
  for (const std::string& word : keywords) {
    const int at = rng.index(static_cast<int>(tokens.size()) + 1);
    tokens.insert(tokens.begin() + at, word);
  }
  std::string joined;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) joined += ' ';
    joined += tokens[i];
  }
  return joined;
}

DataTable gen_rows(const SyntheticSpec& spec, int n, Rng& rng) {
  const int digits = digit_count(spec);
  const bool classification = spec.task != Task::regression;

  // Exactly balanced class assignment, shuffled; the noise fraction keeps its
  // label but severs the feature link, so balance survives any noise level.
  std::vector<int> assigned;
  if (classification) {
    assigned.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) assigned.push_back(i % digits);
    rng.shuffle(assigned);
  }

  DataTable table;
  table.name = spec.name;
  table.task = spec.task;
  table.target = "target";
  for (int j = 0; j < spec.n_numeric; ++j) {
    table.columns.push_back({"num" + std::to_string(j), {}});
    table.type_overrides["num" + std::to_string(j)] = Modality::numeric;
  }
  for (int j = 0; j < spec.n_categorical; ++j) {
    table.columns.push_back({"cat" + std::to_string(j), {}});
    table.type_overrides["cat" + std::to_string(j)] = Modality::categorical;
  }
  for (int j = 0; j < spec.n_text_fields; ++j) {
    table.columns.push_back({"text" + std::to_string(j), {}});
    table.type_overrides["text" + std::to_string(j)] = Modality::text;
  }
  table.columns.push_back({"target", {}});
  for (Column& column : table.columns) {
    column.cells.reserve(static_cast<std::size_t>(n));
  }

  const SignalAllocation& a = spec.allocation;
  for (int i = 0; i < n; ++i) {
    int t = rng.index(digits);  // text digit: which class keyword appears
    int v = rng.index(digits);  // tabular digit: first categorical + num1 mean
    const int k = rng.index(digits);  // interaction keyword digit
    int s = rng.index(digits);        // interaction numeric digit: num0 sign
    const bool noisy = rng.uniform() < spec.noise;
    const double component = rng.uniform();

    double y_reg = 0.0;
    int y = 0;
    if (classification) {
      y = assigned[static_cast<std::size_t>(i)];
      if (!noisy) {
        if (component < a.text) {
          t = y;
        } else if (component < a.text + a.tabular) {
          v = y;
        } else {
          s = (y - k + digits) % digits;  // XOR for binary, mod-C beyond
        }
      }
    } else {
      const int x = (k + s) % digits;
      const double signal = a.text * digit_mean(t, digits) +
                            a.tabular * digit_mean(v, digits) +
                            a.interaction * digit_mean(x, digits);
      y_reg = (1.0 - spec.noise) * signal + spec.noise * rng.normal();
    }

    int col = 0;
    for (int j = 0; j < spec.n_numeric; ++j, ++col) {
      double value;
      if (j == 0) {
        value = rng.normal(digit_mean(s, digits), 0.25);
      } else if (j == 1) {
        value = rng.normal(digit_mean(v, digits), 0.25);
      } else {
        value = rng.normal();
      }
      table.columns[static_cast<std::size_t>(col)].cells.push_back(
          Cell::numeric(value));
    }
    for (int j = 0; j < spec.n_categorical; ++j, ++col) {
      const int code = j == 0 ? v : rng.index(4);
      table.columns[static_cast<std::size_t>(col)].cells.push_back(
          Cell::categorical(kColors[static_cast<std::size_t>(code)]));
    }
    for (int j = 0; j < spec.n_text_fields; ++j, ++col) {
      std::string content;
      if (j == 0) {
        std::vector<std::string> keywords;
        keywords.push_back(kTextWords[static_cast<std::size_t>(t)]);
        if (digits == 2) {
          // Binary interaction bit is keyword presence, not identity.
          if (k == 1) keywords.push_back(kInterWords[0]);
        } else {
          keywords.push_back(kInterWords[static_cast<std::size_t>(k)]);
        }
        content = build_text(rng, 5 + rng.index(6), keywords);
      } else {
        content = build_text(rng, 3 + rng.index(6), {});
      }
      table.columns[static_cast<std::size_t>(col)].cells.push_back(
          Cell::text(std::move(content)));
    }
    table.columns.back().cells.push_back(
        classification ? Cell::categorical(class_name(y))
                       : Cell::numeric(y_reg));
  }
  return table;
}

}  // namespace

void validate(const SyntheticSpec& spec) {
  const SignalAllocation& a = spec.allocation;
  if (a.text < 0.0 || a.tabular < 0.0 || a.interaction < 0.0) {
    throw Error("synthetic spec: allocation fractions must be nonnegative");
  }
  if (std::abs(a.text + a.tabular + a.interaction - 1.0) > 1e-9) {
    throw Error("synthetic spec: allocation fractions must sum to 1");
  }
  if (spec.noise < 0.0 || spec.noise > 1.0) {
    throw Error("synthetic spec: noise must lie in [0, 1]");
  }
  if (spec.n_rows < 1 || spec.n_test < 0) {
    throw Error("synthetic spec: need n_rows >= 1 and n_test >= 0");
  }
  if (spec.n_numeric < 0 || spec.n_categorical < 0 || spec.n_text_fields < 0) {
    throw Error("synthetic spec: column counts must be nonnegative");
  }
  if (spec.n_numeric + spec.n_categorical + spec.n_text_fields == 0) {
    throw Error("synthetic spec: need at least one feature column");
  }
  const int digits = digit_count(spec);
  if (digits < 2 || digits > static_cast<int>(kTextWords.size())) {
    throw Error("synthetic spec: n_classes must lie in [2, 8]");
  }
  if (spec.task == Task::binary && spec.n_classes != 2) {
    throw Error("synthetic spec: binary task fixes n_classes at 2");
  }
  if (a.text > 0.0 && spec.n_text_fields == 0) {
    throw Error("synthetic spec: text signal needs a text field");
  }
  if (a.interaction > 0.0 &&
      (spec.n_text_fields == 0 || spec.n_numeric == 0)) {
    throw Error(
        "synthetic spec: interaction signal needs a text field and a numeric "
        "column");
  }
  if (a.tabular > 0.0 && spec.n_categorical == 0 && spec.n_numeric < 2) {
    throw Error(
        "synthetic spec: tabular signal needs a categorical column or two "
        "numeric columns");
  }
}

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  Rng rng(Rng::mix(spec.seed, 0x5d47a));
  SyntheticData out;
  out.train = gen_rows(spec, spec.n_rows, rng);
  out.test = gen_rows(spec, spec.n_test, rng);
  out.test.name = spec.name + "_test";
  return out;
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec spec;
  spec.name = j.value("name", spec.name);
  spec.n_rows = j.value("n_rows", spec.n_rows);
  spec.n_test = j.value("n_test", spec.n_test);
  spec.n_numeric = j.value("n_numeric", spec.n_numeric);
  spec.n_categorical = j.value("n_categorical", spec.n_categorical);
  spec.n_text_fields = j.value("n_text_fields", spec.n_text_fields);
  if (j.contains("allocation")) {
    const nlohmann::json& alloc = j.at("allocation");
    spec.allocation.text = alloc.value("text", 0.0);
    spec.allocation.tabular = alloc.value("tabular", 0.0);
    spec.allocation.interaction = alloc.value("interaction", 0.0);
  }
  spec.noise = j.value("noise", spec.noise);
  if (j.contains("task")) {
    const std::string name = j.at("task").get<std::string>();
    const std::optional<Task> task = task_from_string(name);
    if (!task) throw Error("synthetic spec: unknown task: " + name);
    spec.task = *task;
  }
  spec.n_classes = j.value("n_classes", spec.n_classes);
  spec.seed = j.value("seed", spec.seed);
  validate(spec);
  return spec;
}

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec) {
  return nlohmann::json{
      {"name", spec.name},
      {"n_rows", spec.n_rows},
      {"n_test", spec.n_test},
      {"n_numeric", spec.n_numeric},
      {"n_categorical", spec.n_categorical},
      {"n_text_fields", spec.n_text_fields},
      {"allocation",
       {{"text", spec.allocation.text},
        {"tabular", spec.allocation.tabular},
        {"interaction", spec.allocation.interaction}}},
      {"noise", spec.noise},
      {"task", to_string(spec.task)},
      {"n_classes", spec.n_classes},
      {"seed", spec.seed},
  };
}

}  // namespace mmtab
