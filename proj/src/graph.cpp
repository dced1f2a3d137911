#include "mmtab/graph.hpp"

#include <cmath>

namespace mmtab::ad {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Closures capture the output node as a raw pointer; capturing the shared_ptr
// would make every node own itself. The tape keeps all nodes alive for as
// long as any closure can run.
Node* raw(const Var& var) { return var.get(); }

bool any_grad(const Var& a) { return a->needs_grad; }
bool any_grad(const Var& a, const Var& b) {
  return a->needs_grad || b->needs_grad;
}

}  // namespace

Var Tape::leaf(Eigen::MatrixXd value, bool needs_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->needs_grad = needs_grad;
  if (needs_grad) {
    node->grad = Eigen::MatrixXd::Zero(node->value.rows(), node->value.cols());
  }
  nodes_.push_back(node);
  return node;
}

Var Tape::make(Eigen::MatrixXd value, bool needs_grad,
               std::function<void()> backprop) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->needs_grad = needs_grad;
  if (needs_grad) {
    node->grad = Eigen::MatrixXd::Zero(node->value.rows(), node->value.cols());
    node->backprop = std::move(backprop);
  }
  nodes_.push_back(node);
  return node;
}

void Tape::backward(const Var& root) {
  if (root->value.rows() != 1 || root->value.cols() != 1) {
    throw Error("backward: root must be a 1x1 scalar node");
  }
  if (!root->needs_grad) return;
  root->grad(0, 0) = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& node = **it;
    if (node.needs_grad && node.backprop) node.backprop();
  }
}

void accumulate(const Var& target, const Eigen::MatrixXd& grad) {
  if (target->needs_grad) target->grad += grad;
}

Var matmul(Tape& tape, const Var& a, const Var& b) {
  Var out = tape.make(a->value * b->value, any_grad(a, b), nullptr);
  Node* self = raw(out);
  out->backprop = [a, b, self]() {
    if (a->needs_grad) a->grad += self->grad * b->value.transpose();
    if (b->needs_grad) b->grad += a->value.transpose() * self->grad;
  };
  return out;
}

Var matmul_nt(Tape& tape, const Var& a, const Var& b) {
  Var out = tape.make(a->value * b->value.transpose(), any_grad(a, b), nullptr);
  Node* self = raw(out);
  out->backprop = [a, b, self]() {
    if (a->needs_grad) a->grad += self->grad * b->value;
    if (b->needs_grad) b->grad += self->grad.transpose() * a->value;
  };
  return out;
}

Var add(Tape& tape, const Var& a, const Var& b) {
  Var out = tape.make(a->value + b->value, any_grad(a, b), nullptr);
  Node* self = raw(out);
  out->backprop = [a, b, self]() {
    if (a->needs_grad) a->grad += self->grad;
    if (b->needs_grad) b->grad += self->grad;
  };
  return out;
}

Var sub(Tape& tape, const Var& a, const Var& b) {
  Var out = tape.make(a->value - b->value, any_grad(a, b), nullptr);
  Node* self = raw(out);
  out->backprop = [a, b, self]() {
    if (a->needs_grad) a->grad += self->grad;
    if (b->needs_grad) b->grad -= self->grad;
  };
  return out;
}

Var mul_elem(Tape& tape, const Var& a, const Var& b) {
  Var out = tape.make(a->value.cwiseProduct(b->value), any_grad(a, b), nullptr);
  Node* self = raw(out);
  out->backprop = [a, b, self]() {
    if (a->needs_grad) a->grad += self->grad.cwiseProduct(b->value);
    if (b->needs_grad) b->grad += self->grad.cwiseProduct(a->value);
  };
  return out;
}

Var add_rowwise(Tape& tape, const Var& x, const Var& bias) {
  if (bias->value.rows() != 1 || bias->value.cols() != x->value.cols()) {
    throw Error("add_rowwise: bias must be 1 x cols(x)");
  }
  Eigen::MatrixXd value = x->value;
  value.rowwise() += bias->value.row(0);
  Var out = tape.make(std::move(value), any_grad(x, bias), nullptr);
  Node* self = raw(out);
  out->backprop = [x, bias, self]() {
    if (x->needs_grad) x->grad += self->grad;
    if (bias->needs_grad) bias->grad.row(0) += self->grad.colwise().sum();
  };
  return out;
}

Var scale(Tape& tape, const Var& x, double factor) {
  Var out = tape.make(x->value * factor, any_grad(x), nullptr);
  Node* self = raw(out);
  out->backprop = [x, self, factor]() {
    if (x->needs_grad) x->grad += self->grad * factor;
  };
  return out;
}

Var leaky_relu(Tape& tape, const Var& x, double negative_slope) {
  Eigen::MatrixXd value = x->value.unaryExpr([negative_slope](double v) {
    return v >= 0.0 ? v : negative_slope * v;
  });
  Var out = tape.make(std::move(value), any_grad(x), nullptr);
  Node* self = raw(out);
  out->backprop = [x, self, negative_slope]() {
    if (!x->needs_grad) return;
    x->grad.array() +=
        self->grad.array() * x->value
                                 .unaryExpr([negative_slope](double v) {
                                   return v >= 0.0 ? 1.0 : negative_slope;
                                 })
                                 .array();
  };
  return out;
}

Var gelu(Tape& tape, const Var& x) {
  Eigen::MatrixXd value = x->value.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  });
  Var out = tape.make(std::move(value), any_grad(x), nullptr);
  Node* self = raw(out);
  out->backprop = [x, self]() {
    if (!x->needs_grad) return;
    x->grad.array() +=
        self->grad.array() * x->value
                                 .unaryExpr([](double v) {
                                   const double cdf =
                                       0.5 * (1.0 + std::erf(v * kInvSqrt2));
                                   const double pdf =
                                       kInvSqrt2Pi * std::exp(-0.5 * v * v);
                                   return cdf + v * pdf;
                                 })
                                 .array();
  };
  return out;
}

Var sigmoid(Tape& tape, const Var& x) {
  Eigen::MatrixXd value = x->value.unaryExpr([](double v) {
    return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                    : std::exp(v) / (1.0 + std::exp(v));
  });
  Var out = tape.make(std::move(value), any_grad(x), nullptr);
  Node* self = raw(out);
  out->backprop = [x, self]() {
    if (!x->needs_grad) return;
    x->grad.array() +=
        self->grad.array() * self->value.array() * (1.0 - self->value.array());
  };
  return out;
}

Var layer_norm(Tape& tape, const Var& x, const Var& gain, const Var& bias,
               double epsilon) {
  const Eigen::Index cols = x->value.cols();
  if (gain->value.cols() != cols || bias->value.cols() != cols ||
      gain->value.rows() != 1 || bias->value.rows() != 1) {
    throw Error("layer_norm: gain/bias must be 1 x cols(x)");
  }

  Eigen::VectorXd mean = x->value.rowwise().mean();
  Eigen::MatrixXd centered = x->value.colwise() - mean;
  Eigen::VectorXd variance =
      centered.array().square().rowwise().mean().matrix();
  Eigen::VectorXd inv_std = (variance.array() + epsilon).rsqrt().matrix();
  Eigen::MatrixXd normalized =
      (centered.array().colwise() * inv_std.array()).matrix();
  Eigen::MatrixXd value =
      ((normalized.array().rowwise() * gain->value.row(0).array()).rowwise() +
       bias->value.row(0).array())
          .matrix();

  const bool ng = x->needs_grad || gain->needs_grad || bias->needs_grad;
  Var out = tape.make(std::move(value), ng, nullptr);
  Node* self = raw(out);
  auto normalized_ptr = std::make_shared<Eigen::MatrixXd>(std::move(normalized));
  auto inv_std_ptr = std::make_shared<Eigen::VectorXd>(std::move(inv_std));
  out->backprop = [x, gain, bias, self, normalized_ptr, inv_std_ptr, cols]() {
    const Eigen::MatrixXd& xhat = *normalized_ptr;
    if (gain->needs_grad) {
      gain->grad.row(0) +=
          (self->grad.array() * xhat.array()).colwise().sum().matrix();
    }
    if (bias->needs_grad) bias->grad.row(0) += self->grad.colwise().sum();
    if (x->needs_grad) {
      // dx = (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)) / std, rowwise
      Eigen::MatrixXd dxhat =
          (self->grad.array().rowwise() * gain->value.row(0).array()).matrix();
      Eigen::VectorXd mean_dxhat = dxhat.rowwise().mean();
      Eigen::VectorXd mean_dxhat_xhat =
          (dxhat.array() * xhat.array()).rowwise().mean().matrix();
      Eigen::MatrixXd dx =
          (dxhat.array() - mean_dxhat.replicate(1, cols).array() -
           xhat.array() * mean_dxhat_xhat.replicate(1, cols).array())
              .matrix();
      x->grad.array() += dx.array().colwise() * inv_std_ptr->array();
    }
  };
  return out;
}

namespace {

Var softmax_common(Tape& tape, const Var& x, const Eigen::MatrixXd* mask) {
  Eigen::MatrixXd logits = x->value;
  if (mask) {
    if (mask->rows() != logits.rows() || mask->cols() != logits.cols()) {
      throw Error("masked_softmax_rows: mask shape mismatch");
    }
    logits += *mask;
  }
  Eigen::MatrixXd probs = softmax_rows_value(logits);
  if (mask) {
    // Vectorized exp underflows to a denormal rather than zero; pin fully
    // suppressed positions to exactly 0 so no weight or gradient leaks.
    probs = (mask->array() <= 0.5 * kMaskedOut)
                .select(Eigen::MatrixXd::Zero(probs.rows(), probs.cols()), probs);
  }
  Var out = tape.make(std::move(probs), any_grad(x), nullptr);
  Node* self = raw(out);
  out->backprop = [x, self]() {
    if (!x->needs_grad) return;
    // Per row: dx = s * (g - g.s)
    Eigen::VectorXd dot =
        (self->grad.array() * self->value.array()).rowwise().sum().matrix();
    x->grad.array() +=
        self->value.array() * (self->grad.array().colwise() - dot.array());
  };
  return out;
}

}  // namespace

Var softmax_rows(Tape& tape, const Var& x) {
  return softmax_common(tape, x, nullptr);
}

Var masked_softmax_rows(Tape& tape, const Var& x,
                        const Eigen::MatrixXd& additive_mask) {
  return softmax_common(tape, x, &additive_mask);
}

Var hconcat(Tape& tape, const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("hconcat: no parts");
  const Eigen::Index rows = parts.front()->value.rows();
  Eigen::Index cols = 0;
  bool ng = false;
  for (const Var& part : parts) {
    if (part->value.rows() != rows) throw Error("hconcat: row mismatch");
    cols += part->value.cols();
    ng = ng || part->needs_grad;
  }
  Eigen::MatrixXd value(rows, cols);
  Eigen::Index at = 0;
  for (const Var& part : parts) {
    value.middleCols(at, part->value.cols()) = part->value;
    at += part->value.cols();
  }
  Var out = tape.make(std::move(value), ng, nullptr);
  Node* self = raw(out);
  out->backprop = [parts, self]() {
    Eigen::Index at = 0;
    for (const Var& part : parts) {
      if (part->needs_grad) {
        part->grad += self->grad.middleCols(at, part->value.cols());
      }
      at += part->value.cols();
    }
  };
  return out;
}

Var vconcat(Tape& tape, const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("vconcat: no parts");
  const Eigen::Index cols = parts.front()->value.cols();
  Eigen::Index rows = 0;
  bool ng = false;
  for (const Var& part : parts) {
    if (part->value.cols() != cols) throw Error("vconcat: column mismatch");
    rows += part->value.rows();
    ng = ng || part->needs_grad;
  }
  Eigen::MatrixXd value(rows, cols);
  Eigen::Index at = 0;
  for (const Var& part : parts) {
    value.middleRows(at, part->value.rows()) = part->value;
    at += part->value.rows();
  }
  Var out = tape.make(std::move(value), ng, nullptr);
  Node* self = raw(out);
  out->backprop = [parts, self]() {
    Eigen::Index at = 0;
    for (const Var& part : parts) {
      if (part->needs_grad) {
        part->grad += self->grad.middleRows(at, part->value.rows());
      }
      at += part->value.rows();
    }
  };
  return out;
}

Var rows_of(Tape& tape, const Var& x, int start, int count) {
  Var out = tape.make(x->value.middleRows(start, count), any_grad(x), nullptr);
  Node* self = raw(out);
  out->backprop = [x, self, start, count]() {
    if (x->needs_grad) x->grad.middleRows(start, count) += self->grad;
  };
  return out;
}

Var cols_of(Tape& tape, const Var& x, int start, int count) {
  Var out = tape.make(x->value.middleCols(start, count), any_grad(x), nullptr);
  Node* self = raw(out);
  out->backprop = [x, self, start, count]() {
    if (x->needs_grad) x->grad.middleCols(start, count) += self->grad;
  };
  return out;
}

Var row_gather(Tape& tape, const Var& table, const std::vector<int>& ids) {
  Eigen::MatrixXd value(static_cast<Eigen::Index>(ids.size()), table->value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table->value.rows()) {
      throw Error("row_gather: id out of range");
    }
    value.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
  }
  Var out = tape.make(std::move(value), any_grad(table), nullptr);
  Node* self = raw(out);
  out->backprop = [table, self, ids]() {
    if (!table->needs_grad) return;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      table->grad.row(ids[i]) += self->grad.row(static_cast<Eigen::Index>(i));
    }
  };
  return out;
}

Var mean_all(Tape& tape, const Var& x) {
  Eigen::MatrixXd value(1, 1);
  value(0, 0) = x->value.mean();
  Var out = tape.make(std::move(value), any_grad(x), nullptr);
  Node* self = raw(out);
  const double inv = 1.0 / static_cast<double>(x->value.size());
  out->backprop = [x, self, inv]() {
    if (x->needs_grad) x->grad.array() += self->grad(0, 0) * inv;
  };
  return out;
}

Eigen::MatrixXd softmax_rows_value(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd shifted = logits.colwise() - logits.rowwise().maxCoeff();
  Eigen::MatrixXd exps = shifted.array().exp().matrix();
  Eigen::VectorXd sums = exps.rowwise().sum();
  return (exps.array().colwise() / sums.array()).matrix();
}

Var softmax_cross_entropy(Tape& tape, const Var& logits,
                          const std::vector<int>& labels) {
  const Eigen::Index batch = logits->value.rows();
  if (static_cast<Eigen::Index>(labels.size()) != batch) {
    throw Error("softmax_cross_entropy: label count mismatch");
  }
  Eigen::MatrixXd probs = softmax_rows_value(logits->value);
  double total = 0.0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= logits->value.cols()) {
      throw Error("softmax_cross_entropy: label out of range");
    }
    total -= std::log(std::max(probs(i, label), 1e-300));
  }
  Eigen::MatrixXd value(1, 1);
  value(0, 0) = total / static_cast<double>(batch);
  Var out = tape.make(std::move(value), any_grad(logits), nullptr);
  Node* self = raw(out);
  auto probs_ptr = std::make_shared<Eigen::MatrixXd>(std::move(probs));
  out->backprop = [logits, self, probs_ptr, labels, batch]() {
    if (!logits->needs_grad) return;
    Eigen::MatrixXd delta = *probs_ptr;
    for (Eigen::Index i = 0; i < batch; ++i) {
      delta(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
    }
    logits->grad += delta * (self->grad(0, 0) / static_cast<double>(batch));
  };
  return out;
}

Var logistic_loss(Tape& tape, const Var& logits, const Eigen::VectorXd& labels) {
  const Eigen::Index batch = logits->value.rows();
  if (logits->value.cols() != 1) throw Error("logistic_loss: expected one column");
  if (labels.size() != batch) throw Error("logistic_loss: label count mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    const double z = logits->value(i, 0);
    // softplus(z) - y*z, stable for either sign of z
    const double softplus =
        z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    total += softplus - labels[i] * z;
  }
  Eigen::MatrixXd value(1, 1);
  value(0, 0) = total / static_cast<double>(batch);
  Var out = tape.make(std::move(value), any_grad(logits), nullptr);
  Node* self = raw(out);
  out->backprop = [logits, self, labels, batch]() {
    if (!logits->needs_grad) return;
    const double scale = self->grad(0, 0) / static_cast<double>(batch);
    for (Eigen::Index i = 0; i < batch; ++i) {
      const double z = logits->value(i, 0);
      const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                : std::exp(z) / (1.0 + std::exp(z));
      logits->grad(i, 0) += (s - labels[i]) * scale;
    }
  };
  return out;
}

Var squared_loss(Tape& tape, const Var& preds, const Eigen::VectorXd& targets) {
  const Eigen::Index batch = preds->value.rows();
  if (preds->value.cols() != 1) throw Error("squared_loss: expected one column");
  if (targets.size() != batch) throw Error("squared_loss: target count mismatch");
  const Eigen::VectorXd diff = preds->value.col(0) - targets;
  Eigen::MatrixXd value(1, 1);
  value(0, 0) = diff.squaredNorm() / static_cast<double>(batch);
  Var out = tape.make(std::move(value), any_grad(preds), nullptr);
  Node* self = raw(out);
  auto diff_ptr = std::make_shared<Eigen::VectorXd>(diff);
  out->backprop = [preds, self, diff_ptr, batch]() {
    if (!preds->needs_grad) return;
    preds->grad.col(0) +=
        (2.0 / static_cast<double>(batch)) * self->grad(0, 0) * (*diff_ptr);
  };
  return out;
}

}  // namespace mmtab::ad
