#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <vector>

#include "mmtab/types.hpp"

namespace mmtab::ad {

// One tape node. `backprop` scatters this node's grad into its inputs; it is
// empty for leaves.
struct Node {
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  bool needs_grad = false;
  std::function<void()> backprop;
};

using Var = std::shared_ptr<Node>;

// Records nodes in creation order; backward() replays that order reversed,
// which is a valid topological order because every op's inputs precede it.
class Tape {
 public:
  Var leaf(Eigen::MatrixXd value, bool needs_grad = false);
  Var make(Eigen::MatrixXd value, bool needs_grad, std::function<void()> backprop);
  // Seeds d(root)/d(root) = 1 (root must be 1x1) and runs the reverse sweep.
  void backward(const Var& root);
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Var> nodes_;
};

void accumulate(const Var& target, const Eigen::MatrixXd& grad);

// Additive-mask value that fully suppresses an attention position; such
// positions come out of the masked softmax as exactly 0.
inline constexpr double kMaskedOut = -1e30;

// Every op returns a new node on the tape; values are computed eagerly.
Var matmul(Tape& tape, const Var& a, const Var& b);
Var matmul_nt(Tape& tape, const Var& a, const Var& b);  // a * b^T
Var add(Tape& tape, const Var& a, const Var& b);
Var sub(Tape& tape, const Var& a, const Var& b);
Var mul_elem(Tape& tape, const Var& a, const Var& b);
Var add_rowwise(Tape& tape, const Var& x, const Var& bias);  // bias is 1 x n
Var scale(Tape& tape, const Var& x, double factor);
Var leaky_relu(Tape& tape, const Var& x, double negative_slope);
Var gelu(Tape& tape, const Var& x);  // exact erf form
Var sigmoid(Tape& tape, const Var& x);
Var layer_norm(Tape& tape, const Var& x, const Var& gain, const Var& bias,
               double epsilon = 1e-5);
Var softmax_rows(Tape& tape, const Var& x);
// additive_mask is added to the logits before the softmax (0 keeps a
// position, a large negative number suppresses it).
Var masked_softmax_rows(Tape& tape, const Var& x,
                        const Eigen::MatrixXd& additive_mask);
Var hconcat(Tape& tape, const std::vector<Var>& parts);
Var vconcat(Tape& tape, const std::vector<Var>& parts);
Var rows_of(Tape& tape, const Var& x, int start, int count);
Var cols_of(Tape& tape, const Var& x, int start, int count);
// out.row(i) = table.row(ids[i]); backward scatter-adds shared rows.
Var row_gather(Tape& tape, const Var& table, const std::vector<int>& ids);
Var mean_all(Tape& tape, const Var& x);

// Mean losses, each returning a 1x1 node.
Var softmax_cross_entropy(Tape& tape, const Var& logits,
                          const std::vector<int>& labels);
Var logistic_loss(Tape& tape, const Var& logits, const Eigen::VectorXd& labels);
Var squared_loss(Tape& tape, const Var& preds, const Eigen::VectorXd& targets);

// Row-wise softmax of plain values (no tape), shared with inference paths.
Eigen::MatrixXd softmax_rows_value(const Eigen::MatrixXd& logits);

}  // namespace mmtab::ad
