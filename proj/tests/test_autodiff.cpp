#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "mmtab/graph.hpp"
#include "mmtab/rng.hpp"

using namespace mmtab;
namespace ad = mmtab::ad;

namespace {

Eigen::MatrixXd random_matrix(Rng& rng, int rows, int cols, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
  }
  return m;
}

using GraphBuilder =
    std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

// Compares reverse-mode gradients of a scalar-valued graph against central
// finite differences, entry by entry.
void check_gradients(const GraphBuilder& build,
                     std::vector<Eigen::MatrixXd> inputs,
                     double tolerance = 1e-6, double h = 1e-5) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const Eigen::MatrixXd& input : inputs) leaves.push_back(tape.leaf(input, true));
  ad::Var out = build(tape, leaves);
  REQUIRE(out->value.size() == 1);
  tape.backward(out);

  auto eval = [&](const std::vector<Eigen::MatrixXd>& values) {
    ad::Tape local;
    std::vector<ad::Var> local_leaves;
    for (const Eigen::MatrixXd& value : values) {
      local_leaves.push_back(local.leaf(value, false));
    }
    return build(local, local_leaves)->value(0, 0);
  };

  for (std::size_t which = 0; which < inputs.size(); ++which) {
    for (Eigen::Index r = 0; r < inputs[which].rows(); ++r) {
      for (Eigen::Index c = 0; c < inputs[which].cols(); ++c) {
        std::vector<Eigen::MatrixXd> plus = inputs, minus = inputs;
        plus[which](r, c) += h;
        minus[which](r, c) -= h;
        const double numeric = (eval(plus) - eval(minus)) / (2.0 * h);
        const double analytic = leaves[which]->grad(r, c);
        const double denom =
            std::max({std::fabs(numeric), std::fabs(analytic), 1e-6});
        CHECK(std::fabs(numeric - analytic) / denom < tolerance);
      }
    }
  }
}

ad::Var project_to_scalar(ad::Tape& tape, const ad::Var& x,
                          const Eigen::MatrixXd& weights) {
  ad::Var w = tape.leaf(weights, false);
  return ad::mean_all(tape, ad::mul_elem(tape, x, w));
}

}  // namespace

TEST_CASE("diamond graph accumulates through shared nodes") {
  ad::Tape tape;
  Eigen::MatrixXd xv(1, 1), yv(1, 1);
  xv << 3.0;
  yv << 5.0;
  ad::Var x = tape.leaf(xv, true);
  ad::Var y = tape.leaf(yv, true);
  ad::Var z = ad::add(tape, ad::mul_elem(tape, x, y), x);  // z = xy + x
  tape.backward(z);
  CHECK(z->value(0, 0) == 18.0);
  CHECK(x->grad(0, 0) == 6.0);  // y + 1
  CHECK(y->grad(0, 0) == 3.0);
}

TEST_CASE("backward requires a scalar root") {
  ad::Tape tape;
  ad::Var x = tape.leaf(Eigen::MatrixXd::Ones(2, 2), true);
  CHECK_THROWS_AS(tape.backward(x), Error);
}

TEST_CASE("no-grad subgraphs stay untouched") {
  ad::Tape tape;
  ad::Var frozen = tape.leaf(Eigen::MatrixXd::Ones(2, 2), false);
  ad::Var live = tape.leaf(Eigen::MatrixXd::Ones(2, 2) * 2.0, true);
  ad::Var out = ad::mean_all(tape, ad::matmul(tape, frozen, live));
  tape.backward(out);
  CHECK(frozen->grad.size() == 0);
  CHECK(live->grad.array().isFinite().all());
}

TEST_CASE("matmul and matmul_nt gradients") {
  Rng rng(101);
  const Eigen::MatrixXd proj = random_matrix(rng, 3, 5);
  check_gradients(
      [&](ad::Tape& t, const std::vector<ad::Var>& in) {
        return project_to_scalar(t, ad::matmul(t, in[0], in[1]), proj);
      },
      {random_matrix(rng, 3, 4), random_matrix(rng, 4, 5)});

  const Eigen::MatrixXd proj_nt = random_matrix(rng, 3, 4);
  check_gradients(
      [&](ad::Tape& t, const std::vector<ad::Var>& in) {
        return project_to_scalar(t, ad::matmul_nt(t, in[0], in[1]), proj_nt);
      },
      {random_matrix(rng, 3, 6), random_matrix(rng, 4, 6)});
}

TEST_CASE("elementwise op gradients") {
  Rng rng(103);
  const Eigen::MatrixXd proj = random_matrix(rng, 4, 3);
  check_gradients(
      [&](ad::Tape& t, const std::vector<ad::Var>& in) {
        ad::Var sum = ad::add(t, in[0], in[1]);
        ad::Var diff = ad::sub(t, sum, in[2]);
        ad::Var prod = ad::mul_elem(t, diff, in[0]);
        return project_to_scalar(t, ad::scale(t, prod, 1.7), proj);
      },
      {random_matrix(rng, 4, 3), random_matrix(rng, 4, 3),
       random_matrix(rng, 4, 3)});
}

TEST_CASE("bias broadcast gradient") {
  Rng rng(107);
  const Eigen::MatrixXd proj = random_matrix(rng, 5, 3);
  check_gradients(
      [&](ad::Tape& t, const std::vector<ad::Var>& in) {
        return project_to_scalar(t, ad::add_rowwise(t, in[0], in[1]), proj);
      },
      {random_matrix(rng, 5, 3), random_matrix(rng, 1, 3)});
}

TEST_CASE("activation gradients away from kinks") {
  Rng rng(109);
  Eigen::MatrixXd x = random_matrix(rng, 4, 4);
  // Keep all entries at least 0.05 from zero so the finite difference never
  // straddles the leaky-relu kink.
  x = x.unaryExpr([](double v) {
    const double sign = v >= 0.0 ? 1.0 : -1.0;
    return std::fabs(v) < 0.05 ? 0.05 * sign : v;
  });
  const Eigen::MatrixXd proj = random_matrix(rng, 4, 4);
  check_gradients(
      [&](ad::Tape& t, const std::vector<ad::Var>& in) {
        return project_to_scalar(t, ad::leaky_relu(t, in[0], 0.1), proj);
      },
      {x});
  check_gradients(
      [&](ad::Tape& t, const std::vector<ad::Var>& in) {
        return project_to_scalar(t, ad::gelu(t, in[0]), proj);
      },
      {random_matrix(rng, 4, 4)});
  check_gradients(
      [&](ad::Tape& t, const std::vector<ad::Var>& in) {
        return project_to_scalar(t, ad::sigmoid(t, in[0]), proj);
      },
      {random_matrix(rng, 4, 4)});
}

TEST_CASE("leaky relu values") {
  ad::Tape tape;
  Eigen::MatrixXd x(1, 3);
  x << -2.0, 0.0, 3.0;
  const ad::Var out = ad::leaky_relu(tape, tape.leaf(x), 0.1);
  CHECK(out->value(0, 0) == doctest::Approx(-0.2));
  CHECK(out->value(0, 1) == 0.0);
  CHECK(out->value(0, 2) == 3.0);
}

TEST_CASE("gelu matches the erf closed form") {
  ad::Tape tape;
  Eigen::MatrixXd x(1, 2);
  x << 1.0, -1.0;
  const ad::Var out = ad::gelu(tape, tape.leaf(x));
  CHECK(out->value(0, 0) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
  CHECK(out->value(0, 1) == doctest::Approx(-0.15865525393145707).epsilon(1e-12));
}

TEST_CASE("layer norm values and gradients") {
  Rng rng(113);
  {
    ad::Tape tape;
    const Eigen::MatrixXd x = random_matrix(rng, 3, 8);
    ad::Var out = ad::layer_norm(tape, tape.leaf(x),
                                 tape.leaf(Eigen::MatrixXd::Ones(1, 8)),
                                 tape.leaf(Eigen::MatrixXd::Zero(1, 8)));
    for (int r = 0; r < 3; ++r) {
      CHECK(out->value.row(r).mean() == doctest::Approx(0.0).epsilon(1e-9));
      const double var = out->value.row(r).array().square().mean();
      CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // epsilon in rsqrt
    }
  }
  const Eigen::MatrixXd proj = random_matrix(rng, 3, 6);
  check_gradients(
      [&](ad::Tape& t, const std::vector<ad::Var>& in) {
        return project_to_scalar(t, ad::layer_norm(t, in[0], in[1], in[2]), proj);
      },
      {random_matrix(rng, 3, 6), random_matrix(rng, 1, 6),
       random_matrix(rng, 1, 6)},
      1e-5);
}

TEST_CASE("softmax rows sum to one and gradients match") {
  Rng rng(127);
  {
    ad::Tape tape;
    const ad::Var out = ad::softmax_rows(tape, tape.leaf(random_matrix(rng, 5, 7)));
    for (int r = 0; r < 5; ++r) {
      CHECK(out->value.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(out->value.row(r).minCoeff() > 0.0);
    }
  }
  const Eigen::MatrixXd proj = random_matrix(rng, 4, 5);
  check_gradients(
      [&](ad::Tape& t, const std::vector<ad::Var>& in) {
        return project_to_scalar(t, ad::softmax_rows(t, in[0]), proj);
      },
      {random_matrix(rng, 4, 5)});
}

TEST_CASE("masked softmax zeroes suppressed positions") {
  Rng rng(131);
  Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(3, 5);
  mask.col(4).setConstant(-1e30);
  mask(0, 3) = -1e30;
  {
    ad::Tape tape;
    const ad::Var out =
        ad::masked_softmax_rows(tape, tape.leaf(random_matrix(rng, 3, 5)), mask);
    CHECK(out->value.col(4).maxCoeff() == 0.0);
    CHECK(out->value(0, 3) == 0.0);
    for (int r = 0; r < 3; ++r) {
      CHECK(out->value.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  const Eigen::MatrixXd proj = random_matrix(rng, 3, 5);
  check_gradients(
      [&](ad::Tape& t, const std::vector<ad::Var>& in) {
        return project_to_scalar(t, ad::masked_softmax_rows(t, in[0], mask), proj);
      },
      {random_matrix(rng, 3, 5)});
}

TEST_CASE("slicing and concatenation gradients") {
  Rng rng(137);
  const Eigen::MatrixXd proj = random_matrix(rng, 6, 4);
  check_gradients(
      [&](ad::Tape& t, const std::vector<ad::Var>& in) {
        ad::Var top = ad::rows_of(t, in[0], 0, 2);
        ad::Var bottom = ad::rows_of(t, in[0], 2, 2);
        ad::Var stacked = ad::vconcat(t, {top, bottom, in[1]});
        ad::Var left = ad::cols_of(t, stacked, 0, 2);
        ad::Var right = ad::cols_of(t, stacked, 2, 2);
        return project_to_scalar(t, ad::hconcat(t, {left, right}), proj);
      },
      {random_matrix(rng, 4, 4), random_matrix(rng, 2, 4)});
}

TEST_CASE("row gather scatter-adds repeated rows") {
  {
    ad::Tape tape;
    Eigen::MatrixXd table(3, 2);
    table << 1, 2, 3, 4, 5, 6;
    ad::Var t = tape.leaf(table, true);
    ad::Var gathered = ad::row_gather(tape, t, {0, 0, 2});
    CHECK(gathered->value(0, 0) == 1.0);
    CHECK(gathered->value(1, 0) == 1.0);
    CHECK(gathered->value(2, 1) == 6.0);
    ad::Var out = ad::mean_all(tape, gathered);
    tape.backward(out);
    // Row 0 was gathered twice: its gradient doubles row 2's.
    CHECK(t->grad(0, 0) == doctest::Approx(2.0 / 6.0));
    CHECK(t->grad(2, 0) == doctest::Approx(1.0 / 6.0));
    CHECK(t->grad(1, 0) == 0.0);
  }
  Rng rng(139);
  const Eigen::MatrixXd proj = random_matrix(rng, 5, 3);
  check_gradients(
      [&](ad::Tape& t, const std::vector<ad::Var>& in) {
        return project_to_scalar(
            t, ad::row_gather(t, in[0], {1, 0, 1, 3, 2}), proj);
      },
      {random_matrix(rng, 4, 3)});
}

TEST_CASE("softmax cross entropy value and closed-form gradient") {
  Rng rng(149);
  const Eigen::MatrixXd logits = random_matrix(rng, 6, 4);
  const std::vector<int> labels = {0, 3, 1, 1, 2, 0};

  ad::Tape tape;
  ad::Var in = tape.leaf(logits, true);
  ad::Var loss = ad::softmax_cross_entropy(tape, in, labels);
  tape.backward(loss);

  const Eigen::MatrixXd probs = ad::softmax_rows_value(logits);
  double expected = 0.0;
  for (int i = 0; i < 6; ++i) expected -= std::log(probs(i, labels[i]));
  expected /= 6.0;
  CHECK(loss->value(0, 0) == doctest::Approx(expected).epsilon(1e-12));

  Eigen::MatrixXd grad = probs;
  for (int i = 0; i < 6; ++i) grad(i, labels[i]) -= 1.0;
  grad /= 6.0;
  CHECK((in->grad - grad).cwiseAbs().maxCoeff() < 1e-12);

  check_gradients(
      [&](ad::Tape& t, const std::vector<ad::Var>& in2) {
        return ad::softmax_cross_entropy(t, in2[0], labels);
      },
      {logits});
}

TEST_CASE("logistic loss gradient and stability") {
  Rng rng(151);
  check_gradients(
      [&](ad::Tape& t, const std::vector<ad::Var>& in) {
        Eigen::VectorXd y(5);
        y << 1, 0, 1, 1, 0;
        return ad::logistic_loss(t, in[0], y);
      },
      {random_matrix(rng, 5, 1, 2.0)});

  // Extreme logits stay finite.
  ad::Tape tape;
  Eigen::MatrixXd z(2, 1);
  z << 800.0, -800.0;
  Eigen::VectorXd y(2);
  y << 1, 0;
  ad::Var loss = ad::logistic_loss(tape, tape.leaf(z, true), y);
  CHECK(std::isfinite(loss->value(0, 0)));
  CHECK(loss->value(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("squared loss gradient") {
  Rng rng(157);
  Eigen::VectorXd targets(4);
  targets << 0.5, -1.0, 2.0, 0.0;
  check_gradients(
      [&](ad::Tape& t, const std::vector<ad::Var>& in) {
        return ad::squared_loss(t, in[0], targets);
      },
      {random_matrix(rng, 4, 1)});
}
