#include "lbn/autodiff.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <string>

#include "lbn/errors.hpp"
#include "test_util.hpp"

namespace lbn::ad {
namespace {

using lbn::testing::max_rel_error;
using lbn::testing::random_tensor;

// Builds op(inputs) on a fresh tape and reduces it with a random weighting so
// the upstream gradient is not all ones.
using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

double weighted_value(const Builder& build, const std::vector<Tensor>& inputs, const Tensor& w) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  const Var y = build(tape, vars);
  return sum(mul(y, tape.constant(w))).value().item();
}

// Every input of `build` is checked against central differences.
void expect_matches_finite_diff(const std::string& name, const Builder& build,
                                const std::vector<Tensor>& inputs, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w;
  {
    Tape probe;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(probe.constant(t));
    w = random_tensor(build(probe, vars).value().shape(), rng);
  }
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  const auto grads = tape.backward(sum(mul(build(tape, leaves), tape.constant(w))));

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto numeric = finite_diff(
        [&](const Tensor& xk) {
          auto perturbed = inputs;
          perturbed[k] = xk;
          return weighted_value(build, perturbed, w);
        },
        inputs[k], 1e-6);
    EXPECT_LT(max_rel_error(grads.of(leaves[k]), numeric, 1e-6), 1e-5)
        << name << ", input " << k;
  }
}

Tensor positive(Shape s, Rng& rng) {
  Tensor t = random_tensor(std::move(s), rng);
  for (auto& v : t.data()) v = 0.5 + std::abs(v);
  return t;
}

// Rows of a probability matrix, kept away from ties and the clamp.
Tensor probabilities(std::size_t rows, std::size_t cols, Rng& rng) {
  return lbn::softmax(random_tensor({rows, cols}, rng, 2.0));
}

TEST(Autodiff, EveryPrimitiveMatchesFiniteDifferences) {
  Rng rng(2024);
  for (int trial = 0; trial < 3; ++trial) {
    const auto seed = static_cast<std::uint64_t>(100 + trial);
    const auto a = random_tensor({3, 4}, rng);
    const auto b = random_tensor({3, 4}, rng);
    const auto m = random_tensor({4, 2}, rng);
    const auto row = random_tensor({4}, rng);
    const auto s = random_tensor({1}, rng);

    expect_matches_finite_diff("matmul", [](Tape&, const auto& v) { return matmul(v[0], v[1]); }, {a, m}, seed);
    expect_matches_finite_diff("add", [](Tape&, const auto& v) { return add(v[0], v[1]); }, {a, b}, seed);
    expect_matches_finite_diff("sub", [](Tape&, const auto& v) { return sub(v[0], v[1]); }, {a, b}, seed);
    expect_matches_finite_diff("mul", [](Tape&, const auto& v) { return mul(v[0], v[1]); }, {a, b}, seed);
    expect_matches_finite_diff("add_row", [](Tape&, const auto& v) { return add_row(v[0], v[1]); }, {a, row}, seed);
    expect_matches_finite_diff("sub_row", [](Tape&, const auto& v) { return sub_row(v[0], v[1]); }, {a, row}, seed);
    expect_matches_finite_diff("mul_row", [](Tape&, const auto& v) { return mul_row(v[0], v[1]); }, {a, row}, seed);
    expect_matches_finite_diff("scale", [](Tape&, const auto& v) { return scale(v[0], v[1]); }, {a, s}, seed);
    expect_matches_finite_diff("scale_const", [](Tape&, const auto& v) { return scale_const(v[0], -2.5); }, {a}, seed);
    expect_matches_finite_diff("mix", [](Tape&, const auto& v) { return mix(v[0], v[1], v[2]); }, {row, random_tensor({4}, rng), s}, seed);
    // Kinks are avoided: inputs are bounded away from zero.
    auto away = a;
    for (auto& v : away.data()) v += v >= 0 ? 0.1 : -0.1;
    expect_matches_finite_diff("leaky", [](Tape&, const auto& v) { return leaky(v[0], -0.001); }, {away}, seed);
    expect_matches_finite_diff("relu", [](Tape&, const auto& v) { return relu(v[0]); }, {away}, seed);
    expect_matches_finite_diff("rsqrt_eps", [](Tape&, const auto& v) { return rsqrt_eps(v[0], 1e-5); }, {positive({4}, rng)}, seed);
    expect_matches_finite_diff("mean_rows", [](Tape&, const auto& v) { return mean_rows(v[0]); }, {a}, seed);
    expect_matches_finite_diff("var_rows", [](Tape&, const auto& v) { return var_rows(v[0]); }, {a}, seed);
    expect_matches_finite_diff("reshape", [](Tape&, const auto& v) { return reshape(v[0], {2, 6}); }, {a}, seed);
    expect_matches_finite_diff("softmax_rows", [](Tape&, const auto& v) { return softmax_rows(v[0]); }, {a}, seed);
    expect_matches_finite_diff("entropy_sum", [](Tape&, const auto& v) { return entropy_sum(v[0], 1e-12); }, {probabilities(3, 5, rng)}, seed);
    expect_matches_finite_diff("range_sum", [](Tape&, const auto& v) { return range_sum(v[0]); }, {probabilities(3, 5, rng)}, seed);
    expect_matches_finite_diff("nll_sum", [](Tape&, const auto& v) { return nll_sum(v[0], {0, 4, 2}, 1e-12); }, {probabilities(3, 5, rng)}, seed);
    expect_matches_finite_diff("sum", [](Tape&, const auto& v) { return sum(v[0]); }, {a}, seed);
    expect_matches_finite_diff("query_select", [](Tape&, const auto& v) { return query_select(v[0], 2, 3); },
                               {random_tensor({4, 6}, rng)}, seed);
  }
}

TEST(Autodiff, QuerySelectKeepsTheQueryBlock) {
  Tape tape;
  // batch 1, Q = 2, C = 2: row 0 keeps columns 0..1, row 1 keeps 2..3.
  const auto x = tape.constant(Tensor::matrix({{1, 2, 3, 4}, {5, 6, 7, 8}}));
  EXPECT_EQ(query_select(x, 2, 2).value(), Tensor::matrix({{1, 2}, {7, 8}}));
}

TEST(Autodiff, MixIsEvaluatedInTheStatedForm) {
  Tape tape;
  const double w = 0.3;
  const auto y = mix(tape.constant(Tensor::vector({2.0})), tape.constant(Tensor::vector({5.0})),
                     tape.constant(Tensor::scalar(w)));
  EXPECT_EQ(y.value()[0], (1.0 - w) * 2.0 + w * 5.0);
}

TEST(Autodiff, RangeSumTiesGoToTheFirstIndex) {
  Tape tape;
  const auto p = tape.leaf(Tensor::matrix({{0.4, 0.4, 0.2}}));
  const auto g = tape.backward(range_sum(p));
  // Max subgradient lands on column 0, the min on column 2.
  EXPECT_EQ(g.of(p), Tensor::matrix({{1.0, 0.0, -1.0}}));
}

TEST(Autodiff, UntouchedLeavesGetZeroGradients) {
  Tape tape;
  const auto x = tape.leaf(Tensor::vector({1, 2}));
  const auto unused = tape.leaf(Tensor::vector({3, 4, 5}));
  const auto g = tape.backward(sum(x));
  EXPECT_EQ(g.of(unused), Tensor::zeros({3}));
  EXPECT_EQ(g.of(x), Tensor::vector({1, 1}));
}

TEST(Autodiff, GradientsAccumulateOverReuse) {
  Tape tape;
  const auto x = tape.leaf(Tensor::vector({3.0}));
  const auto g = tape.backward(sum(mul(x, x)));  // d(x^2)/dx = 2x
  EXPECT_EQ(g.of(x)[0], 6.0);
}

TEST(Autodiff, BackwardNeedsAScalarLoss) {
  Tape tape;
  const auto x = tape.leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Autodiff, ConstantsRecordNoBackward) {
  Tape tape;
  const auto a = tape.constant(Tensor::vector({1, 2}));
  const auto y = add(a, a);
  EXPECT_FALSE(tape.requires_grad(y.id()));
  EXPECT_EQ(tape.op(y.id()), OpKind::Add);
}

TEST(Autodiff, OperandsMustShareATape) {
  Tape t1, t2;
  EXPECT_THROW(add(t1.constant(Tensor::scalar(1)), t2.constant(Tensor::scalar(1))), ContractError);
}

TEST(Autodiff, ShapeMismatchIsReported) {
  Tape tape;
  EXPECT_THROW(add(tape.constant(Tensor::vector({1, 2})), tape.constant(Tensor::vector({1, 2, 3}))),
               ShapeError);
  EXPECT_THROW(matmul(tape.constant(Tensor::zeros({2, 3})), tape.constant(Tensor::zeros({2, 3}))),
               ShapeError);
}

TEST(Autodiff, FiniteDiffRejectsNonPositiveStep) {
  EXPECT_THROW(finite_diff([](const Tensor&) { return 0.0; }, Tensor::scalar(1), 0.0), ContractError);
}

TEST(Autodiff, FiniteDiffOfAQuadratic) {
  // d/dx (x0^2 + 3 x1) = (2 x0, 3); exact for central differences.
  const auto g = finite_diff([](const Tensor& x) { return x[0] * x[0] + 3 * x[1]; },
                             Tensor::vector({1.5, -2}), 1e-3);
  EXPECT_NEAR(g[0], 3.0, 1e-9);
  EXPECT_NEAR(g[1], 3.0, 1e-9);
}

}  // namespace
}  // namespace lbn::ad
