#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace mpqg;
using test::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;

// Reduces any output to a scalar with fixed random weights so that every
// output coordinate contributes to the checked gradient.
Var weighted_sum(const Var& v, std::uint64_t seed) {
  Rng rng(seed);
  Tape& tape = *v.tape();
  return sum(mul(v, tape.constant(random_tensor(v.shape(), rng))));
}

}  // namespace

TEST(Kernels, MatmulOracle) {
  Tape tape;
  Var a = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var b = tape.constant(Tensor::matrix({{5, 6}, {7, 8}}));
  EXPECT_EQ(matmul(a, b).value(), Tensor::matrix({{19, 22}, {43, 50}}));
  EXPECT_EQ(matmul(tape.constant(Tensor::identity(2)), b).value(), b.value());
  EXPECT_EQ(matmul(tape.constant(Tensor::zeros({2, 3})), tape.constant(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}))).value(),
            Tensor::zeros({2, 2}));
}

TEST(Kernels, MatmulShapeErrorNamesShapes) {
  Tape tape;
  Var a = tape.constant(Tensor::zeros({2, 3}));
  Var b = tape.constant(Tensor::zeros({2, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
}

TEST(Kernels, SoftmaxOracleAndInvariants) {
  Tape tape;
  Tensor s = softmax(tape.constant(Tensor::vector({1, 2, 3}))).value();
  EXPECT_NEAR(s[0], 0.09003057317038046, 1e-12);
  EXPECT_NEAR(s[1], 0.24472847105479764, 1e-12);
  EXPECT_NEAR(s[2], 0.6652409557748218, 1e-12);
  Tensor half = softmax(tape.constant(Tensor::vector({0, 0}))).value();
  EXPECT_DOUBLE_EQ(half[0], 0.5);
  EXPECT_THROW(softmax(tape.constant(Tensor())), DimensionError);

  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor v = random_tensor({7}, rng, -30, 30);
    Tensor shifted = v;
    const double c = rng.uniform(-100, 100);
    for (double& x : shifted.values()) x += c;
    Tensor p = softmax(tape.constant(v)).value();
    Tensor q = softmax(tape.constant(shifted)).value();
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_LT(max_abs_diff(p, q), 1e-12);
    for (double x : p.values()) EXPECT_GT(x, 0.0);
  }
}

TEST(Kernels, SoftmaxLargeInputsStayFinite) {
  Tape tape;
  Tensor s = softmax(tape.constant(Tensor::vector({1000, 1001, 999}))).value();
  EXPECT_TRUE(s.all_finite());
  EXPECT_NEAR(s.sum(), 1.0, 1e-12);
}

TEST(Kernels, CosineOracles) {
  Tape tape;
  auto cos = [&](Tensor a, Tensor b) { return cosine(tape.constant(a), tape.constant(b)).value()[0]; };
  EXPECT_NEAR(cos(Tensor::vector({1, 2}), Tensor::vector({2, 1})), 0.8, 1e-15);
  EXPECT_NEAR(cos(Tensor::vector({1, 0}), Tensor::vector({0, 1})), 0.0, 1e-15);
  EXPECT_NEAR(cos(Tensor::vector({3, -4, 2}), Tensor::vector({3, -4, 2})), 1.0, 1e-15);
  EXPECT_EQ(cos(Tensor::vector({0, 0}), Tensor::vector({1, 2})), 0.0);
  EXPECT_THROW(cos(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})), DimensionError);
}

TEST(Kernels, CosineDegenerateOperandHasZeroGradient) {
  Tape tape;
  Var a = tape.input(Tensor::vector({0, 0, 0}));
  Var b = tape.input(Tensor::vector({1, 2, 3}));
  tape.backward(cosine(a, b));
  EXPECT_EQ(tape.grad(a), Tensor::zeros({3}));
  EXPECT_EQ(tape.grad(b), Tensor::zeros({3}));
}

TEST(Kernels, ElementwiseDefinitions) {
  Tape tape;
  EXPECT_EQ(tanh(tape.constant(Tensor::vector({0}))).value()[0], 0.0);
  EXPECT_EQ(sigmoid(tape.constant(Tensor::vector({0}))).value()[0], 0.5);
  EXPECT_EQ(max_over(tape.constant(Tensor::matrix({{1, 5}, {3, 2}})), 0).value(), Tensor::vector({3, 5}));
  EXPECT_EQ(concat({tape.constant(Tensor::vector({1, 2})), tape.constant(Tensor::vector({3}))}).value(),
            Tensor::vector({1, 2, 3}));
  EXPECT_EQ(sum_over(tape.constant(Tensor::matrix({{1, 5}, {3, 2}})), 0).value(), Tensor::vector({4, 7}));
  EXPECT_EQ(minimum(tape.constant(Tensor::vector({0.6, 0.4})), tape.constant(Tensor::vector({0.3, 0.7}))).value(),
            Tensor::vector({0.3, 0.4}));
  EXPECT_THROW(add(tape.constant(Tensor::vector({1})), tape.constant(Tensor::vector({1, 2}))), DimensionError);
}

TEST(Kernels, SigmoidIsStableAtExtremes) {
  Tape tape;
  Tensor s = sigmoid(tape.constant(Tensor::vector({-800, 800}))).value();
  EXPECT_TRUE(s.all_finite());
  EXPECT_NEAR(s[0], 0.0, 1e-300);
  EXPECT_EQ(s[1], 1.0);
}

TEST(Kernels, ScatterAddMergesDuplicates) {
  Tape tape;
  Var alpha = tape.constant(Tensor::vector({0.2, 0.3, 0.5}));
  Tensor p = scatter_add(alpha, {4, 5, 4}, 7).value();
  EXPECT_DOUBLE_EQ(p[4], 0.7);
  EXPECT_DOUBLE_EQ(p[5], 0.3);
  EXPECT_DOUBLE_EQ(p.sum(), 1.0);
}

TEST(Kernels, MultiPerspectiveCosineOracles) {
  Tape tape;
  Var v1 = tape.constant(Tensor::vector({1, 2}));
  Var v2 = tape.constant(Tensor::vector({2, 1}));
  EXPECT_NEAR(multi_perspective_cosine(v1, v2, tape.constant(Tensor::matrix({{1, 0}}))).value()[0], 1.0, 1e-15);
  Tensor ones = multi_perspective_cosine(v1, v2, tape.constant(Tensor::matrix({{1, 1}, {1, 1}}))).value();
  EXPECT_NEAR(ones[0], 0.8, 1e-15);
  EXPECT_NEAR(ones[1], 0.8, 1e-15);
  Tensor self = multi_perspective_cosine(v1, v1, tape.constant(Tensor::matrix({{0.3, -2}, {5, 1}}))).value();
  EXPECT_NEAR(self[0], 1.0, 1e-15);
  EXPECT_NEAR(self[1], 1.0, 1e-15);
}

TEST(Tape, GradientAccumulatesAcrossUses) {
  ModelParams params;
  params.add("w", Tensor::vector({2.0, -1.0}));
  Tape tape;
  Var w = tape.param(params.at("w"));
  Var w_again = tape.param(params.at("w"));
  EXPECT_EQ(w.id(), w_again.id());
  Var x = tape.constant(Tensor::vector({3.0, 4.0}));
  // loss = w·x + w·w, so d/dw = x + 2w
  tape.backward(add(dot(w, x), dot(w_again, w)));
  EXPECT_EQ(params.at("w").grad, Tensor::vector({7.0, 2.0}));
  params.zero_grad();
  EXPECT_EQ(params.at("w").grad, Tensor::zeros({2}));
}

TEST(Tape, FrozenParametersReceiveNothing) {
  ModelParams params;
  params.add("e", Tensor::vector({1.0, 1.0}), true);
  params.add("w", Tensor::vector({1.0, 2.0}));
  Tape tape;
  tape.backward(dot(tape.param(params.at("e")), tape.param(params.at("w"))));
  EXPECT_EQ(params.at("e").grad, Tensor::zeros({2}));
  EXPECT_EQ(params.at("w").grad, Tensor::vector({1.0, 1.0}));
}

TEST(Tape, BackwardScalesParameterGradients) {
  ModelParams params;
  params.add("w", Tensor::vector({1.0}));
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(scale(tape.param(params.at("w")), 3.0), 0.5);
  }
  EXPECT_DOUBLE_EQ(params.at("w").grad[0], 3.0);
}

TEST(Tape, NonScalarHeadIsContractError) {
  Tape tape;
  Var v = tape.input(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(v), ContractError);
  EXPECT_THROW(grad_check([](Tape&, std::span<const Var> xs) { return xs[0]; }, {Tensor::vector({1, 2})}),
               ContractError);
}

TEST(Tape, MixingTapesIsRejected) {
  Tape a, b;
  Var x = a.constant(Tensor::vector({1}));
  Var y = b.constant(Tensor::vector({1}));
  EXPECT_THROW(add(x, y), ContractError);
}

TEST(Tape, BackwardVisitsInReverseOrder) {
  // The second use of x depends on the first result; a forward-order sweep
  // would read an incomplete gradient for y.
  Tape tape;
  Var x = tape.input(Tensor::vector({2.0}));
  Var y = mul(x, x);
  Var z = mul(y, x);
  tape.backward(sum(z));
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 12.0);  // d(x^3)/dx at 2
}

TEST(GradCheck, LinearLayerIsExact) {
  Rng rng(4);
  auto r = grad_check([](Tape&, std::span<const Var> xs) { return sum(matvec(xs[0], xs[1])); },
                      {random_tensor({3, 4}, rng), random_tensor({4}, rng)});
  EXPECT_LT(r.max_rel_error, 1e-9);
  EXPECT_EQ(r.coordinates, 16u);
}

TEST(GradCheck, LstmCellStep) {
  Rng rng(5);
  ModelParams params;
  add_lstm_params(params, "cell", 3, 4, rng);
  const Tensor x = random_tensor({3}, rng), h0 = random_tensor({4}, rng), c0 = random_tensor({4}, rng);
  auto f = [&](Tape& tape) {
    LstmParams p = lstm_params(params, "cell");
    LstmState s = lstm_step(tape, p, tape.constant(x), {tape.constant(h0), tape.constant(c0)});
    return add(weighted_sum(s.h, 1), weighted_sum(s.c, 2));
  };
  EXPECT_LT(grad_check_params(f, params).max_rel_error, kGradTol);
}

// Every exported differentiable kernel against central differences.
TEST(GradCheck, EveryKernel) {
  Rng rng(6);
  const Tensor m23 = random_tensor({2, 3}, rng), m32 = random_tensor({3, 2}, rng), m33 = random_tensor({3, 3}, rng);
  const Tensor v2 = random_tensor({2}, rng), v3 = random_tensor({3}, rng), w3 = random_tensor({3}, rng);
  const Tensor pos3 = random_tensor({3}, rng, 0.1, 1.0);
  struct Case {
    const char* name;
    LossOfInputs f;
    std::vector<Tensor> inputs;
  };
  const std::vector<Case> cases = {
      {"matmul", [](Tape&, auto x) { return weighted_sum(matmul(x[0], x[1]), 1); }, {m23, m32}},
      {"matvec", [](Tape&, auto x) { return weighted_sum(matvec(x[0], x[1]), 2); }, {m23, v3}},
      {"vecmat", [](Tape&, auto x) { return weighted_sum(vecmat(x[0], x[1]), 3); }, {v2, m23}},
      {"transpose", [](Tape&, auto x) { return weighted_sum(transpose(x[0]), 4); }, {m23}},
      {"reshape", [](Tape&, auto x) { return weighted_sum(reshape(x[0], {6}), 5); }, {m23}},
      {"add", [](Tape&, auto x) { return weighted_sum(add(x[0], x[1]), 6); }, {v3, w3}},
      {"sub", [](Tape&, auto x) { return weighted_sum(sub(x[0], x[1]), 7); }, {v3, w3}},
      {"add_n", [](Tape&, auto x) { return weighted_sum(add_n({x[0], x[1], x[0]}), 8); }, {v3, w3}},
      {"add_row", [](Tape&, auto x) { return weighted_sum(add_row(x[0], x[1]), 9); }, {m23, v3}},
      {"mul", [](Tape&, auto x) { return weighted_sum(mul(x[0], x[1]), 10); }, {v3, w3}},
      {"scale", [](Tape&, auto x) { return weighted_sum(scale(x[0], -2.5), 11); }, {v3}},
      {"add_const", [](Tape&, auto x) { return weighted_sum(mul(add_const(x[0], 2.0), x[0]), 12); }, {v3}},
      {"tanh", [](Tape&, auto x) { return weighted_sum(tanh(x[0]), 13); }, {m33}},
      {"sigmoid", [](Tape&, auto x) { return weighted_sum(sigmoid(x[0]), 14); }, {m33}},
      {"concat", [](Tape&, auto x) { return weighted_sum(concat({x[0], x[1]}), 15); }, {v2, v3}},
      {"concat_cols", [](Tape&, auto x) { return weighted_sum(concat_cols({x[0], x[1]}), 16); }, {m23, m23}},
      {"stack_rows", [](Tape&, auto x) { return weighted_sum(stack_rows({x[0], x[1], x[0]}), 17); }, {v3, w3}},
      {"row", [](Tape&, auto x) { return weighted_sum(row(x[0], 1), 18); }, {m23}},
      {"slice", [](Tape&, auto x) { return weighted_sum(slice(x[0], 1, 2), 19); }, {v3}},
      {"max_over_rows", [](Tape&, auto x) { return weighted_sum(max_over(x[0], 0), 20); }, {m33}},
      {"max_over_cols", [](Tape&, auto x) { return weighted_sum(max_over(x[0], 1), 21); }, {m33}},
      {"sum_over", [](Tape&, auto x) { return weighted_sum(sum_over(x[0], 1), 22); }, {m23}},
      {"softmax", [](Tape&, auto x) { return weighted_sum(softmax(x[0]), 23); }, {v3}},
      {"log_clamped", [](Tape&, auto x) { return weighted_sum(log_clamped(x[0]), 24); }, {pos3}},
      {"pick", [](Tape&, auto x) { return scale(pick(x[0], 2), 1.7); }, {v3}},
      {"dot", [](Tape&, auto x) { return dot(x[0], x[1]); }, {v3, w3}},
      {"cosine", [](Tape&, auto x) { return cosine(x[0], x[1]); }, {v3, w3}},
      {"multi_perspective_cosine",
       [](Tape&, auto x) { return weighted_sum(multi_perspective_cosine(x[0], x[1], x[2]), 25); },
       {v3, w3, m23}},
      {"outer", [](Tape&, auto x) { return weighted_sum(outer(x[0], x[1]), 26); }, {v2, v3}},
      {"divide_by", [](Tape&, auto x) { return weighted_sum(divide_by(x[0], add_const(sum(x[1]), 3.0)), 27); },
       {v3, pos3}},
      {"minimum", [](Tape&, auto x) { return weighted_sum(minimum(x[0], x[1]), 28); }, {v3, w3}},
      {"scatter_add", [](Tape&, auto x) { return weighted_sum(scatter_add(x[0], {0, 2, 0}, 4), 29); }, {v3}},
      {"pad", [](Tape&, auto x) { return weighted_sum(pad(x[0], 5), 30); }, {v3}},
      {"interpolate",
       [](Tape&, auto x) { return weighted_sum(interpolate(sigmoid(x[0]), x[1], x[2]), 31); },
       {Tensor::vector({0.3}), v3, w3}},
  };
  for (const auto& c : cases) {
    const auto r = grad_check(c.f, c.inputs);
    EXPECT_LT(r.max_rel_error, kGradTol) << c.name << " worst " << r.worst;
  }
}

TEST(GradCheck, LinearKernelsToRoundingPrecision) {
  Rng rng(7);
  const Tensor m = random_tensor({3, 4}, rng), n = random_tensor({4, 2}, rng), v = random_tensor({4}, rng);
  EXPECT_LT(grad_check([](Tape&, auto x) { return weighted_sum(matmul(x[0], x[1]), 40); }, {m, n}).max_rel_error,
            1e-9);
  EXPECT_LT(grad_check([](Tape&, auto x) { return weighted_sum(add(matvec(x[0], x[1]), matvec(x[0], x[1])), 41); },
                       {m, v})
                .max_rel_error,
            1e-9);
}

TEST(GradCheck, DetectsCorruptedBackward) {
  double& k = testing_hooks::tanh_backward_scale();
  k = 1.5;
  Rng rng(8);
  const auto r = grad_check([](Tape&, auto x) { return weighted_sum(tanh(x[0]), 50); }, {random_tensor({4}, rng)});
  k = 1.0;
  EXPECT_GT(r.max_rel_error, kGradTol);
}

TEST(Adam, ZeroGradientLeavesParameterAndDecaysMoments) {
  ModelParams fresh;
  fresh.add("w", Tensor::vector({1.0, -2.0}));
  AdamState s0;
  adam_step(fresh, s0, 0.1);
  EXPECT_EQ(fresh.at("w").value, Tensor::vector({1.0, -2.0}));
  EXPECT_EQ(s0.step, 1u);

  ModelParams params;
  params.add("w", Tensor::vector({1.0}));
  AdamState state;
  params.at("w").grad = Tensor::vector({2.0});
  adam_step(params, state, 0.1);
  const double m1 = state.m["w"][0], v1 = state.v["w"][0];
  params.zero_grad();
  adam_step(params, state, 0.1);
  EXPECT_DOUBLE_EQ(state.m["w"][0], 0.9 * m1);
  EXPECT_DOUBLE_EQ(state.v["w"][0], 0.999 * v1);
  EXPECT_EQ(state.step, 2u);
}

TEST(Adam, FirstStepClosedForm) {
  ModelParams params;
  params.add("w", Tensor::vector({1.0, 1.0, 1.0}));
  params.at("w").grad = Tensor::vector({0.3, -4.0, 1e-3});
  AdamState state;
  const double lr = 0.01;
  adam_step(params, state, lr);
  // Bias-corrected moments equal g and g², so the step is lr·g/(|g| + ε).
  for (std::size_t i = 0; i < 3; ++i) {
    const double g = std::vector<double>{0.3, -4.0, 1e-3}[i];
    EXPECT_NEAR(params.at("w").value[i], 1.0 - lr * g / (std::abs(g) + 1e-8), 1e-15);
  }
}

TEST(Adam, SecondStepNoLargerForConstantGradient) {
  ModelParams params;
  params.add("w", Tensor::vector({0.0}));
  AdamState state;
  double prev = 0.0, first = 0.0, second = 0.0;
  for (int k = 0; k < 2; ++k) {
    params.at("w").grad = Tensor::vector({0.7});
    adam_step(params, state, 0.05);
    const double now = params.at("w").value[0];
    (k == 0 ? first : second) = std::abs(now - prev);
    prev = now;
  }
  EXPECT_LE(second, first + 1e-15);
}

TEST(Adam, FrozenUntouchedAndShapeChecked) {
  ModelParams params;
  params.add("e", Tensor::vector({1.0}), true);
  params.add("w", Tensor::vector({1.0}));
  params.at("e").grad = Tensor::vector({5.0});
  params.at("w").grad = Tensor::vector({5.0});
  AdamState state;
  adam_step(params, state, 0.1);
  EXPECT_EQ(params.at("e").value[0], 1.0);
  EXPECT_FALSE(state.m.count("e"));
  params.at("w").grad = Tensor::vector({1.0, 2.0});
  EXPECT_THROW(adam_step(params, state, 0.1), ContractError);
}

TEST(Adam, ClipGradNorm) {
  ModelParams params;
  params.add("a", Tensor::vector({0, 0}));
  params.at("a").grad = Tensor::vector({3.0, 4.0});
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
  EXPECT_NEAR(grad_global_norm(params), 1.0, 1e-15);
  EXPECT_NEAR(params.at("a").grad[0], 0.6, 1e-15);
}
