#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gfca/adapt_net.hpp"
#include "gfca/autograd.hpp"
#include "oracles.hpp"

using namespace gfca;
using namespace gfca::ad;

TEST(Grad, HalfSquaredNormGivesIdentity) {
  Rng rng(1);
  Matrix w = oracle::random_matrix(rng, 3, 4);
  ParamGroup g("w");
  g.add("W", w);
  const auto grads = grad([&](Tape& t) { return scale(sum_squares(t.read(w)), 0.5); }, g);
  EXPECT_EQ(grads[0], w);
}

TEST(Grad, ConstantLossGivesZero) {
  Rng rng(2);
  Matrix w = oracle::random_matrix(rng, 2, 2), other = oracle::random_matrix(rng, 2, 2);
  ParamGroup g("w");
  g.add("W", w);
  const auto grads = grad([&](Tape& t) { return sum_squares(t.read(other)); }, g);
  EXPECT_EQ(grads[0], Matrix::Zero(2, 2));
}

TEST(Grad, NonScalarLossIsUnsupported) {
  Matrix w = Matrix::Ones(2, 2);
  ParamGroup g("w");
  g.add("W", w);
  EXPECT_THROW(grad([&](Tape& t) { return t.read(w); }, g), UnsupportedGraphError);
  Tape plain;
  EXPECT_THROW(plain.backward(plain.scalar_constant(1.0)), UnsupportedGraphError);
}

TEST(Grad, DuplicateNamesRejected) {
  Matrix a, b;
  ParamGroup g("x");
  g.add("p", a);
  EXPECT_THROW(g.add("p", b), ParameterError);
}

TEST(Grad, Linearity) {
  Rng rng(3);
  Matrix w = oracle::random_matrix(rng, 4, 3);
  const Matrix x = oracle::random_matrix(rng, 6, 3);
  ParamGroup g("w");
  g.add("W", w);
  const std::vector<int> y{0, 1, 2, 3, 0, 1};
  auto l1 = [&](Tape& t) { return softmax_cross_entropy(matmul_bt(t.constant(x), t.read(w)), y); };
  auto l2 = [&](Tape& t) { return sum_squares(sigmoid(matmul_bt(t.constant(x), t.read(w)))); };
  const double a = 0.7, b = -2.3;
  const auto g1 = grad(l1, g), g2 = grad(l2, g);
  const auto combined = grad([&](Tape& t) { return add(scale(l1(t), a), scale(l2(t), b)); }, g);
  EXPECT_LE((combined[0] - (a * g1[0] + b * g2[0])).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FdCheck, QuadraticIsNearlyExact) {
  Rng rng(4);
  Matrix w = oracle::random_matrix(rng, 3, 3);
  const Matrix target = oracle::random_matrix(rng, 3, 3);
  ParamGroup g("w");
  g.add("W", w);
  const auto report = finite_difference_check([&](Tape& t) { return sum_squares(sub(t.read(w), t.constant(target))); }, g);
  EXPECT_TRUE(report.passed);
  EXPECT_LT(report.max_error(), 1e-8);
  EXPECT_EQ(report.checked, 9u);
}

TEST(FdCheck, CorruptedEntryFailsAndIsNamed) {
  Rng rng(5);
  Matrix a = oracle::random_matrix(rng, 2, 3), b = oracle::random_matrix(rng, 3, 3);
  ParamGroup g("ab");
  g.add("A", a);
  g.add("B", b);
  FdOptions opt;
  opt.corrupt = [](Gradients& gr) { gr[1](2, 1) *= 1.1; };
  const auto report = finite_difference_check(
      [&](Tape& t) { return sum_squares(sigmoid(matmul_bt(t.read(a), t.read(b)))); }, g, opt);
  EXPECT_FALSE(report.passed);
  EXPECT_EQ(report.worst.param, "B");
  EXPECT_EQ(report.worst.row, 2);
  EXPECT_EQ(report.worst.col, 1);
  EXPECT_NEAR(report.worst.rel_error, 0.1 / 1.1, 1e-4);
}

TEST(FdCheck, KinkCrossingsAreExcluded) {
  Matrix w(1, 2);
  w << 1e-7, 1.0;  // first coordinate sits on the kink at step 1e-5
  ParamGroup g("w");
  g.add("W", w);
  const auto report = finite_difference_check([&](Tape& t) { return sum_squares(leaky_relu(t.read(w), 0.2)); }, g);
  EXPECT_EQ(report.excluded, 1u);
  EXPECT_EQ(report.checked, 1u);
  EXPECT_TRUE(report.passed);
}

TEST(FdCheck, EveryPrimitivePasses) {
  Rng rng(6);
  for (int seed = 0; seed < 5; ++seed) {
    Matrix a = oracle::random_matrix(rng, 5, 3), b = oracle::random_matrix(rng, 4, 3);
    Matrix row = oracle::random_matrix(rng, 1, 4);
    ParamGroup g("all");
    g.add("a", a);
    g.add("b", b);
    g.add("row", row);
    const std::vector<int> y{0, 3, 1, 2, 2};
    const auto bank = KernelBank::uniform({0.7, 1.4, 2.8});
    LossFn loss = [&](Tape& t) {
      Var av = t.read(a), bv = t.read(b);
      Var z = add_row(matmul_bt(av, bv), t.read(row));        // 5 x 4
      Var h = leaky_relu(z, 0.2);
      Var ce = softmax_cross_entropy(h, y);
      Var norm = mean(row_normalize(concat_rows(av, bv), 2.5));
      Var lg = mean(log(add_scalar(sigmoid(z), 0.1)));
      Var mm = mmd_sq(av, bv, bank);
      Var rn = square(add_scalar(row_sq_norm_mean(bv, {1, 3}), -1.0));
      Var cd = col_sq_dist_sum(av, Matrix::Ones(5, 3), {0, 2});
      return add(add(add(ce, scale(norm, 0.3)), add(lg, scale(mm, 4.0))), add(rn, scale(cd, 0.01)));
    };
    const auto report = finite_difference_check(loss, g);
    EXPECT_TRUE(report.passed) << report.worst.param << " " << report.worst.rel_error;
  }
}

TEST(FdCheck, EncoderClassifierLoss) {
  Rng rng(7);
  auto enc = init_encoder(5, std::vector<Index>{6, 4}, 0.2, rng);
  auto cl = init_classifier(4, 3, true, rng);
  const Matrix x = oracle::random_matrix(rng, 8, 5);
  const Matrix t_x = oracle::random_matrix(rng, 8, 5, 1.5);
  const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};
  ParamGroup g("encoder+classifier");
  g.merge(enc.params());
  g.merge(cl.params());
  const std::vector<int> few{2}, normal{0, 1};
  const double alpha = fc_alpha(cl, normal);
  const auto bank = KernelBank::uniform({1.0, 2.0, 4.0});
  LossFn loss = [&](Tape& t) {
    Var hs = encode(t, enc, t.constant(x));
    Var ht = encode(t, enc, t.constant(t_x));
    Var lc = softmax_cross_entropy(logits(t, cl, hs), y);
    Var le = mmd_sq(hs, ht, bank);
    return add(add(lc, le), fc_loss(t, cl, few, alpha));
  };
  const auto report = finite_difference_check(loss, g);
  EXPECT_TRUE(report.passed) << report.worst.param << " " << report.worst.rel_error;
  EXPECT_GT(report.checked, 0u);
}

TEST(Adam, FirstStepIsSignTimesLr) {
  Matrix w(1, 3);
  w << 1, 2, 3;
  ParamGroup g("w");
  g.add("W", w);
  auto state = AdamState::for_group(g, {0.01, 0.9, 0.999, 1e-8});
  Gradients gr{(Matrix(1, 3) << 0.5, -3, 1e-3).finished()};
  adam_step(state, g, gr);
  // The deviation equals lr*eps/(|g|+eps); allow a few ulp for the subtraction.
  const double ulp = 1e-15;
  EXPECT_NEAR(w(0, 0), 1 - 0.01, 0.01 * 1e-8 / 0.5 + ulp);
  EXPECT_NEAR(w(0, 1), 2 + 0.01, 0.01 * 1e-8 / 3 + ulp);
  EXPECT_NEAR(w(0, 2), 3 - 0.01, 0.01 * 1e-8 / 1e-3 + ulp);
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Matrix w = Matrix::Constant(2, 2, 4.0);
  ParamGroup g("w");
  g.add("W", w);
  auto state = AdamState::for_group(g, {});
  for (int i = 0; i < 50; ++i) adam_step(state, g, {Matrix::Zero(2, 2)});
  EXPECT_EQ(w, Matrix::Constant(2, 2, 4.0));
}

TEST(Adam, ThreeStepsHandRecurrence) {
  Matrix w = Matrix::Zero(1, 1);
  ParamGroup g("w");
  g.add("W", w);
  auto state = AdamState::for_group(g, {0.1, 0.9, 0.999, 1e-8});
  double theta = 0, m = 0, v = 0;
  for (int t = 1; t <= 3; ++t) {
    adam_step(state, g, {Matrix::Ones(1, 1)});
    m = 0.9 * m + 0.1;
    v = 0.999 * v + 0.001;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    theta -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(w(0, 0), theta, 1e-12);
  }
}

TEST(Adam, OrderIndependentAndShapeChecked) {
  Matrix a = Matrix::Ones(2, 2), b = Matrix::Ones(1, 3);
  Matrix a2 = a, b2 = b;
  ParamGroup g1("x"), g2("x");
  g1.add("a", a);
  g1.add("b", b);
  g2.add("b", b2);
  g2.add("a", a2);
  const Matrix ga = Matrix::Constant(2, 2, 0.3), gb = Matrix::Constant(1, 3, -0.2);
  auto s1 = AdamState::for_group(g1, {}), s2 = AdamState::for_group(g2, {});
  for (int i = 0; i < 4; ++i) {
    adam_step(s1, g1, {ga, gb});
    adam_step(s2, g2, {gb, ga});
  }
  EXPECT_EQ(a, a2);
  EXPECT_EQ(b, b2);
  EXPECT_THROW(adam_step(s1, g1, {gb, ga}), ParameterError);
}
