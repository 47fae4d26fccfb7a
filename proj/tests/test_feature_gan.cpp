#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gfca/feature_gan.hpp"
#include "oracles.hpp"

using namespace gfca;

namespace {

DomainDataset positive_blobs(int classes, int per_class, Index dim, std::uint64_t seed) {
  Rng rng(seed);
  DomainDataset ds;
  ds.class_count = classes;
  ds.features.resize(classes * per_class, dim);
  ds.labels.emplace();
  for (int k = 0; k < classes; ++k)
    for (int i = 0; i < per_class; ++i) {
      for (Index j = 0; j < dim; ++j) ds.features(k * per_class + i, j) = 2.0 + k * (j % 3) + 0.3 * rng.normal();
      ds.labels->push_back(k);
    }
  return ds;
}

double sigmoid_oracle(double t) { return 1.0 / (1.0 + std::exp(-t)); }

}  // namespace

TEST(InitGenerator, CentroidsAndScaledComponents) {
  const auto ds = positive_blobs(4, 12, 6, 1);
  const auto g = init_generator(ds, 3, 0.2);
  const Matrix centroids = class_centroids(ds.features, *ds.labels, 4);
  const auto pc = pca_fit(ds.features, 3);
  for (int k = 0; k < 4; ++k) EXPECT_EQ(Vector(g.w_y * one_hot(k, 4)), Vector(centroids.col(k)));
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(g.w_z.col(j).norm(), pc.eigenvalues[j], 1e-8);
  EXPECT_EQ(g.w_z, pc.components);
  EXPECT_EQ(g.w_y_init, g.w_y);
}

TEST(InitGenerator, Errors) {
  auto ds = positive_blobs(3, 2, 4, 2);
  EXPECT_THROW(init_generator(ds, 5, 0.2), ParameterError);
  ds.class_count = 4;
  EXPECT_THROW(init_generator(ds, 2, 0.2), MissingClassError);
}

TEST(GeneratorForward, ZeroNoiseGivesScaledCentroid) {
  const auto ds = positive_blobs(3, 10, 5, 3);
  const auto g = init_generator(ds, 2, 0.2);
  for (int k = 0; k < 3; ++k) {
    const Vector x = generator_forward(g, Vector::Zero(2), one_hot(k, 3), 4.0);
    const Vector expected = 4.0 * g.w_y.col(k) / g.w_y.col(k).norm();
    EXPECT_LE((x - expected).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(GeneratorForward, NormIsBetaAndMatchesStepwiseOracle) {
  Rng rng(4);
  GeneratorParams g;
  g.w_z = oracle::random_matrix(rng, 5, 3);
  g.w_y = oracle::random_matrix(rng, 5, 4);
  g.w_y_init = g.w_y;
  for (int rep = 0; rep < 100; ++rep) {
    Vector z(3);
    for (int j = 0; j < 3; ++j) z[j] = rng.uniform(-1, 1);
    const int k = static_cast<int>(rng.below(4));
    const double beta = rng.uniform(0.1, 20);
    const Vector x = generator_forward(g, z, one_hot(k, 4), beta);
    EXPECT_NEAR(x.norm(), beta, 1e-10);
    std::vector<double> a(5);
    double n2 = 0;
    for (int i = 0; i < 5; ++i) {
      double s = g.w_y(i, k);
      for (int j = 0; j < 3; ++j) s += g.w_z(i, j) * z[j];
      a[static_cast<std::size_t>(i)] = s > 0 ? s : 0.2 * s;
      n2 += a[static_cast<std::size_t>(i)] * a[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(x[i], beta * a[static_cast<std::size_t>(i)] / std::sqrt(n2), 1e-12);
  }
}

TEST(GeneratorForward, OneHotShiftsPreActivationByColumnDifference) {
  Rng rng(5);
  GeneratorParams g;
  g.w_z = oracle::random_matrix(rng, 4, 2);
  g.w_y = oracle::random_matrix(rng, 4, 3);
  const Vector z = Vector::Constant(2, 0.3);
  const Vector pa = g.w_z * z + g.w_y * one_hot(0, 3);
  const Vector pb = g.w_z * z + g.w_y * one_hot(2, 3);
  EXPECT_LE(((pb - pa) - (g.w_y.col(2) - g.w_y.col(0))).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(GeneratorForward, ZeroOutputIsDegenerate) {
  GeneratorParams g;
  g.w_z = Matrix::Zero(3, 2);
  g.w_y = Matrix::Zero(3, 2);
  EXPECT_THROW(generator_forward(g, Vector::Zero(2), one_hot(0, 2), 1.0), DegenerateSampleError);
}

TEST(Discriminator, Examples) {
  auto d = init_discriminator(4);
  Rng rng(6);
  for (int rep = 0; rep < 10; ++rep) EXPECT_EQ(discriminator_forward(d, oracle::random_matrix(rng, 4, 1)), 0.5);
  d.w_d = oracle::random_matrix(rng, 1, 4);
  d.b_d(0, 0) = 0.3;
  const Matrix xm = oracle::random_matrix(rng, 4, 1);
  const Vector x = xm.col(0);
  const double t = d.w_d.row(0).dot(x.transpose()) + 0.3;
  EXPECT_NEAR(discriminator_forward(d, x), sigmoid_oracle(t), 1e-15);
  double prev = 0;
  for (double s : {1.0, 10.0, 30.0}) {
    const double v = discriminator_forward(d, s * x.cwiseAbs().cwiseProduct(d.w_d.row(0).transpose().cwiseSign()));
    EXPECT_GE(v, prev);
    EXPECT_LE(v, 1.0);
    prev = v;
  }
}

TEST(GanLosses, ValueExamples) {
  EXPECT_DOUBLE_EQ(loss_g(std::vector<double>{0.5, 0.5, 0.5}), -0.5);
  EXPECT_DOUBLE_EQ(loss_g(std::vector<double>{1, 1}), -1.0);
  EXPECT_NEAR(loss_g(std::vector<double>{0.2, 0.6}), -0.4, 1e-15);
  EXPECT_DOUBLE_EQ(loss_d(std::vector<double>{1, 1}, std::vector<double>{0, 0}), -2.0);
  EXPECT_DOUBLE_EQ(loss_d(std::vector<double>{0.5}, std::vector<double>{0.5, 0.5}), -1.0);
  EXPECT_THROW(loss_g(std::vector<double>{}), ParameterError);
  EXPECT_THROW(loss_d(std::vector<double>{0.1}, std::vector<double>{}), ParameterError);
}

TEST(GanLosses, AlgebraicIdentities) {
  Rng rng(7);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> r(1 + rng.below(10)), f(1 + rng.below(10));
    for (auto& v : r) v = rng.uniform();
    for (auto& v : f) v = rng.uniform();
    double mr = 0, mf = 0;
    for (double v : r) mr += v / static_cast<double>(r.size());
    for (double v : f) mf += v / static_cast<double>(f.size());
    EXPECT_NEAR(loss_d(r, f), -mr + mf - 1, 1e-14);
    EXPECT_NEAR(loss_d(r, f) + loss_g(f), -mr - 1, 1e-14);
  }
}

TEST(GanLosses, TapeMatchesValueForms) {
  Rng rng(8);
  const Matrix r = (oracle::random_matrix(rng, 5, 1).array() * 0.1 + 0.5).matrix();
  const Matrix f = (oracle::random_matrix(rng, 7, 1).array() * 0.1 + 0.4).matrix();
  ad::Tape t;
  const std::vector<double> rv(r.data(), r.data() + r.size()), fv(f.data(), f.data() + f.size());
  EXPECT_NEAR(t.scalar(loss_g(t.constant(f))), loss_g(fv), 1e-15);
  EXPECT_NEAR(t.scalar(loss_d(t.constant(r), t.constant(f))), loss_d(rv, fv), 1e-15);
}

TEST(Anchor, ZeroAfterInitUnitShiftAndOracle) {
  const auto ds = positive_blobs(4, 6, 5, 9);
  auto g = init_generator(ds, 2, 0.2);
  const std::vector<int> normal{0, 1, 3};
  EXPECT_EQ(wy_anchor_penalty(g, normal), 0.0);
  g.w_y(2, 1) += 1.0;
  EXPECT_DOUBLE_EQ(wy_anchor_penalty(g, normal), 1.0);
  g.w_y(0, 2) += 5.0;  // few-shot column does not count
  EXPECT_DOUBLE_EQ(wy_anchor_penalty(g, normal), 1.0);
  Rng rng(10);
  g.w_y += oracle::random_matrix(rng, 5, 4, 0.1);
  double s = 0;
  for (int k : normal)
    for (Index i = 0; i < 5; ++i) s += (g.w_y(i, k) - g.w_y_init(i, k)) * (g.w_y(i, k) - g.w_y_init(i, k));
  EXPECT_NEAR(wy_anchor_penalty(g, normal), s, 1e-13);
  ad::Tape tape;
  EXPECT_NEAR(tape.scalar(wy_anchor_penalty(tape, g, normal)), s, 1e-13);
}

TEST(SampleFake, PoliciesAndDeterminism) {
  const auto ds = positive_blobs(5, 8, 6, 11);
  const auto g = init_generator(ds, 3, 0.2);
  Rng a(3);
  const auto single = sample_fake_batch(g, a, 2.0, 9, LabelPolicy::only(3));
  for (int y : single.labels) EXPECT_EQ(y, 3);
  Rng b(3);
  const auto balanced = sample_fake_batch(g, b, 2.0, 5, LabelPolicy::balanced());
  std::vector<int> sorted = balanced.labels;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<int>{0, 1, 2, 3, 4}));
  for (Index i = 0; i < 5; ++i) EXPECT_NEAR(balanced.features.row(i).norm(), 2.0, 1e-10);
  for (Index i = 0; i < balanced.noise.size(); ++i) {
    EXPECT_GE(balanced.noise.data()[i], -1.0);
    EXPECT_LE(balanced.noise.data()[i], 1.0);
  }
  Rng c1(42), c2(42);
  const auto u1 = sample_fake_batch(g, c1, 1.0, 16);
  const auto u2 = sample_fake_batch(g, c2, 1.0, 16);
  EXPECT_EQ(u1.labels, u2.labels);
  EXPECT_EQ(checksum(u1.features), checksum(u2.features));
  EXPECT_EQ(parse_label_policy("class:2").single_class, 2);
  EXPECT_THROW(parse_label_policy("bogus"), ParameterError);
}

TEST(GanGradients, GeneratorAndDiscriminatorLossesPassFdCheck) {
  Rng rng(12);
  for (int seed = 0; seed < 5; ++seed) {
    const auto ds = positive_blobs(3, 8, 5, 100 + static_cast<std::uint64_t>(seed));
    auto g = init_generator(ds, 3, 0.2);
    auto d = init_discriminator(5);
    d.w_d = oracle::random_matrix(rng, 1, 5, 0.5);
    d.b_d(0, 0) = 0.1;
    Rng sampler(static_cast<std::uint64_t>(seed));
    const auto fake = sample_fake_batch(g, sampler, 3.0, 6);
    const Matrix real = ds.features.topRows(6);
    const std::vector<int> normal{0, 1};
    for (auto kind : {GanLoss::kAsPrinted, GanLoss::kLogistic}) {
      auto gp = g.params();
      const auto rg = ad::finite_difference_check(
          [&](ad::Tape& t) {
            const auto sf = discriminate(t, d, generate(t, g, fake.noise, fake.labels, 3.0));
            return ad::add(loss_g(sf, kind), ad::scale(wy_anchor_penalty(t, g, normal), 0.01));
          },
          gp);
      EXPECT_TRUE(rg.passed) << rg.worst.param << " " << rg.worst.rel_error;
      auto dp = d.params();
      const auto rd = ad::finite_difference_check(
          [&](ad::Tape& t) {
            const auto sr = discriminate(t, d, t.constant(real));
            const auto sf = discriminate(t, d, t.constant(fake.features));
            return loss_d(sr, sf, kind);
          },
          dp);
      EXPECT_TRUE(rd.passed) << rd.worst.param << " " << rd.worst.rel_error;
    }
  }
}
