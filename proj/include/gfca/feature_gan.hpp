#ifndef GFCA_FEATURE_GAN_HPP
#define GFCA_FEATURE_GAN_HPP

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "gfca/autograd.hpp"
#include "gfca/dataset.hpp"
#include "gfca/error.hpp"
#include "gfca/numerics.hpp"
#include "gfca/rng.hpp"

namespace gfca {

/// Conditional generator G(z|y) = leaky(W_z z + W_y y), followed by
/// rescaling to norm beta.
struct GeneratorParams {
  Matrix w_z;       // d_x x d_z, columns = principal components scaled by eigenvalue
  Matrix w_y;       // d_x x c, columns start at the class centroids
  Matrix w_y_init;  // frozen copy of w_y at initialization
  double slope = 0.2;

  Index feature_dim() const { return w_z.rows(); }
  Index noise_dim() const { return w_z.cols(); }
  int class_count() const { return static_cast<int>(w_y.cols()); }

  ad::ParamGroup params() {
    ad::ParamGroup g("generator");
    g.add("W_z", w_z);
    g.add("W_y", w_y);
    return g;
  }
};

/// D(x) = sigmoid(W_d x + b_d).
struct DiscriminatorParams {
  Matrix w_d;  // 1 x d_x
  Matrix b_d;  // 1 x 1

  double bias() const { return b_d(0, 0); }

  ad::ParamGroup params() {
    ad::ParamGroup g("discriminator");
    g.add("W_d", w_d);
    g.add("b_d", b_d);
    return g;
  }
};

/// Generator initialized from labeled training features: W_y from class
/// centroids, W_z from the top-d_z principal components.
inline GeneratorParams init_generator(const DomainDataset& source_train, Index noise_dim, double slope) {
  if (!source_train.labeled()) throw ParameterError("init_generator: source must be labeled");
  if (noise_dim < 1 || noise_dim > std::min(source_train.size(), source_train.dim()))
    throw ParameterError("init_generator: noise dimension " + std::to_string(noise_dim) + " exceeds min(n_s, d_x)");
  GeneratorParams g;
  g.slope = slope;
  g.w_y = class_centroids(source_train.features, *source_train.labels, source_train.class_count);
  g.w_y_init = g.w_y;
  g.w_z = pca_fit(source_train.features, noise_dim).components;
  return g;
}

inline DiscriminatorParams init_discriminator(Index feature_dim) {
  return DiscriminatorParams{Matrix::Zero(1, feature_dim), Matrix::Zero(1, 1)};
}

inline double leaky(double x, double slope) { return x > 0 ? x : slope * x; }

/// x_f = beta * a / ||a||, a = leaky(W_z z + W_y y).
inline Vector generator_forward(const GeneratorParams& g, const Vector& z, const Vector& y, double beta) {
  if (z.size() != g.noise_dim() || y.size() != g.class_count()) throw ParameterError("generator_forward: dimension mismatch");
  if (!(beta > 0)) throw ParameterError("generator_forward: beta must be positive");
  Vector a = g.w_z * z + g.w_y * y;
  for (Index i = 0; i < a.size(); ++i) a[i] = leaky(a[i], g.slope);
  const double n = a.norm();
  if (!(n > 0)) throw DegenerateSampleError("generator_forward: zero output before normalization");
  return (beta / n) * a;
}

inline double discriminator_forward(const DiscriminatorParams& d, const Vector& x) {
  if (x.size() != d.w_d.cols()) throw ParameterError("discriminator_forward: dimension mismatch");
  const double t = d.w_d.row(0).dot(x.transpose()) + d.bias();
  return 1.0 / (1.0 + std::exp(-t));
}

/// L_g = -mean D(x_f).
inline double loss_g(std::span<const double> scores_fake) {
  if (scores_fake.empty()) throw ParameterError("loss_g: empty batch");
  double s = 0.0;
  for (double v : scores_fake) s += v;
  return -s / static_cast<double>(scores_fake.size());
}

/// L_d = -mean D(x_r) - mean(1 - D(x_f)).
inline double loss_d(std::span<const double> scores_real, std::span<const double> scores_fake) {
  if (scores_real.empty() || scores_fake.empty()) throw ParameterError("loss_d: empty batch");
  double r = 0.0, f = 0.0;
  for (double v : scores_real) r += v;
  for (double v : scores_fake) f += 1.0 - v;
  return -r / static_cast<double>(scores_real.size()) - f / static_cast<double>(scores_fake.size());
}

/// Sum over normal classes of ||W_y[:, k] - W_y_init[:, k]||^2.
inline double wy_anchor_penalty(const GeneratorParams& g, std::span<const int> normal_classes) {
  if (normal_classes.empty()) throw ParameterError("wy_anchor_penalty: empty normal set");
  double s = 0.0;
  for (int k : normal_classes) s += (g.w_y.col(k) - g.w_y_init.col(k)).squaredNorm();
  return s;
}

// ---------------------------------------------------------------------------
// Tape versions used for training

enum class GanLoss { kAsPrinted, kLogistic };

/// Generated rows for noise rows `z` (n x d_z) and labels; rows have norm beta.
inline ad::Var generate(ad::Tape& tape, const GeneratorParams& g, const Matrix& z, std::span<const int> labels, double beta) {
  const ad::Var zv = tape.constant(z);
  const ad::Var yv = tape.constant(one_hot_rows(labels, g.class_count()));
  const ad::Var pre = ad::add(ad::matmul_bt(zv, tape.read(g.w_z)), ad::matmul_bt(yv, tape.read(g.w_y)));
  return ad::row_normalize(ad::leaky_relu(pre, g.slope), beta);
}

/// Scores in (0, 1), one per row of x.
inline ad::Var discriminate(ad::Tape& tape, const DiscriminatorParams& d, ad::Var x) {
  return ad::sigmoid(ad::add_row(ad::matmul_bt(x, tape.read(d.w_d)), tape.read(d.b_d)));
}

inline ad::Var loss_g(ad::Var scores_fake, GanLoss kind = GanLoss::kAsPrinted) {
  if (kind == GanLoss::kLogistic) return ad::scale(ad::mean(ad::log(scores_fake)), -1.0);
  return ad::scale(ad::mean(scores_fake), -1.0);
}

inline ad::Var loss_d(ad::Var scores_real, ad::Var scores_fake, GanLoss kind = GanLoss::kAsPrinted) {
  if (kind == GanLoss::kLogistic) {
    const ad::Var real_term = ad::mean(ad::log(scores_real));
    const ad::Var fake_term = ad::mean(ad::log(ad::add_scalar(ad::scale(scores_fake, -1.0), 1.0)));
    return ad::scale(ad::add(real_term, fake_term), -1.0);
  }
  // -mean(r) - mean(1 - f) == -mean(r) + mean(f) - 1
  return ad::add_scalar(ad::sub(ad::mean(scores_fake), ad::mean(scores_real)), -1.0);
}

inline ad::Var wy_anchor_penalty(ad::Tape& tape, const GeneratorParams& g, std::span<const int> normal_classes) {
  if (normal_classes.empty()) throw ParameterError("wy_anchor_penalty: empty normal set");
  return ad::col_sq_dist_sum(tape.read(g.w_y), g.w_y_init, std::vector<int>(normal_classes.begin(), normal_classes.end()));
}

// ---------------------------------------------------------------------------
// Sampling

struct LabelPolicy {
  enum class Kind { kUniform, kBalanced, kSingle };
  Kind kind = Kind::kUniform;
  int single_class = 0;

  static LabelPolicy uniform() { return {}; }
  static LabelPolicy balanced() { return {Kind::kBalanced, 0}; }
  static LabelPolicy only(int k) { return {Kind::kSingle, k}; }
};

inline LabelPolicy parse_label_policy(const std::string& s) {
  if (s == "uniform") return LabelPolicy::uniform();
  if (s == "balanced") return LabelPolicy::balanced();
  if (s.rfind("class:", 0) == 0) return LabelPolicy::only(std::stoi(s.substr(6)));
  throw ParameterError("unknown label policy '" + s + "'");
}

struct FakeBatch {
  Matrix features;  // batch x d_x, every row has norm beta
  Matrix noise;     // batch x d_z
  std::vector<int> labels;
};

inline std::vector<int> draw_labels(Rng& rng, int class_count, Index batch, const LabelPolicy& policy) {
  std::vector<int> labels(static_cast<std::size_t>(batch));
  switch (policy.kind) {
    case LabelPolicy::Kind::kUniform:
      for (auto& y : labels) y = static_cast<int>(rng.below(static_cast<std::uint64_t>(class_count)));
      break;
    case LabelPolicy::Kind::kBalanced:
      for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(class_count));
      rng.shuffle(std::span<int>(labels));
      break;
    case LabelPolicy::Kind::kSingle:
      if (policy.single_class < 0 || policy.single_class >= class_count) throw ParameterError("label policy class out of range");
      std::fill(labels.begin(), labels.end(), policy.single_class);
      break;
  }
  return labels;
}

/// Draws labels per `policy` and z ~ U[-1, 1]^d_z, then generates. A row whose
/// pre-normalization output is zero is redrawn up to 100 times.
inline FakeBatch sample_fake_batch(const GeneratorParams& g, Rng& rng, double beta, Index batch,
                                   const LabelPolicy& policy = LabelPolicy::uniform()) {
  if (batch < 1) throw ParameterError("sample_fake_batch: batch must be >= 1");
  if (!(beta > 0)) throw ParameterError("sample_fake_batch: beta must be positive");
  FakeBatch out;
  out.labels = draw_labels(rng, g.class_count(), batch, policy);
  out.noise.resize(batch, g.noise_dim());
  out.features.resize(batch, g.feature_dim());
  for (Index i = 0; i < batch; ++i) {
    const Vector y = one_hot(out.labels[static_cast<std::size_t>(i)], g.class_count());
    int attempt = 0;
    while (true) {
      Vector z(g.noise_dim());
      for (Index j = 0; j < z.size(); ++j) z[j] = rng.uniform(-1.0, 1.0);
      try {
        out.features.row(i) = generator_forward(g, z, y, beta).transpose();
        out.noise.row(i) = z.transpose();
        break;
      } catch (const DegenerateSampleError&) {
        if (++attempt >= 100) throw;
      }
    }
  }
  return out;
}

}  // namespace gfca

#endif  // GFCA_FEATURE_GAN_HPP
