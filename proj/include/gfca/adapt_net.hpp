#ifndef GFCA_ADAPT_NET_HPP
#define GFCA_ADAPT_NET_HPP

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gfca/autograd.hpp"
#include "gfca/error.hpp"
#include "gfca/numerics.hpp"
#include "gfca/rng.hpp"

namespace gfca {

struct DenseLayer {
  Matrix weight;  // out x in
  Matrix bias;    // 1 x out
};

/// Feed-forward encoder; every layer is affine followed by a leaky rectifier.
struct EncoderParams {
  std::vector<DenseLayer> layers;
  double slope = 0.2;

  Index input_dim() const { return layers.empty() ? 0 : layers.front().weight.cols(); }
  Index output_dim() const { return layers.empty() ? 0 : layers.back().weight.rows(); }

  ad::ParamGroup params() {
    ad::ParamGroup g("encoder");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      g.add("E" + std::to_string(i) + ".weight", layers[i].weight);
      g.add("E" + std::to_string(i) + ".bias", layers[i].bias);
    }
    return g;
  }
};

/// Row k of w_c is the class-k weight vector w_k.
struct ClassifierParams {
  Matrix w_c;  // c x d_h
  std::optional<Matrix> bias;  // 1 x c

  int class_count() const { return static_cast<int>(w_c.rows()); }

  ad::ParamGroup params() {
    ad::ParamGroup g("classifier");
    g.add("W_c", w_c);
    if (bias) g.add("C.bias", *bias);
    return g;
  }
};

/// He-normal weights (std sqrt(2 / fan_in)) and zero biases.
inline EncoderParams init_encoder(Index input_dim, std::span<const Index> widths, double slope, Rng& rng) {
  if (widths.empty()) throw ParameterError("init_encoder: need at least one layer");
  EncoderParams e;
  e.slope = slope;
  Index in = input_dim;
  for (Index out : widths) {
    if (out < 1 || in < 1) throw ParameterError("init_encoder: layer widths must be positive");
    DenseLayer layer{Matrix(out, in), Matrix::Zero(1, out)};
    const double sd = std::sqrt(2.0 / static_cast<double>(in));
    for (Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = sd * rng.normal();
    e.layers.push_back(std::move(layer));
    in = out;
  }
  return e;
}

/// Glorot-normal rows; bias (zero) only when requested.
inline ClassifierParams init_classifier(Index hidden_dim, int class_count, bool with_bias, Rng& rng) {
  ClassifierParams c;
  c.w_c.resize(class_count, hidden_dim);
  const double sd = std::sqrt(2.0 / static_cast<double>(hidden_dim + class_count));
  for (Index i = 0; i < c.w_c.size(); ++i) c.w_c.data()[i] = sd * rng.normal();
  if (with_bias) c.bias = Matrix::Zero(1, class_count);
  return c;
}

inline Matrix encoder_forward(const EncoderParams& e, const Matrix& x) {
  if (x.cols() != e.input_dim()) throw ParameterError("encoder_forward: input dimension mismatch");
  Matrix h = x;
  for (const auto& layer : e.layers) {
    Matrix pre = (h * layer.weight.transpose()).rowwise() + layer.bias.row(0);
    h = (pre.array() > 0).select(pre, e.slope * pre);
  }
  return h;
}

inline Matrix classifier_logits(const ClassifierParams& cl, const Matrix& h) {
  if (h.cols() != cl.w_c.cols()) throw ParameterError("classify: hidden dimension mismatch");
  Matrix z = h * cl.w_c.transpose();
  if (cl.bias) z.rowwise() += cl.bias->row(0);
  return z;
}

/// Row-wise softmax of the logits.
inline Matrix softmax_rows(const Matrix& z) {
  Matrix p(z.rows(), z.cols());
  for (Index i = 0; i < z.rows(); ++i) {
    const RowVector e = (z.row(i).array() - z.row(i).maxCoeff()).exp().matrix();
    p.row(i) = e / e.sum();
  }
  return p;
}

inline Matrix classify(const ClassifierParams& cl, const Matrix& h) { return softmax_rows(classifier_logits(cl, h)); }

inline std::vector<int> predict(const EncoderParams& e, const ClassifierParams& cl, const Matrix& x) {
  const Matrix z = classifier_logits(cl, encoder_forward(e, x));
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Index i = 0; i < z.rows(); ++i) z.row(i).maxCoeff(&out[static_cast<std::size_t>(i)]);
  return out;
}

/// -(1/n) sum log probs[i, label_i].
inline double cross_entropy(const Matrix& probs, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != probs.rows() || labels.empty()) throw ParameterError("cross_entropy: label count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= probs.cols()) throw ParameterError("cross_entropy: label out of range");
    s -= std::log(probs(static_cast<Index>(i), labels[i]));
  }
  return s / static_cast<double>(labels.size());
}

/// Same quantity evaluated from logits via log-sum-exp.
inline double cross_entropy_from_logits(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != logits.rows() || labels.empty()) throw ParameterError("cross_entropy: label count mismatch");
  double s = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols()) throw ParameterError("cross_entropy: label out of range");
    const double mx = logits.row(i).maxCoeff();
    s += std::log((logits.row(i).array() - mx).exp().sum()) + mx - logits(i, y);
  }
  return s / static_cast<double>(logits.rows());
}

/// alpha = mean squared norm of the normal-class rows of W_c.
inline double fc_alpha(const ClassifierParams& cl, std::span<const int> normal_classes) {
  if (normal_classes.empty()) throw ParameterError("fc_alpha: empty normal set");
  double s = 0.0;
  for (int k : normal_classes) s += cl.w_c.row(k).squaredNorm();
  return s / static_cast<double>(normal_classes.size());
}

inline double mean_sq_norm(const ClassifierParams& cl, std::span<const int> classes) {
  if (classes.empty()) throw ParameterError("mean_sq_norm: empty class set");
  double s = 0.0;
  for (int k : classes) s += cl.w_c.row(k).squaredNorm();
  return s / static_cast<double>(classes.size());
}

/// (mean few-shot squared row norm - alpha)^2.
inline double fc_loss(const ClassifierParams& cl, std::span<const int> few_shot_classes, double alpha) {
  if (few_shot_classes.empty()) throw ParameterError("fc_loss: empty few-shot set");
  const double d = mean_sq_norm(cl, few_shot_classes) - alpha;
  return d * d;
}

/// L_ec = l_c + lambda * l_e + gamma * l_fc.
inline double total_loss_ec(double l_c, double l_e, double l_fc, double lambda, double gamma) {
  if (!std::isfinite(l_c)) throw NumericError("L_c", "non-finite value");
  if (!std::isfinite(l_e)) throw NumericError("L_e", "non-finite value");
  if (!std::isfinite(l_fc)) throw NumericError("L_fc", "non-finite value");
  if (!std::isfinite(lambda)) throw NumericError("lambda", "non-finite value");
  if (!std::isfinite(gamma)) throw NumericError("gamma", "non-finite value");
  return l_c + lambda * l_e + gamma * l_fc;
}

// ---------------------------------------------------------------------------
// Tape versions

inline ad::Var encode(ad::Tape& tape, const EncoderParams& e, ad::Var x) {
  if (tape.value(x).cols() != e.input_dim()) throw ParameterError("encoder_forward: input dimension mismatch");
  ad::Var h = x;
  for (const auto& layer : e.layers)
    h = ad::leaky_relu(ad::add_row(ad::matmul_bt(h, tape.read(layer.weight)), tape.read(layer.bias)), e.slope);
  return h;
}

inline ad::Var logits(ad::Tape& tape, const ClassifierParams& cl, ad::Var h) {
  ad::Var z = ad::matmul_bt(h, tape.read(cl.w_c));
  if (cl.bias) z = ad::add_row(z, tape.read(*cl.bias));
  return z;
}

/// alpha is passed in as a constant: no gradient flows through it.
inline ad::Var fc_loss(ad::Tape& tape, const ClassifierParams& cl, std::span<const int> few_shot_classes, double alpha) {
  if (few_shot_classes.empty()) throw ParameterError("fc_loss: empty few-shot set");
  const ad::Var m = ad::row_sq_norm_mean(tape.read(cl.w_c), std::vector<int>(few_shot_classes.begin(), few_shot_classes.end()));
  return ad::square(ad::add_scalar(m, -alpha));
}

}  // namespace gfca

#endif  // GFCA_ADAPT_NET_HPP
