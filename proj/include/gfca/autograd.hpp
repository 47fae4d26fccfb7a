#ifndef GFCA_AUTOGRAD_HPP
#define GFCA_AUTOGRAD_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gfca/error.hpp"
#include "gfca/mkmmd.hpp"
#include "gfca/numerics.hpp"

namespace gfca::ad {

/// Named parameter tensors that receive gradients together.
///
/// Entries are non-owning pointers into the model; the group must not
/// outlive the matrices it names.
class ParamGroup {
 public:
  ParamGroup() = default;
  explicit ParamGroup(std::string name) : name_(std::move(name)) {}

  void add(std::string name, Matrix& tensor) {
    for (const auto& existing : names_)
      if (existing == name) throw ParameterError("ParamGroup '" + name_ + "': duplicate parameter '" + name + "'");
    names_.push_back(std::move(name));
    tensors_.push_back(&tensor);
  }

  /// Appends every entry of `other`; names must stay unique.
  void merge(const ParamGroup& other) {
    for (std::size_t i = 0; i < other.size(); ++i) add(other.names_[i], *other.tensors_[i]);
  }

  const std::string& name() const { return name_; }
  std::size_t size() const { return tensors_.size(); }
  const std::string& param_name(std::size_t i) const { return names_[i]; }
  Matrix& tensor(std::size_t i) const { return *tensors_[i]; }

  /// Position of `m` in the group, or -1.
  int index_of(const Matrix* m) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i)
      if (tensors_[i] == m) return static_cast<int>(i);
    return -1;
  }

 private:
  std::string name_;
  std::vector<std::string> names_;
  std::vector<Matrix*> tensors_;
};

/// One gradient matrix per group entry, in group order.
using Gradients = std::vector<Matrix>;

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

/// Reverse-mode tape over a closed set of matrix primitives.
///
/// Leaves read through `read()` become trainable when the matrix belongs to
/// the tape's ParamGroup and constants otherwise. Every primitive carries a
/// hand-derived backward rule.
class Tape {
 public:
  using Backward = std::function<void(const Matrix& grad, Tape& tape)>;

  explicit Tape(const ParamGroup* group = nullptr) : group_(group) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var read(const Matrix& m) {
    const int slot = group_ ? group_->index_of(&m) : -1;
    if (slot < 0) return constant(m);
    if (auto it = leaf_of_slot_.find(slot); it != leaf_of_slot_.end()) return Var{this, it->second};
    Var v = push(m, true, {});
    leaf_of_slot_[slot] = v.id;
    return v;
  }

  Var constant(Matrix m) { return push(std::move(m), false, {}); }

  Var scalar_constant(double s) { return constant(Matrix::Constant(1, 1, s)); }

  const Matrix& value(Var v) const { return nodes_.at(static_cast<std::size_t>(check(v))).value; }

  double scalar(Var v) const {
    const Matrix& m = value(v);
    if (m.size() != 1) throw UnsupportedGraphError("expected a scalar node");
    return m(0, 0);
  }

  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(check(v))).requires_grad; }

  /// Creates a node; `backward` runs only when some input requires a gradient.
  Var push(Matrix value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), requires_grad, std::move(backward), Matrix()});
    return Var{this, static_cast<int>(nodes_.size() - 1)};
  }

  /// Adds `g` into the gradient buffer of `v` (no-op for constants).
  void accumulate(Var v, const Matrix& g) {
    Node& node = nodes_[static_cast<std::size_t>(v.id)];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) node.grad = g;
    else node.grad += g;
  }

  /// Gradients of the scalar `loss` with respect to every group entry.
  Gradients backward(Var loss) {
    check(loss);
    if (value(loss).size() != 1) throw UnsupportedGraphError("backward: loss must be a 1x1 scalar");
    if (!group_) throw UnsupportedGraphError("backward: tape has no parameter group");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[static_cast<std::size_t>(loss.id)].grad = Matrix::Ones(1, 1);
    for (int i = loss.id; i >= 0; --i) {
      Node& node = nodes_[static_cast<std::size_t>(i)];
      if (!node.requires_grad || node.grad.size() == 0 || !node.backward) continue;
      const Matrix g = node.grad;
      node.backward(g, *this);
    }
    Gradients out(group_->size());
    for (std::size_t slot = 0; slot < group_->size(); ++slot) {
      const Matrix& t = group_->tensor(slot);
      out[slot] = Matrix::Zero(t.rows(), t.cols());
      if (auto it = leaf_of_slot_.find(static_cast<int>(slot)); it != leaf_of_slot_.end()) {
        const Matrix& g = nodes_[static_cast<std::size_t>(it->second)].grad;
        if (g.size() != 0) out[slot] = g;
      }
    }
    return out;
  }

  /// Sign pattern of every leaky-rectifier input seen so far.
  const std::vector<bool>& kink_signature() const { return kink_signature_; }
  /// Smallest |pre-activation| over every leaky-rectifier input.
  double kink_margin() const { return kink_margin_; }

  void record_kinks(const Matrix& pre) {
    for (Index i = 0; i < pre.size(); ++i) {
      kink_signature_.push_back(pre.data()[i] > 0);
      kink_margin_ = std::min(kink_margin_, std::abs(pre.data()[i]));
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    bool requires_grad;
    Backward backward;
    Matrix grad;
  };

  int check(Var v) const {
    if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw UnsupportedGraphError("variable does not belong to this tape");
    return v.id;
  }

  const ParamGroup* group_;
  std::vector<Node> nodes_;
  std::unordered_map<int, int> leaf_of_slot_;
  std::vector<bool> kink_signature_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// Primitives

namespace detail {

inline Tape& same_tape(Var a, Var b) {
  if (!a.tape || a.tape != b.tape) throw UnsupportedGraphError("operands live on different tapes");
  return *a.tape;
}

inline void require_shape(const Matrix& a, Index rows, Index cols, const char* op) {
  if (a.rows() != rows || a.cols() != cols) throw ParameterError(std::string(op) + ": shape mismatch");
}

}  // namespace detail

/// a * b^T for a (n x k), b (m x k).
inline Var matmul_bt(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.cols()) throw ParameterError("matmul_bt: inner dimension mismatch");
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(av * bv.transpose(), rg, [a, b](const Matrix& g, Tape& tape) {
    if (tape.requires_grad(a)) tape.accumulate(a, g * tape.value(b));
    if (tape.requires_grad(b)) tape.accumulate(b, g.transpose() * tape.value(a));
  });
}

/// Adds a 1 x m row to every row of a (n x m).
inline Var add_row(Var a, Var row) {
  Tape& t = detail::same_tape(a, row);
  const Matrix& av = t.value(a);
  const Matrix& rv = t.value(row);
  detail::require_shape(rv, 1, av.cols(), "add_row");
  const bool rg = t.requires_grad(a) || t.requires_grad(row);
  Matrix out = av.rowwise() + rv.row(0);
  return t.push(std::move(out), rg, [a, row](const Matrix& g, Tape& tape) {
    tape.accumulate(a, g);
    if (tape.requires_grad(row)) tape.accumulate(row, g.colwise().sum());
  });
}

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_shape(t.value(b), t.value(a).rows(), t.value(a).cols(), "add");
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(t.value(a) + t.value(b), rg, [a, b](const Matrix& g, Tape& tape) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_shape(t.value(b), t.value(a).rows(), t.value(a).cols(), "sub");
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(t.value(a) - t.value(b), rg, [a, b](const Matrix& g, Tape& tape) {
    tape.accumulate(a, g);
    if (tape.requires_grad(b)) tape.accumulate(b, -g);
  });
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape;
  return t.push(s * t.value(a), t.requires_grad(a), [a, s](const Matrix& g, Tape& tape) { tape.accumulate(a, s * g); });
}

inline Var add_scalar(Var a, double s) {
  Tape& t = *a.tape;
  Matrix out = t.value(a).array() + s;
  return t.push(std::move(out), t.requires_grad(a), [a](const Matrix& g, Tape& tape) { tape.accumulate(a, g); });
}

/// Vertical concatenation [a; b].
inline Var concat_rows(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.cols()) throw ParameterError("concat_rows: column mismatch");
  Matrix out(av.rows() + bv.rows(), av.cols());
  out << av, bv;
  const Index split = av.rows();
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [a, b, split](const Matrix& g, Tape& tape) {
    if (tape.requires_grad(a)) tape.accumulate(a, g.topRows(split));
    if (tape.requires_grad(b)) tape.accumulate(b, g.bottomRows(g.rows() - split));
  });
}

inline Var leaky_relu(Var a, double slope) {
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  t.record_kinks(av);
  Matrix out = (av.array() > 0).select(av, slope * av);
  return t.push(std::move(out), t.requires_grad(a), [a, slope](const Matrix& g, Tape& tape) {
    const Matrix& x = tape.value(a);
    Matrix d = (x.array() > 0).select(g, slope * g);
    tape.accumulate(a, d);
  });
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape;
  Matrix s = (1.0 / (1.0 + (-t.value(a).array()).exp())).matrix();
  Matrix slope = (s.array() * (1.0 - s.array())).matrix();
  return t.push(std::move(s), t.requires_grad(a), [a, slope = std::move(slope)](const Matrix& g, Tape& tape) {
    tape.accumulate(a, g.cwiseProduct(slope));
  });
}

/// Elementwise natural logarithm; every entry must be positive.
inline Var log(Var a) {
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  if ((av.array() <= 0).any()) throw NumericError("log", "non-positive argument");
  return t.push(av.array().log().matrix(), t.requires_grad(a), [a](const Matrix& g, Tape& tape) {
    tape.accumulate(a, (g.array() / tape.value(a).array()).matrix());
  });
}

/// Rescales each row to Euclidean norm beta.
inline Var row_normalize(Var a, double beta) {
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  const Vector norms = av.rowwise().norm();
  for (Index i = 0; i < norms.size(); ++i)
    if (!(norms[i] > 0)) throw DegenerateSampleError("row_normalize: zero row " + std::to_string(i));
  Matrix out = (beta * (norms.cwiseInverse().asDiagonal() * av)).eval();
  return t.push(std::move(out), t.requires_grad(a), [a, beta, norms](const Matrix& g, Tape& tape) {
    // d(beta x/|x|) = beta/|x| (I - u u^T), u = x/|x|.
    const Matrix& x = tape.value(a);
    Matrix d(g.rows(), g.cols());
    for (Index i = 0; i < g.rows(); ++i) {
      const RowVector u = x.row(i) / norms[i];
      d.row(i) = (beta / norms[i]) * (g.row(i) - g.row(i).dot(u) * u);
    }
    tape.accumulate(a, d);
  });
}

/// Mean softmax cross-entropy of `logits` (n x c) against integer labels.
inline Var softmax_cross_entropy(Var logits, std::vector<int> labels) {
  Tape& t = *logits.tape;
  const Matrix& z = t.value(logits);
  if (static_cast<Index>(labels.size()) != z.rows()) throw ParameterError("softmax_cross_entropy: label count mismatch");
  const double n = static_cast<double>(z.rows());
  Matrix probs(z.rows(), z.cols());
  double loss = 0.0;
  for (Index i = 0; i < z.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= z.cols()) throw ParameterError("softmax_cross_entropy: label out of range");
    const double mx = z.row(i).maxCoeff();
    const RowVector e = (z.row(i).array() - mx).exp().matrix();
    const double s = e.sum();
    probs.row(i) = e / s;
    loss += std::log(s) + mx - z(i, y);
  }
  return t.push(Matrix::Constant(1, 1, loss / n), t.requires_grad(logits),
                [logits, probs = std::move(probs), labels = std::move(labels), n](const Matrix& g, Tape& tape) {
                  Matrix d = probs;
                  for (std::size_t i = 0; i < labels.size(); ++i) d(static_cast<Index>(i), labels[i]) -= 1.0;
                  tape.accumulate(logits, (g(0, 0) / n) * d);
                });
}

/// Biased (V-statistic) MK-MMD^2 between the rows of a and b.
inline Var mmd_sq(Var a, Var b, const KernelBank& bank) {
  Tape& t = detail::same_tape(a, b);
  auto res = std::make_shared<MmdGradient>(mmd_sq_biased_with_grad(t.value(a), t.value(b), bank));
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(Matrix::Constant(1, 1, res->value), rg, [a, b, res](const Matrix& g, Tape& tape) {
    if (tape.requires_grad(a)) tape.accumulate(a, g(0, 0) * res->grad_a);
    if (tape.requires_grad(b)) tape.accumulate(b, g(0, 0) * res->grad_b);
  });
}

/// Mean of all entries.
inline Var mean(Var a) {
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  if (av.size() == 0) throw ParameterError("mean: empty input");
  const Index rows = av.rows();
  const Index cols = av.cols();
  return t.push(Matrix::Constant(1, 1, av.mean()), t.requires_grad(a), [a, rows, cols](const Matrix& g, Tape& tape) {
    tape.accumulate(a, Matrix::Constant(rows, cols, g(0, 0) / static_cast<double>(rows * cols)));
  });
}

/// Sum of squared entries.
inline Var sum_squares(Var a) {
  Tape& t = *a.tape;
  return t.push(Matrix::Constant(1, 1, t.value(a).squaredNorm()), t.requires_grad(a),
                [a](const Matrix& g, Tape& tape) { tape.accumulate(a, (2.0 * g(0, 0)) * tape.value(a)); });
}

/// Elementwise square.
inline Var square(Var a) {
  Tape& t = *a.tape;
  return t.push(t.value(a).array().square().matrix(), t.requires_grad(a), [a](const Matrix& g, Tape& tape) {
    tape.accumulate(a, (2.0 * g.array() * tape.value(a).array()).matrix());
  });
}

/// (1/|rows|) * sum over listed rows of the squared row norm.
inline Var row_sq_norm_mean(Var a, std::vector<int> rows) {
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  if (rows.empty()) throw ParameterError("row_sq_norm_mean: empty row set");
  double s = 0.0;
  for (int r : rows) {
    if (r < 0 || r >= av.rows()) throw ParameterError("row_sq_norm_mean: row out of range");
    s += av.row(r).squaredNorm();
  }
  const double k = static_cast<double>(rows.size());
  return t.push(Matrix::Constant(1, 1, s / k), t.requires_grad(a), [a, rows = std::move(rows), k](const Matrix& g, Tape& tape) {
    const Matrix& x = tape.value(a);
    Matrix d = Matrix::Zero(x.rows(), x.cols());
    for (int r : rows) d.row(r) += (2.0 * g(0, 0) / k) * x.row(r);
    tape.accumulate(a, d);
  });
}

/// Sum over listed columns of ||a[:, k] - reference[:, k]||^2.
inline Var col_sq_dist_sum(Var a, const Matrix& reference, std::vector<int> cols) {
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  detail::require_shape(reference, av.rows(), av.cols(), "col_sq_dist_sum");
  double s = 0.0;
  for (int c : cols) {
    if (c < 0 || c >= av.cols()) throw ParameterError("col_sq_dist_sum: column out of range");
    s += (av.col(c) - reference.col(c)).squaredNorm();
  }
  Matrix ref = reference;
  return t.push(Matrix::Constant(1, 1, s), t.requires_grad(a),
                [a, ref = std::move(ref), cols = std::move(cols)](const Matrix& g, Tape& tape) {
                  const Matrix& x = tape.value(a);
                  Matrix d = Matrix::Zero(x.rows(), x.cols());
                  for (int c : cols) d.col(c) += (2.0 * g(0, 0)) * (x.col(c) - ref.col(c));
                  tape.accumulate(a, d);
                });
}

// ---------------------------------------------------------------------------
// Gradient driver, finite-difference verification, Adam

/// Builds the loss on a fresh tape. Parameters outside the tape's group are
/// read as constants.
using LossFn = std::function<Var(Tape&)>;

inline double evaluate(const LossFn& loss) {
  Tape tape;
  return tape.scalar(loss(tape));
}

/// Exact gradient of `loss` with respect to every entry of `params`.
inline Gradients grad(const LossFn& loss, const ParamGroup& params) {
  Tape tape(&params);
  const Var out = loss(tape);
  return tape.backward(out);
}

struct FdEntry {
  std::string param;
  Index row = 0;
  Index col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct FdReport {
  std::vector<double> max_rel_error;  // per group entry
  FdEntry worst;                      // largest relative error overall
  std::size_t checked = 0;
  std::size_t excluded = 0;           // coordinates whose +-step crosses a rectifier kink
  double base_kink_margin = std::numeric_limits<double>::infinity();
  double tolerance = 0.0;
  bool passed = false;

  double max_error() const { return worst.rel_error; }
};

/// Relative error with an absolute floor so that vanishing gradients compare
/// on absolute error at the floor scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct FdOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  double kink_threshold = 1e-6;
  double floor = 1e-6;
  /// Applied to the analytic gradient before comparison (fault injection).
  std::function<void(Gradients&)> corrupt;
};

/// Central-difference check of grad(loss) over every coordinate of `params`.
inline FdReport finite_difference_check(const LossFn& loss, const ParamGroup& params, const FdOptions& opt = {}) {
  FdReport report;
  report.tolerance = opt.tolerance;
  Gradients analytic;
  std::vector<bool> base_signature;
  {
    Tape tape(&params);
    const Var out = loss(tape);
    analytic = tape.backward(out);
    base_signature = tape.kink_signature();
    report.base_kink_margin = tape.kink_margin();
  }
  if (opt.corrupt) opt.corrupt(analytic);

  auto eval = [&](std::vector<bool>& signature) {
    Tape tape;
    const double v = tape.scalar(loss(tape));
    signature = tape.kink_signature();
    return v;
  };

  report.max_rel_error.assign(params.size(), 0.0);
  report.worst.rel_error = -1.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& tensor = params.tensor(p);
    for (Index i = 0; i < tensor.size(); ++i) {
      double& x = tensor.data()[i];
      const double saved = x;
      std::vector<bool> sig_plus, sig_minus;
      x = saved + opt.step;
      const double f_plus = eval(sig_plus);
      x = saved - opt.step;
      const double f_minus = eval(sig_minus);
      x = saved;
      if (sig_plus != base_signature || sig_minus != base_signature) {
        ++report.excluded;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * opt.step);
      const double a = analytic[p].data()[i];
      const double err = relative_error(a, numeric, opt.floor);
      ++report.checked;
      report.max_rel_error[p] = std::max(report.max_rel_error[p], err);
      if (err > report.worst.rel_error) {
        report.worst = FdEntry{params.param_name(p), i / tensor.cols(), i % tensor.cols(), a, numeric, err};
      }
    }
  }
  if (report.worst.rel_error < 0) report.worst.rel_error = 0.0;
  report.passed = report.worst.rel_error <= opt.tolerance;
  return report;
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-entry first and second moments for one ParamGroup.
struct AdamState {
  AdamConfig config;
  std::vector<Matrix> first;
  std::vector<Matrix> second;
  long step = 0;

  static AdamState for_group(const ParamGroup& group, AdamConfig config) {
    AdamState s;
    s.config = config;
    for (std::size_t i = 0; i < group.size(); ++i) {
      s.first.push_back(Matrix::Zero(group.tensor(i).rows(), group.tensor(i).cols()));
      s.second.push_back(Matrix::Zero(group.tensor(i).rows(), group.tensor(i).cols()));
    }
    return s;
  }
};

/// theta -= lr * m_hat / (sqrt(v_hat) + eps), with t incremented first.
inline void adam_step(AdamState& state, const ParamGroup& params, const Gradients& grads) {
  if (grads.size() != params.size() || state.first.size() != params.size())
    throw ParameterError("adam_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& t = params.tensor(i);
    if (grads[i].rows() != t.rows() || grads[i].cols() != t.cols() || state.first[i].rows() != t.rows() ||
        state.first[i].cols() != t.cols())
      throw ParameterError("adam_step: shape mismatch for '" + params.param_name(i) + "'");
  }
  ++state.step;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = state.first[i];
    Matrix& v = state.second[i];
    m = c.beta1 * m + (1.0 - c.beta1) * grads[i];
    v = c.beta2 * v + (1.0 - c.beta2) * grads[i].cwiseProduct(grads[i]);
    const auto m_hat = m.array() / bc1;
    const auto v_hat = v.array() / bc2;
    params.tensor(i).array() -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
  }
}

}  // namespace gfca::ad

#endif  // GFCA_AUTOGRAD_HPP
