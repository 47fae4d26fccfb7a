#ifndef GFCA_MKMMD_HPP
#define GFCA_MKMMD_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "gfca/error.hpp"
#include "gfca/numerics.hpp"

namespace gfca {

/// Mixture of Gaussian kernels k_j(x, y) = exp(-||x - y||^2 / (2 sigma_j^2)).
struct KernelBank {
  std::vector<double> bandwidths;  // sigma_j
  std::vector<double> weights;     // sum to 1

  static KernelBank uniform(std::vector<double> sigmas) {
    KernelBank bank;
    bank.weights.assign(sigmas.size(), sigmas.empty() ? 0.0 : 1.0 / static_cast<double>(sigmas.size()));
    bank.bandwidths = std::move(sigmas);
    bank.validate();
    return bank;
  }

  std::size_t size() const { return bandwidths.size(); }

  void validate() const {
    if (bandwidths.empty()) throw ParameterError("KernelBank: need at least one kernel");
    if (weights.size() != bandwidths.size()) throw ParameterError("KernelBank: weight count mismatch");
    double total = 0.0;
    for (std::size_t j = 0; j < size(); ++j) {
      if (!(bandwidths[j] > 0) || !std::isfinite(bandwidths[j])) throw ParameterError("KernelBank: bandwidth must be positive");
      if (!(weights[j] >= 0)) throw ParameterError("KernelBank: weights must be nonnegative");
      total += weights[j];
    }
    if (std::abs(total - 1.0) > 1e-12) throw ParameterError("KernelBank: weights must sum to 1");
  }
};

namespace detail {

inline Matrix squared_distances(const Matrix& a, const Matrix& b) {
  Matrix d(a.rows(), b.rows());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.rows(); ++j) d(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  return d;
}

// Sum_j w_j exp(-D / (2 sigma_j^2)), and optionally Sum_j w_j k_j / sigma_j^2.
inline Matrix bank_kernel(const Matrix& sq, const KernelBank& bank, Matrix* slope = nullptr) {
  Matrix k = Matrix::Zero(sq.rows(), sq.cols());
  if (slope) slope->setZero(sq.rows(), sq.cols());
  for (std::size_t j = 0; j < bank.size(); ++j) {
    const double s2 = bank.bandwidths[j] * bank.bandwidths[j];
    const Matrix kj = (-sq.array() / (2.0 * s2)).exp().matrix();
    k += bank.weights[j] * kj;
    if (slope) *slope += (bank.weights[j] / s2) * kj;
  }
  return k;
}

// Total order on matrices, used to evaluate symmetric estimators in one
// canonical argument order so that f(a, b) and f(b, a) agree bitwise.
inline bool canonical_less(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  if (a.cols() != b.cols()) return a.cols() < b.cols();
  for (Index i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return a.data()[i] < b.data()[i];
  return false;
}

inline void check_pair(const Matrix& a, const Matrix& b, const char* what) {
  if (a.cols() != b.cols()) throw ParameterError(std::string(what) + ": column count mismatch");
  if (a.rows() < 1 || b.rows() < 1) throw ParameterError(std::string(what) + ": empty sample");
}

}  // namespace detail

/// Median heuristic: center sigma^2 is the median nonzero squared pairwise
/// distance over the pooled rows; the bank spans sigma^2 * factor^i for
/// i = -k/2 .. k/2 with uniform weights.
inline KernelBank median_heuristic_bank(const Matrix& a, const Matrix& b, int k, double factor) {
  if (a.cols() != b.cols()) throw ParameterError("median_heuristic_bank: column count mismatch");
  if (a.rows() + b.rows() < 2) throw ParameterError("median_heuristic_bank: need at least 2 pooled rows");
  if (k < 1) throw ParameterError("median_heuristic_bank: k must be >= 1");
  if (!(factor > 1)) throw ParameterError("median_heuristic_bank: factor must exceed 1");
  Matrix pooled(a.rows() + b.rows(), a.cols());
  pooled << a, b;
  std::vector<double> sq;
  sq.reserve(static_cast<std::size_t>(pooled.rows() * (pooled.rows() - 1) / 2));
  for (Index i = 0; i < pooled.rows(); ++i)
    for (Index j = i + 1; j < pooled.rows(); ++j) {
      const double v = (pooled.row(i) - pooled.row(j)).squaredNorm();
      if (v > 0) sq.push_back(v);
    }
  if (sq.empty()) throw DegenerateDataError("median_heuristic_bank: all pooled rows identical");
  const auto mid = sq.size() / 2;
  std::nth_element(sq.begin(), sq.begin() + static_cast<std::ptrdiff_t>(mid), sq.end());
  double median = sq[mid];
  if (sq.size() % 2 == 0) {
    const double lower = *std::max_element(sq.begin(), sq.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + lower);
  }
  std::vector<double> sigmas;
  const int half = k / 2;
  for (int i = -half; i <= half; ++i) sigmas.push_back(std::sqrt(median * std::pow(factor, i)));
  if (static_cast<int>(sigmas.size()) > k) sigmas.pop_back();  // even k: drop the widest
  return KernelBank::uniform(std::move(sigmas));
}

/// V-statistic MK-MMD^2 (diagonal terms included).
inline double mmd_sq_biased(const Matrix& a, const Matrix& b, const KernelBank& bank) {
  detail::check_pair(a, b, "mmd_sq_biased");
  if (detail::canonical_less(b, a)) return mmd_sq_biased(b, a, bank);
  bank.validate();
  const double n = static_cast<double>(a.rows());
  const double m = static_cast<double>(b.rows());
  const double kaa = detail::bank_kernel(detail::squared_distances(a, a), bank).sum();
  const double kbb = detail::bank_kernel(detail::squared_distances(b, b), bank).sum();
  const double kab = detail::bank_kernel(detail::squared_distances(a, b), bank).sum();
  return kaa / (n * n) + kbb / (m * m) - 2.0 * kab / (n * m);
}

/// U-statistic MK-MMD^2 (within-domain diagonals excluded); may be negative.
inline double mmd_sq_unbiased(const Matrix& a, const Matrix& b, const KernelBank& bank) {
  detail::check_pair(a, b, "mmd_sq_unbiased");
  if (a.rows() < 2 || b.rows() < 2) throw ParameterError("mmd_sq_unbiased: need at least 2 rows per sample");
  if (detail::canonical_less(b, a)) return mmd_sq_unbiased(b, a, bank);
  bank.validate();
  const double n = static_cast<double>(a.rows());
  const double m = static_cast<double>(b.rows());
  const Matrix kaa = detail::bank_kernel(detail::squared_distances(a, a), bank);
  const Matrix kbb = detail::bank_kernel(detail::squared_distances(b, b), bank);
  const double kab = detail::bank_kernel(detail::squared_distances(a, b), bank).sum();
  return (kaa.sum() - kaa.trace()) / (n * (n - 1)) + (kbb.sum() - kbb.trace()) / (m * (m - 1)) - 2.0 * kab / (n * m);
}

/// Value and gradients of mmd_sq_biased with respect to every entry of a and b.
struct MmdGradient {
  double value = 0.0;
  Matrix grad_a;
  Matrix grad_b;
};

inline MmdGradient mmd_sq_biased_with_grad(const Matrix& a, const Matrix& b, const KernelBank& bank) {
  detail::check_pair(a, b, "mmd_sq_biased");
  if (detail::canonical_less(b, a)) {
    MmdGradient swapped = mmd_sq_biased_with_grad(b, a, bank);
    std::swap(swapped.grad_a, swapped.grad_b);
    return swapped;
  }
  bank.validate();
  const double n = static_cast<double>(a.rows());
  const double m = static_cast<double>(b.rows());
  Matrix saa, sbb, sab;
  const Matrix kaa = detail::bank_kernel(detail::squared_distances(a, a), bank, &saa);
  const Matrix kbb = detail::bank_kernel(detail::squared_distances(b, b), bank, &sbb);
  const Matrix kab = detail::bank_kernel(detail::squared_distances(a, b), bank, &sab);

  MmdGradient out;
  out.value = kaa.sum() / (n * n) + kbb.sum() / (m * m) - 2.0 * kab.sum() / (n * m);
  // d k(x, y) / dx = -k(x, y) (x - y) / sigma^2, summed over the bank into S.
  const Vector saa_rows = saa.rowwise().sum();
  const Vector sbb_rows = sbb.rowwise().sum();
  const Vector sab_rows = sab.rowwise().sum();
  const Vector sab_cols = sab.colwise().sum().transpose();
  out.grad_a = (2.0 / (n * n)) * (saa * a - saa_rows.asDiagonal() * a) -
               (2.0 / (n * m)) * (sab * b - sab_rows.asDiagonal() * a);
  out.grad_b = (2.0 / (m * m)) * (sbb * b - sbb_rows.asDiagonal() * b) -
               (2.0 / (n * m)) * (sab.transpose() * a - sab_cols.asDiagonal() * b);
  return out;
}

}  // namespace gfca

#endif  // GFCA_MKMMD_HPP
