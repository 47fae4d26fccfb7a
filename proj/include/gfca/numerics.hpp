#ifndef GFCA_NUMERICS_HPP
#define GFCA_NUMERICS_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gfca/error.hpp"

namespace gfca {

/// Row-major storage keeps one sample per contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw DataError(std::string(what) + ": non-finite entry");
}

/// FNV-1a over the bit patterns of every entry; equal iff bitwise equal (w.h.p.).
inline std::uint64_t checksum(const Matrix& m, std::uint64_t h = 0xcbf29ce484222325ULL) {
  auto feed = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFFu;
      h *= 0x100000001b3ULL;
    }
  };
  feed(static_cast<std::uint64_t>(m.rows()));
  feed(static_cast<std::uint64_t>(m.cols()));
  for (Index i = 0; i < m.size(); ++i) feed(std::bit_cast<std::uint64_t>(m.data()[i]));
  return h;
}

/// Top-k eigenpairs of a sample covariance.
///
/// `eigenvectors` holds unit eigenvectors as columns; `components` holds the
/// same columns multiplied by their eigenvalue, so ||components.col(j)|| ==
/// eigenvalues[j].
struct PrincipalComponents {
  Matrix components;   // d x k
  Matrix eigenvectors; // d x k, unit columns
  Vector eigenvalues;  // k, descending, nonnegative
  Vector mean;         // d
};

enum class PcaMethod { kAuto, kDense, kPower };

namespace detail {

// Largest-magnitude entry positive; ties broken by lowest index.
inline void canonical_sign(Matrix& vecs, Index col) {
  auto v = vecs.col(col);
  Index arg = 0;
  for (Index i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
  if (v[arg] < 0) v = -v;
}

inline Matrix covariance(const Matrix& data, const Vector& mean) {
  const Matrix centered = data.rowwise() - mean.transpose();
  Matrix cov = centered.transpose() * centered;
  cov /= static_cast<double>(data.rows() - 1);
  return 0.5 * (cov + cov.transpose());
}

// Deflated power iteration with re-orthogonalization against found vectors.
inline void power_eigs(const Matrix& cov, Index k, Matrix& vecs, Vector& vals) {
  constexpr double kTol = 1e-10;
  constexpr int kMaxIter = 10000;
  const Index d = cov.rows();
  vecs.setZero(d, k);
  vals.setZero(k);
  Matrix deflated = cov;
  for (Index j = 0; j < k; ++j) {
    Vector v = Vector::Ones(d) / std::sqrt(static_cast<double>(d));
    // Deterministic start that is unlikely to be orthogonal to the target.
    for (Index i = 0; i < d; ++i) v[i] += 1e-3 * static_cast<double>((i * 7 + j * 13) % 11);
    double lambda = 0.0;
    for (int it = 0; it < kMaxIter; ++it) {
      for (Index p = 0; p < j; ++p) v -= vecs.col(p).dot(v) * vecs.col(p);
      const double norm = v.norm();
      if (norm == 0.0) break;
      v /= norm;
      Vector w = deflated * v;
      const double next = v.dot(w);
      for (Index p = 0; p < j; ++p) w -= vecs.col(p).dot(w) * vecs.col(p);
      const double wn = w.norm();
      if (wn == 0.0) {
        lambda = 0.0;
        break;
      }
      const Vector nv = w / wn;
      const double change = std::min((nv - v).norm(), (nv + v).norm());
      v = nv;
      lambda = next;
      if (change < kTol) break;
    }
    for (Index p = 0; p < j; ++p) v -= vecs.col(p).dot(v) * vecs.col(p);
    if (v.norm() > 0) v.normalize();
    lambda = v.dot(cov * v);
    vecs.col(j) = v;
    vals[j] = std::max(lambda, 0.0);
    deflated -= lambda * v * v.transpose();
  }
}

}  // namespace detail

/// PCA of `data` (n x d, rows are samples) with the n-1 covariance divisor.
///
/// Data is mean-centered first. d <= 512 uses a dense symmetric
/// eigensolver, larger d a deflated power method (tol 1e-10, 1e4 iterations).
inline PrincipalComponents pca_fit(const Matrix& data, Index k, PcaMethod method = PcaMethod::kAuto) {
  const Index n = data.rows();
  const Index d = data.cols();
  if (n < 2) throw ParameterError("pca_fit: need at least 2 samples");
  if (k < 1 || k > std::min(n, d)) throw ParameterError("pca_fit: k out of range [1, min(n, d)]");
  require_finite(data, "pca_fit");

  PrincipalComponents pc;
  pc.mean = data.colwise().mean().transpose();
  const Matrix cov = detail::covariance(data, pc.mean);

  if (method == PcaMethod::kAuto) method = d <= 512 ? PcaMethod::kDense : PcaMethod::kPower;
  if (method == PcaMethod::kDense) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw DataError("pca_fit: eigendecomposition failed");
    // Eigen returns ascending order.
    pc.eigenvectors.resize(d, k);
    pc.eigenvalues.resize(k);
    for (Index j = 0; j < k; ++j) {
      pc.eigenvectors.col(j) = solver.eigenvectors().col(d - 1 - j);
      pc.eigenvalues[j] = std::max(solver.eigenvalues()[d - 1 - j], 0.0);
    }
  } else {
    detail::power_eigs(cov, k, pc.eigenvectors, pc.eigenvalues);
  }
  for (Index j = 0; j < k; ++j) detail::canonical_sign(pc.eigenvectors, j);
  pc.components = pc.eigenvectors * pc.eigenvalues.asDiagonal();
  return pc;
}

/// Column k = mean of the rows labeled k. Result is d x num_classes.
inline Matrix class_centroids(const Matrix& features, std::span<const int> labels, int num_classes) {
  if (static_cast<Index>(labels.size()) != features.rows())
    throw ParameterError("class_centroids: label count does not match rows");
  if (num_classes < 1) throw ParameterError("class_centroids: num_classes must be positive");
  Matrix sums = Matrix::Zero(features.cols(), num_classes);
  std::vector<Index> counts(static_cast<std::size_t>(num_classes), 0);
  for (Index i = 0; i < features.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= num_classes) throw ParameterError("class_centroids: label " + std::to_string(y) + " out of range");
    sums.col(y) += features.row(i).transpose();
    ++counts[static_cast<std::size_t>(y)];
  }
  for (int c = 0; c < num_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) throw MissingClassError(c);
    sums.col(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }
  return sums;
}

/// Average Euclidean norm of the rows.
inline double mean_row_norm(const Matrix& features) {
  if (features.rows() < 1) throw ParameterError("mean_row_norm: empty matrix");
  return features.rowwise().norm().mean();
}

inline double cosine_similarity(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v) {
  if (u.size() != v.size()) throw ParameterError("cosine_similarity: dimension mismatch");
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) throw ParameterError("cosine_similarity: zero vector");
  return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

}  // namespace gfca

#endif  // GFCA_NUMERICS_HPP
