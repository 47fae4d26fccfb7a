#ifndef GFCA_DATASET_HPP
#define GFCA_DATASET_HPP

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gfca/error.hpp"
#include "gfca/numerics.hpp"
#include "gfca/rng.hpp"

namespace gfca {

/// Feature matrix (one sample per row) with optional class labels.
struct DomainDataset {
  Matrix features;
  std::optional<std::vector<int>> labels;
  std::string domain;
  int class_count = 0;

  Index size() const { return features.rows(); }
  Index dim() const { return features.cols(); }
  bool labeled() const { return labels.has_value(); }

  const std::vector<int>& label_vector() const {
    if (!labels) throw ParameterError("dataset '" + domain + "' is unlabeled");
    return *labels;
  }

  void validate() const {
    require_finite(features, "dataset features");
    if (labels) {
      if (static_cast<Index>(labels->size()) != features.rows())
        throw DataError("dataset '" + domain + "': label count does not match rows");
      for (std::size_t i = 0; i < labels->size(); ++i) {
        const int y = (*labels)[i];
        if (y < 0 || y >= class_count)
          throw DataError("dataset '" + domain + "': unknown class id " + std::to_string(y) + " at row " + std::to_string(i));
      }
    }
  }

  DomainDataset subset(std::span<const Index> rows) const {
    DomainDataset out;
    out.domain = domain;
    out.class_count = class_count;
    out.features.resize(static_cast<Index>(rows.size()), dim());
    if (labels) out.labels.emplace();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.features.row(static_cast<Index>(i)) = features.row(rows[i]);
      if (labels) out.labels->push_back((*labels)[static_cast<std::size_t>(rows[i])]);
    }
    return out;
  }

  /// Row indices grouped by class, in original order.
  std::vector<std::vector<Index>> rows_by_class() const {
    const auto& y = label_vector();
    std::vector<std::vector<Index>> groups(static_cast<std::size_t>(class_count));
    for (std::size_t i = 0; i < y.size(); ++i) groups[static_cast<std::size_t>(y[i])].push_back(static_cast<Index>(i));
    return groups;
  }

  std::vector<Index> class_counts() const {
    std::vector<Index> counts(static_cast<std::size_t>(class_count), 0);
    for (int y : label_vector()) ++counts[static_cast<std::size_t>(y)];
    return counts;
  }
};

/// Partition of class ids into few-shot (C_l) and normal (C_n) sets.
struct FewShotProtocol {
  std::vector<int> few_shot_classes;
  std::vector<int> normal_classes;
  int shots_per_class = 3;
  std::uint64_t seed = 0;

  /// Normal classes are the complement of `few_shot` in [0, class_count).
  static FewShotProtocol make(int class_count, std::vector<int> few_shot, int shots, std::uint64_t seed) {
    FewShotProtocol p;
    std::sort(few_shot.begin(), few_shot.end());
    p.few_shot_classes = std::move(few_shot);
    for (int k = 0; k < class_count; ++k)
      if (!std::binary_search(p.few_shot_classes.begin(), p.few_shot_classes.end(), k)) p.normal_classes.push_back(k);
    p.shots_per_class = shots;
    p.seed = seed;
    p.validate(class_count);
    return p;
  }

  int class_count() const { return static_cast<int>(few_shot_classes.size() + normal_classes.size()); }

  bool is_few_shot(int k) const {
    return std::find(few_shot_classes.begin(), few_shot_classes.end(), k) != few_shot_classes.end();
  }

  void validate(int class_count) const {
    if (shots_per_class < 1) throw ProtocolError("shots per class must be >= 1");
    std::set<int> seen;
    for (int k : few_shot_classes) {
      if (k < 0 || k >= class_count) throw ProtocolError("few-shot class " + std::to_string(k) + " out of range");
      if (!seen.insert(k).second) throw ProtocolError("class " + std::to_string(k) + " listed twice");
    }
    for (int k : normal_classes) {
      if (k < 0 || k >= class_count) throw ProtocolError("normal class " + std::to_string(k) + " out of range");
      if (!seen.insert(k).second) throw ProtocolError("class " + std::to_string(k) + " is both few-shot and normal");
    }
    if (static_cast<int>(seen.size()) != class_count) throw ProtocolError("protocol does not cover every class");
  }
};

struct FewShotSplit {
  DomainDataset train;            // normal classes whole + m samples per few-shot class
  DomainDataset heldout;          // remaining few-shot samples
  std::vector<Index> train_rows;  // indices into the input, ascending
  std::vector<Index> heldout_rows;
};

/// Keeps every normal-class sample and m uniformly chosen samples of each
/// few-shot class; the rest of each few-shot class becomes the held-out set.
inline FewShotSplit make_few_shot_split(const DomainDataset& source, const FewShotProtocol& protocol) {
  if (!source.labeled()) throw ParameterError("make_few_shot_split: source must be labeled");
  protocol.validate(source.class_count);
  const auto groups = source.rows_by_class();
  Rng rng(protocol.seed);
  std::vector<char> keep(static_cast<std::size_t>(source.size()), 1);
  for (int k : protocol.few_shot_classes) {
    std::vector<Index> rows = groups[static_cast<std::size_t>(k)];
    if (static_cast<int>(rows.size()) < protocol.shots_per_class)
      throw ProtocolError("class " + std::to_string(k) + " has " + std::to_string(rows.size()) +
                          " samples, fewer than " + std::to_string(protocol.shots_per_class) + " shots");
    Rng class_rng = rng.split(static_cast<std::uint64_t>(k));
    // Partial Fisher-Yates: the first m positions are the sample.
    for (int i = 0; i < protocol.shots_per_class; ++i) {
      const auto j = static_cast<std::size_t>(i) + static_cast<std::size_t>(class_rng.below(rows.size() - static_cast<std::size_t>(i)));
      std::swap(rows[static_cast<std::size_t>(i)], rows[j]);
    }
    for (std::size_t i = static_cast<std::size_t>(protocol.shots_per_class); i < rows.size(); ++i)
      keep[static_cast<std::size_t>(rows[i])] = 0;
  }
  FewShotSplit split;
  for (Index i = 0; i < source.size(); ++i) (keep[static_cast<std::size_t>(i)] ? split.train_rows : split.heldout_rows).push_back(i);
  split.train = source.subset(split.train_rows);
  split.heldout = source.subset(split.heldout_rows);
  split.heldout.domain = source.domain + "-heldout";
  return split;
}

/// Pads every class up to the largest class count with uniform
/// with-replacement duplicates of its own rows, then shuffles.
inline DomainDataset oversample_balanced(const DomainDataset& source, Rng& rng) {
  if (!source.labeled()) throw ParameterError("oversample_balanced: source must be labeled");
  const auto groups = source.rows_by_class();
  std::size_t target = 0;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    if (groups[k].empty()) throw MissingClassError(static_cast<int>(k));
    target = std::max(target, groups[k].size());
  }
  std::vector<Index> rows;
  rows.reserve(target * groups.size());
  for (const auto& g : groups) {
    rows.insert(rows.end(), g.begin(), g.end());
    for (std::size_t extra = g.size(); extra < target; ++extra) rows.push_back(g[rng.below(g.size())]);
  }
  rng.shuffle(std::span<Index>(rows));
  return source.subset(rows);
}

inline Vector one_hot(int label, int class_count) {
  if (class_count < 1 || label < 0 || label >= class_count)
    throw ParameterError("one_hot: label " + std::to_string(label) + " out of range for " + std::to_string(class_count) + " classes");
  Vector v = Vector::Zero(class_count);
  v[label] = 1.0;
  return v;
}

/// Rows are one-hot encodings of `labels`.
inline Matrix one_hot_rows(std::span<const int> labels, int class_count) {
  Matrix y = Matrix::Zero(static_cast<Index>(labels.size()), class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= class_count) throw ParameterError("one_hot: label out of range");
    y(static_cast<Index>(i), labels[i]) = 1.0;
  }
  return y;
}

/// Gaussian-blob source/target pair with a rigid target shift.
///
/// Class means are mean_offset + mean_scale * N(0, I). Target means are the
/// source means rotated by rotation_degrees[p] in coordinate plane
/// (2p, 2p+1), for each p in order, then translated. Both domains add
/// independent isotropic noise with standard deviation noise_std.
struct SyntheticDomainConfig {
  int class_count = 10;
  int feature_dim = 32;
  double mean_scale = 1.0;
  double mean_offset = 0.0;
  double noise_std = 1.0;
  std::vector<double> rotation_degrees;
  std::vector<double> translation;  // zero-padded to feature_dim
  int samples_per_class = 200;
  int target_samples_per_class = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (class_count < 2) throw ConfigError("synthetic.class_count", "must be >= 2");
    if (feature_dim < 2) throw ConfigError("synthetic.feature_dim", "must be >= 2");
    if (!(noise_std > 0)) throw ConfigError("synthetic.noise_std", "must be positive");
    if (!(mean_scale >= 0)) throw ConfigError("synthetic.mean_scale", "must be nonnegative");
    if (2 * rotation_degrees.size() > static_cast<std::size_t>(feature_dim))
      throw ConfigError("synthetic.rotation_degrees", "more rotation planes than feature_dim allows");
    if (translation.size() > static_cast<std::size_t>(feature_dim))
      throw ConfigError("synthetic.translation", "longer than feature_dim");
    if (samples_per_class < 1) throw ConfigError("synthetic.samples_per_class", "must be >= 1");
    if (target_samples_per_class < 1) throw ConfigError("synthetic.target_samples_per_class", "must be >= 1");
  }

  Matrix rotation() const {
    Matrix r = Matrix::Identity(feature_dim, feature_dim);
    for (std::size_t p = 0; p < rotation_degrees.size(); ++p) {
      const double t = rotation_degrees[p] * std::numbers::pi / 180.0;
      Matrix g = Matrix::Identity(feature_dim, feature_dim);
      const auto a = static_cast<Index>(2 * p);
      g(a, a) = std::cos(t);
      g(a, a + 1) = -std::sin(t);
      g(a + 1, a) = std::sin(t);
      g(a + 1, a + 1) = std::cos(t);
      r = g * r;
    }
    return r;
  }

  Vector translation_vector() const {
    Vector t = Vector::Zero(feature_dim);
    for (std::size_t i = 0; i < translation.size(); ++i) t[static_cast<Index>(i)] = translation[i];
    return t;
  }
};

struct SyntheticGroundTruth {
  Matrix source_means;  // c x d
  Matrix target_means;  // c x d
  Matrix rotation;      // d x d
  Vector translation;   // d
};

struct SyntheticDomainPair {
  DomainDataset source;
  DomainDataset target;
  SyntheticGroundTruth truth;
};

inline SyntheticDomainPair synthesize_domain_pair(const SyntheticDomainConfig& config) {
  config.validate();
  const int c = config.class_count;
  const int d = config.feature_dim;
  Rng root(config.seed);
  Rng mean_rng = root.split(1);
  Rng source_rng = root.split(2);
  Rng target_rng = root.split(3);

  SyntheticDomainPair pair;
  auto& truth = pair.truth;
  truth.rotation = config.rotation();
  truth.translation = config.translation_vector();
  truth.source_means.resize(c, d);
  for (int k = 0; k < c; ++k)
    for (int j = 0; j < d; ++j) truth.source_means(k, j) = config.mean_offset + config.mean_scale * mean_rng.normal();
  truth.target_means = (truth.source_means * truth.rotation.transpose()).rowwise() + truth.translation.transpose();

  auto draw = [&](const Matrix& means, int per_class, Rng& rng, const char* tag) {
    DomainDataset ds;
    ds.domain = tag;
    ds.class_count = c;
    ds.features.resize(static_cast<Index>(c) * per_class, d);
    ds.labels.emplace();
    Index row = 0;
    for (int k = 0; k < c; ++k) {
      for (int i = 0; i < per_class; ++i, ++row) {
        for (int j = 0; j < d; ++j) ds.features(row, j) = means(k, j) + config.noise_std * rng.normal();
        ds.labels->push_back(k);
      }
    }
    return ds;
  };
  pair.source = draw(truth.source_means, config.samples_per_class, source_rng, "source");
  pair.target = draw(truth.target_means, config.target_samples_per_class, target_rng, "target");
  return pair;
}

}  // namespace gfca

#endif  // GFCA_DATASET_HPP
