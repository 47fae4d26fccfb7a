#ifndef GFCA_EVAL_HPP
#define GFCA_EVAL_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gfca/adapt_net.hpp"
#include "gfca/dataset.hpp"
#include "gfca/dataset_io.hpp"
#include "gfca/error.hpp"
#include "gfca/numerics.hpp"

namespace gfca {

/// 100 * correct / count over samples whose true class is in `subset` (micro).
inline double subset_accuracy(std::span<const int> predictions, std::span<const int> truth, std::span<const int> subset) {
  if (predictions.size() != truth.size()) throw ParameterError("subset_accuracy: length mismatch");
  std::size_t count = 0, correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (std::find(subset.begin(), subset.end(), truth[i]) == subset.end()) continue;
    ++count;
    if (predictions[i] == truth[i]) ++correct;
  }
  if (count == 0) throw MetricError("subset_accuracy: no samples of the requested classes");
  return 100.0 * static_cast<double>(correct) / static_cast<double>(count);
}

/// Mean of per-class accuracies over the classes of `subset` that occur in truth.
inline double macro_accuracy(std::span<const int> predictions, std::span<const int> truth, std::span<const int> subset) {
  double total = 0.0;
  int used = 0;
  for (int k : subset) {
    const int one[] = {k};
    try {
      total += subset_accuracy(predictions, truth, one);
      ++used;
    } catch (const MetricError&) {
    }
  }
  if (used == 0) throw MetricError("macro_accuracy: no samples of the requested classes");
  return total / used;
}

inline double cross_task_average(std::span<const double> values) {
  if (values.empty()) throw ParameterError("cross_task_average: empty list");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

enum class SilhouetteScope { kAll, kFewShot };

/// Mean silhouette with cosine distance, clusters given by labels.
///
/// kFewShot keeps only samples (and clusters) whose label is in `few_shot`.
/// A sample alone in its cluster scores 0.
inline double silhouette_cosine(const Matrix& features, std::span<const int> labels, SilhouetteScope scope = SilhouetteScope::kAll,
                                std::span<const int> few_shot = {}) {
  if (static_cast<Index>(labels.size()) != features.rows()) throw ParameterError("silhouette_cosine: label count mismatch");
  std::vector<Index> rows;
  for (Index i = 0; i < features.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (scope == SilhouetteScope::kAll || std::find(few_shot.begin(), few_shot.end(), y) != few_shot.end()) rows.push_back(i);
  }
  std::vector<int> clusters;
  for (Index i : rows) clusters.push_back(labels[static_cast<std::size_t>(i)]);
  std::sort(clusters.begin(), clusters.end());
  clusters.erase(std::unique(clusters.begin(), clusters.end()), clusters.end());
  if (clusters.size() < 2) throw ParameterError("silhouette_cosine: need at least 2 clusters in scope");

  const Index n = static_cast<Index>(rows.size());
  const Index c = static_cast<Index>(clusters.size());
  Matrix unit(n, features.cols());
  Matrix membership = Matrix::Zero(n, c);
  std::vector<Index> cluster_of(static_cast<std::size_t>(n));
  std::vector<double> sizes(static_cast<std::size_t>(c), 0.0);
  for (Index i = 0; i < n; ++i) {
    const double norm = features.row(rows[static_cast<std::size_t>(i)]).norm();
    if (!(norm > 0)) throw DegenerateSampleError("silhouette_cosine: zero feature vector");
    unit.row(i) = features.row(rows[static_cast<std::size_t>(i)]) / norm;
    const int y = labels[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])];
    const auto k = static_cast<Index>(std::lower_bound(clusters.begin(), clusters.end(), y) - clusters.begin());
    cluster_of[static_cast<std::size_t>(i)] = k;
    membership(i, k) = 1.0;
    sizes[static_cast<std::size_t>(k)] += 1.0;
  }
  Matrix dist = (1.0 - (unit * unit.transpose()).array()).matrix();
  dist.diagonal().setZero();
  const Matrix sums = dist * membership;  // n x c

  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Index own = cluster_of[static_cast<std::size_t>(i)];
    const double own_size = sizes[static_cast<std::size_t>(own)];
    if (own_size < 2) continue;
    const double a = sums(i, own) / (own_size - 1.0);
    double b = std::numeric_limits<double>::infinity();
    for (Index k = 0; k < c; ++k)
      if (k != own) b = std::min(b, sums(i, k) / sizes[static_cast<std::size_t>(k)]);
    const double denom = std::max(a, b);
    if (denom > 0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

/// Silhouette of the union of two labeled sets.
inline double silhouette_cosine(const Matrix& features, std::span<const int> labels, const Matrix& extra,
                                std::span<const int> extra_labels, SilhouetteScope scope = SilhouetteScope::kAll,
                                std::span<const int> few_shot = {}) {
  if (extra.rows() > 0 && extra.cols() != features.cols()) throw ParameterError("silhouette_cosine: dimension mismatch");
  Matrix joined(features.rows() + extra.rows(), features.cols());
  joined << features, extra;
  std::vector<int> joined_labels(labels.begin(), labels.end());
  joined_labels.insert(joined_labels.end(), extra_labels.begin(), extra_labels.end());
  return silhouette_cosine(joined, joined_labels, scope, few_shot);
}

namespace detail {

inline Vector class_mean(const Matrix& features, std::span<const int> labels, int k) {
  Vector s = Vector::Zero(features.cols());
  Index n = 0;
  for (Index i = 0; i < features.rows(); ++i)
    if (labels[static_cast<std::size_t>(i)] == k) {
      s += features.row(i).transpose();
      ++n;
    }
  if (n == 0) throw MissingClassError(k);
  return s / static_cast<double>(n);
}

}  // namespace detail

struct CentroidSimilarity {
  int class_id = 0;
  double train_vs_heldout = 0.0;
  double synthetic_vs_heldout = 0.0;
};

/// Cosine similarity of class centers, train vs held-out and synthetic vs held-out.
inline std::vector<CentroidSimilarity> centroid_similarity_report(const DomainDataset& train, const DomainDataset& heldout,
                                                                  const Matrix& synthetic, std::span<const int> synthetic_labels,
                                                                  std::span<const int> few_shot_classes) {
  if (!train.labeled() || !heldout.labeled()) throw ParameterError("centroid_similarity_report: labeled sets required");
  if (static_cast<Index>(synthetic_labels.size()) != synthetic.rows())
    throw ParameterError("centroid_similarity_report: synthetic label count mismatch");
  std::vector<CentroidSimilarity> out;
  for (int k : few_shot_classes) {
    const Vector held = detail::class_mean(heldout.features, *heldout.labels, k);
    const Vector tr = detail::class_mean(train.features, *train.labels, k);
    const Vector sy = detail::class_mean(synthetic, synthetic_labels, k);
    out.push_back({k, cosine_similarity(tr, held), cosine_similarity(sy, held)});
  }
  return out;
}

struct WeightNorms {
  double mean_normal_norm = 0.0;
  double mean_few_shot_norm = 0.0;
};

/// Mean L2 norm (not squared) of the classifier rows over each class set.
inline WeightNorms weight_norm_report(const ClassifierParams& cl, const FewShotProtocol& protocol) {
  protocol.validate(cl.class_count());
  auto mean_norm = [&](const std::vector<int>& classes) {
    double s = 0.0;
    for (int k : classes) s += cl.w_c.row(k).norm();
    return classes.empty() ? 0.0 : s / static_cast<double>(classes.size());
  };
  return {mean_norm(protocol.normal_classes), mean_norm(protocol.few_shot_classes)};
}

/// One labeled group of rows for embedding export.
struct EmbeddingGroup {
  std::string kind;  // real-train, real-heldout, synthetic, target
  const Matrix* features = nullptr;
  std::vector<int> labels;  // empty: written as -1
};

/// CSV with columns source_kind, class, h0..h{d_h-1}. Empty groups are skipped.
inline Index export_embeddings(const EncoderParams& encoder, std::span<const EmbeddingGroup> groups, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw LoadError("cannot open " + path.string() + " for writing");
  const Index dh = encoder.output_dim();
  os << "source_kind,class";
  for (Index j = 0; j < dh; ++j) os << ",h" << j;
  os << '\n';
  Index written = 0;
  for (const auto& g : groups) {
    if (!g.features || g.features->rows() == 0) continue;
    if (!g.labels.empty() && static_cast<Index>(g.labels.size()) != g.features->rows())
      throw ParameterError("export_embeddings: label count mismatch for " + g.kind);
    const Matrix h = encoder_forward(encoder, *g.features);
    for (Index i = 0; i < h.rows(); ++i) {
      os << g.kind << ',' << (g.labels.empty() ? -1 : g.labels[static_cast<std::size_t>(i)]);
      for (Index j = 0; j < dh; ++j) os << ',' << io::format_double(h(i, j));
      os << '\n';
      ++written;
    }
  }
  if (!os) throw LoadError("write failed for " + path.string());
  return written;
}

// ---------------------------------------------------------------------------
// Report

struct SilhouetteScores {
  std::optional<double> train_all, train_all_synthetic, train_few_shot, train_few_shot_synthetic;
  std::optional<double> full_all, full_all_synthetic, full_few_shot, full_few_shot_synthetic;
};

struct MetricsReport {
  std::string mode;
  std::string task;
  std::uint64_t seed = 0;
  int class_count = 0;
  std::vector<int> few_shot_classes;
  int shots = 0;

  std::vector<std::optional<double>> per_class_accuracy;  // null when a class is absent from the target
  double few_shot_accuracy = 0.0;
  double normal_accuracy = 0.0;
  double overall_accuracy = 0.0;
  double few_shot_macro_accuracy = 0.0;
  Index few_shot_count = 0;
  Index normal_count = 0;

  SilhouetteScores silhouette;
  std::vector<CentroidSimilarity> centroid_similarity;

  double mean_normal_weight_norm = 0.0;
  double mean_few_shot_weight_norm = 0.0;
  double alpha = 0.0;                  // mean normal squared norm
  double mean_few_shot_sq_norm = 0.0;  // mean few-shot squared norm

  double max_abs_loss = 0.0;  // largest |loss| seen during training
  nlohmann::json config = nlohmann::json::object();

  double fc_ratio() const { return alpha > 0 ? mean_few_shot_sq_norm / alpha : std::numeric_limits<double>::quiet_NaN(); }
};

namespace detail {

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

inline std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace detail

/// Keys are sorted by the json object type, so output is stable.
inline nlohmann::json to_json(const MetricsReport& r) {
  using nlohmann::json;
  json j;
  j["mode"] = r.mode;
  j["task"] = r.task;
  j["seed"] = r.seed;
  j["class_count"] = r.class_count;
  j["few_shot_classes"] = r.few_shot_classes;
  j["shots"] = r.shots;
  json pc = json::array();
  for (const auto& v : r.per_class_accuracy) pc.push_back(detail::opt_json(v));
  j["per_class_accuracy"] = pc;
  j["few_shot_accuracy"] = r.few_shot_accuracy;
  j["normal_accuracy"] = r.normal_accuracy;
  j["overall_accuracy"] = r.overall_accuracy;
  j["few_shot_macro_accuracy"] = r.few_shot_macro_accuracy;
  j["few_shot_count"] = r.few_shot_count;
  j["normal_count"] = r.normal_count;
  const auto& s = r.silhouette;
  j["silhouette"] = {{"train_all", detail::opt_json(s.train_all)},
                     {"train_all_synthetic", detail::opt_json(s.train_all_synthetic)},
                     {"train_few_shot", detail::opt_json(s.train_few_shot)},
                     {"train_few_shot_synthetic", detail::opt_json(s.train_few_shot_synthetic)},
                     {"full_all", detail::opt_json(s.full_all)},
                     {"full_all_synthetic", detail::opt_json(s.full_all_synthetic)},
                     {"full_few_shot", detail::opt_json(s.full_few_shot)},
                     {"full_few_shot_synthetic", detail::opt_json(s.full_few_shot_synthetic)}};
  json cs = json::array();
  for (const auto& c : r.centroid_similarity)
    cs.push_back({{"class", c.class_id}, {"train_vs_heldout", c.train_vs_heldout}, {"synthetic_vs_heldout", c.synthetic_vs_heldout}});
  j["centroid_similarity"] = cs;
  j["mean_normal_weight_norm"] = r.mean_normal_weight_norm;
  j["mean_few_shot_weight_norm"] = r.mean_few_shot_weight_norm;
  j["alpha"] = r.alpha;
  j["mean_few_shot_sq_norm"] = r.mean_few_shot_sq_norm;
  j["max_abs_loss"] = r.max_abs_loss;
  j["config"] = r.config;
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.mode = j.at("mode").get<std::string>();
    r.task = j.at("task").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.class_count = j.at("class_count").get<int>();
    r.few_shot_classes = j.at("few_shot_classes").get<std::vector<int>>();
    r.shots = j.at("shots").get<int>();
    for (const auto& v : j.at("per_class_accuracy")) r.per_class_accuracy.push_back(detail::opt_from(v));
    r.few_shot_accuracy = j.at("few_shot_accuracy").get<double>();
    r.normal_accuracy = j.at("normal_accuracy").get<double>();
    r.overall_accuracy = j.at("overall_accuracy").get<double>();
    r.few_shot_macro_accuracy = j.value("few_shot_macro_accuracy", 0.0);
    r.few_shot_count = j.value("few_shot_count", Index{0});
    r.normal_count = j.value("normal_count", Index{0});
    if (j.contains("silhouette")) {
      const auto& s = j.at("silhouette");
      auto get = [&](const char* key) { return s.contains(key) ? detail::opt_from(s.at(key)) : std::nullopt; };
      r.silhouette = {get("train_all"), get("train_all_synthetic"), get("train_few_shot"), get("train_few_shot_synthetic"),
                      get("full_all"),  get("full_all_synthetic"),  get("full_few_shot"),  get("full_few_shot_synthetic")};
    }
    if (j.contains("centroid_similarity"))
      for (const auto& c : j.at("centroid_similarity"))
        r.centroid_similarity.push_back(
            {c.at("class").get<int>(), c.at("train_vs_heldout").get<double>(), c.at("synthetic_vs_heldout").get<double>()});
    r.mean_normal_weight_norm = j.value("mean_normal_weight_norm", 0.0);
    r.mean_few_shot_weight_norm = j.value("mean_few_shot_weight_norm", 0.0);
    r.alpha = j.value("alpha", 0.0);
    r.mean_few_shot_sq_norm = j.value("mean_few_shot_sq_norm", 0.0);
    r.max_abs_loss = j.value("max_abs_loss", 0.0);
    if (j.contains("config")) r.config = j.at("config");
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed metrics report: ") + e.what());
  }
  return r;
}

inline std::string report_json_text(const MetricsReport& r) { return to_json(r).dump(2) + "\n"; }

inline MetricsReport load_report(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw LoadError("cannot open " + path.string());
  try {
    return report_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

/// Header line and one data row; used to assemble tables.
inline std::string report_csv(const MetricsReport& r) {
  auto num = [](std::optional<double> v) { return v ? io::format_double(*v) : std::string(); };
  std::string header =
      "mode,task,seed,few_shot_accuracy,normal_accuracy,overall_accuracy,few_shot_macro_accuracy,"
      "mean_normal_weight_norm,mean_few_shot_weight_norm,fc_ratio,"
      "silhouette_train_few_shot,silhouette_train_few_shot_synthetic,silhouette_train_all,silhouette_train_all_synthetic\n";
  std::string row = r.mode + "," + r.task + "," + std::to_string(r.seed) + "," + io::format_double(r.few_shot_accuracy) + "," +
                    io::format_double(r.normal_accuracy) + "," + io::format_double(r.overall_accuracy) + "," +
                    io::format_double(r.few_shot_macro_accuracy) + "," + io::format_double(r.mean_normal_weight_norm) + "," +
                    io::format_double(r.mean_few_shot_weight_norm) + "," + io::format_double(r.fc_ratio()) + "," +
                    num(r.silhouette.train_few_shot) + "," + num(r.silhouette.train_few_shot_synthetic) + "," +
                    num(r.silhouette.train_all) + "," + num(r.silhouette.train_all_synthetic) + "\n";
  return header + row;
}

/// Accuracy fields of a report from predictions on a labeled target.
inline void fill_accuracy(MetricsReport& r, std::span<const int> predictions, std::span<const int> truth, const FewShotProtocol& protocol,
                          int class_count) {
  r.per_class_accuracy.assign(static_cast<std::size_t>(class_count), std::nullopt);
  for (int k = 0; k < class_count; ++k) {
    const int one[] = {k};
    try {
      r.per_class_accuracy[static_cast<std::size_t>(k)] = subset_accuracy(predictions, truth, one);
    } catch (const MetricError&) {
    }
  }
  std::vector<int> all(static_cast<std::size_t>(class_count));
  for (int k = 0; k < class_count; ++k) all[static_cast<std::size_t>(k)] = k;
  r.few_shot_count = 0;
  r.normal_count = 0;
  for (int y : truth) (protocol.is_few_shot(y) ? r.few_shot_count : r.normal_count)++;
  r.overall_accuracy = subset_accuracy(predictions, truth, all);
  r.few_shot_accuracy = r.few_shot_count > 0 ? subset_accuracy(predictions, truth, protocol.few_shot_classes) : 0.0;
  r.normal_accuracy = r.normal_count > 0 ? subset_accuracy(predictions, truth, protocol.normal_classes) : 0.0;
  r.few_shot_macro_accuracy = r.few_shot_count > 0 ? macro_accuracy(predictions, truth, protocol.few_shot_classes) : 0.0;
}

}  // namespace gfca

#endif  // GFCA_EVAL_HPP
