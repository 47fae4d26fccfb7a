#ifndef GFCA_TRAINER_HPP
#define GFCA_TRAINER_HPP

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gfca/adapt_net.hpp"
#include "gfca/autograd.hpp"
#include "gfca/checkpoint.hpp"
#include "gfca/dataset.hpp"
#include "gfca/error.hpp"
#include "gfca/eval.hpp"
#include "gfca/feature_gan.hpp"
#include "gfca/mkmmd.hpp"
#include "gfca/numerics.hpp"
#include "gfca/rng.hpp"

namespace gfca {

enum class TrainMode { kGfca, kGfca2Stage, kGfcaWoFc, kMmdOnly, kSourceOnly };

inline std::string mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kGfca: return "gfca";
    case TrainMode::kGfca2Stage: return "gfca-2stage";
    case TrainMode::kGfcaWoFc: return "gfca-wofc";
    case TrainMode::kMmdOnly: return "mmd-only";
    case TrainMode::kSourceOnly: return "source-only";
  }
  return "?";
}

inline TrainMode parse_mode(const std::string& s) {
  for (auto m : {TrainMode::kGfca, TrainMode::kGfca2Stage, TrainMode::kGfcaWoFc, TrainMode::kMmdOnly, TrainMode::kSourceOnly})
    if (mode_name(m) == s) return m;
  throw ConfigError("mode", "unknown mode '" + s + "' (gfca, gfca-2stage, gfca-wofc, mmd-only, source-only)");
}

inline bool uses_gan(TrainMode m) { return m == TrainMode::kGfca || m == TrainMode::kGfca2Stage || m == TrainMode::kGfcaWoFc; }

inline std::string gan_loss_name(GanLoss g) { return g == GanLoss::kLogistic ? "logistic" : "as-printed"; }

inline GanLoss parse_gan_loss(const std::string& s) {
  if (s == "as-printed") return GanLoss::kAsPrinted;
  if (s == "logistic") return GanLoss::kLogistic;
  throw ConfigError("gan_loss", "unknown value '" + s + "' (as-printed, logistic)");
}

struct TrainConfig {
  TrainMode mode = TrainMode::kGfca;
  double lambda = 1.0;
  double gamma = 1.0;
  double eta = 1e-2;  // anchor penalty on the normal-class columns of W_y
  Index batch_source = 64;
  Index batch_target = 64;
  Index batch_fake = 64;
  Index noise_dim = 0;  // 0: min(d_x, 100)
  std::vector<Index> hidden_dims{256, 256};
  double slope = 0.2;
  double lr_ec = 1e-3;
  double lr_g = 1e-4;
  double lr_d = 1e-4;
  long pretrain_steps = 500;
  long main_steps = 3000;
  int kernel_count = 5;
  double kernel_factor = 2.0;
  std::uint64_t seed = 0;
  std::string fake_label_policy = "uniform";
  GanLoss gan_loss = GanLoss::kAsPrinted;
  bool classifier_bias = false;
  double real_weight = 1.0;
  double fake_weight = 1.0;
  bool mmd_include_fake = false;
  bool fake_grad_to_generator = false;
  Index synthetic_per_class = 0;        // two-stage augmentation set; 0: largest training class count
  Index eval_synthetic_per_class = 50;  // synthetic rows per class for the diagnostics
  long log_every = 100;

  void validate() const {
    auto nonneg = [](double v, const char* f) {
      if (!(v >= 0) || !std::isfinite(v)) throw ConfigError(f, "must be a finite nonnegative number");
    };
    auto positive = [](double v, const char* f) {
      if (!(v > 0) || !std::isfinite(v)) throw ConfigError(f, "must be positive");
    };
    nonneg(lambda, "lambda");
    nonneg(gamma, "gamma");
    nonneg(eta, "eta");
    nonneg(real_weight, "real_weight");
    nonneg(fake_weight, "fake_weight");
    positive(static_cast<double>(batch_source), "batch_source");
    positive(static_cast<double>(batch_target), "batch_target");
    positive(static_cast<double>(batch_fake), "batch_fake");
    positive(lr_ec, "lr_ec");
    positive(lr_g, "lr_g");
    positive(lr_d, "lr_d");
    positive(kernel_factor - 1.0, "kernel_factor");
    if (noise_dim < 0) throw ConfigError("noise_dim", "must be >= 0");
    if (hidden_dims.empty()) throw ConfigError("hidden_dims", "need at least one layer");
    for (Index h : hidden_dims)
      if (h < 1) throw ConfigError("hidden_dims", "widths must be positive");
    if (!(slope >= 0 && slope < 1)) throw ConfigError("slope", "must be in [0, 1)");
    if (pretrain_steps < 0) throw ConfigError("pretrain_steps", "must be >= 0");
    if (main_steps < 1) throw ConfigError("main_steps", "must be >= 1");
    if (kernel_count < 1) throw ConfigError("kernel_count", "must be >= 1");
    if (synthetic_per_class < 0) throw ConfigError("synthetic_per_class", "must be >= 0");
    if (eval_synthetic_per_class < 0) throw ConfigError("eval_synthetic_per_class", "must be >= 0");
    if (log_every < 1) throw ConfigError("log_every", "must be >= 1");
    try {
      parse_label_policy(fake_label_policy);
    } catch (const ParameterError& e) {
      throw ConfigError("fake_label_policy", e.what());
    }
  }

  /// Copy with the mode contract applied: gfca-wofc and mmd-only force
  /// gamma = 0, source-only forces lambda = gamma = 0.
  TrainConfig resolved() const {
    TrainConfig c = *this;
    if (c.mode == TrainMode::kGfcaWoFc || c.mode == TrainMode::kMmdOnly) c.gamma = 0.0;
    if (c.mode == TrainMode::kSourceOnly) c.lambda = c.gamma = 0.0;
    return c;
  }

  nlohmann::json to_json() const {
    return {{"mode", mode_name(mode)},
            {"lambda", lambda},
            {"gamma", gamma},
            {"eta", eta},
            {"batch_source", batch_source},
            {"batch_target", batch_target},
            {"batch_fake", batch_fake},
            {"noise_dim", noise_dim},
            {"hidden_dims", hidden_dims},
            {"slope", slope},
            {"lr_ec", lr_ec},
            {"lr_g", lr_g},
            {"lr_d", lr_d},
            {"pretrain_steps", pretrain_steps},
            {"main_steps", main_steps},
            {"kernel_count", kernel_count},
            {"kernel_factor", kernel_factor},
            {"seed", seed},
            {"fake_label_policy", fake_label_policy},
            {"gan_loss", gan_loss_name(gan_loss)},
            {"classifier_bias", classifier_bias},
            {"real_weight", real_weight},
            {"fake_weight", fake_weight},
            {"mmd_include_fake", mmd_include_fake},
            {"fake_grad_to_generator", fake_grad_to_generator},
            {"synthetic_per_class", synthetic_per_class},
            {"eval_synthetic_per_class", eval_synthetic_per_class},
            {"log_every", log_every}};
  }
};

/// Loss values of one update; NaN marks a term that was not computed.
struct StepLosses {
  static constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();
  std::string phase;  // pretrain, main, gan (two-stage phase one)
  long step = 0;
  double l_c = kUnset, l_sr = kUnset, l_sf = kUnset, l_e = kUnset, l_fc = kUnset;
  double l_ec = kUnset, l_g = kUnset, l_d = kUnset, anchor = kUnset;
  double alpha = kUnset, few_shot_sq_norm = kUnset;

  nlohmann::json to_json() const {
    auto v = [](double x) { return std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x); };
    return {{"phase", phase}, {"step", step},   {"L_c", v(l_c)},     {"L_sr", v(l_sr)},     {"L_sf", v(l_sf)},
            {"L_e", v(l_e)},  {"L_fc", v(l_fc)}, {"L_ec", v(l_ec)},  {"L_g", v(l_g)},       {"L_d", v(l_d)},
            {"anchor", v(anchor)}, {"alpha", v(alpha)}, {"few_shot_sq_norm", v(few_shot_sq_norm)}};
  }

  double max_abs() const {
    double m = 0.0;
    for (double x : {l_c, l_sr, l_sf, l_e, l_fc, l_ec, l_g, l_d, anchor})
      if (!std::isnan(x)) m = std::max(m, std::abs(x));
    return m;
  }
};

/// Aborted training: carries the step index and the loss breakdown.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const StepLosses& losses, const std::string& term)
      : Error("training aborted at " + losses.phase + " step " + std::to_string(losses.step) + ": non-finite " + term + " " +
              losses.to_json().dump()),
        losses_(losses) {}
  const StepLosses& losses() const noexcept { return losses_; }

 private:
  StepLosses losses_;
};

/// Fixed-capacity history of recent step losses plus the running max |loss|.
class LossHistory {
 public:
  explicit LossHistory(std::size_t capacity = 1000) : capacity_(capacity) {}

  void push(const StepLosses& s) {
    if (capacity_ == 0) return;
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(s);
    max_abs_ = std::max(max_abs_, s.max_abs());
  }

  const std::deque<StepLosses>& items() const { return items_; }
  double max_abs() const { return max_abs_; }

 private:
  std::size_t capacity_;
  std::deque<StepLosses> items_;
  double max_abs_ = 0.0;
};

/// Everything the loop reads. source_train is the post-split set before
/// oversampling (beta and generator init); source_balanced feeds real batches.
struct TrainData {
  DomainDataset source_train;
  DomainDataset source_balanced;
  DomainDataset target;  // labels, if any, are never read during training
  FewShotProtocol protocol;
};

/// Fixed synthetic set drawn once by the two-stage mode.
struct FakePool {
  Matrix features;
  std::vector<int> labels;
};

struct TrainState {
  GeneratorParams gen;
  DiscriminatorParams disc;
  EncoderParams enc;
  ClassifierParams cls;
  ad::AdamState adam_ec, adam_g, adam_d;
  double beta = 0.0;
  long step = 0;      // main-loop steps done
  long gan_step = 0;  // GAN-only steps done
  std::optional<KernelBank> bank;
  std::optional<FakePool> pool;
  LossHistory history;

  ad::ParamGroup ec_params() {
    ad::ParamGroup g("encoder+classifier");
    g.merge(enc.params());
    g.merge(cls.params());
    return g;
  }
  ad::ParamGroup g_params() { return gen.params(); }
  ad::ParamGroup d_params() { return disc.params(); }

  Checkpoint checkpoint() const {
    Checkpoint c;
    if (gen.w_z.size() > 0) {
      c["W_z"] = gen.w_z;
      c["W_y"] = gen.w_y;
      c["W_y_init"] = gen.w_y_init;
      c["W_d"] = disc.w_d;
      c["b_d"] = disc.b_d;
    }
    for (std::size_t i = 0; i < enc.layers.size(); ++i) {
      c["E" + std::to_string(i) + ".weight"] = enc.layers[i].weight;
      c["E" + std::to_string(i) + ".bias"] = enc.layers[i].bias;
    }
    c["W_c"] = cls.w_c;
    if (cls.bias) c["C.bias"] = *cls.bias;
    c["beta"] = Matrix::Constant(1, 1, beta);
    c["slope"] = Matrix::Constant(1, 1, enc.slope);
    return c;
  }
};

/// Rebuilds encoder, classifier and (when present) GAN parameters from a checkpoint.
inline TrainState state_from_checkpoint(const Checkpoint& c) {
  TrainState s;
  s.beta = checkpoint_section(c, "beta")(0, 0);
  const double slope = checkpoint_section(c, "slope")(0, 0);
  s.enc.slope = slope;
  for (std::size_t i = 0;; ++i) {
    const std::string w = "E" + std::to_string(i) + ".weight";
    if (!c.count(w)) break;
    s.enc.layers.push_back({c.at(w), checkpoint_section(c, "E" + std::to_string(i) + ".bias")});
  }
  if (s.enc.layers.empty()) throw LoadError("checkpoint has no encoder layers");
  s.cls.w_c = checkpoint_section(c, "W_c");
  if (c.count("C.bias")) s.cls.bias = c.at("C.bias");
  if (c.count("W_z")) {
    s.gen.w_z = c.at("W_z");
    s.gen.w_y = checkpoint_section(c, "W_y");
    s.gen.w_y_init = checkpoint_section(c, "W_y_init");
    s.gen.slope = slope;
    s.disc.w_d = checkpoint_section(c, "W_d");
    s.disc.b_d = checkpoint_section(c, "b_d");
  }
  return s;
}

namespace detail {

// Fixed child streams of the run seed.
enum Stream : std::uint64_t { kInit = 1, kOversample = 2, kPretrain = 3, kMain = 4, kPool = 5, kEvalSynthetic = 6 };

inline std::vector<Index> draw_rows(Rng& rng, Index n, Index count) {
  std::vector<Index> rows(static_cast<std::size_t>(count));
  for (auto& r : rows) r = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
  return rows;
}

inline Matrix gather(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

inline std::vector<int> gather(const std::vector<int>& v, const std::vector<Index>& rows) {
  std::vector<int> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = v[static_cast<std::size_t>(rows[i])];
  return out;
}

inline void check_finite(const StepLosses& s, double v, const char* term) {
  if (!std::isfinite(v)) throw TrainingAborted(s, term);
}

struct RealBatch {
  Matrix features;
  std::vector<int> labels;
};

inline RealBatch sample_real(const DomainDataset& ds, Rng& rng, Index batch) {
  const auto rows = draw_rows(rng, ds.size(), batch);
  return {gather(ds.features, rows), gather(*ds.labels, rows)};
}

}  // namespace detail

inline Index resolved_noise_dim(const TrainConfig& cfg, const DomainDataset& source_train) {
  const Index d = cfg.noise_dim > 0 ? cfg.noise_dim : std::min<Index>(source_train.dim(), 100);
  return std::min(d, std::min(source_train.size(), source_train.dim()));
}

/// Fresh parameters and optimizer states. Beta comes from source_train.
inline TrainState init_state(const TrainConfig& cfg, const TrainData& data) {
  TrainState s;
  Rng rng = Rng(cfg.seed).split(detail::kInit);
  s.beta = mean_row_norm(data.source_train.features);
  if (uses_gan(cfg.mode)) {
    s.gen = init_generator(data.source_train, resolved_noise_dim(cfg, data.source_train), cfg.slope);
    s.disc = init_discriminator(data.source_train.dim());
  }
  s.enc = init_encoder(data.source_train.dim(), cfg.hidden_dims, cfg.slope, rng);
  s.cls = init_classifier(s.enc.output_dim(), data.source_train.class_count, cfg.classifier_bias, rng);
  s.adam_ec = ad::AdamState::for_group(s.ec_params(), {cfg.lr_ec});
  if (uses_gan(cfg.mode)) {
    s.adam_g = ad::AdamState::for_group(s.g_params(), {cfg.lr_g});
    s.adam_d = ad::AdamState::for_group(s.d_params(), {cfg.lr_d});
  }
  return s;
}

/// One generator update on L_g + eta * anchor with D held fixed.
inline void generator_update(TrainState& s, const TrainConfig& cfg, const FewShotProtocol& protocol, const FakeBatch& fake,
                             StepLosses& out, const ad::Gradients* extra = nullptr) {
  auto group = s.g_params();
  ad::Tape tape(&group);
  const ad::Var xf = generate(tape, s.gen, fake.noise, fake.labels, s.beta);
  const ad::Var lg = loss_g(discriminate(tape, s.disc, xf), cfg.gan_loss);
  const ad::Var anchor = wy_anchor_penalty(tape, s.gen, protocol.normal_classes);
  const ad::Var total = ad::add(lg, ad::scale(anchor, cfg.eta));
  out.l_g = tape.scalar(lg);
  out.anchor = tape.scalar(anchor);
  detail::check_finite(out, out.l_g, "L_g");
  auto grads = tape.backward(total);
  if (extra)
    for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += (*extra)[i];
  ad::adam_step(s.adam_g, group, grads);
}

/// One discriminator update on L_d with G held fixed; fakes are regenerated
/// from the same noise with the current generator.
inline void discriminator_update(TrainState& s, const TrainConfig& cfg, const Matrix& real, const FakeBatch& fake, StepLosses& out) {
  auto group = s.d_params();
  ad::Tape tape(&group);
  const ad::Var xf = generate(tape, s.gen, fake.noise, fake.labels, s.beta);  // constants: G is not in the group
  const ad::Var ld = loss_d(discriminate(tape, s.disc, tape.constant(real)), discriminate(tape, s.disc, xf), cfg.gan_loss);
  out.l_d = tape.scalar(ld);
  detail::check_finite(out, out.l_d, "L_d");
  ad::adam_step(s.adam_d, group, tape.backward(ld));
}

/// Alternating D-step then G-step on real-vs-fake source features.
inline void gan_step(TrainState& s, const TrainConfig& cfg, const TrainData& data, Rng rng, const std::string& phase) {
  StepLosses out;
  out.phase = phase;
  out.step = s.gan_step;
  const auto real = detail::sample_real(data.source_balanced, rng, cfg.batch_source);
  const auto fake = sample_fake_batch(s.gen, rng, s.beta, cfg.batch_fake, parse_label_policy(cfg.fake_label_policy));
  discriminator_update(s, cfg, real.features, fake, out);
  generator_update(s, cfg, data.protocol, fake, out);
  s.history.push(out);
  ++s.gan_step;
}

inline void pretrain_gan(TrainState& s, const TrainConfig& cfg, const TrainData& data, long steps,
                         const std::function<void(const StepLosses&)>& observer = {}, const std::string& phase = "pretrain") {
  const Rng base = Rng(cfg.seed).split(phase == "pretrain" ? detail::kPretrain : detail::kPool);
  for (long i = 0; i < steps; ++i) {
    gan_step(s, cfg, data, base.split(static_cast<std::uint64_t>(s.gan_step)), phase);
    if (observer && (s.gan_step % cfg.log_every == 0)) observer(s.history.items().back());
  }
}

/// Median-heuristic bank from the current embeddings of one source and one target batch.
inline void refresh_bank(TrainState& s, const TrainConfig& cfg, const Matrix& real, const Matrix& target) {
  try {
    s.bank = median_heuristic_bank(encoder_forward(s.enc, real), encoder_forward(s.enc, target), cfg.kernel_count, cfg.kernel_factor);
  } catch (const DegenerateDataError&) {
    if (!s.bank) s.bank = KernelBank::uniform({1.0});
  }
}

/// Steps per pass over the balanced source set.
inline long epoch_length(const TrainConfig& cfg, const TrainData& data) {
  return std::max<long>(1, static_cast<long>((data.source_balanced.size() + cfg.batch_source - 1) / cfg.batch_source));
}

/// One main-loop update: (1) real source and target batches, (2) fake batch,
/// (3) E/C step on L_c + lambda L_e + gamma L_fc, (4) G step, (5) D step.
inline StepLosses train_step(TrainState& s, const TrainConfig& cfg, const TrainData& data, Rng rng) {
  StepLosses out;
  out.phase = "main";
  out.step = s.step;
  const bool gan_live = cfg.mode == TrainMode::kGfca || cfg.mode == TrainMode::kGfcaWoFc;
  const bool with_fake = uses_gan(cfg.mode);

  // (1)
  const auto real = detail::sample_real(data.source_balanced, rng, cfg.batch_source);
  const Matrix target = detail::gather(data.target.features, detail::draw_rows(rng, data.target.size(), cfg.batch_target));
  // (2)
  FakeBatch fake;
  if (gan_live) {
    fake = sample_fake_batch(s.gen, rng, s.beta, cfg.batch_fake, parse_label_policy(cfg.fake_label_policy));
  } else if (with_fake) {
    const auto rows = detail::draw_rows(rng, s.pool->features.rows(), cfg.batch_fake);
    fake.features = detail::gather(s.pool->features, rows);
    fake.labels = detail::gather(s.pool->labels, rows);
  }

  if (cfg.lambda > 0 && (!s.bank || s.step % epoch_length(cfg, data) == 0)) refresh_bank(s, cfg, real.features, target);

  // (3)
  const double alpha = fc_alpha(s.cls, data.protocol.normal_classes);
  out.alpha = alpha;
  out.few_shot_sq_norm = mean_sq_norm(s.cls, data.protocol.few_shot_classes);
  auto ec = s.ec_params();
  ad::ParamGroup group = ec;
  const bool fake_to_g = gan_live && cfg.fake_grad_to_generator;
  if (fake_to_g) group.merge(s.g_params());
  ad::Gradients g_extra;
  {
    ad::Tape tape(&group);
    const ad::Var hs = encode(tape, s.enc, tape.constant(real.features));
    const ad::Var lsr = ad::softmax_cross_entropy(logits(tape, s.cls, hs), real.labels);
    out.l_sr = tape.scalar(lsr);
    ad::Var lc = ad::scale(lsr, cfg.real_weight);
    std::optional<ad::Var> hf;
    if (with_fake) {
      const ad::Var xf = fake_to_g ? generate(tape, s.gen, fake.noise, fake.labels, s.beta) : tape.constant(fake.features);
      hf = encode(tape, s.enc, xf);
      const ad::Var lsf = ad::softmax_cross_entropy(logits(tape, s.cls, *hf), fake.labels);
      out.l_sf = tape.scalar(lsf);
      lc = ad::add(lc, ad::scale(lsf, cfg.fake_weight));
    }
    out.l_c = tape.scalar(lc);
    ad::Var total = lc;
    if (cfg.lambda > 0) {
      const ad::Var ht = encode(tape, s.enc, tape.constant(target));
      const ad::Var src = (cfg.mmd_include_fake && hf) ? ad::concat_rows(hs, *hf) : hs;
      const ad::Var le = ad::mmd_sq(src, ht, *s.bank);
      out.l_e = tape.scalar(le);
      total = ad::add(total, ad::scale(le, cfg.lambda));
    }
    if (cfg.gamma > 0) {
      const ad::Var lfc = fc_loss(tape, s.cls, data.protocol.few_shot_classes, alpha);
      out.l_fc = tape.scalar(lfc);
      total = ad::add(total, ad::scale(lfc, cfg.gamma));
    } else {
      out.l_fc = fc_loss(s.cls, data.protocol.few_shot_classes, alpha);
    }
    out.l_ec = tape.scalar(total);
    detail::check_finite(out, out.l_c, "L_c");
    if (cfg.lambda > 0) detail::check_finite(out, out.l_e, "L_e");
    detail::check_finite(out, out.l_fc, "L_fc");
    auto grads = tape.backward(total);
    if (fake_to_g) {
      g_extra.assign(grads.begin() + static_cast<std::ptrdiff_t>(ec.size()), grads.end());
      grads.resize(ec.size());
    }
    ad::adam_step(s.adam_ec, ec, grads);
  }

  if (gan_live) {
    // (4) then (5)
    generator_update(s, cfg, data.protocol, fake, out, fake_to_g ? &g_extra : nullptr);
    discriminator_update(s, cfg, real.features, fake, out);
  }
  s.history.push(out);
  ++s.step;
  return out;
}

/// Balanced synthetic set: `per_class` rows of every class from the current generator.
inline FakePool synthesize_pool(const TrainState& s, Rng rng, Index per_class, int class_count) {
  FakePool pool;
  if (per_class == 0 || class_count == 0) {
    pool.features.resize(0, s.gen.feature_dim());
    return pool;
  }
  const auto batch = sample_fake_batch(s.gen, rng, s.beta, per_class * class_count, LabelPolicy::balanced());
  // Stable class-major order.
  std::vector<Index> order(static_cast<std::size_t>(batch.features.rows()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return batch.labels[static_cast<std::size_t>(a)] < batch.labels[static_cast<std::size_t>(b)]; });
  pool.features = detail::gather(batch.features, order);
  pool.labels = detail::gather(batch.labels, order);
  return pool;
}

using StepObserver = std::function<void(const StepLosses&)>;

/// Full schedule for the configured mode. The state is trained in place.
inline void train(TrainState& s, const TrainConfig& cfg, const TrainData& data, const StepObserver& observer = {}) {
  if (data.target.size() < 1) throw DataError("target set is empty");
  const Rng main = Rng(cfg.seed).split(detail::kMain);
  switch (cfg.mode) {
    case TrainMode::kGfca:
    case TrainMode::kGfcaWoFc:
      pretrain_gan(s, cfg, data, cfg.pretrain_steps, observer);
      break;
    case TrainMode::kGfca2Stage: {
      pretrain_gan(s, cfg, data, cfg.pretrain_steps + cfg.main_steps, observer, "gan");
      Index per_class = cfg.synthetic_per_class;
      if (per_class == 0)
        for (Index n : data.source_train.class_counts()) per_class = std::max(per_class, n);
      s.pool = synthesize_pool(s, Rng(cfg.seed).split(detail::kPool).split(~0ULL), per_class, data.source_train.class_count);
      break;
    }
    default:
      break;
  }
  for (long i = 0; i < cfg.main_steps; ++i) {
    const StepLosses out = train_step(s, cfg, data, main.split(static_cast<std::uint64_t>(s.step)));
    if (observer && (s.step % cfg.log_every == 0 || s.step == cfg.main_steps)) observer(out);
  }
}

/// Split, oversample and pack the inputs of one run.
inline FewShotSplit prepare_data(const TrainConfig& cfg, const DomainDataset& source, const DomainDataset& target,
                                 const FewShotProtocol& protocol, TrainData& out) {
  source.validate();
  target.validate();
  if (!source.labeled()) throw DataError("source set must be labeled");
  if (source.dim() != target.dim()) throw DataError("source and target feature dimensions differ");
  FewShotSplit split = make_few_shot_split(source, protocol);
  Rng rng = Rng(cfg.seed).split(detail::kOversample);
  out.source_train = split.train;
  out.source_balanced = oversample_balanced(split.train, rng);
  out.target = target;
  out.target.labels.reset();
  out.protocol = protocol;
  return split;
}

struct ExperimentResult {
  MetricsReport report;
  TrainState state;
  FewShotSplit split;
  FakePool synthetic;  // diagnostics set; empty without a generator
};

/// Diagnostics and accuracies of a trained state.
inline MetricsReport evaluate_state(const TrainState& s, const TrainConfig& cfg, const FewShotSplit& split, const DomainDataset& target,
                                    const FewShotProtocol& protocol, const FakePool& synthetic) {
  MetricsReport r;
  r.mode = mode_name(cfg.mode);
  r.seed = cfg.seed;
  r.class_count = split.train.class_count;
  r.few_shot_classes = protocol.few_shot_classes;
  r.shots = protocol.shots_per_class;
  if (!target.labeled()) throw DataError("target labels are required for evaluation");
  fill_accuracy(r, predict(s.enc, s.cls, target.features), *target.labels, protocol, r.class_count);

  const auto norms = weight_norm_report(s.cls, protocol);
  r.mean_normal_weight_norm = norms.mean_normal_norm;
  r.mean_few_shot_weight_norm = norms.mean_few_shot_norm;
  r.alpha = fc_alpha(s.cls, protocol.normal_classes);
  r.mean_few_shot_sq_norm = mean_sq_norm(s.cls, protocol.few_shot_classes);
  r.max_abs_loss = s.history.max_abs();

  const auto& few = protocol.few_shot_classes;
  const bool have_synth = synthetic.features.rows() > 0;
  Matrix full(split.train.size() + split.heldout.size(), split.train.dim());
  full << split.train.features, split.heldout.features;
  std::vector<int> full_labels = *split.train.labels;
  full_labels.insert(full_labels.end(), split.heldout.labels->begin(), split.heldout.labels->end());
  auto sil = [&](const Matrix& x, const std::vector<int>& y, bool synth, SilhouetteScope scope) -> std::optional<double> {
    try {
      if (synth) return silhouette_cosine(x, y, synthetic.features, synthetic.labels, scope, few);
      return silhouette_cosine(x, y, scope, few);
    } catch (const ParameterError&) {
      return std::nullopt;
    }
  };
  auto& sv = r.silhouette;
  sv.train_all = sil(split.train.features, *split.train.labels, false, SilhouetteScope::kAll);
  sv.train_few_shot = sil(split.train.features, *split.train.labels, false, SilhouetteScope::kFewShot);
  sv.full_all = sil(full, full_labels, false, SilhouetteScope::kAll);
  sv.full_few_shot = sil(full, full_labels, false, SilhouetteScope::kFewShot);
  if (have_synth) {
    sv.train_all_synthetic = sil(split.train.features, *split.train.labels, true, SilhouetteScope::kAll);
    sv.train_few_shot_synthetic = sil(split.train.features, *split.train.labels, true, SilhouetteScope::kFewShot);
    sv.full_all_synthetic = sil(full, full_labels, true, SilhouetteScope::kAll);
    sv.full_few_shot_synthetic = sil(full, full_labels, true, SilhouetteScope::kFewShot);
    bool heldout_covers = true;
    const auto counts = split.heldout.class_counts();
    for (int k : few) heldout_covers = heldout_covers && counts[static_cast<std::size_t>(k)] > 0;
    if (heldout_covers) r.centroid_similarity = centroid_similarity_report(split.train, split.heldout, synthetic.features, synthetic.labels, few);
  }
  r.config = cfg.to_json();
  return r;
}

/// Split, train, evaluate. `target` must carry labels; they are used only
/// for evaluation.
inline ExperimentResult run_experiment(const TrainConfig& config, const DomainDataset& source, const DomainDataset& target,
                                       const FewShotProtocol& protocol, const StepObserver& observer = {}) {
  const TrainConfig cfg = config.resolved();
  cfg.validate();
  TrainData data;
  ExperimentResult res;
  res.split = prepare_data(cfg, source, target, protocol, data);
  res.state = init_state(cfg, data);
  train(res.state, cfg, data, observer);
  if (uses_gan(cfg.mode))
    res.synthetic = synthesize_pool(res.state, Rng(cfg.seed).split(detail::kEvalSynthetic), cfg.eval_synthetic_per_class,
                                    data.source_train.class_count);
  res.report = evaluate_state(res.state, cfg, res.split, target, protocol, res.synthetic);
  return res;
}

}  // namespace gfca

#endif  // GFCA_TRAINER_HPP
