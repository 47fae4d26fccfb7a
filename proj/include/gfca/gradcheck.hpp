#ifndef GFCA_GRADCHECK_HPP
#define GFCA_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gfca/adapt_net.hpp"
#include "gfca/autograd.hpp"
#include "gfca/dataset.hpp"
#include "gfca/error.hpp"
#include "gfca/feature_gan.hpp"
#include "gfca/mkmmd.hpp"
#include "gfca/rng.hpp"

namespace gfca {

// Building with -DGFCA_GRADCHECK_FAULT turns fault injection on by default.
#ifdef GFCA_GRADCHECK_FAULT
inline constexpr bool kGradcheckFaultDefault = true;
#else
inline constexpr bool kGradcheckFaultDefault = false;
#endif

struct GradcheckOptions {
  std::string scope = "all";  // all, feature-gan, adapt-net, mkmmd, or one loss name
  int seeds = 25;
  std::uint64_t seed = 0;
  bool inject_fault = kGradcheckFaultDefault;  // scales the largest analytic entry by 1.1
  ad::FdOptions fd;
};

struct GradcheckResult {
  std::string loss;
  int seeds = 0;
  double max_rel_error = 0.0;
  ad::FdEntry worst;
  int worst_seed = -1;
  std::size_t checked = 0;
  std::size_t excluded = 0;
  bool passed = true;
};

inline const std::vector<std::string>& gradcheck_loss_names() {
  static const std::vector<std::string> names{"L_g", "L_d", "anchor", "L_c", "L_e", "L_fc", "L_ec", "mmd"};
  return names;
}

/// Losses covered by a scope name.
inline std::vector<std::string> gradcheck_scope(const std::string& scope) {
  if (scope == "all") return gradcheck_loss_names();
  if (scope == "feature-gan") return {"L_g", "L_d", "anchor"};
  if (scope == "adapt-net") return {"L_c", "L_fc", "L_ec"};
  if (scope == "mkmmd") return {"mmd", "L_e"};
  const auto& all = gradcheck_loss_names();
  if (std::find(all.begin(), all.end(), scope) != all.end()) return {scope};
  throw ConfigError("scope", "unknown scope '" + scope + "' (all, feature-gan, adapt-net, mkmmd, or a loss name)");
}

namespace gradcheck_detail {

inline Matrix random_matrix(Rng& rng, Index rows, Index cols, double scale = 1.0, double shift = 0.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = shift + scale * rng.normal();
  return m;
}

// A small random problem: 3 classes (class 2 few-shot), d_x = 5, d_z = 3,
// encoder 5 -> 4 -> 3.
struct Instance {
  static constexpr Index kDim = 5;
  static constexpr int kClasses = 3;
  DomainDataset source;
  Matrix target;
  GeneratorParams gen;
  DiscriminatorParams disc;
  EncoderParams enc;
  ClassifierParams cls;
  Matrix noise;
  std::vector<int> fake_labels;
  double beta = 0.0;
  GanLoss kind = GanLoss::kAsPrinted;
  std::vector<int> few{2};
  std::vector<int> normal{0, 1};

  explicit Instance(Rng rng, bool odd) {
    source.class_count = kClasses;
    source.features = random_matrix(rng, 9, kDim, 0.6, 1.0);
    source.labels = std::vector<int>{0, 0, 0, 1, 1, 1, 2, 2, 2};
    for (Index i = 0; i < source.size(); ++i) source.features(i, (*source.labels)[static_cast<std::size_t>(i)]) += 1.5;
    target = random_matrix(rng, 7, kDim, 0.8, 1.2);
    gen = init_generator(source, 3, 0.2);
    gen.w_y += random_matrix(rng, kDim, kClasses, 0.05);  // moves W_y off its anchor
    disc = DiscriminatorParams{random_matrix(rng, 1, kDim, 0.4), random_matrix(rng, 1, 1, 0.2)};
    const std::vector<Index> widths{4, 3};
    enc = init_encoder(kDim, widths, 0.2, rng);
    for (auto& layer : enc.layers) layer.bias = random_matrix(rng, 1, layer.bias.cols(), 0.1);
    cls = init_classifier(3, kClasses, odd, rng);
    cls.w_c = random_matrix(rng, kClasses, 3, 0.7);
    noise = Matrix(6, 3);
    for (Index i = 0; i < noise.size(); ++i) noise.data()[i] = 2.0 * (static_cast<double>(rng.next_u64() >> 11) * 0x1.0p-53) - 1.0;
    fake_labels = {0, 1, 2, 2, 1, 0};
    beta = source.features.rowwise().norm().mean();
    kind = odd ? GanLoss::kLogistic : GanLoss::kAsPrinted;
  }

  Matrix fake_features() const {
    ad::Tape t;
    return t.value(generate(t, gen, noise, fake_labels, beta));
  }
};

inline KernelBank encoded_bank(const EncoderParams& enc, const Matrix& a, const Matrix& b) {
  return median_heuristic_bank(encoder_forward(enc, a), encoder_forward(enc, b), 3, 2.0);
}

}  // namespace gradcheck_detail

/// Finite-difference check of one loss on one random instance.
inline ad::FdReport gradcheck_instance(const std::string& loss, std::uint64_t seed, const GradcheckOptions& opt = {}) {
  using gradcheck_detail::Instance;
  const auto& names = gradcheck_loss_names();
  const auto pos = static_cast<std::uint64_t>(std::find(names.begin(), names.end(), loss) - names.begin());
  if (pos == names.size()) throw ConfigError("loss", "unknown loss '" + loss + "'");
  Instance in(Rng(seed).split(pos), seed % 2 == 1);

  ad::FdOptions fd = opt.fd;
  if (opt.inject_fault) {
    fd.corrupt = [](ad::Gradients& g) {
      std::size_t best_p = 0;
      Index best_i = 0;
      double best = -1.0;
      for (std::size_t p = 0; p < g.size(); ++p)
        for (Index i = 0; i < g[p].size(); ++i)
          if (std::abs(g[p].data()[i]) > best) best = std::abs(g[p].data()[i]), best_p = p, best_i = i;
      if (!g.empty()) g[best_p].data()[best_i] *= 1.1;
    };
  }

  const Matrix& real = in.source.features;
  const std::vector<int> real_labels = *in.source.labels;
  ad::ParamGroup group(loss);
  ad::LossFn fn;
  Matrix mmd_a, mmd_b;
  if (loss == "L_g" || loss == "L_d") {
    group.merge(in.gen.params());
    group.merge(in.disc.params());
    if (loss == "L_g") {
      fn = [&](ad::Tape& t) { return loss_g(discriminate(t, in.disc, generate(t, in.gen, in.noise, in.fake_labels, in.beta)), in.kind); };
    } else {
      fn = [&](ad::Tape& t) {
        const auto sr = discriminate(t, in.disc, t.constant(real));
        const auto sf = discriminate(t, in.disc, generate(t, in.gen, in.noise, in.fake_labels, in.beta));
        return loss_d(sr, sf, in.kind);
      };
    }
  } else if (loss == "anchor") {
    group.merge(in.gen.params());
    fn = [&](ad::Tape& t) { return wy_anchor_penalty(t, in.gen, in.normal); };
  } else if (loss == "L_c") {
    group.merge(in.enc.params());
    group.merge(in.cls.params());
    const Matrix fake = in.fake_features();
    fn = [&, fake](ad::Tape& t) {
      const auto lsr = ad::softmax_cross_entropy(logits(t, in.cls, encode(t, in.enc, t.constant(real))), real_labels);
      const auto lsf = ad::softmax_cross_entropy(logits(t, in.cls, encode(t, in.enc, t.constant(fake))), in.fake_labels);
      return ad::add(lsr, lsf);
    };
  } else if (loss == "L_e") {
    group.merge(in.enc.params());
    const KernelBank bank = gradcheck_detail::encoded_bank(in.enc, real, in.target);
    fn = [&, bank](ad::Tape& t) {
      return ad::mmd_sq(encode(t, in.enc, t.constant(real)), encode(t, in.enc, t.constant(in.target)), bank);
    };
  } else if (loss == "L_fc") {
    group.merge(in.cls.params());
    const double alpha = fc_alpha(in.cls, in.normal);
    fn = [&, alpha](ad::Tape& t) { return fc_loss(t, in.cls, in.few, alpha); };
  } else if (loss == "L_ec") {
    group.merge(in.enc.params());
    group.merge(in.cls.params());
    const Matrix fake = in.fake_features();
    const KernelBank bank = gradcheck_detail::encoded_bank(in.enc, real, in.target);
    const double alpha = fc_alpha(in.cls, in.normal);
    fn = [&, fake, bank, alpha](ad::Tape& t) {
      const auto hs = encode(t, in.enc, t.constant(real));
      const auto lsr = ad::softmax_cross_entropy(logits(t, in.cls, hs), real_labels);
      const auto lsf = ad::softmax_cross_entropy(logits(t, in.cls, encode(t, in.enc, t.constant(fake))), in.fake_labels);
      const auto le = ad::mmd_sq(hs, encode(t, in.enc, t.constant(in.target)), bank);
      return ad::add(ad::add(ad::add(lsr, lsf), le), fc_loss(t, in.cls, in.few, alpha));
    };
  } else {  // mmd
    mmd_a = in.source.features;
    mmd_b = in.target;
    group.add("X_s", mmd_a);
    group.add("X_t", mmd_b);
    const KernelBank bank = median_heuristic_bank(mmd_a, mmd_b, 3, 2.0);
    fn = [&, bank](ad::Tape& t) { return ad::mmd_sq(t.read(mmd_a), t.read(mmd_b), bank); };
  }
  return ad::finite_difference_check(fn, group, fd);
}

/// Runs every loss in the scope over `seeds` instances.
inline std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opt) {
  if (opt.seeds < 1) throw ConfigError("seeds", "must be >= 1");
  std::vector<GradcheckResult> out;
  for (const auto& loss : gradcheck_scope(opt.scope)) {
    GradcheckResult r;
    r.loss = loss;
    r.seeds = opt.seeds;
    for (int s = 0; s < opt.seeds; ++s) {
      const auto rep = gradcheck_instance(loss, opt.seed + static_cast<std::uint64_t>(s), opt);
      r.checked += rep.checked;
      r.excluded += rep.excluded;
      if (rep.max_error() > r.max_rel_error || r.worst_seed < 0) {
        r.max_rel_error = rep.max_error();
        r.worst = rep.worst;
        r.worst_seed = s;
      }
      r.passed = r.passed && rep.passed && rep.checked > 0;
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace gfca

#endif  // GFCA_GRADCHECK_HPP
