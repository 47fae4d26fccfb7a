// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "gfca/cli.hpp"
#include "oracles.hpp"

using namespace gfca;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s criterion %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// 1. analytic gradients against central differences
Outcome gradients() {
  GradcheckOptions opt;
  opt.scope = "all";
  opt.seeds = 25;
  opt.fd.step = 1e-5;
  opt.fd.tolerance = 1e-4;
  const auto t0 = Clock::now();
  const auto results = run_gradcheck(opt);
  const double secs = seconds_since(t0);
  Outcome o;
  double worst = 0;
  for (const auto& r : results) {
    o.pass = o.pass && r.passed && r.max_rel_error <= 1e-4;
    worst = std::max(worst, r.max_rel_error);
    o.detail += r.loss + "=" + fmt("%.2e", r.max_rel_error) + " ";
  }
  for (const char* need : {"L_g", "L_d", "L_c", "L_e", "L_fc", "anchor", "L_ec"})
    o.pass = o.pass && std::any_of(results.begin(), results.end(), [&](const auto& r) { return r.loss == need; });
  o.pass = o.pass && secs < 60.0;
  o.detail += "| worst " + fmt("%.2e", worst) + " <= 1e-4, " + fmt("%.2f", secs) + " s < 60 s";
  return o;
}

// 2. MMD estimators against explicit loops
Outcome mmd_estimators() {
  Rng rng(20);
  double worst = 0, self = 0;
  for (int t = 0; t < 50; ++t) {
    const Index n = 2 + static_cast<Index>(rng.below(63)), m = 2 + static_cast<Index>(rng.below(63));
    const Index d = 1 + static_cast<Index>(rng.below(8));
    const Matrix a = oracle::random_matrix(rng, n, d), b = oracle::random_matrix(rng, m, d, 1.5);
    const auto bank = median_heuristic_bank(a, b, 5, 2.0);
    worst = std::max(worst, std::abs(mmd_sq_biased(a, b, bank) - oracle::mmd_biased_loops(a, b, bank.bandwidths, bank.weights)));
    worst = std::max(worst, std::abs(mmd_sq_unbiased(a, b, bank) - oracle::mmd_unbiased_loops(a, b, bank.bandwidths, bank.weights)));
    self = std::max(self, std::abs(mmd_sq_biased(a, a, bank)));
  }
  return {worst <= 1e-12 && self <= 1e-12,
          "max |estimator - loops| " + fmt("%.2e", worst) + " <= 1e-12, max mmd(X,X) " + fmt("%.2e", self) + " <= 1e-12 over 50 instances"};
}

// 3. generator initialization
Outcome initialization() {
  double wz_err = 0, norm_err = 0;
  bool centroids_exact = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SyntheticDomainConfig sc;
    sc.class_count = 5;
    sc.feature_dim = 7;
    sc.samples_per_class = 9;
    sc.target_samples_per_class = 2;
    sc.rotation_degrees = {15};
    sc.seed = seed;
    const auto ds = synthesize_domain_pair(sc).source;
    const Index dz = 4;
    const auto g = init_generator(ds, dz, 0.2);

    for (int k = 0; k < 5; ++k) {
      Vector c = Vector::Zero(7);
      Index count = 0;
      for (Index i = 0; i < ds.size(); ++i)
        if ((*ds.labels)[static_cast<std::size_t>(i)] == k) {
          c += ds.features.row(i).transpose();
          ++count;
        }
      c /= static_cast<double>(count);
      centroids_exact = centroids_exact && Vector(g.w_y * one_hot(k, 5)) == c;
    }
    const auto eig = oracle::jacobi_eigenvalues(oracle::covariance_loops(ds.features));
    for (Index j = 0; j < dz; ++j) wz_err = std::max(wz_err, std::abs(g.w_z.col(j).norm() - eig[static_cast<std::size_t>(j)]));

    Rng rng(seed + 100);
    for (int t = 0; t < 20; ++t) {
      const double beta = rng.uniform(0.1, 50.0);
      Vector z(dz);
      for (Index i = 0; i < dz; ++i) z[i] = rng.uniform(-1.0, 1.0);
      const Vector x = generator_forward(g, z, one_hot(static_cast<int>(rng.below(5)), 5), beta);
      norm_err = std::max(norm_err, std::abs(x.norm() - beta));
    }
  }
  return {centroids_exact && wz_err <= 1e-8 && norm_err <= 1e-10,
          std::string("W_y one_hot == centroid ") + (centroids_exact ? "exact" : "NOT exact") + ", max | |W_z col| - eigenvalue | " +
              fmt("%.2e", wz_err) + " <= 1e-8, max | |G| - beta | " + fmt("%.2e", norm_err) + " <= 1e-10"};
}

// 4. cross-task averages of the published rows, through the report pipeline
Outcome table_rows() {
  std::vector<MetricsReport> reports;
  for (const auto& p : find_reports({fs::path(GFCA_FIXTURE_DIR) / "table1"})) reports.push_back(load_report(p));
  const auto table = aggregate_reports(reports);
  double gfca = NAN, resnet = NAN;
  for (const auto& row : table.rows) {
    if (row.mode == "gfca") gfca = row.avg_l;
    if (row.mode == "resnet-50") resnet = row.avg_l;
  }
  const std::vector<double> direct{71.3, 80.3, 90.5, 74.9, 52.8, 55.8};
  const double direct_avg = cross_task_average(direct);
  const bool ok = std::abs(gfca - 70.9) <= 0.05 && std::abs(resnet - 33.2) <= 0.05 && std::abs(direct_avg - 70.9) <= 0.05;
  return {ok, "gfca " + fmt("%.3f", gfca) + " (70.9), resnet-50 " + fmt("%.3f", resnet) + " (33.2), tol 0.05"};
}

// The synthetic benchmark behind criteria 5-7.
struct BenchRun {
  double few = 0, overall = 0, ratio = 0;
  bool sil_win = false;
};

constexpr int kBenchSeeds = 10;
const char* const kBenchModes[] = {"gfca", "mmd-only", "source-only", "gfca-wofc"};

std::map<std::string, std::vector<BenchRun>> bench;
double bench_seconds = 0;

void run_benchmark() {
  bench.clear();
  const auto t0 = Clock::now();
  for (const char* mode : kBenchModes) {
    for (int s = 0; s < kBenchSeeds; ++s) {
      SyntheticDomainConfig sc;
      sc.class_count = 10;
      sc.feature_dim = 32;
      sc.mean_scale = 0.6;
      sc.mean_offset = 3.0;
      sc.noise_std = 0.6;
      sc.rotation_degrees = {30, 30};
      sc.translation = std::vector<double>(32, 1.0);
      sc.samples_per_class = 200;
      sc.target_samples_per_class = 100;
      sc.seed = 1000 + static_cast<std::uint64_t>(s);
      const auto pair = synthesize_domain_pair(sc);
      const auto protocol = FewShotProtocol::make(10, {0, 1, 2}, 3, 2000 + static_cast<std::uint64_t>(s));

      TrainConfig cfg;
      cfg.mode = parse_mode(mode);
      cfg.seed = static_cast<std::uint64_t>(s);
      cfg.hidden_dims = {64, 64};
      cfg.pretrain_steps = 300;
      cfg.main_steps = 1500;
      cfg.fake_weight = 0.5;
      cfg.lr_ec = 3e-3;
      const auto res = run_experiment(cfg, pair.source, pair.target, protocol);
      const auto& r = res.report;
      BenchRun b{r.few_shot_accuracy, r.overall_accuracy, r.fc_ratio(), false};
      if (r.silhouette.train_few_shot && r.silhouette.train_few_shot_synthetic)
        b.sil_win = *r.silhouette.train_few_shot_synthetic >= *r.silhouette.train_few_shot;
      bench[mode].push_back(b);
    }
  }
  bench_seconds = seconds_since(t0);
}

// The benchmark runs once; criteria 5-7 read its results back from this file.
const fs::path kBenchCache = GFCA_ACCEPTANCE_CACHE;

void save_benchmark() {
  nlohmann::json j;
  j["seconds"] = bench_seconds;
  for (const auto& [mode, runs] : bench)
    for (const auto& b : runs) j["runs"][mode].push_back({{"few", b.few}, {"overall", b.overall}, {"ratio", b.ratio}, {"sil_win", b.sil_win}});
  std::ofstream(kBenchCache) << j.dump(2) << "\n";
}

void load_benchmark() {
  if (!bench.empty()) return;
  std::ifstream is(kBenchCache);
  if (!is) throw std::runtime_error("no benchmark results at " + kBenchCache.string());
  const auto j = nlohmann::json::parse(is);
  bench_seconds = j.at("seconds").get<double>();
  for (const auto& [mode, runs] : j.at("runs").items())
    for (const auto& r : runs)
      bench[mode].push_back({r.at("few").get<double>(), r.at("overall").get<double>(), r.at("ratio").get<double>(), r.at("sil_win").get<bool>()});
  for (const char* mode : kBenchModes)
    if (bench[mode].size() != static_cast<std::size_t>(kBenchSeeds)) throw std::runtime_error(std::string("incomplete benchmark for ") + mode);
}


double mean_of(const std::string& mode, double BenchRun::*field) {
  double s = 0;
  for (const auto& b : bench.at(mode)) s += b.*field;
  return s / static_cast<double>(bench.at(mode).size());
}

bool within(double v, double centre, double slack) { return std::abs(v - centre) <= slack; }

// 5. accuracy ordering on the synthetic shift
Outcome benchmark_accuracy() {
  load_benchmark();
  const double g = mean_of("gfca", &BenchRun::few), m = mean_of("mmd-only", &BenchRun::few), s = mean_of("source-only", &BenchRun::few);
  const double go = mean_of("gfca", &BenchRun::overall), mo = mean_of("mmd-only", &BenchRun::overall);
  // Margins observed during calibration, each held to +-5 points.
  const bool ordered = g > m && m > s;
  const bool overall = go >= mo - 1.0;
  const bool margins = within(g - m, 4.46, 5.0) && within(m - s, 19.74, 5.0) && within(go - mo, 0.74, 5.0);
  const bool fast = bench_seconds < 600.0;
  std::string d = "few-shot gfca " + fmt("%.2f", g) + " > mmd-only " + fmt("%.2f", m) + " > source-only " + fmt("%.2f", s) +
                  "; overall gfca " + fmt("%.2f", go) + " >= mmd-only " + fmt("%.2f", mo) + " - 1; margins " + fmt("%.2f", g - m) +
                  " (4.46+-5), " + fmt("%.2f", m - s) + " (19.74+-5), " + fmt("%.2f", go - mo) + " (0.74+-5); " +
                  fmt("%.0f", bench_seconds) + " s < 600 s";
  return {ordered && overall && margins && fast, d};
}

// 6. few-shot weight norms relative to the normal-class mean
Outcome weight_norms() {
  load_benchmark();
  bool gfca_in = true;
  for (const auto& b : bench.at("gfca")) gfca_in = gfca_in && b.ratio >= 0.8 && b.ratio <= 1.25;
  int above = 0;
  for (const auto& b : bench.at("gfca-wofc")) above += b.ratio > 1.25;
  const double wofc = mean_of("gfca-wofc", &BenchRun::ratio);
  // Without the FC term the few-shot weights grow past the interval.
  return {gfca_in && wofc > 1.25, "gfca ratio " + fmt("%.3f", mean_of("gfca", &BenchRun::ratio)) + " (every seed in [0.8, 1.25]: " +
                                      (gfca_in ? "yes" : "no") + "), gfca-wofc ratio " + fmt("%.3f", wofc) + " > 1.25 (" +
                                      std::to_string(above) + "/10 seeds above)"};
}

// 7. silhouette against brute force, then the augmentation trend
Outcome silhouette() {
  load_benchmark();
  Rng rng(70);
  double worst = 0;
  for (int t = 0; t < 30; ++t) {
    const Index n = 3 + static_cast<Index>(rng.below(40)), d = 2 + static_cast<Index>(rng.below(6));
    const Matrix x = oracle::random_matrix(rng, n, d);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (auto& v : y) v = static_cast<int>(rng.below(4));
    y[0] = 0;
    y[1] = 1;
    worst = std::max(worst, std::abs(silhouette_cosine(x, y) - oracle::silhouette_loops(x, y)));
  }
  int wins = 0;
  for (const auto& b : bench.at("gfca")) wins += b.sil_win;
  return {worst <= 1e-10 && wins >= 7, "max |silhouette - loops| " + fmt("%.2e", worst) + " <= 1e-10; few-shot silhouette with synthetic >= without in " +
                                           std::to_string(wins) + "/10 seeds (>= 7)"};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch() {
  const fs::path p = fs::temp_directory_path() / "gfca_acceptance";
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const fs::path kSmoke = fs::path(GFCA_FIXTURE_DIR) / "smoke" / "experiment.json";

// 8. identical configuration, identical report bytes
Outcome determinism() {
  const auto dir = scratch();
  std::ostringstream out, err;
  const int a = cmd_train(kSmoke, {"output_dir=" + (dir / "a").string()}, {}, out, err);
  const int b = cmd_train(kSmoke, {"output_dir=" + (dir / "b").string()}, {}, out, err);
  const auto ja = slurp(dir / "a" / RunFiles::kMetricsJson), jb = slurp(dir / "b" / RunFiles::kMetricsJson);
  return {a == 0 && b == 0 && !ja.empty() && ja == jb,
          "exit " + std::to_string(a) + "/" + std::to_string(b) + ", metrics.json " + std::to_string(ja.size()) + " bytes, " +
              (ja == jb ? "byte-identical" : "DIFFERENT") + (err.str().empty() ? "" : "; " + err.str())};
}

// 9. feature-file smoke run
Outcome smoke() {
  const auto dir = scratch();
  std::ostringstream out, err;
  const auto t0 = Clock::now();
  const int rc = cmd_train(kSmoke, {"output_dir=" + dir.string()}, {}, out, err);
  const double secs = seconds_since(t0);
  const auto r = load_report(dir / RunFiles::kMetricsJson);
  return {rc == 0 && secs < 30.0, "64-sample feature files, exit " + std::to_string(rc) + ", " + fmt("%.2f", secs) +
                                      " s < 30 s, overall accuracy " + fmt("%.1f", r.overall_accuracy)};
}

struct Criterion {
  int id;
  const char* name;
  Outcome (*body)();
};

const Criterion kCriteria[] = {
    {1, "gradient check", gradients},     {2, "mmd estimators", mmd_estimators}, {3, "initialization", initialization},
    {4, "table averages", table_rows},    {5, "benchmark accuracy", benchmark_accuracy},
    {6, "weight-norm fairness", weight_norms}, {7, "silhouette", silhouette},  {8, "determinism", determinism},
    {9, "smoke run", smoke},
};

}  // namespace

// No argument: run the benchmark and every criterion. "benchmark": only run
// and cache the benchmark. N: criterion N alone (5-7 read the cache).
int main(int argc, char** argv) {
  const std::string arg = argc > 1 ? argv[1] : "all";
  try {
    if (arg == "all" || arg == "benchmark") {
      run_benchmark();
      save_benchmark();
      std::printf("benchmark: %d seeds x %zu modes in %.0f s -> %s\n", kBenchSeeds, std::size(kBenchModes), bench_seconds,
                  kBenchCache.string().c_str());
      if (arg == "benchmark") return 0;
    }
  } catch (const std::exception& e) {
    std::printf("FAIL benchmark: %s\n", e.what());
    return 1;
  }
  int ran = 0;
  for (const auto& c : kCriteria)
    if (arg == "all" || arg == std::to_string(c.id)) {
      report(c.id, c.name, c.body);
      ++ran;
    }
  if (ran == 0) {
    std::printf("unknown criterion '%s'\n", arg.c_str());
    return 2;
  }
  if (arg == "all") std::printf("%s: %d of 9 criteria failed\n", failures == 0 ? "PASS" : "FAIL", failures);
  return failures == 0 ? 0 : 1;
}
