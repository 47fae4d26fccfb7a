#ifndef GFCA_CLI_HPP
#define GFCA_CLI_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "gfca/checkpoint.hpp"
#include "gfca/config.hpp"
#include "gfca/dataset_io.hpp"
#include "gfca/error.hpp"
#include "gfca/eval.hpp"
#include "gfca/gradcheck.hpp"
#include "gfca/trainer.hpp"

extern char** environ;

namespace gfca {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

namespace fs = std::filesystem;

inline std::map<std::string, std::string> current_environment() {
  std::map<std::string, std::string> env;
  for (char** e = environ; e && *e; ++e) {
    const std::string kv(*e);
    const auto eq = kv.find('=');
    if (eq != std::string::npos) env.emplace(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return env;
}

/// Runs `body`, mapping exceptions to exit codes: configuration problems
/// give 2, everything else 1.
template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

namespace cli_detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw LoadError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw LoadError("write failed for " + path.string());
}

inline void make_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("output_dir", "cannot create " + dir.string());
  const fs::path probe = dir / ".gfca-write-probe";
  {
    std::ofstream os(probe);
    if (!os) throw ConfigError("output_dir", dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

inline nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(m.row(i).data(), m.row(i).data() + m.cols());
    rows.push_back(r);
  }
  return rows;
}

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace cli_detail

/// Resolved form of a config: mode contract applied, paths absolute.
inline ExperimentConfig resolve_experiment(ExperimentConfig e) {
  e.train = e.train.resolved();
  if (e.source_path) e.source_path = fs::absolute(*e.source_path).lexically_normal().string();
  if (e.target_path) e.target_path = fs::absolute(*e.target_path).lexically_normal().string();
  return e;
}

// ---------------------------------------------------------------------------
// train

/// Files written by cmd_train into the output directory.
struct RunFiles {
  static constexpr const char* kConfig = "resolved_config.json";
  static constexpr const char* kMetricsJson = "metrics.json";
  static constexpr const char* kMetricsCsv = "metrics.csv";
  static constexpr const char* kLog = "train_log.jsonl";
  static constexpr const char* kCheckpoint = "checkpoint.bin";
  static constexpr const char* kDiagnostic = "diagnostic.json";
};

inline int cmd_train(const fs::path& config_path, const std::vector<std::string>& overrides,
                     const std::map<std::string, std::string>& env, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig e = resolve_experiment(load_experiment_config(config_path, environment_overrides(env), overrides));
    const fs::path dir(e.output_dir);
    cli_detail::make_output_dir(dir);
    const nlohmann::json resolved = e.to_json();
    cli_detail::write_text(dir / RunFiles::kConfig, resolved.dump(2) + "\n");

    const ExperimentData data = load_experiment_data(e);
    const FewShotProtocol protocol = experiment_protocol(e, data.source.class_count);

    std::ofstream log(dir / RunFiles::kLog, std::ios::binary);
    if (!log) throw LoadError("cannot open " + (dir / RunFiles::kLog).string());
    const StepObserver observer = [&log](const StepLosses& s) { log << s.to_json().dump() << '\n'; };

    ExperimentResult res;
    try {
      res = run_experiment(e.train, data.source, data.target, protocol, observer);
    } catch (const TrainingAborted& a) {
      const fs::path diag = dir / RunFiles::kDiagnostic;
      nlohmann::json j{{"error", a.what()}, {"losses", a.losses().to_json()}};
      cli_detail::write_text(diag, j.dump(2) + "\n");
      err << "training aborted: " << a.what() << "\ndiagnostics written to " << diag.string() << '\n';
      return kExitRuntime;
    }
    log.close();

    MetricsReport& r = res.report;
    r.task = e.task;
    r.config = e.to_json(false);
    for (const auto& f : e.report_formats) {
      if (f == "json") cli_detail::write_text(dir / RunFiles::kMetricsJson, report_json_text(r));
      if (f == "csv") cli_detail::write_text(dir / RunFiles::kMetricsCsv, report_csv(r));
    }
    save_checkpoint(res.state.checkpoint(), dir / RunFiles::kCheckpoint);
    out << r.mode << " " << r.task << " seed " << r.seed << ": few-shot " << cli_detail::fixed(r.few_shot_accuracy, 2) << "  normal "
        << cli_detail::fixed(r.normal_accuracy, 2) << "  overall " << cli_detail::fixed(r.overall_accuracy, 2) << "  -> "
        << dir.string() << '\n';
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// synth

/// Reads the "synthetic" object and "output_dir" of a config file. Other
/// keys are ignored, so an experiment config doubles as a synth config.
inline int cmd_synth(const fs::path& config_path, const std::vector<std::string>& overrides,
                     const std::map<std::string, std::string>& env, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    nlohmann::json j = read_json_file(config_path, "config");
    apply_overrides(j, environment_overrides(env));
    apply_overrides(j, overrides);
    if (!j.contains("synthetic")) throw ConfigError("synthetic", "missing synthetic config");
    const SyntheticDomainConfig sc = config_detail::parse_synthetic(j.at("synthetic"));
    const fs::path dir(j.contains("output_dir") ? config_detail::string(j.at("output_dir"), "output_dir") : "gfca-synth");
    cli_detail::make_output_dir(dir);

    const SyntheticDomainPair pair = synthesize_domain_pair(sc);
    for (const auto& [name, ds] : {std::pair<std::string, const DomainDataset*>{"source", &pair.source}, {"target", &pair.target}}) {
      save_features_csv(*ds, dir / (name + ".csv"));
      save_features_binary(*ds, dir / (name + ".bin"));
    }
    const nlohmann::json truth{{"source_means", cli_detail::matrix_json(pair.truth.source_means)},
                               {"target_means", cli_detail::matrix_json(pair.truth.target_means)},
                               {"rotation", cli_detail::matrix_json(pair.truth.rotation)},
                               {"translation", std::vector<double>(pair.truth.translation.data(),
                                                                   pair.truth.translation.data() + pair.truth.translation.size())},
                               {"class_count", sc.class_count},
                               {"feature_dim", sc.feature_dim},
                               {"seed", sc.seed}};
    cli_detail::write_text(dir / "ground_truth.json", truth.dump(2) + "\n");
    out << "wrote " << pair.source.size() << " source and " << pair.target.size() << " target rows to " << dir.string() << '\n';
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// gradcheck

inline int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto results = run_gradcheck(opt);
    bool ok = true;
    for (const auto& r : results) {
      char line[256];
      std::snprintf(line, sizeof line, "%-7s max rel error %.3e  worst %s(%ld,%ld) seed %d  checked %zu excluded %zu  %s", r.loss.c_str(),
                    r.max_rel_error, r.worst.param.c_str(), static_cast<long>(r.worst.row), static_cast<long>(r.worst.col),
                    r.worst_seed, r.checked, r.excluded, r.passed ? "ok" : "FAILED");
      out << line << '\n';
      ok = ok && r.passed;
    }
    if (opt.inject_fault) out << "(fault injection was on)\n";
    return ok ? kExitOk : kExitRuntime;
  });
}

// ---------------------------------------------------------------------------
// report

struct CellStats {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation; 0 for a single run
  int n = 0;
};

inline CellStats cell_stats(const std::vector<double>& v) {
  CellStats s;
  s.n = static_cast<int>(v.size());
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

/// One row per mode, one column per task; Avg_l, Avg_n and Avg are the
/// cross-task averages of the per-task mean few-shot, normal and overall
/// accuracies.
struct ReportTable {
  std::vector<std::string> tasks;
  struct Row {
    std::string mode;
    std::map<std::string, CellStats> few_shot;  // by task
    double avg_l = 0.0;
    double avg_n = 0.0;
    double avg = 0.0;
  };
  std::vector<Row> rows;
};

inline ReportTable aggregate_reports(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw AggregationError("no metrics reports to aggregate");
  const auto& first = reports.front();
  for (const auto& r : reports) {
    if (r.class_count != first.class_count || r.few_shot_classes != first.few_shot_classes || r.shots != first.shots)
      throw AggregationError("inconsistent class protocols: " + r.mode + "/" + r.task + " differs from " + first.mode + "/" + first.task);
  }
  std::set<std::string> modes, tasks;
  for (const auto& r : reports) {
    modes.insert(r.mode);
    tasks.insert(r.task);
  }
  ReportTable t;
  t.tasks.assign(tasks.begin(), tasks.end());
  for (const auto& m : modes) {
    ReportTable::Row row;
    row.mode = m;
    std::vector<double> fl, fn, fa;
    for (const auto& task : t.tasks) {
      std::vector<double> l, n, a;
      for (const auto& r : reports)
        if (r.mode == m && r.task == task) {
          l.push_back(r.few_shot_accuracy);
          n.push_back(r.normal_accuracy);
          a.push_back(r.overall_accuracy);
        }
      if (l.empty()) continue;
      row.few_shot[task] = cell_stats(l);
      fl.push_back(cell_stats(l).mean);
      fn.push_back(cell_stats(n).mean);
      fa.push_back(cell_stats(a).mean);
    }
    row.avg_l = cross_task_average(fl);
    row.avg_n = cross_task_average(fn);
    row.avg = cross_task_average(fa);
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline std::string table_markdown(const ReportTable& t) {
  std::ostringstream os;
  os << "| Mode |";
  for (const auto& task : t.tasks) os << ' ' << task << " |";
  os << " Avg_l | Avg_n | Avg |\n|---|";
  for (std::size_t i = 0; i < t.tasks.size(); ++i) os << "---|";
  os << "---|---|---|\n";
  for (const auto& row : t.rows) {
    os << "| " << row.mode << " |";
    for (const auto& task : t.tasks) {
      auto it = row.few_shot.find(task);
      if (it == row.few_shot.end()) {
        os << "  |";
        continue;
      }
      os << ' ' << cli_detail::fixed(it->second.mean, 1);
      if (it->second.n > 1) os << " ± " << cli_detail::fixed(it->second.sd, 1);
      os << " |";
    }
    os << ' ' << cli_detail::fixed(row.avg_l, 1) << " | " << cli_detail::fixed(row.avg_n, 1) << " | " << cli_detail::fixed(row.avg, 1)
       << " |\n";
  }
  return os.str();
}

inline std::string table_csv(const ReportTable& t) {
  std::ostringstream os;
  os << "mode";
  for (const auto& task : t.tasks) os << ',' << task << ',' << task << "_sd," << task << "_n";
  os << ",Avg_l,Avg_n,Avg\n";
  for (const auto& row : t.rows) {
    os << row.mode;
    for (const auto& task : t.tasks) {
      auto it = row.few_shot.find(task);
      if (it == row.few_shot.end()) {
        os << ",,,0";
        continue;
      }
      os << ',' << io::format_double(it->second.mean) << ',' << (it->second.n > 1 ? io::format_double(it->second.sd) : "") << ','
         << it->second.n;
    }
    os << ',' << io::format_double(row.avg_l) << ',' << io::format_double(row.avg_n) << ',' << io::format_double(row.avg) << '\n';
  }
  return os.str();
}

/// metrics.json files under each argument: a report file itself, or a
/// directory searched recursively. Sorted for stable output.
inline std::vector<fs::path> find_reports(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> found;
  for (const auto& in : inputs) {
    if (fs::is_regular_file(in)) {
      found.push_back(in);
    } else if (fs::is_directory(in)) {
      for (const auto& entry : fs::recursive_directory_iterator(in))
        if (entry.is_regular_file() && entry.path().filename() == RunFiles::kMetricsJson) found.push_back(entry.path());
    } else {
      throw ConfigError("runs", "no such file or directory: " + in.string());
    }
  }
  std::sort(found.begin(), found.end());
  return found;
}

inline int cmd_report(const std::vector<fs::path>& inputs, const std::string& format, const std::optional<fs::path>& output,
                      std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (format != "md" && format != "csv") throw ConfigError("format", "expected md or csv");
    const auto paths = find_reports(inputs);
    if (paths.empty()) throw AggregationError("no " + std::string(RunFiles::kMetricsJson) + " found");
    std::vector<MetricsReport> reports;
    for (const auto& p : paths) reports.push_back(load_report(p));
    const ReportTable table = aggregate_reports(reports);
    const std::string text = format == "md" ? table_markdown(table) : table_csv(table);
    if (output) cli_detail::write_text(*output, text);
    else out << text;
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// export-embeddings

/// Re-creates the split and diagnostic synthetic set of a finished run and
/// writes encoder embeddings of every group.
inline int cmd_export_embeddings(const fs::path& run_dir, const std::optional<fs::path>& output, std::ostream& out,
                                 std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig e = parse_experiment_config(read_json_file(run_dir / RunFiles::kConfig, "run"), run_dir);
    const ExperimentData data = load_experiment_data(e);
    const FewShotProtocol protocol = experiment_protocol(e, data.source.class_count);
    const FewShotSplit split = make_few_shot_split(data.source, protocol);
    const TrainState s = state_from_checkpoint(load_checkpoint(run_dir / RunFiles::kCheckpoint));
    FakePool synth;
    if (s.gen.w_z.size() > 0)
      synth = synthesize_pool(s, Rng(e.train.seed).split(detail::kEvalSynthetic), e.train.eval_synthetic_per_class, data.source.class_count);
    const std::vector<EmbeddingGroup> groups{
        {"real-train", &split.train.features, *split.train.labels},
        {"real-heldout", &split.heldout.features, split.heldout.labels ? *split.heldout.labels : std::vector<int>{}},
        {"synthetic", &synth.features, synth.labels},
        {"target", &data.target.features, data.target.labels ? *data.target.labels : std::vector<int>{}}};
    const fs::path path = output ? *output : run_dir / "embeddings.csv";
    const Index rows = export_embeddings(s.enc, groups, path);
    out << "wrote " << rows << " embedded rows to " << path.string() << '\n';
    return kExitOk;
  });
}

}  // namespace gfca

#endif  // GFCA_CLI_HPP
