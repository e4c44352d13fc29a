#include "phcp/experiment/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <sstream>

#include "phcp/common/error.hpp"
#include "phcp/common/io.hpp"
#include "phcp/common/rng.hpp"
#include "phcp/percept/weights_io.hpp"
#include "phcp/protocol/trace.hpp"
#include "phcp/world/scenario_io.hpp"

namespace phcp::experiment {

using Json = nlohmann::ordered_json;

namespace {

std::string iou_label(double iou) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.1f", iou);
  return buf;
}

std::string header(const ExperimentConfig& cfg) { return "# fingerprint " + fingerprint(cfg) + "\n"; }

void put(CommandOutput& out, const std::string& name, const std::string& bytes) {
  const auto path = out.dir / name;
  write_file_atomic(path, bytes);
  out.files.push_back(path);
}

// Artifact stamp: which config fingerprint produced a directory's contents.
void write_stamp(const std::filesystem::path& dir, const std::string& kind, const std::string& fp) {
  Json j{{"schema", "phcp.stamp"}, {"version", 1}, {"kind", kind}, {"fingerprint", fp}};
  write_file_atomic(dir / "stamp.json", j.dump(2) + "\n");
}

void require_stamp(const std::filesystem::path& dir, const std::string& kind, const std::string& fp,
                   const std::string& command) {
  const auto path = dir / "stamp.json";
  if (!std::filesystem::exists(path))
    throw PrerequisiteError("missing " + kind + " under " + dir.string() + "; run `" + command + "` first");
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const nlohmann::json::exception&) {
    throw PrerequisiteError("unreadable " + path.string() + "; run `" + command + "` again");
  }
  if (j.value("fingerprint", "") != fp)
    throw PrerequisiteError(kind + " under " + dir.string() + " was produced by a different config; run `" +
                            command + "` again");
}

std::filesystem::path scenario_path(const std::filesystem::path& root, std::uint64_t seed, int index) {
  return data_dir(root) / ("seed-" + std::to_string(seed)) / (suite_scenario_id(seed, index) + ".json");
}

std::string summary_csv(const ExperimentConfig& cfg, const std::vector<const SuiteResult*>& results) {
  std::ostringstream os;
  os << header(cfg) << "metric,mode,iou,value\n";
  for (const auto* r : results) {
    for (const auto& [iou, v] : r->msap) os << "mSAP," << r->label << ',' << iou_label(iou) << ',' << eval::format_number(v) << '\n';
    for (const auto& [iou, v] : r->wsap) os << "wSAP," << r->label << ',' << iou_label(iou) << ',' << eval::format_number(v) << '\n';
  }
  return os.str();
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

ExperimentConfig with_shots(ExperimentConfig cfg, int shots) {
  cfg.shots = shots;
  cfg.world.shots = shots;
  return cfg;
}

}  // namespace

std::string suite_scenario_id(std::uint64_t seed, int index) {
  return "s" + std::to_string(seed) + "-" + std::to_string(index);
}

Suite generate_suite(const ExperimentConfig& cfg, int shots) {
  auto w = cfg.world;
  w.shots = shots;
  Suite s;
  s.seeds = cfg.seeds;
  for (auto seed : cfg.seeds) {
    auto& row = s.scenarios.emplace_back();
    for (int i = 0; i < cfg.scenarios; ++i)
      row.push_back(world::generate_scenario(w, derive_seed(seed, {static_cast<std::uint64_t>(i)}),
                                             suite_scenario_id(seed, i)));
  }
  return s;
}

SuiteResult run_suite(const ExperimentConfig& cfg, const Suite& suite, const percept::ModelZoo& zoo,
                      protocol::Mode mode, const std::string& label) {
  const auto families = family_registry(cfg);
  SuiteResult out;
  out.label = label;
  for (std::size_t s = 0; s < suite.seeds.size(); ++s) {
    std::vector<eval::ScenarioResult> results;
    const auto session = session_config(cfg, mode, suite.seeds[s]);
    for (const auto& sc : suite.scenarios[s]) {
      const auto r = protocol::run_scenario(sc, zoo, families, session);
      results.push_back(eval::evaluate_scenario(sc.scenario_id, r.predictions, r.ground_truth));
    }
    auto rep = eval::aggregate(std::move(results), label);
    rep.fingerprint = fingerprint(cfg);
    rep.seeds = {suite.seeds[s]};
    out.per_seed.push_back(std::move(rep));
  }
  const double n = static_cast<double>(out.per_seed.size());
  for (const auto& rep : out.per_seed) {
    for (const auto& [iou, v] : rep.msap) out.msap[iou] += v / n;
    for (const auto& [iou, v] : rep.wsap) out.wsap[iou] += v / n;
  }
  return out;
}

std::filesystem::path data_dir(const std::filesystem::path& root) { return root / "data"; }
std::filesystem::path models_dir(const std::filesystem::path& root) { return root / "models"; }

Suite load_suite(const ExperimentConfig& cfg, const std::filesystem::path& root) {
  require_stamp(data_dir(root), "scenario suite", data_fingerprint(cfg), "gen-data");
  Suite s;
  s.seeds = cfg.seeds;
  for (auto seed : cfg.seeds) {
    auto& row = s.scenarios.emplace_back();
    for (int i = 0; i < cfg.scenarios; ++i) row.push_back(world::load_scenario(scenario_path(root, seed, i)));
  }
  return s;
}

percept::ModelZoo load_zoo(const ExperimentConfig& cfg, const std::filesystem::path& root) {
  require_stamp(models_dir(root), "pretrained models", models_fingerprint(cfg), "pretrain");
  const auto families = family_registry(cfg);
  percept::ModelZoo zoo;
  for (const auto& id : families.ids()) {
    const auto path = models_dir(root) / (id + ".weights");
    if (!std::filesystem::exists(path))
      throw PrerequisiteError("missing weights " + path.string() + "; run `pretrain` first");
    zoo[id] = percept::load_model(path, families);
  }
  return zoo;
}

void write_manifest(const CommandOutput& out, const std::string& command, const ExperimentConfig& cfg,
                    double wall_seconds) {
  Json j;
  j["schema"] = "phcp.manifest";
  j["version"] = 1;
  j["command"] = command;
  j["fingerprint"] = fingerprint(cfg);
  j["seeds"] = cfg.seeds;
  j["wall_time_seconds"] = std::round(wall_seconds * 1000.0) / 1000.0;
  Json files = Json::array();
  for (const auto& f : out.files) files.push_back(std::filesystem::relative(f, out.dir).generic_string());
  j["outputs"] = files;
  write_file_atomic(out.dir / "manifest.json", j.dump(2) + "\n");
}

CommandOutput gen_data(const ExperimentConfig& cfg, const std::filesystem::path& root) {
  Timer t;
  CommandOutput out{data_dir(root), {}};
  const auto suite = generate_suite(cfg, cfg.shots);
  for (std::size_t s = 0; s < suite.seeds.size(); ++s)
    for (std::size_t i = 0; i < suite.scenarios[s].size(); ++i) {
      const auto path = scenario_path(root, suite.seeds[s], static_cast<int>(i));
      world::save_scenario(path, suite.scenarios[s][i]);
      out.files.push_back(path);
    }
  write_stamp(out.dir, "scenario suite", data_fingerprint(cfg));
  write_manifest(out, "gen-data", cfg, t.seconds());
  return out;
}

CommandOutput pretrain(const ExperimentConfig& cfg, const std::filesystem::path& root) {
  Timer t;
  CommandOutput out{models_dir(root), {}};
  const auto families = family_registry(cfg);
  for (const auto& id : families.ids()) {
    selftrain::TrainLog log;
    const auto model = pretrain_family(cfg.world, families, id, cfg.pretrain, &log);
    put(out, id + ".weights", percept::encode_model(model));
    put(out, id + "-train.csv", header(cfg) + log.to_csv());
  }
  write_stamp(out.dir, "pretrained models", models_fingerprint(cfg));
  write_manifest(out, "pretrain", cfg, t.seconds());
  return out;
}

CommandOutput run_modes(const ExperimentConfig& cfg, const std::filesystem::path& root,
                        const std::vector<protocol::Mode>& modes, bool write_traces,
                        std::map<std::string, SuiteResult>* results) {
  Timer t;
  const auto suite = load_suite(cfg, root);
  const auto zoo = load_zoo(cfg, root);
  const auto families = family_registry(cfg);
  CommandOutput out{root / "runs", {}};
  for (auto mode : modes) {
    const std::string name = protocol::mode_name(mode);
    if (write_traces) {
      for (std::size_t s = 0; s < suite.seeds.size(); ++s)
        for (const auto& sc : suite.scenarios[s]) {
          auto session = session_config(cfg, mode, suite.seeds[s]);
          session.keep_message_bytes = true;
          const auto r = protocol::run_scenario(sc, zoo, families, session);
          const auto files = protocol::trace_paths(out.dir / name / "traces" / sc.scenario_id);
          protocol::write_trace(files, r.trace, fingerprint(cfg));
          out.files.push_back(files.binary);
          out.files.push_back(files.index);
        }
    }
    auto r = run_suite(cfg, suite, zoo, mode, name);
    for (const auto& rep : r.per_seed) {
      const auto stem = name + "/seed-" + std::to_string(rep.seeds.front());
      put(out, stem + ".json", eval::report_to_json(rep));
      put(out, stem + ".csv", eval::report_to_csv(rep));
    }
    put(out, name + "/summary.csv", summary_csv(cfg, {&r}));
    if (results) (*results)[name] = std::move(r);
  }
  write_manifest(out, "run", cfg, t.seconds());
  return out;
}

CommandOutput ablate_shots(const ExperimentConfig& cfg, const std::filesystem::path& root,
                           std::map<int, SuiteResult>* results) {
  Timer t;
  const auto base = load_suite(cfg, root);
  const auto zoo = load_zoo(cfg, root);
  CommandOutput out{root / "ablate-shots", {}};
  std::map<int, SuiteResult> by_k;
  for (int k : kShotSweep) {
    if (k == 0) {
      by_k[k] = run_suite(cfg, base, zoo, protocol::Mode::Direct, "k=0");
      continue;
    }
    const auto c = with_shots(cfg, k);
    const auto suite = k == cfg.shots ? base : generate_suite(c, k);
    by_k[k] = run_suite(c, suite, zoo, protocol::Mode::Phcp, "k=" + std::to_string(k));
  }
  std::ostringstream os;
  os << header(cfg) << "shots,iou,msap,wsap\n";
  for (double iou : eval::kIouThresholds)
    for (int k : kShotSweep)
      os << k << ',' << iou_label(iou) << ',' << eval::format_number(by_k[k].msap.at(iou)) << ','
         << eval::format_number(by_k[k].wsap.at(iou)) << '\n';
  put(out, "shots.csv", os.str());
  write_manifest(out, "ablate-shots", cfg, t.seconds());
  if (results) *results = std::move(by_k);
  return out;
}

CommandOutput ablate_threshold(const ExperimentConfig& cfg, const std::filesystem::path& root,
                               std::map<std::string, SuiteResult>* results) {
  Timer t;
  const auto suite = load_suite(cfg, root);
  const auto zoo = load_zoo(cfg, root);
  CommandOutput out{root / "ablate-threshold", {}};
  const std::vector<std::string> columns{"0.2", "0.5", "0.7", "soft"};
  std::map<std::string, SuiteResult> by_col;
  for (const auto& col : columns) {
    auto c = cfg;
    if (col == "soft") {
      c.train.pseudo.mode = selftrain::PseudoMode::Soft;
    } else {
      c.train.pseudo.mode = selftrain::PseudoMode::Hard;
      c.train.pseudo.threshold = std::stod(col);
    }
    by_col[col] = run_suite(c, suite, zoo, protocol::Mode::Phcp, col);
  }
  std::ostringstream os;
  os << header(cfg) << "metric";
  for (const auto& col : columns) os << ',' << col;
  os << '\n';
  for (const char* metric : {"mSAP", "wSAP"})
    for (double iou : eval::kIouThresholds) {
      os << metric << '@' << iou_label(iou);
      for (const auto& col : columns) {
        const auto& r = by_col[col];
        os << ',' << eval::format_number(std::string(metric) == "mSAP" ? r.msap.at(iou) : r.wsap.at(iou));
      }
      os << '\n';
    }
  put(out, "threshold.csv", os.str());
  write_manifest(out, "ablate-threshold", cfg, t.seconds());
  if (results) *results = std::move(by_col);
  return out;
}

CommandOutput cross_matrix(const ExperimentConfig& cfg, const std::filesystem::path& root,
                           CrossMatrixResult* result) {
  Timer t;
  const auto suite = load_suite(cfg, root);
  const auto zoo = load_zoo(cfg, root);
  const auto families = family_registry(cfg);
  CommandOutput out{root / "cross-matrix", {}};
  CrossMatrixResult res;
  const std::size_t n = static_cast<std::size_t>(cfg.scenarios);
  for (int i = 0; i < cfg.scenarios; ++i) res.ids.push_back("scenario-" + std::to_string(i));
  res.mean.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t s = 0; s < suite.seeds.size(); ++s) {
    auto session = session_config(cfg, protocol::Mode::Phcp, suite.seeds[s]);
    session.keying = protocol::AdapterKeying::Family;
    std::vector<std::vector<double>> raw(n, std::vector<double>(n, 0.0));
    std::vector<double> trained(n);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& train_sc = suite.scenarios[s][i];
      ids.push_back(train_sc.scenario_id);
      const auto r = protocol::run_scenario(train_sc, zoo, families, session);
      trained[i] = eval::evaluate_scenario(train_sc.scenario_id, r.predictions, r.ground_truth).ap.at(0.5);
      auto fixed = session;
      for (const auto& [key, params] : r.adapters) fixed.fixed_adapters[key.substr(std::string("family-").size())] = params;
      for (std::size_t j = 0; j < n; ++j) {
        const auto& sc = suite.scenarios[s][j];
        const auto rj = protocol::run_scenario(sc, zoo, families, fixed);
        raw[i][j] = eval::evaluate_scenario(sc.scenario_id, rj.predictions, rj.ground_truth).ap.at(0.5);
      }
    }
    const auto norm = eval::normalize_cross_matrix(raw, ids);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) res.mean[i][j] += norm[i][j] / static_cast<double>(suite.seeds.size());
    const auto stem = "seed-" + std::to_string(suite.seeds[s]);
    put(out, stem + "-raw.csv", eval::matrix_to_csv(raw, ids, fingerprint(cfg)));
    put(out, stem + ".csv", eval::matrix_to_csv(norm, ids, fingerprint(cfg)));
    res.raw.push_back(std::move(raw));
    res.normalized.push_back(norm);
    res.trained_ap.push_back(std::move(trained));
  }
  // Averaging normalized matrices keeps the diagonal at exactly 1.
  for (std::size_t i = 0; i < n; ++i) res.mean[i][i] = 1.0;
  res.median = eval::off_diagonal_median(res.mean);
  put(out, "matrix.csv", eval::matrix_to_csv(res.mean, res.ids, fingerprint(cfg)));
  put(out, "matrix-plot.csv", eval::matrix_plot_data(res.mean, fingerprint(cfg)));
  put(out, "summary.csv", header(cfg) + "statistic,value\noff_diagonal_median," + eval::format_number(res.median) + "\n");
  write_manifest(out, "cross-matrix", cfg, t.seconds());
  if (result) *result = std::move(res);
  return out;
}

CommandOutput bandwidth(const ExperimentConfig& cfg, const std::filesystem::path& root,
                        std::vector<protocol::PayloadRow>* rows) {
  Timer t;
  const auto suite = load_suite(cfg, root);
  const auto zoo = load_zoo(cfg, root);
  const auto families = family_registry(cfg);
  CommandOutput out{root / "bandwidth", {}};
  std::vector<protocol::TraceEntry> trace;
  for (auto mode : {protocol::Mode::Early, protocol::Mode::Phcp, protocol::Mode::Late}) {
    const auto session = session_config(cfg, mode, suite.seeds.front());
    for (std::size_t i = 0; i < suite.scenarios.front().size(); ++i) {
      auto r = protocol::run_scenario(suite.scenarios.front()[i], zoo, families, session);
      // Frame indices restart in every scenario; offset them so frames stay distinct.
      for (auto& e : r.trace) e.frame += static_cast<int>(i) * 100000;
      trace.insert(trace.end(), r.trace.begin(), r.trace.end());
    }
  }
  auto report = protocol::payload_report(trace);
  put(out, "bandwidth.csv", protocol::payload_report_csv(report, fingerprint(cfg)));
  write_manifest(out, "bandwidth", cfg, t.seconds());
  if (rows) *rows = std::move(report);
  return out;
}

}  // namespace phcp::experiment
