#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "phcp/eval/metrics.hpp"
#include "phcp/experiment/config.hpp"

namespace phcp::experiment {

/// The scenario suite: `scenarios` scenarios per seed.
struct Suite {
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<world::Scenario>> scenarios;  // [seed][scenario]
};

std::string suite_scenario_id(std::uint64_t seed, int index);

/// Deterministic in (world config, shots, seeds). Suites that differ only in
/// shots share layouts and query frames.
Suite generate_suite(const ExperimentConfig& cfg, int shots);

/// Results of one mode over the whole suite. msap and wsap are seed means of
/// the per-seed reports.
struct SuiteResult {
  std::string label;
  std::vector<eval::Report> per_seed;
  std::map<double, double> msap;
  std::map<double, double> wsap;
};

/// Runs every scenario with session_config(cfg, mode, seed).
SuiteResult run_suite(const ExperimentConfig& cfg, const Suite& suite, const percept::ModelZoo& zoo,
                      protocol::Mode mode, const std::string& label);

/// Artifacts on disk. Each loader throws PrerequisiteError naming the command
/// to run when its input is missing or was produced under a different config.
std::filesystem::path data_dir(const std::filesystem::path& root);
std::filesystem::path models_dir(const std::filesystem::path& root);
Suite load_suite(const ExperimentConfig& cfg, const std::filesystem::path& root);
percept::ModelZoo load_zoo(const ExperimentConfig& cfg, const std::filesystem::path& root);

struct CommandOutput {
  std::filesystem::path dir;
  std::vector<std::filesystem::path> files;  // reports, excluding the manifest
};

/// Writes manifest.json (command, fingerprint, seeds, wall time, outputs).
void write_manifest(const CommandOutput& out, const std::string& command, const ExperimentConfig& cfg,
                    double wall_seconds);

CommandOutput gen_data(const ExperimentConfig& cfg, const std::filesystem::path& root);
CommandOutput pretrain(const ExperimentConfig& cfg, const std::filesystem::path& root);

/// run --mode: per-seed reports (JSON and CSV) plus a seed-averaged summary.
/// With write_traces, a message trace per scenario is written as well.
CommandOutput run_modes(const ExperimentConfig& cfg, const std::filesystem::path& root,
                        const std::vector<protocol::Mode>& modes, bool write_traces = false,
                        std::map<std::string, SuiteResult>* results = nullptr);

inline const std::vector<int> kShotSweep{0, 1, 5, 10};  // 0 is direct fusion

/// shots.csv: one row per (IoU, k), four rows per IoU.
CommandOutput ablate_shots(const ExperimentConfig& cfg, const std::filesystem::path& root,
                           std::map<int, SuiteResult>* results = nullptr);

/// threshold.csv: rows mSAP@t and wSAP@t for each IoU t, columns 0.2, 0.5,
/// 0.7 and soft.
CommandOutput ablate_threshold(const ExperimentConfig& cfg, const std::filesystem::path& root,
                               std::map<std::string, SuiteResult>* results = nullptr);

struct CrossMatrixResult {
  std::vector<std::string> ids;
  std::vector<std::vector<std::vector<double>>> raw;         // per seed
  std::vector<std::vector<std::vector<double>>> normalized;  // per seed
  std::vector<std::vector<double>> mean;                     // normalized, averaged over seeds
  double median = 0.0;                                       // off-diagonal median of `mean`
  std::vector<std::vector<double>> trained_ap;               // [seed][i] AP@0.5 of the training run itself
};

/// Per seed: one family-keyed adapter per training scenario, frozen and
/// evaluated on every scenario of that seed.
CommandOutput cross_matrix(const ExperimentConfig& cfg, const std::filesystem::path& root,
                           CrossMatrixResult* result = nullptr);

/// Per-frame payload of the early, phcp and late modes over the first seed's
/// scenarios.
CommandOutput bandwidth(const ExperimentConfig& cfg, const std::filesystem::path& root,
                        std::vector<protocol::PayloadRow>* rows = nullptr);

}  // namespace phcp::experiment
