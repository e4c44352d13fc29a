#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "phcp/experiment/pretrain.hpp"
#include "phcp/percept/model.hpp"
#include "phcp/protocol/session.hpp"
#include "phcp/world/generator.hpp"

namespace phcp::experiment {

inline constexpr int kExperimentSchemaVersion = 1;

struct SessionSettings {
  std::size_t adapter_reduction = 4;
  protocol::AdapterKeying keying = protocol::AdapterKeying::Agent;
  protocol::StageOneEgo stage_one_ego = protocol::StageOneEgo::Solo;
  int min_visible_rays = 3;
  percept::DecodeConfig decode;
};

/// One experiment. Defaults give the 8-scenario, 5-seed toy suite with k=5 and
/// hard pseudo-labels at 0.5. The JSON form is documented in README.md.
struct ExperimentConfig {
  world::WorldConfig world;
  std::vector<percept::EncoderFamily> families;  // defaults: lp and ls
  int shots = 5;                                 // k; world.shots follows it
  selftrain::TrainConfig train;                  // includes the pseudo-label mode and threshold
  PretrainConfig pretrain;
  SessionSettings session;
  int scenarios = 8;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<protocol::Mode> modes{protocol::Mode::Direct, protocol::Mode::HomogOracle, protocol::Mode::Phcp};
  std::string output_dir;  // empty: $PHCP_OUT, else ./phcp-out
};

ExperimentConfig default_config();

/// Throws ConfigError on malformed text, a wrong schema or version, unknown
/// keys, wrong types or invalid values. Missing keys keep their defaults.
ExperimentConfig config_from_json(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Full document including every default.
std::string config_to_json(const ExperimentConfig& cfg);

void validate(const ExperimentConfig& cfg);

percept::FamilyRegistry family_registry(const ExperimentConfig& cfg);

/// 16 hex digits over the canonical JSON, output_dir excluded.
std::string fingerprint(const ExperimentConfig& cfg);
/// Fingerprints of the parts that determine the scenario suite and the
/// pretrained zoo, used to detect stale artifacts.
std::string data_fingerprint(const ExperimentConfig& cfg);
std::string models_fingerprint(const ExperimentConfig& cfg);

/// Session settings for one mode at the configured k and seed.
protocol::SessionConfig session_config(const ExperimentConfig& cfg, protocol::Mode mode, std::uint64_t seed);

std::filesystem::path output_root(const ExperimentConfig& cfg);

}  // namespace phcp::experiment
