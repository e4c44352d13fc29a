#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "phcp/adapter/adapter.hpp"
#include "phcp/percept/detection.hpp"
#include "phcp/protocol/message.hpp"
#include "phcp/selftrain/selftrain.hpp"
#include "phcp/world/generator.hpp"

namespace phcp::protocol {

enum class Mode { Phcp, Direct, Late, Early, HomogOracle };

const char* mode_name(Mode m);  // phcp, direct, late, early, homog
Mode parse_mode(const std::string& name);

enum class Phase { StageI, StageII, None };
const char* phase_name(Phase p);

enum class AdapterKeying { Agent, Family };
enum class StageOneEgo { Solo, LateFuse };

struct SessionConfig {
  Mode mode = Mode::Phcp;
  int shots = 5;
  selftrain::TrainConfig train;
  percept::DecodeConfig decode;
  world::LidarConfig lidar;
  int min_visible_rays = 3;  // ground truth: objects seen by any agent with this many rays
  std::size_t adapter_reduction = 4;
  AdapterKeying keying = AdapterKeying::Agent;
  StageOneEgo stage_one_ego = StageOneEgo::Solo;
  std::uint64_t seed = 1;  // adapter initialization
  bool keep_message_bytes = false;
  /// Frozen adapters by family. When nonempty in phcp mode, Stage I is
  /// skipped and every heterogeneous collaborator uses its family's adapter.
  std::map<std::string, adapter::AdapterParams> fixed_adapters;
};

struct CollaboratorState {
  int agent_id = 0;
  std::string family;
  bool heterogeneous = false;  // family differs from the ego's
  Phase phase = Phase::StageI;
  int stage_one_frames = 0;
  int training_runs = 0;
  std::string adapter_key;
};

struct TraceEntry {
  int frame = 0;  // index into Scenario::frames
  int sender = 0;
  Mode mode = Mode::Phcp;
  Phase phase = Phase::None;
  MessageKind kind = MessageKind::StageII;
  std::size_t payload_bytes = 0;
  std::string bytes;  // kept only when SessionConfig::keep_message_bytes
};

struct StepResult {
  int frame = 0;
  Phase phase = Phase::None;          // the ego's phase during this frame
  percept::DetectionSet detections;  // ego frame
};

/// The ego's side of one collaboration. Collaborators are simulated in-process
/// but everything the ego uses arrives through encoded messages.
class CollabSession {
 public:
  CollabSession(const world::Scenario& scenario, const percept::ModelZoo& zoo,
                const percept::FamilyRegistry& families, SessionConfig cfg,
                adapter::AdapterRegistry* registry = nullptr);

  void establish();
  bool established() const { return established_; }

  /// Frames must be stepped in order; in phcp mode the first k stepped frames
  /// must be the scenario's support frames.
  StepResult step(int frame_index);

  const std::vector<TraceEntry>& trace() const { return trace_; }
  const std::vector<CollaboratorState>& collaborators() const { return collabs_; }
  const adapter::AdapterRegistry& adapters() const { return *registry_; }
  const std::map<std::string, selftrain::TrainLog>& train_logs() const { return logs_; }
  const SessionConfig& config() const { return cfg_; }

 private:
  percept::FeatureMap encode_agent(std::size_t agent_index, const world::Observation& obs,
                                   const std::string& family) const;
  percept::DetectionSet predict(const std::vector<percept::FeatureMap>& candidates,
                                const percept::ModelWeights& model, int frame) const;
  Message transmit(Message msg, int frame, Phase phase);
  void train_adapters();
  std::string adapter_key(const CollaboratorState& c) const;

  const world::Scenario& scenario_;
  const percept::ModelZoo& zoo_;
  const percept::FamilyRegistry& families_;
  SessionConfig cfg_;
  adapter::AdapterRegistry own_registry_;
  adapter::AdapterRegistry* registry_;
  std::vector<CollaboratorState> collabs_;
  std::vector<selftrain::StageOneRecord> stage_one_;
  std::vector<percept::FeatureMap> ego_stage_one_;
  std::vector<TraceEntry> trace_;
  std::map<std::string, selftrain::TrainLog> logs_;
  std::map<std::string, int> training_runs_;
  bool established_ = false;
  bool trained_ = false;
  int next_frame_ = 0;
};

struct RunResult {
  std::string scenario_id;
  std::vector<int> query_frames;
  std::vector<percept::DetectionSet> predictions;  // ego frame, one per query frame
  std::vector<std::vector<ObjectBox>> ground_truth;
  std::vector<TraceEntry> trace;
  std::map<std::string, adapter::AdapterParams> adapters;  // trained, by key
  std::map<std::string, selftrain::TrainLog> train_logs;
};

/// Steps every frame of the scenario in order and keeps the query-frame
/// predictions. Throws ConfigError if phcp's k differs from |support|.
RunResult run_scenario(const world::Scenario& scenario, const percept::ModelZoo& zoo,
                       const percept::FamilyRegistry& families, const SessionConfig& cfg,
                       adapter::AdapterRegistry* registry = nullptr);

/// Ground truth for one frame: objects seen by any agent, in the ego frame.
std::vector<ObjectBox> frame_ground_truth(const world::Scenario& scenario, int frame_index,
                                          const world::LidarConfig& lidar, int min_rays);

struct PayloadRow {
  std::string mode;
  std::string phase;
  std::string kind;
  std::size_t messages = 0;
  std::size_t frames = 0;
  std::size_t total_bytes = 0;
  double bytes_per_frame = 0.0;
};

/// Mean payload bytes per frame for each (mode, phase, kind) present.
std::vector<PayloadRow> payload_report(const std::vector<TraceEntry>& trace);
std::string payload_report_csv(const std::vector<PayloadRow>& rows, const std::string& fingerprint);

}  // namespace phcp::protocol
