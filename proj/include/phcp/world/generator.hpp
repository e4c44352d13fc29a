#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "phcp/world/lidar.hpp"
#include "phcp/world/types.hpp"

namespace phcp::world {

enum class FamilyPolicy {
  AllHeterogeneous,  // every collaborator uses a non-ego family
  Random,            // each collaborator draws uniformly from all registered families
  Homogeneous,       // everyone uses the ego family
};

struct WorldConfig {
  GridSpec grid;
  LidarConfig lidar;
  int min_objects = 6;
  int max_objects = 9;
  int min_agents = 2;  // including ego
  int max_agents = 3;
  int shots = 5;          // k, support frames
  int query_frames = 10;  // frames evaluated after the support set
  int horizon_frames = 20;  // placement constraints hold for this many frames
  double narrow_view_fraction = 0.5;  // share of objects kept outside the ego FoV
  double max_speed = 0.3;             // meters per frame
  double max_overlap_iou = 0.0;       // pairwise limit at every frame (<= 0.3)
  double object_length_min = 3.8, object_length_max = 4.6;
  double object_width_min = 1.7, object_width_max = 2.0;
  double heading_jitter = 0.12;  // radians around the four lane headings
  Pose ego_pose{};
  double ego_range = 14.0;
  double ego_fov = 2.0943951023931953;
  double agent_range = 14.0;
  double agent_fov = 2.0943951023931953;
  double agent_radius_min = 6.0, agent_radius_max = 10.0;
  std::string ego_family = "lp";
  std::vector<std::string> collaborator_families{"ls"};
  FamilyPolicy family_policy = FamilyPolicy::AllHeterogeneous;
  int max_retries = 2000;
  int min_visible_rays = 3;  // rays needed for an object to count as observed
};

void validate(const WorldConfig& cfg);

/// Deterministic function of (config, seed). The scenario holds shots support
/// frames (timestamps 0..k-1) followed by query_frames query frames taken from
/// the end of the horizon. Placement constraints are checked over every
/// horizon timestamp, so runs that differ only in k share layout and query
/// frames.
Scenario generate_scenario(const WorldConfig& cfg, std::uint64_t seed,
                           const std::string& scenario_id = "");

/// True if the object's center lies outside the agent's sensing sector.
bool outside_fov(const AgentSpec& agent, const Pose& pose, const ObjectBox& box);

/// Objects seen by at least `min_rays` noise-free rays from any agent,
/// returned in the ego frame (agent index 0).
std::vector<ObjectBox> observed_objects(const Scenario& scenario, const Frame& frame,
                                        const LidarConfig& lidar, int min_rays);
/// As above, restricted to the listed agents.
std::vector<ObjectBox> observed_objects(const Scenario& scenario, const Frame& frame,
                                        const LidarConfig& lidar, int min_rays,
                                        const std::vector<int>& agent_ids);

/// Per-(scenario, timestamp, agent) noise seed used by every renderer call.
std::uint64_t noise_seed(const Scenario& scenario, int timestamp, int agent_id);

/// Observations of every agent (in Scenario::agents order) on the ego grid.
/// `frame_index` indexes Scenario::frames.
std::vector<Observation> render_frame(const Scenario& scenario, int frame_index,
                                      const LidarConfig& lidar);

}  // namespace phcp::world
