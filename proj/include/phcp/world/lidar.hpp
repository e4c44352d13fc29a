#pragma once

#include <cstdint>
#include <vector>

#include "phcp/world/types.hpp"

namespace phcp::world {

/// Toy multi-beam LiDAR. Horizontal rays are cast across the agent's field of
/// view; each ray stops at the first box edge it meets. Each vertical beam of
/// that ray then returns either the object (if its height at the hit range lies
/// within the object's height), the ground, or nothing.
struct LidarConfig {
  double angular_resolution_deg = 0.2;
  int beams = 32;
  double elevation_min_deg = -24.0;
  double elevation_max_deg = 4.0;
  double sensor_height = 1.8;
  double object_height = 1.5;
  double noise_sigma = 0.05;  // meters, horizontal, object returns only

  bool operator==(const LidarConfig&) const = default;
};

struct LidarPoint {
  float x, y, z, intensity;  // global frame; intensity 1 for objects, 0.25 for ground
};

inline constexpr float kObjectIntensity = 1.0F;
inline constexpr float kGroundIntensity = 0.25F;

struct Sweep {
  int agent_id = 0;
  std::vector<LidarPoint> points;
};

struct RayHit {
  int object = -1;  // index into the frame's objects, -1 for no hit
  double range = 0.0;
};

/// First box edge met by a ray from `origin` along unit `dir`, within `max_range`.
RayHit cast_ray(const std::vector<ObjectBox>& objects, Vec2 origin, Vec2 dir, double max_range);

/// Number of horizontal rays whose first hit is each object (noise-free).
std::vector<int> visible_ray_counts(const Frame& frame, const AgentSpec& agent, const Pose& pose,
                                    const LidarConfig& cfg);

Sweep capture_sweep(const Frame& frame, const AgentSpec& agent, const Pose& pose,
                    const LidarConfig& cfg, std::uint64_t noise_seed);

/// Rasterizes object returns (intensity > 0.5) into the ego-frame grid.
Observation rasterize(const Sweep& sweep, const GridSpec& grid, const Pose& ego_pose);

/// capture_sweep followed by rasterize.
Observation render_observation(const Frame& frame, const AgentSpec& agent, const Pose& pose,
                               const GridSpec& grid, const Pose& ego_pose, const LidarConfig& cfg,
                               std::uint64_t noise_seed);

}  // namespace phcp::world
