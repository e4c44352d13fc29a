#include "phcp/world/lidar.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "phcp/common/rng.hpp"

namespace phcp::world {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::size_t ray_count(double fov, double res_rad) {
  return static_cast<std::size_t>(std::floor(fov / res_rad + 1e-9)) + 1;
}

double beam_elevation(const LidarConfig& cfg, int b) {
  if (cfg.beams == 1) return cfg.elevation_min_deg * kDeg;
  return (cfg.elevation_min_deg +
          (cfg.elevation_max_deg - cfg.elevation_min_deg) * b / (cfg.beams - 1)) *
         kDeg;
}

// True if some beam of a ray returns from an object at horizontal range r.
bool any_beam_hits(const LidarConfig& cfg, double r) {
  for (int b = 0; b < cfg.beams; ++b) {
    const double z = cfg.sensor_height + r * std::tan(beam_elevation(cfg, b));
    if (z >= 0.0 && z <= cfg.object_height) return true;
  }
  return false;
}

}  // namespace

bool GridSpec::locate(Vec2 p, std::size_t& row, std::size_t& col) const {
  const double fx = (p.x - origin_x) / cell_size;
  const double fy = (p.y - origin_y) / cell_size;
  if (!(fx >= 0.0) || !(fy >= 0.0)) return false;
  const auto c = static_cast<std::size_t>(fx), r = static_cast<std::size_t>(fy);
  if (c >= width || r >= height) return false;
  row = r;
  col = c;
  return true;
}

RayHit cast_ray(const std::vector<ObjectBox>& objects, Vec2 origin, Vec2 dir, double max_range) {
  RayHit hit;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto corners = box_corners(objects[i]);
    for (int e = 0; e < 4; ++e) {
      const Vec2 p = corners[e], q = corners[(e + 1) % 4];
      const Vec2 edge = q - p;
      const double denom = cross(dir, edge);
      if (std::abs(denom) < 1e-15) continue;
      const Vec2 op = p - origin;
      const double t = cross(op, edge) / denom;
      const double s = cross(op, dir) / denom;
      if (t >= 0.0 && s >= 0.0 && s <= 1.0 && t < best) {
        best = t;
        hit.object = static_cast<int>(i);
      }
    }
  }
  if (hit.object >= 0 && best <= max_range) {
    hit.range = best;
  } else {
    hit.object = -1;
  }
  return hit;
}

std::vector<int> visible_ray_counts(const Frame& frame, const AgentSpec& agent, const Pose& pose,
                                    const LidarConfig& cfg) {
  std::vector<int> counts(frame.objects.size(), 0);
  const double res = cfg.angular_resolution_deg * kDeg;
  const std::size_t n = ray_count(agent.fov, res);
  const Vec2 origin{pose.x, pose.y};
  for (std::size_t i = 0; i < n; ++i) {
    const double a = pose.yaw - 0.5 * agent.fov + static_cast<double>(i) * res;
    const auto hit = cast_ray(frame.objects, origin, {std::cos(a), std::sin(a)}, agent.sensor_range);
    if (hit.object >= 0 && any_beam_hits(cfg, hit.range)) ++counts[hit.object];
  }
  return counts;
}

Sweep capture_sweep(const Frame& frame, const AgentSpec& agent, const Pose& pose,
                    const LidarConfig& cfg, std::uint64_t noise_seed) {
  Sweep sweep;
  sweep.agent_id = agent.agent_id;
  Rng rng(noise_seed);
  const double res = cfg.angular_resolution_deg * kDeg;
  const std::size_t n = ray_count(agent.fov, res);
  const Vec2 origin{pose.x, pose.y};
  std::vector<double> tan_e(cfg.beams);
  for (int b = 0; b < cfg.beams; ++b) tan_e[b] = std::tan(beam_elevation(cfg, b));

  for (std::size_t i = 0; i < n; ++i) {
    const double a = pose.yaw - 0.5 * agent.fov + static_cast<double>(i) * res;
    const Vec2 dir{std::cos(a), std::sin(a)};
    const auto hit = cast_ray(frame.objects, origin, dir, agent.sensor_range);
    for (int b = 0; b < cfg.beams; ++b) {
      const double ground = tan_e[b] < 0.0 ? cfg.sensor_height / -tan_e[b]
                                            : std::numeric_limits<double>::infinity();
      if (hit.object >= 0) {
        const double z = cfg.sensor_height + hit.range * tan_e[b];
        if (z >= 0.0 && z <= cfg.object_height) {
          const Vec2 p = origin + dir * hit.range;
          const double nx = cfg.noise_sigma > 0.0 ? rng.normal(0.0, cfg.noise_sigma) : 0.0;
          const double ny = cfg.noise_sigma > 0.0 ? rng.normal(0.0, cfg.noise_sigma) : 0.0;
          sweep.points.push_back({static_cast<float>(p.x + nx), static_cast<float>(p.y + ny),
                                  static_cast<float>(z), kObjectIntensity});
          continue;
        }
      }
      if (ground <= agent.sensor_range) {
        const Vec2 p = origin + dir * ground;
        sweep.points.push_back(
            {static_cast<float>(p.x), static_cast<float>(p.y), 0.0F, kGroundIntensity});
      }
    }
  }
  return sweep;
}

Observation rasterize(const Sweep& sweep, const GridSpec& grid, const Pose& ego_pose) {
  Observation obs;
  obs.agent_id = sweep.agent_id;
  obs.grid = grid;
  obs.occupancy = nd::Tensor({1, grid.height, grid.width});
  auto cells = obs.occupancy.mutable_data();
  for (const auto& p : sweep.points) {
    if (p.intensity <= 0.5F) continue;
    std::size_t r, c;
    if (grid.locate(to_local(ego_pose, {p.x, p.y}), r, c)) cells[r * grid.width + c] = 1.0;
  }
  return obs;
}

Observation render_observation(const Frame& frame, const AgentSpec& agent, const Pose& pose,
                               const GridSpec& grid, const Pose& ego_pose, const LidarConfig& cfg,
                               std::uint64_t noise_seed) {
  return rasterize(capture_sweep(frame, agent, pose, cfg, noise_seed), grid, ego_pose);
}

}  // namespace phcp::world
