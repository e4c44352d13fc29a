#include "phcp/world/generator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>

#include "phcp/common/error.hpp"
#include "phcp/common/rng.hpp"

namespace phcp::world {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kAgentLength = 4.5, kAgentWidth = 1.9;
constexpr double kBoundsMargin = 0.5;

bool inside_grid(const GridSpec& g, const Pose& ego, const ObjectBox& box) {
  for (const auto& c : box_corners(box)) {
    const auto p = to_local(ego, c);
    if (p.x < g.origin_x + kBoundsMargin || p.y < g.origin_y + kBoundsMargin ||
        p.x > g.origin_x + g.width * g.cell_size - kBoundsMargin ||
        p.y > g.origin_y + g.height * g.cell_size - kBoundsMargin)
      return false;
  }
  return true;
}

bool boxes_touch(const ObjectBox& a, const ObjectBox& b) { return rotated_iou(a, b) > 0.0; }

ObjectBox agent_footprint(const Pose& p) { return {p.x, p.y, kAgentLength, kAgentWidth, p.yaw}; }

ObjectBox advance(const ObjectBox& b, Vec2 vel, int t) {
  ObjectBox out = b;
  out.center_x += vel.x * t;
  out.center_y += vel.y * t;
  return out;
}

}  // namespace

void validate(const WorldConfig& cfg) {
  auto fail = [](const std::string& m) { throw ConfigError("world config: " + m); };
  if (cfg.grid.height == 0 || cfg.grid.width == 0 || !(cfg.grid.cell_size > 0.0))
    fail("grid dimensions must be positive");
  if (cfg.min_objects < 0 || cfg.max_objects < cfg.min_objects) fail("object count range invalid");
  if (cfg.min_agents < 2 || cfg.max_agents > 4 || cfg.max_agents < cfg.min_agents)
    fail("agent count range must lie within [2, 4]");
  if (cfg.shots < 0 || cfg.query_frames < 1) fail("shots must be >= 0 and query_frames >= 1");
  if (cfg.shots + cfg.query_frames > cfg.horizon_frames)
    fail("shots + query_frames exceeds horizon_frames");
  if (cfg.narrow_view_fraction < 0.0 || cfg.narrow_view_fraction > 1.0)
    fail("narrow_view_fraction must lie in [0, 1]");
  if (cfg.max_overlap_iou < 0.0 || cfg.max_overlap_iou > 0.3)
    fail("max_overlap_iou must lie in [0, 0.3]");
  if (cfg.collaborator_families.empty()) fail("collaborator_families is empty");
  if (cfg.object_length_min <= 0.0 || cfg.object_width_min <= 0.0 ||
      cfg.object_length_max < cfg.object_length_min || cfg.object_width_max < cfg.object_width_min)
    fail("object size ranges invalid");
  if (cfg.lidar.beams < 1 || !(cfg.lidar.angular_resolution_deg > 0.0)) fail("lidar config invalid");
}

bool outside_fov(const AgentSpec& agent, const Pose& pose, const ObjectBox& box) {
  const auto p = to_local(pose, {box.center_x, box.center_y});
  if (std::hypot(p.x, p.y) > agent.sensor_range) return true;
  return std::abs(std::atan2(p.y, p.x)) > 0.5 * agent.fov;
}

std::uint64_t noise_seed(const Scenario& scenario, int timestamp, int agent_id) {
  return derive_seed(scenario.seed, {0x6e6f697365ULL, static_cast<std::uint64_t>(timestamp),
                                     static_cast<std::uint64_t>(agent_id)});
}

Scenario generate_scenario(const WorldConfig& cfg, std::uint64_t seed, const std::string& scenario_id) {
  validate(cfg);
  Rng rng(derive_seed(seed, {0x776f726c64ULL}));
  Scenario sc;
  sc.scenario_id = scenario_id.empty() ? "scn-" + std::to_string(seed) : scenario_id;
  sc.seed = seed;
  sc.grid = cfg.grid;

  const Pose ego_pose = cfg.ego_pose;
  AgentSpec ego;
  ego.agent_id = 0;
  ego.pose = ego_pose;
  ego.encoder_family = cfg.ego_family;
  ego.sensor_range = cfg.ego_range;
  ego.fov = cfg.ego_fov;
  ego.ego = true;
  sc.agents.push_back(ego);

  // A layout that cannot host every object is discarded and redrawn from the
  // collaborator poses on; the error reports the constraint that failed most.
  constexpr int kLayoutAttempts = 25;
  const int n_agents = static_cast<int>(rng.uniform_int(cfg.min_agents, cfg.max_agents));
  std::vector<std::string> all_families{cfg.ego_family};
  for (const auto& f : cfg.collaborator_families)
    if (std::find(all_families.begin(), all_families.end(), f) == all_families.end())
      all_families.push_back(f);
  const int n_objects = static_cast<int>(rng.uniform_int(cfg.min_objects, cfg.max_objects));
  const int n_hidden = static_cast<int>(std::ceil(cfg.narrow_view_fraction * n_objects - 1e-9));

  std::vector<ObjectBox> initial;
  std::vector<Vec2> velocity;
  std::map<std::string, int> failures;
  int failed_object = -1;
  bool layout_ok = false;
  for (int layout = 0; layout < kLayoutAttempts && !layout_ok; ++layout) {
    sc.agents.resize(1);
    initial.clear();
    velocity.clear();
    // Collaborators sit outside the ego's view and look away from it.
    for (int id = 1; id < n_agents; ++id) {
      AgentSpec a;
      a.agent_id = id;
      a.sensor_range = cfg.agent_range;
      a.fov = cfg.agent_fov;
      bool placed = false;
      for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
        const double half = 0.5 * cfg.ego_fov + 0.3;
        const double phi = ego_pose.yaw + rng.uniform(half, 2.0 * kPi - half);
        const double r = rng.uniform(cfg.agent_radius_min, cfg.agent_radius_max);
        a.pose = {ego_pose.x + r * std::cos(phi), ego_pose.y + r * std::sin(phi),
                  wrap_angle(phi + rng.uniform(-0.6, 0.6))};
        placed = inside_grid(cfg.grid, ego_pose, agent_footprint(a.pose));
        for (const auto& other : sc.agents)
          placed = placed && std::hypot(other.pose.x - a.pose.x, other.pose.y - a.pose.y) >= 3.0;
      }
      if (!placed) throw ConfigError("infeasible placement: collaborator pose inside world bounds");
      switch (cfg.family_policy) {
        case FamilyPolicy::AllHeterogeneous:
          a.encoder_family = cfg.collaborator_families[rng.uniform_int(
              0, static_cast<std::int64_t>(cfg.collaborator_families.size()) - 1)];
          break;
        case FamilyPolicy::Random:
          a.encoder_family =
              all_families[rng.uniform_int(0, static_cast<std::int64_t>(all_families.size()) - 1)];
          break;
        case FamilyPolicy::Homogeneous: a.encoder_family = cfg.ego_family; break;
      }
      sc.agents.push_back(a);
    }
    if (n_hidden > 0 && sc.agents.size() < 2)
      throw ConfigError("infeasible placement: narrow_view_fraction needs a collaborator");

    layout_ok = true;
    for (int j = 0; j < n_objects && layout_ok; ++j) {
      const bool hidden = j < n_hidden;
      bool placed = false;
      for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
        const AgentSpec& sensor =
            hidden ? sc.agents[rng.uniform_int(1, static_cast<std::int64_t>(sc.agents.size()) - 1)]
                   : sc.agents[0];
        const double r = rng.uniform(3.0, 0.9 * sensor.sensor_range);
        const double a = sensor.pose.yaw + rng.uniform(-0.45, 0.45) * sensor.fov;
        ObjectBox box;
        box.center_x = sensor.pose.x + r * std::cos(a);
        box.center_y = sensor.pose.y + r * std::sin(a);
        box.length = rng.uniform(cfg.object_length_min, cfg.object_length_max);
        box.width = rng.uniform(cfg.object_width_min, cfg.object_width_max);
        box.yaw = wrap_angle(static_cast<double>(rng.uniform_int(0, 3)) * 0.5 * kPi +
                             rng.normal(0.0, cfg.heading_jitter));
        const double speed = rng.uniform(0.0, cfg.max_speed);
        const Vec2 vel{speed * std::cos(box.yaw), speed * std::sin(box.yaw)};

        const char* violated = nullptr;
        for (int t = 0; t < cfg.horizon_frames && !violated; ++t) {
          const auto bt = advance(box, vel, t);
          if (!inside_grid(cfg.grid, ego_pose, bt)) {
            violated = "object inside world bounds";
            break;
          }
          if (hidden && !outside_fov(sc.agents[0], ego_pose, bt)) {
            violated = "narrow-view object outside ego field of view";
            break;
          }
          for (const auto& ag : sc.agents)
            if (boxes_touch(bt, agent_footprint(ag.pose))) violated = "object clear of agents";
          for (std::size_t o = 0; o < initial.size() && !violated; ++o) {
            const double iou = rotated_iou(bt, advance(initial[o], velocity[o], t));
            if (iou > cfg.max_overlap_iou || (cfg.max_overlap_iou == 0.0 && iou > 0.0))
              violated = "pairwise object overlap limit";
          }
        }
        if (violated) {
          ++failures[violated];
          continue;
        }
        initial.push_back(box);
        velocity.push_back(vel);
        placed = true;
      }
      if (!placed) {
        layout_ok = false;
        failed_object = j;
      }
    }
  }
  if (!layout_ok) {
    auto worst = std::max_element(failures.begin(), failures.end(),
                                  [](const auto& a, const auto& b) { return a.second < b.second; });
    throw ConfigError("infeasible placement after " + std::to_string(kLayoutAttempts) + " layouts of " +
                      std::to_string(cfg.max_retries) + " retries: constraint '" +
                      (worst == failures.end() ? std::string("unknown") : worst->first) + "' (object " +
                      std::to_string(failed_object) + ")");
  }

  // Query frames sit at the end of the horizon, so runs that differ only in
  // k evaluate on the same timestamps.
  std::vector<int> stamps;
  for (int t = 0; t < cfg.shots; ++t) stamps.push_back(t);
  for (int t = cfg.horizon_frames - cfg.query_frames; t < cfg.horizon_frames; ++t) stamps.push_back(t);
  for (int t : stamps) {
    Frame f;
    f.index = t;
    for (std::size_t o = 0; o < initial.size(); ++o) f.objects.push_back(advance(initial[o], velocity[o], t));
    for (const auto& a : sc.agents) f.agent_poses.push_back(a.pose);
    sc.frames.push_back(std::move(f));
  }
  const int total = static_cast<int>(stamps.size());
  for (int i = 0; i < cfg.shots; ++i) sc.support.push_back(i);
  for (int i = cfg.shots; i < total; ++i) sc.query.push_back(i);
  return sc;
}

std::vector<ObjectBox> observed_objects(const Scenario& scenario, const Frame& frame,
                                        const LidarConfig& lidar, int min_rays,
                                        const std::vector<int>& agent_ids) {
  std::vector<int> best(frame.objects.size(), 0);
  for (std::size_t i = 0; i < scenario.agents.size(); ++i) {
    const auto& a = scenario.agents[i];
    if (std::find(agent_ids.begin(), agent_ids.end(), a.agent_id) == agent_ids.end()) continue;
    const auto counts = visible_ray_counts(frame, a, frame.agent_poses[i], lidar);
    for (std::size_t o = 0; o < counts.size(); ++o) best[o] = std::max(best[o], counts[o]);
  }
  const Pose ego_pose = frame.agent_poses.at(0);
  std::vector<ObjectBox> out;
  for (std::size_t o = 0; o < frame.objects.size(); ++o)
    if (best[o] >= min_rays) out.push_back(box_to_local(ego_pose, frame.objects[o]));
  return out;
}

std::vector<ObjectBox> observed_objects(const Scenario& scenario, const Frame& frame,
                                        const LidarConfig& lidar, int min_rays) {
  std::vector<int> ids;
  for (const auto& a : scenario.agents) ids.push_back(a.agent_id);
  return observed_objects(scenario, frame, lidar, min_rays, ids);
}

const AgentSpec& Scenario::ego() const {
  for (const auto& a : agents)
    if (a.ego) return a;
  throw ConfigError("scenario " + scenario_id + " has no ego agent");
}

const AgentSpec& Scenario::agent(int agent_id) const {
  for (const auto& a : agents)
    if (a.agent_id == agent_id) return a;
  throw ConfigError("scenario " + scenario_id + " has no agent " + std::to_string(agent_id));
}

std::vector<Observation> render_frame(const Scenario& scenario, int frame_index,
                                      const LidarConfig& lidar) {
  const auto& frame = scenario.frames.at(frame_index);
  std::vector<Observation> out;
  out.reserve(scenario.agents.size());
  for (std::size_t a = 0; a < scenario.agents.size(); ++a) {
    const auto& agent = scenario.agents[a];
    out.push_back(render_observation(frame, agent, frame.agent_poses[a], scenario.grid,
                                     frame.agent_poses[0], lidar,
                                     noise_seed(scenario, frame.index, agent.agent_id)));
  }
  return out;
}

}  // namespace phcp::world
