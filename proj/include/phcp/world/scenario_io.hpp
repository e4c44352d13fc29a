#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "phcp/world/types.hpp"

namespace phcp::world {

inline constexpr int kScenarioSchemaVersion = 1;

// Versioned JSON document:
// {
//   "schema": "phcp.scenario", "version": 1,
//   "scenario_id": str, "seed": uint,
//   "grid": {"height","width","cell_size","origin_x","origin_y"},
//   "agents": [{"agent_id","x","y","yaw","encoder_family","sensor_range","fov","ego"}],
//   "frames": [{"index", "objects": [[cx, cy, length, width, yaw], ...],
//               "agent_poses": [[x, y, yaw], ...]}],
//   "support": [int], "query": [int]
// }
std::string scenario_to_json(const Scenario& scenario);
Scenario scenario_from_json(std::string_view text);

void save_scenario(const std::filesystem::path& path, const Scenario& scenario);
Scenario load_scenario(const std::filesystem::path& path);

}  // namespace phcp::world
