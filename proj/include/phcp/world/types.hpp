#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "phcp/ndgrad/tensor.hpp"
#include "phcp/percept/geometry.hpp"

namespace phcp::world {

/// Shared BEV grid in the ego frame. Cell (row, col) covers
/// [origin_x + col*cell, +cell) x [origin_y + row*cell, +cell).
struct GridSpec {
  std::size_t height = 40;
  std::size_t width = 40;
  double cell_size = 0.8;
  double origin_x = -16.0;
  double origin_y = -16.0;

  bool operator==(const GridSpec&) const = default;

  Vec2 cell_center(std::size_t row, std::size_t col) const {
    return {origin_x + (static_cast<double>(col) + 0.5) * cell_size,
            origin_y + (static_cast<double>(row) + 0.5) * cell_size};
  }
  // False when the point falls outside the grid.
  bool locate(Vec2 p, std::size_t& row, std::size_t& col) const;
};

struct AgentSpec {
  int agent_id = 0;
  Pose pose;
  std::string encoder_family;
  double sensor_range = 14.0;
  double fov = 2.0943951023931953;  // 120 degrees
  bool ego = false;
};

struct Frame {
  int index = 0;  // timestamp within the scenario horizon
  std::vector<ObjectBox> objects;
  std::vector<Pose> agent_poses;  // parallel to Scenario::agents
};

struct Scenario {
  std::string scenario_id;
  std::uint64_t seed = 0;
  GridSpec grid;
  std::vector<AgentSpec> agents;
  std::vector<Frame> frames;
  std::vector<int> support;  // frame indices, chronologically first k
  std::vector<int> query;

  const AgentSpec& ego() const;
  const AgentSpec& agent(int agent_id) const;
};

/// Occupancy grid of one agent rendered onto the shared ego-aligned grid.
struct Observation {
  int agent_id = 0;
  nd::Tensor occupancy;  // [1, H, W], values in [0, 1]
  GridSpec grid;
};

}  // namespace phcp::world
