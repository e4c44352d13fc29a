#include "phcp/world/scenario_io.hpp"

#include <json.hpp>

#include "phcp/common/error.hpp"
#include "phcp/common/io.hpp"

namespace phcp::world {

using nlohmann::json;

std::string scenario_to_json(const Scenario& sc) {
  json j;
  j["schema"] = "phcp.scenario";
  j["version"] = kScenarioSchemaVersion;
  j["scenario_id"] = sc.scenario_id;
  j["seed"] = sc.seed;
  j["grid"] = {{"height", sc.grid.height},     {"width", sc.grid.width},
               {"cell_size", sc.grid.cell_size}, {"origin_x", sc.grid.origin_x},
               {"origin_y", sc.grid.origin_y}};
  j["agents"] = json::array();
  for (const auto& a : sc.agents) {
    j["agents"].push_back({{"agent_id", a.agent_id},
                           {"x", a.pose.x},
                           {"y", a.pose.y},
                           {"yaw", a.pose.yaw},
                           {"encoder_family", a.encoder_family},
                           {"sensor_range", a.sensor_range},
                           {"fov", a.fov},
                           {"ego", a.ego}});
  }
  j["frames"] = json::array();
  for (const auto& f : sc.frames) {
    json objs = json::array(), poses = json::array();
    for (const auto& b : f.objects) objs.push_back({b.center_x, b.center_y, b.length, b.width, b.yaw});
    for (const auto& p : f.agent_poses) poses.push_back({p.x, p.y, p.yaw});
    j["frames"].push_back({{"index", f.index}, {"objects", objs}, {"agent_poses", poses}});
  }
  j["support"] = sc.support;
  j["query"] = sc.query;
  return j.dump(1);
}

Scenario scenario_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    if (j.at("schema") != "phcp.scenario") throw FormatError("not a phcp.scenario document");
    if (j.at("version").get<int>() != kScenarioSchemaVersion)
      throw FormatError("unsupported scenario schema version " + j.at("version").dump());
    Scenario sc;
    sc.scenario_id = j.at("scenario_id").get<std::string>();
    sc.seed = j.at("seed").get<std::uint64_t>();
    const auto& g = j.at("grid");
    sc.grid = {g.at("height").get<std::size_t>(), g.at("width").get<std::size_t>(),
               g.at("cell_size").get<double>(), g.at("origin_x").get<double>(),
               g.at("origin_y").get<double>()};
    for (const auto& a : j.at("agents")) {
      AgentSpec s;
      s.agent_id = a.at("agent_id").get<int>();
      s.pose = {a.at("x").get<double>(), a.at("y").get<double>(), a.at("yaw").get<double>()};
      s.encoder_family = a.at("encoder_family").get<std::string>();
      s.sensor_range = a.at("sensor_range").get<double>();
      s.fov = a.at("fov").get<double>();
      s.ego = a.at("ego").get<bool>();
      sc.agents.push_back(s);
    }
    for (const auto& fj : j.at("frames")) {
      Frame f;
      f.index = fj.at("index").get<int>();
      for (const auto& o : fj.at("objects"))
        f.objects.push_back({o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>(),
                             o.at(3).get<double>(), o.at(4).get<double>()});
      for (const auto& p : fj.at("agent_poses"))
        f.agent_poses.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
      sc.frames.push_back(std::move(f));
    }
    sc.support = j.at("support").get<std::vector<int>>();
    sc.query = j.at("query").get<std::vector<int>>();
    return sc;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed scenario JSON: ") + e.what());
  }
}

void save_scenario(const std::filesystem::path& path, const Scenario& scenario) {
  write_file_atomic(path, scenario_to_json(scenario));
}

Scenario load_scenario(const std::filesystem::path& path) {
  return scenario_from_json(read_file(path));
}

}  // namespace phcp::world
