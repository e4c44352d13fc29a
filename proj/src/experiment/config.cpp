#include "phcp/experiment/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <json.hpp>

#include "phcp/common/error.hpp"
#include "phcp/common/io.hpp"
#include "phcp/common/rng.hpp"

namespace phcp::experiment {

using Json = nlohmann::ordered_json;

namespace {

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

template <typename E, std::size_t N>
const char* enum_to(E v, const EnumName<E> (&names)[N]) {
  for (const auto& n : names)
    if (n.value == v) return n.name;
  return "?";
}

template <typename E, std::size_t N>
E enum_from(const Json& j, const EnumName<E> (&names)[N], const char* what) {
  const auto s = j.get<std::string>();
  for (const auto& n : names)
    if (s == n.name) return n.value;
  throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}

constexpr EnumName<world::FamilyPolicy> kPolicies[] = {{world::FamilyPolicy::AllHeterogeneous, "all_heterogeneous"},
                                                       {world::FamilyPolicy::Random, "random"},
                                                       {world::FamilyPolicy::Homogeneous, "homogeneous"}};
constexpr EnumName<selftrain::PseudoMode> kPseudoModes[] = {{selftrain::PseudoMode::Hard, "hard"},
                                                            {selftrain::PseudoMode::Soft, "soft"}};
constexpr EnumName<selftrain::ClsNormalization> kNorms[] = {{selftrain::ClsNormalization::Cells, "cells"},
                                                            {selftrain::ClsNormalization::Positives, "positives"}};
constexpr EnumName<selftrain::OptimizerKind> kOptimizers[] = {{selftrain::OptimizerKind::Sgd, "sgd"},
                                                              {selftrain::OptimizerKind::Adam, "adam"}};
constexpr EnumName<protocol::AdapterKeying> kKeyings[] = {{protocol::AdapterKeying::Agent, "agent"},
                                                          {protocol::AdapterKeying::Family, "family"}};
constexpr EnumName<protocol::StageOneEgo> kStageOneEgo[] = {{protocol::StageOneEgo::Solo, "solo"},
                                                            {protocol::StageOneEgo::LateFuse, "late_fuse"}};

Json grid_json(const world::GridSpec& g) {
  return {{"height", g.height}, {"width", g.width}, {"cell_size", g.cell_size},
          {"origin_x", g.origin_x}, {"origin_y", g.origin_y}};
}

void grid_from(const Json& j, world::GridSpec& g) {
  g.height = j.at("height").get<std::size_t>();
  g.width = j.at("width").get<std::size_t>();
  g.cell_size = j.at("cell_size").get<double>();
  g.origin_x = j.at("origin_x").get<double>();
  g.origin_y = j.at("origin_y").get<double>();
}

Json lidar_json(const world::LidarConfig& l) {
  return {{"angular_resolution_deg", l.angular_resolution_deg}, {"beams", l.beams},
          {"elevation_min_deg", l.elevation_min_deg}, {"elevation_max_deg", l.elevation_max_deg},
          {"sensor_height", l.sensor_height}, {"object_height", l.object_height}, {"noise_sigma", l.noise_sigma}};
}

void lidar_from(const Json& j, world::LidarConfig& l) {
  l.angular_resolution_deg = j.at("angular_resolution_deg").get<double>();
  l.beams = j.at("beams").get<int>();
  l.elevation_min_deg = j.at("elevation_min_deg").get<double>();
  l.elevation_max_deg = j.at("elevation_max_deg").get<double>();
  l.sensor_height = j.at("sensor_height").get<double>();
  l.object_height = j.at("object_height").get<double>();
  l.noise_sigma = j.at("noise_sigma").get<double>();
}

Json world_json(const world::WorldConfig& w) {
  Json j;
  j["grid"] = grid_json(w.grid);
  j["lidar"] = lidar_json(w.lidar);
  j["min_objects"] = w.min_objects;
  j["max_objects"] = w.max_objects;
  j["min_agents"] = w.min_agents;
  j["max_agents"] = w.max_agents;
  j["query_frames"] = w.query_frames;
  j["horizon_frames"] = w.horizon_frames;
  j["narrow_view_fraction"] = w.narrow_view_fraction;
  j["max_speed"] = w.max_speed;
  j["max_overlap_iou"] = w.max_overlap_iou;
  j["object_length"] = {w.object_length_min, w.object_length_max};
  j["object_width"] = {w.object_width_min, w.object_width_max};
  j["heading_jitter"] = w.heading_jitter;
  j["ego_pose"] = {w.ego_pose.x, w.ego_pose.y, w.ego_pose.yaw};
  j["ego_range"] = w.ego_range;
  j["ego_fov"] = w.ego_fov;
  j["agent_range"] = w.agent_range;
  j["agent_fov"] = w.agent_fov;
  j["agent_radius"] = {w.agent_radius_min, w.agent_radius_max};
  j["ego_family"] = w.ego_family;
  j["collaborator_families"] = w.collaborator_families;
  j["family_policy"] = enum_to(w.family_policy, kPolicies);
  j["max_retries"] = w.max_retries;
  j["min_visible_rays"] = w.min_visible_rays;
  return j;
}

void pair_from(const Json& j, double& lo, double& hi) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("expected a [min, max] pair");
  lo = j[0].get<double>();
  hi = j[1].get<double>();
}

void world_from(const Json& j, world::WorldConfig& w) {
  grid_from(j.at("grid"), w.grid);
  lidar_from(j.at("lidar"), w.lidar);
  w.min_objects = j.at("min_objects").get<int>();
  w.max_objects = j.at("max_objects").get<int>();
  w.min_agents = j.at("min_agents").get<int>();
  w.max_agents = j.at("max_agents").get<int>();
  w.query_frames = j.at("query_frames").get<int>();
  w.horizon_frames = j.at("horizon_frames").get<int>();
  w.narrow_view_fraction = j.at("narrow_view_fraction").get<double>();
  w.max_speed = j.at("max_speed").get<double>();
  w.max_overlap_iou = j.at("max_overlap_iou").get<double>();
  pair_from(j.at("object_length"), w.object_length_min, w.object_length_max);
  pair_from(j.at("object_width"), w.object_width_min, w.object_width_max);
  w.heading_jitter = j.at("heading_jitter").get<double>();
  const auto& p = j.at("ego_pose");
  if (!p.is_array() || p.size() != 3) throw ConfigError("ego_pose must be [x, y, yaw]");
  w.ego_pose = {p[0].get<double>(), p[1].get<double>(), p[2].get<double>()};
  w.ego_range = j.at("ego_range").get<double>();
  w.ego_fov = j.at("ego_fov").get<double>();
  w.agent_range = j.at("agent_range").get<double>();
  w.agent_fov = j.at("agent_fov").get<double>();
  pair_from(j.at("agent_radius"), w.agent_radius_min, w.agent_radius_max);
  w.ego_family = j.at("ego_family").get<std::string>();
  w.collaborator_families = j.at("collaborator_families").get<std::vector<std::string>>();
  w.family_policy = enum_from(j.at("family_policy"), kPolicies, "family policy");
  w.max_retries = j.at("max_retries").get<int>();
  w.min_visible_rays = j.at("min_visible_rays").get<int>();
}

Json family_json(const percept::EncoderFamily& f) {
  return {{"id", f.id}, {"channels", f.channels}, {"kernel1", f.kernel1}, {"kernel2", f.kernel2},
          {"activation", percept::activation_name(f.activation)}, {"constants_seed", f.constants_seed}};
}

percept::EncoderFamily family_from(const Json& j) {
  return percept::make_family(j.at("id").get<std::string>(), j.at("channels").get<std::size_t>(),
                              j.at("kernel1").get<std::size_t>(), j.at("kernel2").get<std::size_t>(),
                              percept::parse_activation(j.at("activation").get<std::string>()),
                              j.at("constants_seed").get<std::uint64_t>());
}

Json train_json(const selftrain::TrainConfig& t) {
  Json j;
  j["base_lr"] = t.base_lr;
  j["warmup_factor"] = t.warmup_factor;
  j["warmup_epochs"] = t.warmup_epochs;
  j["milestones"] = t.milestones;
  j["gamma"] = t.gamma;
  j["epochs"] = t.epochs;
  j["batch"] = t.batch;
  j["optimizer"] = enum_to(t.optimizer, kOptimizers);
  j["momentum"] = t.momentum;
  j["pseudo"] = {{"mode", enum_to(t.pseudo.mode, kPseudoModes)},
                 {"threshold", t.pseudo.threshold},
                 {"soft_floor", t.pseudo.soft_floor}};
  j["loss"] = {{"lambda_cls", t.loss.lambda_cls},
               {"lambda_reg", t.loss.lambda_reg},
               {"focal_gamma", t.loss.focal_gamma},
               {"smooth_l1_beta", t.loss.smooth_l1_beta},
               {"cls_normalization", enum_to(t.loss.cls_normalization, kNorms)}};
  j["include_ego_feature"] = t.include_ego_feature;
  return j;
}

void train_from(const Json& j, selftrain::TrainConfig& t) {
  t.base_lr = j.at("base_lr").get<double>();
  t.warmup_factor = j.at("warmup_factor").get<double>();
  t.warmup_epochs = j.at("warmup_epochs").get<int>();
  t.milestones = j.at("milestones").get<std::vector<int>>();
  t.gamma = j.at("gamma").get<double>();
  t.epochs = j.at("epochs").get<int>();
  t.batch = j.at("batch").get<int>();
  t.optimizer = enum_from(j.at("optimizer"), kOptimizers, "optimizer");
  t.momentum = j.at("momentum").get<double>();
  const auto& p = j.at("pseudo");
  t.pseudo.mode = enum_from(p.at("mode"), kPseudoModes, "pseudo-label mode");
  t.pseudo.threshold = p.at("threshold").get<double>();
  t.pseudo.soft_floor = p.at("soft_floor").get<double>();
  const auto& l = j.at("loss");
  t.loss.lambda_cls = l.at("lambda_cls").get<double>();
  t.loss.lambda_reg = l.at("lambda_reg").get<double>();
  t.loss.focal_gamma = l.at("focal_gamma").get<double>();
  t.loss.smooth_l1_beta = l.at("smooth_l1_beta").get<double>();
  t.loss.cls_normalization = enum_from(l.at("cls_normalization"), kNorms, "cls normalization");
  t.include_ego_feature = j.at("include_ego_feature").get<bool>();
}

Json pretrain_json(const PretrainConfig& p) {
  Json j;
  j["scenarios"] = p.scenarios;
  j["frames_per_scenario"] = p.frames_per_scenario;
  j["epochs"] = p.epochs;
  j["base_lr"] = p.base_lr;
  j["warmup_factor"] = p.warmup_factor;
  j["warmup_epochs"] = p.warmup_epochs;
  j["milestones"] = p.milestones;
  j["optimizer"] = enum_to(p.optimizer, kOptimizers);
  j["full_group_probability"] = p.full_group_probability;
  j["cls_normalization"] = enum_to(p.cls_normalization, kNorms);
  j["seed"] = p.seed;
  return j;
}

void pretrain_from(const Json& j, PretrainConfig& p) {
  p.scenarios = j.at("scenarios").get<int>();
  p.frames_per_scenario = j.at("frames_per_scenario").get<int>();
  p.epochs = j.at("epochs").get<int>();
  p.base_lr = j.at("base_lr").get<double>();
  p.warmup_factor = j.at("warmup_factor").get<double>();
  p.warmup_epochs = j.at("warmup_epochs").get<int>();
  p.milestones = j.at("milestones").get<std::vector<int>>();
  p.optimizer = enum_from(j.at("optimizer"), kOptimizers, "optimizer");
  p.full_group_probability = j.at("full_group_probability").get<double>();
  p.cls_normalization = enum_from(j.at("cls_normalization"), kNorms, "cls normalization");
  p.seed = j.at("seed").get<std::uint64_t>();
}

Json session_json(const SessionSettings& s) {
  return {{"adapter_reduction", s.adapter_reduction},
          {"keying", enum_to(s.keying, kKeyings)},
          {"stage_one_ego", enum_to(s.stage_one_ego, kStageOneEgo)},
          {"min_visible_rays", s.min_visible_rays},
          {"conf_floor", s.decode.conf_floor},
          {"nms_iou", s.decode.nms_iou}};
}

void session_from(const Json& j, SessionSettings& s) {
  s.adapter_reduction = j.at("adapter_reduction").get<std::size_t>();
  s.keying = enum_from(j.at("keying"), kKeyings, "adapter keying");
  s.stage_one_ego = enum_from(j.at("stage_one_ego"), kStageOneEgo, "stage-one ego policy");
  s.min_visible_rays = j.at("min_visible_rays").get<int>();
  s.decode.conf_floor = j.at("conf_floor").get<double>();
  s.decode.nms_iou = j.at("nms_iou").get<double>();
}

Json to_json(const ExperimentConfig& c) {
  Json j;
  j["schema"] = "phcp.experiment";
  j["version"] = kExperimentSchemaVersion;
  j["shots"] = c.shots;
  j["scenarios"] = c.scenarios;
  j["seeds"] = c.seeds;
  Json modes = Json::array();
  for (auto m : c.modes) modes.push_back(protocol::mode_name(m));
  j["modes"] = modes;
  j["output_dir"] = c.output_dir;
  j["world"] = world_json(c.world);
  Json fams = Json::array();
  for (const auto& f : c.families) fams.push_back(family_json(f));
  j["families"] = fams;
  j["train"] = train_json(c.train);
  j["pretrain"] = pretrain_json(c.pretrain);
  j["session"] = session_json(c.session);
  return j;
}

// Every key of `user` must exist in `reference`; objects recurse, the
// elements of "families" are checked against one family entry.
void check_keys(const Json& user, const Json& reference, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config: '" + path + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const auto where = path.empty() ? key : path + "." + key;
    if (!reference.contains(key)) throw ConfigError("config: unknown key '" + where + "'");
    const auto& ref = reference.at(key);
    if (ref.is_object()) {
      check_keys(value, ref, where);
    } else if (key == "families") {
      if (!value.is_array()) throw ConfigError("config: 'families' must be an array");
      const Json family_ref = family_json(percept::make_family("x", 8, 3, 3, percept::Activation::Relu, 0));
      for (const auto& f : value) {
        check_keys(f, family_ref, where + "[]");
        for (const auto& [k, v] : family_ref.items())
          if (!f.contains(k)) throw ConfigError("config: family entry is missing '" + k + "'");
      }
    }
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig c;
  const auto reg = percept::default_families();
  for (const auto& id : reg.ids()) c.families.push_back(reg.get(id));
  c.world.shots = c.shots;
  return c;
}

ExperimentConfig config_from_json(std::string_view text) {
  Json user;
  try {
    user = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  if (user.value("schema", "") != "phcp.experiment")
    throw ConfigError("config: expected \"schema\": \"phcp.experiment\"");
  if (!user.contains("version") || user.at("version") != kExperimentSchemaVersion)
    throw ConfigError("config: unsupported version (expected " + std::to_string(kExperimentSchemaVersion) + ")");
  auto base = to_json(default_config());
  check_keys(user, base, "");
  base.merge_patch(user);
  ExperimentConfig c = default_config();
  try {
    c.shots = base.at("shots").get<int>();
    c.scenarios = base.at("scenarios").get<int>();
    c.seeds = base.at("seeds").get<std::vector<std::uint64_t>>();
    c.modes.clear();
    for (const auto& m : base.at("modes")) c.modes.push_back(protocol::parse_mode(m.get<std::string>()));
    c.output_dir = base.at("output_dir").get<std::string>();
    world_from(base.at("world"), c.world);
    c.families.clear();
    for (const auto& f : base.at("families")) c.families.push_back(family_from(f));
    train_from(base.at("train"), c.train);
    pretrain_from(base.at("pretrain"), c.pretrain);
    session_from(base.at("session"), c.session);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.world.shots = c.shots;
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const PrerequisiteError&) {
    throw ConfigError("cannot read config file " + path.string());
  }
  return config_from_json(text);
}

std::string config_to_json(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

void validate(const ExperimentConfig& cfg) {
  if (cfg.shots < 1) throw ConfigError("config: shots must be >= 1 (k=0 is the direct mode)");
  if (cfg.scenarios < 1) throw ConfigError("config: scenarios must be >= 1");
  if (cfg.seeds.empty()) throw ConfigError("config: at least one seed is required");
  if (cfg.families.empty()) throw ConfigError("config: at least one encoder family is required");
  auto w = cfg.world;
  w.shots = cfg.shots;
  world::validate(w);
  selftrain::validate(cfg.train);
  validate(cfg.pretrain);
  const auto reg = family_registry(cfg);
  reg.get(w.ego_family);
  for (const auto& f : w.collaborator_families) reg.get(f);
  if (cfg.session.adapter_reduction == 0 || reg.get(w.ego_family).channels % cfg.session.adapter_reduction != 0)
    throw ConfigError("config: adapter_reduction must divide the ego family's channel count");
}

percept::FamilyRegistry family_registry(const ExperimentConfig& cfg) {
  percept::FamilyRegistry reg;
  for (const auto& f : cfg.families) reg.add(f);
  return reg;
}

std::string fingerprint(const ExperimentConfig& cfg) {
  auto j = to_json(cfg);
  j.erase("output_dir");
  return hex64(fnv1a(j.dump()));
}

std::string data_fingerprint(const ExperimentConfig& cfg) {
  Json j{{"world", world_json(cfg.world)}, {"shots", cfg.shots}, {"scenarios", cfg.scenarios}, {"seeds", cfg.seeds}};
  return hex64(fnv1a(j.dump()));
}

std::string models_fingerprint(const ExperimentConfig& cfg) {
  Json fams = Json::array();
  for (const auto& f : cfg.families) fams.push_back(family_json(f));
  Json j{{"world", world_json(cfg.world)}, {"families", fams}, {"pretrain", pretrain_json(cfg.pretrain)}};
  return hex64(fnv1a(j.dump()));
}

protocol::SessionConfig session_config(const ExperimentConfig& cfg, protocol::Mode mode, std::uint64_t seed) {
  protocol::SessionConfig s;
  s.mode = mode;
  s.shots = cfg.shots;
  s.train = cfg.train;
  s.decode = cfg.session.decode;
  s.lidar = cfg.world.lidar;
  s.min_visible_rays = cfg.session.min_visible_rays;
  s.adapter_reduction = cfg.session.adapter_reduction;
  s.keying = cfg.session.keying;
  s.stage_one_ego = cfg.session.stage_one_ego;
  s.seed = seed;
  return s;
}

std::filesystem::path output_root(const ExperimentConfig& cfg) {
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* env = std::getenv("PHCP_OUT"); env != nullptr && *env != '\0') return env;
  return "phcp-out";
}

}  // namespace phcp::experiment
