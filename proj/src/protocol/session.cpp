#include "phcp/protocol/session.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "phcp/common/error.hpp"
#include "phcp/eval/metrics.hpp"

namespace phcp::protocol {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Phcp: return "phcp";
    case Mode::Direct: return "direct";
    case Mode::Late: return "late";
    case Mode::Early: return "early";
    case Mode::HomogOracle: return "homog";
  }
  return "?";
}

Mode parse_mode(const std::string& name) {
  for (Mode m : {Mode::Phcp, Mode::Direct, Mode::Late, Mode::Early, Mode::HomogOracle})
    if (name == mode_name(m)) return m;
  if (name == "homog_oracle") return Mode::HomogOracle;
  throw ConfigError("unknown mode '" + name + "' (expected phcp, direct, late, early or homog)");
}

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::StageI: return "stage1";
    case Phase::StageII: return "stage2";
    case Phase::None: return "none";
  }
  return "?";
}

CollabSession::CollabSession(const world::Scenario& scenario, const percept::ModelZoo& zoo,
                             const percept::FamilyRegistry& families, SessionConfig cfg,
                             adapter::AdapterRegistry* registry)
    : scenario_(scenario),
      zoo_(zoo),
      families_(families),
      cfg_(std::move(cfg)),
      own_registry_(families.get(scenario.ego().encoder_family).channels, cfg_.adapter_reduction, cfg_.seed),
      registry_(registry ? registry : &own_registry_) {}

std::string CollabSession::adapter_key(const CollaboratorState& c) const {
  return cfg_.keying == AdapterKeying::Agent ? "agent-" + std::to_string(c.agent_id) : "family-" + c.family;
}

void CollabSession::establish() {
  if (established_) throw ProtocolError("session already established");
  const auto& ego = scenario_.ego();
  if (ego.agent_id != scenario_.agents.front().agent_id)
    throw ConfigError("the ego must be the first agent of the scenario");
  percept::zoo_get(zoo_, ego.encoder_family);
  const bool fixed = cfg_.mode == Mode::Phcp && !cfg_.fixed_adapters.empty();
  if (cfg_.mode == Mode::Phcp && !fixed) {
    if (cfg_.shots < 1) throw ConfigError("phcp needs k >= 1; k = 0 is direct fusion");
    if (static_cast<std::size_t>(cfg_.shots) != scenario_.support.size())
      throw ConfigError("k = " + std::to_string(cfg_.shots) + " but scenario " + scenario_.scenario_id + " has " +
                        std::to_string(scenario_.support.size()) + " support frames");
    selftrain::validate(cfg_.train);
  }
  for (const auto& a : scenario_.agents) {
    if (a.ego) continue;
    if (cfg_.mode != Mode::HomogOracle) percept::zoo_get(zoo_, a.encoder_family);
    CollaboratorState c;
    c.agent_id = a.agent_id;
    c.family = a.encoder_family;
    c.heterogeneous = a.encoder_family != ego.encoder_family;
    c.adapter_key = adapter_key(c);
    if (cfg_.mode != Mode::Phcp) {
      c.phase = Phase::None;
    } else if (fixed) {
      c.phase = Phase::StageII;
      if (c.heterogeneous && !cfg_.fixed_adapters.count(c.family))
        throw ConfigError("no fixed adapter for family '" + c.family + "'");
    }
    collabs_.push_back(c);
  }
  established_ = true;
}

percept::FeatureMap CollabSession::encode_agent(std::size_t, const world::Observation& obs,
                                                const std::string& family) const {
  nd::Tape tape;
  return percept::encode(tape, obs, families_.get(family), percept::zoo_get(zoo_, family).encoder);
}

percept::DetectionSet CollabSession::predict(const std::vector<percept::FeatureMap>& candidates,
                                             const percept::ModelWeights& model, int frame) const {
  nd::Tape tape;
  const auto fused = percept::fuse(tape, candidates, model.fusion);
  return percept::decode_nms(percept::detect_head(tape, fused, model.head), scenario_.grid, cfg_.decode, frame);
}

Message CollabSession::transmit(Message msg, int frame, Phase phase) {
  const std::string bytes = encode_message(msg);
  TraceEntry e;
  e.frame = frame;
  e.sender = msg.sender;
  e.mode = cfg_.mode;
  e.phase = phase;
  e.kind = msg.kind;
  e.payload_bytes = msg.payload_bytes;
  if (cfg_.keep_message_bytes) e.bytes = bytes;
  trace_.push_back(std::move(e));
  return decode_message(bytes);
}

StepResult CollabSession::step(int f) {
  if (!established_) throw ProtocolError("step on a session that was not established");
  if (f != next_frame_)
    throw ProtocolError("frames must be stepped in order: expected " + std::to_string(next_frame_) + ", got " +
                        std::to_string(f));
  if (f < 0 || f >= static_cast<int>(scenario_.frames.size()))
    throw ProtocolError("frame " + std::to_string(f) + " outside the scenario");
  ++next_frame_;

  const auto& ego = scenario_.ego();
  const auto& ego_model = percept::zoo_get(zoo_, ego.encoder_family);
  const Pose ego_pose = scenario_.frames[f].agent_poses[0];
  const auto obs = world::render_frame(scenario_, f, cfg_.lidar);
  const auto ego_feature = encode_agent(0, obs[0], ego.encoder_family);

  StepResult out;
  out.frame = f;
  out.phase = Phase::None;

  auto agent_index = [&](int id) {
    for (std::size_t i = 0; i < scenario_.agents.size(); ++i)
      if (scenario_.agents[i].agent_id == id) return i;
    throw ProtocolError("unknown agent " + std::to_string(id));
  };

  switch (cfg_.mode) {
    case Mode::Phcp: {
      const bool stage_one = std::any_of(collabs_.begin(), collabs_.end(),
                                         [](const auto& c) { return c.phase == Phase::StageI; });
      if (stage_one) {
        if (std::find(scenario_.support.begin(), scenario_.support.end(), f) == scenario_.support.end())
          throw ProtocolError("stage1 frame " + std::to_string(f) + " is not a support frame");
        out.phase = Phase::StageI;
        // Each homogeneous group shares one stack; its members send the group's detections.
        std::map<std::string, percept::DetectionSet> group_dets;
        std::map<std::string, std::vector<percept::FeatureMap>> group_feats;
        for (const auto& c : collabs_) {
          const std::size_t i = agent_index(c.agent_id);
          group_feats[c.family].push_back(encode_agent(i, obs[i], c.family));
        }
        for (const auto& [fam, feats] : group_feats)
          group_dets[fam] = percept::to_global(predict(feats, percept::zoo_get(zoo_, fam), f), ego_pose);
        std::map<std::string, std::size_t> cursor;
        std::vector<percept::DetectionSet> received;
        for (auto& c : collabs_) {
          if (c.phase != Phase::StageI)
            throw ProtocolError("stage1 message after stage2 for collaborator " + std::to_string(c.agent_id));
          const auto& feat = group_feats[c.family][cursor[c.family]++];
          auto msg = transmit(stage_one_message(c.agent_id, f, feat, group_dets[c.family]), f, Phase::StageI);
          received.push_back(msg.detections);
          stage_one_.push_back({f, msg.sender, *msg.feature, msg.detections});
          ++c.stage_one_frames;
        }
        ego_stage_one_.push_back(ego_feature);
        // The ego predicts from its own feature until the adapters are ready.
        out.detections = predict({ego_feature}, ego_model, f);
        if (cfg_.stage_one_ego == StageOneEgo::LateFuse) {
          auto items = out.detections.items;
          for (const auto& r : received)
            for (const auto& d : percept::to_ego(r, ego_pose).items) items.push_back(d);
          out.detections.items = percept::nms(std::move(items), cfg_.decode.nms_iou);
        }
        if (std::all_of(collabs_.begin(), collabs_.end(),
                        [&](const auto& c) { return c.stage_one_frames >= cfg_.shots; })) {
          train_adapters();
          for (auto& c : collabs_) c.phase = Phase::StageII;
        }
        break;
      }
      out.phase = Phase::StageII;
      std::vector<percept::FeatureMap> cands{ego_feature};
      for (const auto& c : collabs_) {
        const std::size_t i = agent_index(c.agent_id);
        auto msg = transmit(stage_two_message(c.agent_id, f, encode_agent(i, obs[i], c.family)), f, Phase::StageII);
        if (!c.heterogeneous) {
          cands.push_back(*msg.feature);
          continue;
        }
        nd::Tape tape;
        const auto& params = cfg_.fixed_adapters.empty() ? registry_->at(c.adapter_key)
                                                         : cfg_.fixed_adapters.at(c.family);
        cands.push_back(adapter::adapter_forward(tape, *msg.feature, params, ego.encoder_family));
      }
      out.detections = predict(cands, ego_model, f);
      break;
    }
    case Mode::Direct:
    case Mode::HomogOracle: {
      const bool oracle = cfg_.mode == Mode::HomogOracle;
      const std::size_t c_ego = ego_feature.channels();
      std::vector<percept::FeatureMap> cands{ego_feature};
      for (const auto& c : collabs_) {
        const std::size_t i = agent_index(c.agent_id);
        const auto fam = oracle ? ego.encoder_family : c.family;
        auto msg = transmit(stage_two_message(c.agent_id, f, encode_agent(i, obs[i], fam)), f, Phase::None);
        auto feat = *msg.feature;
        if (feat.channels() != c_ego) {
          nd::Tape tape;
          feat.values = nd::resize_channels(tape, feat.values, c_ego);
        }
        cands.push_back(feat);
      }
      out.detections = predict(cands, ego_model, f);
      break;
    }
    case Mode::Late: {
      auto items = predict({ego_feature}, ego_model, f).items;
      for (const auto& c : collabs_) {
        const std::size_t i = agent_index(c.agent_id);
        const auto own = predict({encode_agent(i, obs[i], c.family)}, percept::zoo_get(zoo_, c.family), f);
        auto msg = transmit(late_message(c.agent_id, f, percept::to_global(own, ego_pose)), f, Phase::None);
        for (const auto& d : percept::to_ego(msg.detections, ego_pose).items) items.push_back(d);
      }
      out.detections.frame = f;
      out.detections.items = percept::nms(std::move(items), cfg_.decode.nms_iou);
      break;
    }
    case Mode::Early: {
      auto occupancy = obs[0].occupancy.clone();
      auto acc = occupancy.mutable_data();
      const auto& frame = scenario_.frames[f];
      for (const auto& c : collabs_) {
        const std::size_t i = agent_index(c.agent_id);
        const auto& agent = scenario_.agents[i];
        const auto sweep = world::capture_sweep(frame, agent, frame.agent_poses[i], cfg_.lidar,
                                                world::noise_seed(scenario_, frame.index, agent.agent_id));
        auto msg = transmit(early_message(c.agent_id, f, sweep), f, Phase::None);
        const auto grid = world::rasterize(msg.sweep, scenario_.grid, ego_pose);
        const auto g = grid.occupancy.data();
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] = std::max(acc[k], g[k]);
      }
      world::Observation merged{ego.agent_id, occupancy, scenario_.grid};
      out.detections = predict({encode_agent(0, merged, ego.encoder_family)}, ego_model, f);
      break;
    }
  }
  out.detections.frame = f;
  out.detections.coords = percept::CoordFrame::Ego;
  return out;
}

void CollabSession::train_adapters() {
  if (trained_) throw ProtocolError("adapter training requested twice in one session");
  trained_ = true;
  const auto& ego = scenario_.ego();
  const auto& ego_model = percept::zoo_get(zoo_, ego.encoder_family);
  selftrain::EgoStack stack{&ego_model.fusion, &ego_model.head, ego.encoder_family};
  std::set<std::string> done;
  for (auto& c : collabs_) {
    if (!c.heterogeneous || done.count(c.adapter_key)) continue;
    done.insert(c.adapter_key);
    const auto support = selftrain::build_support_set(scenario_, c.agent_id, stage_one_, cfg_.train.pseudo);
    auto& params = registry_->get_or_create(c.adapter_key, families_.get(c.family).channels);
    if (++training_runs_[c.adapter_key] != 1)
      throw ProtocolError("adapter '" + c.adapter_key + "' trained more than once");
    logs_[c.adapter_key] = selftrain::fine_tune_adapter(support, stack, params, cfg_.train,
                                                        cfg_.train.include_ego_feature ? &ego_stage_one_ : nullptr);
    registry_->freeze(c.adapter_key);
  }
  for (auto& c : collabs_) c.training_runs = training_runs_[c.adapter_key];
}

std::vector<ObjectBox> frame_ground_truth(const world::Scenario& scenario, int frame_index,
                                          const world::LidarConfig& lidar, int min_rays) {
  return world::observed_objects(scenario, scenario.frames.at(frame_index), lidar, min_rays);
}

RunResult run_scenario(const world::Scenario& scenario, const percept::ModelZoo& zoo,
                       const percept::FamilyRegistry& families, const SessionConfig& cfg,
                       adapter::AdapterRegistry* registry) {
  CollabSession session(scenario, zoo, families, cfg, registry);
  session.establish();
  RunResult r;
  r.scenario_id = scenario.scenario_id;
  for (int f = 0; f < static_cast<int>(scenario.frames.size()); ++f) {
    auto step = session.step(f);
    if (std::find(scenario.query.begin(), scenario.query.end(), f) == scenario.query.end()) continue;
    r.query_frames.push_back(f);
    r.predictions.push_back(std::move(step.detections));
    r.ground_truth.push_back(frame_ground_truth(scenario, f, cfg.lidar, cfg.min_visible_rays));
  }
  r.trace = session.trace();
  for (const auto& [key, _] : session.train_logs()) r.adapters.emplace(key, session.adapters().snapshot(key));
  r.train_logs = session.train_logs();
  return r;
}

std::vector<PayloadRow> payload_report(const std::vector<TraceEntry>& trace) {
  struct Acc {
    std::size_t messages = 0, bytes = 0;
    std::set<int> frames;
  };
  std::map<std::tuple<std::string, std::string, std::string>, Acc> acc;
  for (const auto& e : trace) {
    auto& a = acc[{mode_name(e.mode), phase_name(e.phase), kind_name(e.kind)}];
    ++a.messages;
    a.bytes += e.payload_bytes;
    a.frames.insert(e.frame);
  }
  std::vector<PayloadRow> rows;
  for (const auto& [k, a] : acc) {
    PayloadRow r;
    std::tie(r.mode, r.phase, r.kind) = k;
    r.messages = a.messages;
    r.frames = a.frames.size();
    r.total_bytes = a.bytes;
    r.bytes_per_frame = static_cast<double>(a.bytes) / static_cast<double>(a.frames.size());
    rows.push_back(r);
  }
  return rows;
}

std::string payload_report_csv(const std::vector<PayloadRow>& rows, const std::string& fingerprint) {
  std::ostringstream os;
  os << "# fingerprint " << fingerprint << "\n";
  os << "mode,phase,kind,messages,frames,total_bytes,bytes_per_frame\n";
  for (const auto& r : rows)
    os << r.mode << ',' << r.phase << ',' << r.kind << ',' << r.messages << ',' << r.frames << ','
       << r.total_bytes << ',' << eval::format_number(r.bytes_per_frame) << '\n';
  return os.str();
}

}  // namespace phcp::protocol
