#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "../support/oracles.hpp"
#include "../support/tiny_zoo.hpp"
#include "phcp/common/error.hpp"
#include "phcp/common/io.hpp"
#include "phcp/protocol/trace.hpp"

using namespace phcp;
using namespace phcp::protocol;

namespace {

class ProtocolTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    families_ = new percept::FamilyRegistry(percept::default_families());
    zoo_ = new percept::ModelZoo(phcp::testing::tiny_zoo(*families_));
  }
  static void TearDownTestSuite() {
    delete zoo_;
    delete families_;
  }

  static world::Scenario scenario(std::uint64_t seed, int shots = 5, int agents = 3,
                                  world::FamilyPolicy policy = world::FamilyPolicy::AllHeterogeneous) {
    world::WorldConfig wc;
    wc.shots = shots;
    wc.query_frames = 3;
    wc.min_agents = wc.max_agents = agents;
    wc.family_policy = policy;
    return world::generate_scenario(wc, seed, "t" + std::to_string(seed));
  }

  static SessionConfig config(Mode mode, int shots = 5) {
    SessionConfig c;
    c.mode = mode;
    c.shots = shots;
    c.train.epochs = 16;
    return c;
  }

  // The ego-side stack of one family run on a set of that family's observations.
  static percept::DetectionSet solo_stack(const std::string& fam, const std::vector<world::Observation>& obs,
                                          int frame) {
    const auto& m = zoo_->at(fam);
    nd::Tape tape;
    std::vector<percept::FeatureMap> feats;
    for (const auto& o : obs) feats.push_back(percept::encode(tape, o, families_->get(fam), m.encoder));
    const auto fused = percept::fuse(tape, feats, m.fusion);
    return percept::decode_nms(percept::detect_head(tape, fused, m.head), obs[0].grid, {}, frame);
  }

  static percept::FamilyRegistry* families_;
  static percept::ModelZoo* zoo_;
};

percept::FamilyRegistry* ProtocolTest::families_ = nullptr;
percept::ModelZoo* ProtocolTest::zoo_ = nullptr;

percept::FeatureMap small_feature(std::size_t c) {
  world::GridSpec g;
  g.height = 3;
  g.width = 4;
  nd::Tensor v({c, 3, 4});
  for (std::size_t i = 0; i < v.numel(); ++i) v.mutable_data()[i] = 0.25 * static_cast<double>(i);
  return {v, "ls", g};
}

void expect_same_boxes(const percept::DetectionSet& a, const percept::DetectionSet& b, double tol) {
  ASSERT_EQ(a.items.size(), b.items.size());
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    EXPECT_NEAR(a.items[i].box.center_x, b.items[i].box.center_x, tol);
    EXPECT_NEAR(a.items[i].box.center_y, b.items[i].box.center_y, tol);
    EXPECT_NEAR(a.items[i].box.length, b.items[i].box.length, tol);
    EXPECT_NEAR(a.items[i].confidence, b.items[i].confidence, tol);
  }
}

}  // namespace

TEST(Message, RoundTripsEveryKind) {
  const auto f = small_feature(2);
  percept::DetectionSet d;
  d.coords = percept::CoordFrame::Global;
  d.items = {{{1.5, -2.0, 4.0, 2.0, 0.5}, 0.75}};
  world::Sweep s;
  s.points = {{1, 2, 0.5F, 1.0F}, {3, 4, 0, 0.25F}};
  for (auto msg : {stage_one_message(3, 7, f, d), stage_two_message(3, 7, f), late_message(3, 7, d),
                   early_message(3, 7, s)}) {
    const auto bytes = encode_message(msg);
    EXPECT_EQ(msg.payload_bytes, bytes.size());
    const auto back = decode_message(bytes);
    EXPECT_EQ(back.kind, msg.kind);
    EXPECT_EQ(back.sender, 3);
    EXPECT_EQ(back.frame, 7);
    EXPECT_EQ(back.payload_bytes, bytes.size());
    EXPECT_EQ(back.feature.has_value(), msg.feature.has_value());
    if (back.feature) {
      EXPECT_EQ(back.feature->values.shape(), f.values.shape());
      EXPECT_EQ(back.feature->family, "ls");
      EXPECT_EQ(back.feature->values.data()[5], 1.25);
    }
    EXPECT_EQ(back.detections.items.size(), msg.detections.items.size());
    EXPECT_EQ(back.sweep.points.size(), msg.sweep.points.size());
  }
}

TEST(Message, PayloadSizesFollowTheLayout) {
  const auto f = small_feature(2);
  percept::DetectionSet d;
  d.coords = percept::CoordFrame::Global;
  d.items.resize(3);
  for (auto& x : d.items) x.box = {0, 0, 1, 1, 0};
  auto one = stage_one_message(1, 0, f, d);
  auto two = stage_two_message(1, 0, f);
  auto late = late_message(1, 0, d);
  auto empty_late = late_message(1, 0, percept::DetectionSet{{}, 0, percept::CoordFrame::Global});
  encode_message(one);
  encode_message(two);
  encode_message(late);
  encode_message(empty_late);
  const std::size_t feature_section = 1 + 2 + 3 * 2 + 3 * 8 + 2 * 3 * 4 * 4;
  EXPECT_EQ(two.payload_bytes, kHeaderBytes + feature_section);
  EXPECT_EQ(one.payload_bytes, two.payload_bytes + 3 * 6 * 4);
  EXPECT_EQ(late.payload_bytes, kHeaderBytes + 3 * 6 * 4);
  EXPECT_EQ(empty_late.payload_bytes, kHeaderBytes);
  EXPECT_GT(one.payload_bytes, two.payload_bytes);
}

TEST(Message, MalformedBytesAreRejected) {
  auto m = stage_two_message(1, 0, small_feature(2));
  const auto bytes = encode_message(m);
  EXPECT_THROW(decode_message(bytes.substr(0, 10)), FormatError);
  EXPECT_THROW(decode_message(bytes.substr(0, bytes.size() - 1)), FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_message(bad), FormatError);
  bad = bytes;
  bad[6] = 9;
  EXPECT_THROW(decode_message(bad), FormatError);
}

TEST_F(ProtocolTest, OneShotStateMachine) {
  const auto sc = scenario(11, 1);
  CollabSession s(sc, *zoo_, *families_, config(Mode::Phcp, 1));
  EXPECT_THROW(s.step(0), ProtocolError);
  s.establish();
  EXPECT_THROW(s.establish(), ProtocolError);
  for (const auto& c : s.collaborators()) EXPECT_EQ(c.phase, Phase::StageI);
  EXPECT_EQ(s.step(0).phase, Phase::StageI);
  for (const auto& c : s.collaborators()) {
    EXPECT_EQ(c.phase, Phase::StageII);
    EXPECT_EQ(c.training_runs, 1);
    EXPECT_TRUE(s.adapters().frozen(c.adapter_key));
  }
  EXPECT_THROW(s.step(2), ProtocolError);
  for (int f = 1; f < static_cast<int>(sc.frames.size()); ++f) EXPECT_EQ(s.step(f).phase, Phase::StageII);
  for (const auto& e : s.trace()) {
    EXPECT_EQ(e.kind, e.frame == 0 ? MessageKind::StageI : MessageKind::StageII);
    EXPECT_EQ(e.phase, e.frame == 0 ? Phase::StageI : Phase::StageII);
  }
  EXPECT_EQ(s.train_logs().size(), s.collaborators().size());  // one adapter per collaborator under agent keying
}

TEST_F(ProtocolTest, EstablishmentChecks) {
  const auto sc = scenario(12, 5);
  CollabSession wrong_k(sc, *zoo_, *families_, config(Mode::Phcp, 3));
  EXPECT_THROW(wrong_k.establish(), ConfigError);
  CollabSession zero_k(sc, *zoo_, *families_, config(Mode::Phcp, 0));
  EXPECT_THROW(zero_k.establish(), ConfigError);
  percept::ModelZoo partial{{"lp", zoo_->at("lp")}};
  CollabSession missing(sc, partial, *families_, config(Mode::Phcp));
  EXPECT_THROW(missing.establish(), PrerequisiteError);
}

TEST_F(ProtocolTest, StageOneFramesMustBeSupportFrames) {
  const auto sc = scenario(13, 2);
  auto cfg = config(Mode::Phcp, 2);
  CollabSession s(sc, *zoo_, *families_, cfg);
  s.establish();
  s.step(0);
  s.step(1);
  EXPECT_EQ(s.step(2).phase, Phase::StageII);
}

TEST_F(ProtocolTest, EgoPredictsAloneDuringStageOne) {
  const auto sc = scenario(14, 2);
  CollabSession s(sc, *zoo_, *families_, config(Mode::Phcp, 2));
  s.establish();
  for (int f = 0; f < 2; ++f) {
    const auto got = s.step(f);
    const auto obs = world::render_frame(sc, f, world::LidarConfig{});
    const auto want = solo_stack("lp", {obs[0]}, f);
    ASSERT_EQ(got.detections.items.size(), want.items.size());
    for (std::size_t i = 0; i < want.items.size(); ++i) {
      EXPECT_EQ(got.detections.items[i].box, want.items[i].box);
      EXPECT_EQ(got.detections.items[i].confidence, want.items[i].confidence);
    }
  }
}

TEST_F(ProtocolTest, GroupLabelsMatchReExecutionOfTheGroupStack) {
  const auto sc = scenario(15, 2, 4);
  auto cfg = config(Mode::Phcp, 2);
  cfg.keep_message_bytes = true;
  CollabSession s(sc, *zoo_, *families_, cfg);
  s.establish();
  s.step(0);
  const auto obs = world::render_frame(sc, 0, world::LidarConfig{});
  const auto want = percept::to_global(solo_stack("ls", {obs[1], obs[2], obs[3]}, 0), sc.frames[0].agent_poses[0]);
  int checked = 0;
  for (const auto& e : s.trace()) {
    const auto msg = decode_message(e.bytes);
    ASSERT_EQ(msg.kind, MessageKind::StageI);
    expect_same_boxes(msg.detections, want, 1e-4);
    ++checked;
  }
  EXPECT_EQ(checked, 3);
}

TEST_F(ProtocolTest, DirectEqualsHomogeneousWhenFamiliesMatch) {
  const auto sc = scenario(16, 2, 3, world::FamilyPolicy::Homogeneous);
  const auto a = run_scenario(sc, *zoo_, *families_, config(Mode::Direct, 2));
  const auto b = run_scenario(sc, *zoo_, *families_, config(Mode::HomogOracle, 2));
  ASSERT_EQ(a.predictions.size(), b.predictions.size());
  for (std::size_t f = 0; f < a.predictions.size(); ++f) {
    ASSERT_EQ(a.predictions[f].items.size(), b.predictions[f].items.size());
    for (std::size_t i = 0; i < a.predictions[f].items.size(); ++i)
      EXPECT_EQ(a.predictions[f].items[i].confidence, b.predictions[f].items[i].confidence);
  }
}

TEST_F(ProtocolTest, LateFusionIsTheSuppressedUnion) {
  const auto sc = scenario(17, 1);
  CollabSession s(sc, *zoo_, *families_, config(Mode::Late, 1));
  s.establish();
  const auto got = s.step(0);
  const auto obs = world::render_frame(sc, 0, world::LidarConfig{});
  std::vector<percept::Detection> all = solo_stack("lp", {obs[0]}, 0).items;
  for (std::size_t i = 1; i < sc.agents.size(); ++i)
    for (const auto& d : solo_stack(sc.agents[i].encoder_family, {obs[i]}, 0).items) all.push_back(d);
  percept::DetectionSet want;
  want.items = phcp::testing::brute_force_nms(all, percept::DecodeConfig{}.nms_iou);
  expect_same_boxes(got.detections, want, 1e-4);
}

TEST_F(ProtocolTest, PayloadOrderingUnderDefaults) {
  const auto sc = scenario(18, 5);
  std::vector<TraceEntry> trace;
  for (Mode m : {Mode::Phcp, Mode::Late, Mode::Early}) {
    const auto r = run_scenario(sc, *zoo_, *families_, config(m));
    trace.insert(trace.end(), r.trace.begin(), r.trace.end());
  }
  std::map<std::string, double> per_frame;
  for (const auto& row : payload_report(trace)) per_frame[row.mode + "/" + row.kind] = row.bytes_per_frame;
  EXPECT_GT(per_frame.at("early/early"), per_frame.at("phcp/stage2"));
  EXPECT_GT(per_frame.at("phcp/stage2"), per_frame.at("late/late"));
  EXPECT_GT(per_frame.at("phcp/stage1"), per_frame.at("phcp/stage2"));
  const auto csv = payload_report_csv(payload_report(trace), "ab");
  EXPECT_EQ(csv.rfind("# fingerprint ab\n", 0), 0U);
}

TEST_F(ProtocolTest, RunsAreDeterministic) {
  const auto sc = scenario(19, 2);
  auto cfg = config(Mode::Phcp, 2);
  cfg.keep_message_bytes = true;
  const auto a = run_scenario(sc, *zoo_, *families_, cfg);
  const auto b = run_scenario(sc, *zoo_, *families_, cfg);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].bytes, b.trace[i].bytes);
  for (const auto& [k, p] : a.adapters) EXPECT_TRUE(adapter::identical(p, b.adapters.at(k)));
}

TEST_F(ProtocolTest, RunFreezesEgoModelAndLeavesOtherAdaptersAlone) {
  const auto sc = scenario(20, 2);
  const auto before_lp = percept::encode_model(zoo_->at("lp"));
  const auto before_ls = percept::encode_model(zoo_->at("ls"));
  adapter::AdapterRegistry reg(8, 4, 1);
  reg.get_or_create("agent-9", 12);
  const auto untouched = reg.snapshot("agent-9");
  run_scenario(sc, *zoo_, *families_, config(Mode::Phcp, 2), &reg);
  EXPECT_EQ(percept::encode_model(zoo_->at("lp")), before_lp);
  EXPECT_EQ(percept::encode_model(zoo_->at("ls")), before_ls);
  EXPECT_TRUE(adapter::identical(untouched, reg.at("agent-9")));
  EXPECT_FALSE(reg.frozen("agent-9"));
  EXPECT_GT(reg.keys().size(), 1U);
}

TEST_F(ProtocolTest, FixedAdaptersSkipStageOne) {
  const auto sc = scenario(21, 2);
  auto cfg = config(Mode::Phcp, 2);
  cfg.keying = AdapterKeying::Family;
  const auto trained = run_scenario(sc, *zoo_, *families_, cfg);
  ASSERT_EQ(trained.adapters.count("family-ls"), 1U);
  auto fixed = cfg;
  fixed.fixed_adapters["ls"] = trained.adapters.at("family-ls");
  const auto r = run_scenario(sc, *zoo_, *families_, fixed);
  for (const auto& e : r.trace) EXPECT_EQ(e.kind, MessageKind::StageII);
  EXPECT_TRUE(r.train_logs.empty());
  // Same adapter on the same scenario reproduces the query predictions.
  ASSERT_EQ(r.predictions.size(), trained.predictions.size());
  for (std::size_t f = 0; f < r.predictions.size(); ++f)
    EXPECT_EQ(r.predictions[f].items.size(), trained.predictions[f].items.size());
}

TEST_F(ProtocolTest, TraceWriteAndReplay) {
  const auto sc = scenario(22, 1);
  auto cfg = config(Mode::Phcp, 1);
  cfg.keep_message_bytes = true;
  const auto r = run_scenario(sc, *zoo_, *families_, cfg);
  const auto dir = std::filesystem::temp_directory_path() / ("phcp-trace-" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const auto files = trace_paths(dir / "run");
  write_trace(files, r.trace, "feed");
  const auto rep = replay_trace(files);
  EXPECT_EQ(rep.records, r.trace.size());
  EXPECT_EQ(rep.fingerprint, "feed");
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    EXPECT_EQ(rep.entries[i].frame, r.trace[i].frame);
    EXPECT_EQ(rep.entries[i].kind, r.trace[i].kind);
    EXPECT_EQ(rep.entries[i].phase, r.trace[i].phase);
    EXPECT_EQ(rep.entries[i].payload_bytes, r.trace[i].payload_bytes);
  }
  auto idx = read_file(files.index);
  idx.replace(idx.find("\"length\""), 8, "\"lenght\"");
  write_file_atomic(files.index, idx);
  EXPECT_THROW(replay_trace(files), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_F(ProtocolTest, GroundTruthIsWhatSomeAgentSees) {
  const auto sc = scenario(23, 1);
  for (std::size_t f = 0; f < sc.frames.size(); ++f) {
    const auto gt = frame_ground_truth(sc, static_cast<int>(f), world::LidarConfig{}, 3);
    EXPECT_LE(gt.size(), sc.frames[f].objects.size());
  }
}
