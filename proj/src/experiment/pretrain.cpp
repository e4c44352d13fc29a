#include "phcp/experiment/pretrain.hpp"

#include <algorithm>
#include <cmath>

#include "phcp/common/error.hpp"
#include "phcp/common/rng.hpp"

namespace phcp::experiment {

void validate(const PretrainConfig& cfg) {
  if (cfg.scenarios < 1) throw ConfigError("pretrain.scenarios must be >= 1");
  if (cfg.frames_per_scenario < 1) throw ConfigError("pretrain.frames_per_scenario must be >= 1");
  if (cfg.full_group_probability < 0.0 || cfg.full_group_probability > 1.0)
    throw ConfigError("pretrain.full_group_probability must lie in [0, 1]");
  selftrain::validate(pretrain_schedule(cfg));
}

selftrain::TrainConfig pretrain_schedule(const PretrainConfig& cfg) {
  selftrain::TrainConfig t;
  t.base_lr = cfg.base_lr;
  t.warmup_factor = cfg.warmup_factor;
  t.warmup_epochs = cfg.warmup_epochs;
  t.milestones = cfg.milestones;
  t.epochs = cfg.epochs;
  t.optimizer = cfg.optimizer;
  t.loss.cls_normalization = cfg.cls_normalization;
  return t;
}

std::vector<selftrain::PseudoLabel> ground_truth_labels(const world::Scenario& sc, int frame,
                                                        const world::LidarConfig& lidar, int min_rays,
                                                        const std::vector<int>& agent_ids) {
  std::vector<selftrain::PseudoLabel> out;
  for (const auto& b : world::observed_objects(sc, sc.frames.at(frame), lidar, min_rays, agent_ids)) {
    selftrain::PseudoLabel l;
    l.box = b;
    l.source_confidence = 1.0;
    out.push_back(l);
  }
  return out;
}

namespace {
struct Sample {
  std::size_t scenario;
  int frame;
  std::vector<world::Observation> obs;
};
}  // namespace

percept::ModelWeights pretrain_family(const world::WorldConfig& world, const percept::FamilyRegistry& families,
                                      const std::string& family, const PretrainConfig& cfg,
                                      selftrain::TrainLog* log) {
  validate(cfg);
  const auto& fam = families.get(family);
  auto wc = world;
  wc.family_policy = world::FamilyPolicy::Homogeneous;
  wc.ego_family = family;
  wc.collaborator_families = {family};
  world::validate(wc);

  std::vector<world::Scenario> scenes;
  std::vector<Sample> samples;
  for (int i = 0; i < cfg.scenarios; ++i) {
    scenes.push_back(world::generate_scenario(
        wc, derive_seed(cfg.seed, {fnv1a("pretrain"), static_cast<std::uint64_t>(i)}),
        "pretrain-" + std::to_string(i)));
    const int frames = std::min<int>(cfg.frames_per_scenario, static_cast<int>(scenes.back().frames.size()));
    for (int f = 0; f < frames; ++f)
      samples.push_back({scenes.size() - 1, f, world::render_frame(scenes.back(), f, wc.lidar)});
  }

  auto model = percept::init_model(fam, derive_seed(cfg.seed, {fnv1a("init")}));
  model.set_trainable(true);
  const auto sched = pretrain_schedule(cfg);
  selftrain::Optimizer opt(model.parameters(), cfg.optimizer, 0.0);
  Rng rng(derive_seed(cfg.seed, {fnv1a("pretrain-order"), fnv1a(family)}));
  std::vector<std::size_t> order(samples.size());
  selftrain::TrainLog local;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = selftrain::lr_schedule(epoch, sched);
    for (std::size_t i = order.size(); i-- > 0;) order[i] = i;
    for (std::size_t i = order.size(); i-- > 1;)
      std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    selftrain::EpochLog rec;
    rec.epoch = epoch;
    rec.lr = lr;
    for (std::size_t idx : order) {
      const auto& s = samples[idx];
      const auto& sc = scenes[s.scenario];
      std::vector<int> group;
      if (rng.uniform() < cfg.full_group_probability) {
        for (const auto& a : sc.agents) group.push_back(a.agent_id);
      } else {
        while (group.empty())
          for (const auto& a : sc.agents)
            if (rng.uniform() < 0.5) group.push_back(a.agent_id);
      }
      nd::Tape tape;
      std::vector<nd::Tensor> feats;
      for (std::size_t a = 0; a < sc.agents.size(); ++a)
        if (std::find(group.begin(), group.end(), sc.agents[a].agent_id) != group.end())
          feats.push_back(percept::encode(tape, s.obs[a], fam, model.encoder).values);
      const auto fused = percept::fuse(tape, feats, model.fusion);
      const auto raw = percept::detect_head(tape, fused, model.head);
      const auto labels = ground_truth_labels(sc, s.frame, wc.lidar, wc.min_visible_rays, group);
      auto loss = selftrain::detection_loss(tape, raw, labels, sc.grid, sched.loss);
      const double v = loss.total.item();
      if (!std::isfinite(v))
        throw NumericalError("pretrain: non-finite loss for family " + family + " at epoch " +
                             std::to_string(epoch) + " (seed " + std::to_string(cfg.seed) + ")");
      rec.loss += v / static_cast<double>(samples.size());
      rec.positives += loss.positives;
      tape.backward(loss.total);
      opt.step(lr);
    }
    local.epochs.push_back(rec);
  }
  model.set_trainable(false);
  if (log) *log = std::move(local);
  return model;
}

}  // namespace phcp::experiment
