#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "phcp/percept/model.hpp"
#include "phcp/selftrain/selftrain.hpp"
#include "phcp/world/generator.hpp"

namespace phcp::experiment {

struct PretrainConfig {
  int scenarios = 160;  // homogeneous training scenarios per family
  int frames_per_scenario = 2;
  int epochs = 16;
  double base_lr = 0.01;
  double warmup_factor = 0.01;
  int warmup_epochs = 2;
  std::vector<int> milestones{11, 14};
  selftrain::OptimizerKind optimizer = selftrain::OptimizerKind::Adam;
  double full_group_probability = 0.5;  // otherwise a random nonempty agent subset
  selftrain::ClsNormalization cls_normalization = selftrain::ClsNormalization::Positives;
  std::uint64_t seed = 7;
};

void validate(const PretrainConfig& cfg);

/// The optimizer schedule used by pretraining, in TrainConfig form.
selftrain::TrainConfig pretrain_schedule(const PretrainConfig& cfg);

/// Ground-truth labels for a group of agents: objects seen by any of them.
std::vector<selftrain::PseudoLabel> ground_truth_labels(const world::Scenario& sc, int frame,
                                                        const world::LidarConfig& lidar, int min_rays,
                                                        const std::vector<int>& agent_ids);

/// Trains encoder, fusion and head of one family end to end on homogeneous
/// scenarios with ground-truth labels. The result is frozen.
percept::ModelWeights pretrain_family(const world::WorldConfig& world, const percept::FamilyRegistry& families,
                                      const std::string& family, const PretrainConfig& cfg,
                                      selftrain::TrainLog* log = nullptr);

}  // namespace phcp::experiment
