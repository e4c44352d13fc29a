#pragma once

#include <optional>
#include <string>
#include <vector>

#include "phcp/adapter/adapter.hpp"
#include "phcp/percept/detection.hpp"
#include "phcp/world/types.hpp"

namespace phcp::selftrain {

// ---------------------------------------------------------------------------
// Pseudo-labels

enum class PseudoMode { Hard, Soft };

struct PseudoLabelConfig {
  PseudoMode mode = PseudoMode::Hard;
  double threshold = 0.5;   // hard mode: keep confidence >= threshold
  double soft_floor = 0.2;  // soft mode: keep confidence >= floor
};

struct PseudoLabel {
  ObjectBox box;
  double target_score = 1.0;  // 1 in hard mode, the source confidence in soft mode
  double source_confidence = 0.0;
};

struct PseudoLabelSet {
  std::vector<PseudoLabel> labels;
  PseudoMode mode = PseudoMode::Hard;
  double threshold = 0.5;
  int source_agent = -1;
  int frame = 0;
};

PseudoLabelSet make_pseudo_labels(const percept::DetectionSet& preds, const PseudoLabelConfig& cfg,
                                  int source_agent = -1);

// ---------------------------------------------------------------------------
// Support set

/// What the ego received from one sender during one Stage-I frame.
struct StageOneRecord {
  int frame = 0;
  int sender = 0;
  percept::FeatureMap feature;
  percept::DetectionSet detections;  // global frame
};

struct SupportEntry {
  int frame = 0;
  std::vector<percept::FeatureMap> group;  // features of every agent homogeneous with the collaborator
  PseudoLabelSet labels;                    // ego frame
};

struct SupportSet {
  int collaborator = 0;
  std::string family;
  std::vector<SupportEntry> entries;
};

/// Collects, for each support frame, the collaborator's homogeneous group
/// features and the collaborator's own (group-fused) detections as labels.
/// Throws ConfigError if the collaborator shares the ego's family.
SupportSet build_support_set(const world::Scenario& scenario, int collaborator,
                             const std::vector<StageOneRecord>& traffic,
                             const PseudoLabelConfig& pseudo);

// ---------------------------------------------------------------------------
// Loss

enum class ClsNormalization { Cells, Positives };

struct LossConfig {
  double lambda_cls = 1.0;
  double lambda_reg = 2.0;
  double focal_gamma = 2.0;
  double smooth_l1_beta = 1.0 / 9.0;
  ClsNormalization cls_normalization = ClsNormalization::Cells;
};

struct LossTargets {
  std::vector<double> objectness;         // H*W soft targets
  std::vector<double> regression;         // 6*H*W
  std::vector<unsigned char> reg_mask;    // 6*H*W
  int positives = 0;
  int skipped = 0;  // labels whose center falls outside the grid
};

/// Center-cell assignment; a cell claimed twice keeps the higher target score.
LossTargets assign_targets(const std::vector<PseudoLabel>& labels, const world::GridSpec& grid);

struct LossValue {
  nd::Tensor total;  // scalar
  double cls = 0.0;
  double reg = 0.0;
  int positives = 0;
  int skipped = 0;
};

LossValue detection_loss(nd::Tape& tape, const percept::RawHeadOutput& raw,
                         const std::vector<PseudoLabel>& labels, const world::GridSpec& grid,
                         const LossConfig& cfg);

// ---------------------------------------------------------------------------
// Optimization

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
  double base_lr = 0.005;
  double warmup_factor = 0.001;
  int warmup_epochs = 8;
  std::vector<int> milestones{12, 16};
  double gamma = 0.1;
  int epochs = 20;
  int batch = 1;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double momentum = 0.0;
  PseudoLabelConfig pseudo;
  // Few pseudo-labels per frame: normalizing by cells drowns them in negatives.
  LossConfig loss{1.0, 2.0, 2.0, 1.0 / 9.0, ClsNormalization::Positives};
  bool include_ego_feature = true;  // fuse the ego's own feature during adapter training
};

void validate(const TrainConfig& cfg);

/// Linear warmup from base_lr*warmup_factor, then x gamma at each milestone.
double lr_schedule(int epoch, const TrainConfig& cfg);

/// Plain SGD (optionally with momentum) or Adam over a fixed parameter list.
class Optimizer {
 public:
  Optimizer(std::vector<nd::Tensor> params, OptimizerKind kind, double momentum);
  /// Applies one update with the given learning rate, then zeroes gradients.
  void step(double lr);

 private:
  std::vector<nd::Tensor> params_;
  OptimizerKind kind_;
  double momentum_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;  // mean over the epoch's support entries, before each update
  int positives = 0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::string to_csv() const;  // epoch,lr,loss,positives
};

/// Frozen parts of the ego's model used while fine-tuning.
struct EgoStack {
  const percept::FusionWeights* fusion = nullptr;
  const percept::HeadWeights* head = nullptr;
  std::string family;
};

/// Adapter-only fine-tuning: for every epoch, every support entry (batch 1)
/// runs adapter -> fuse -> head -> loss, then one optimizer step. `ego_features`
/// (one per entry) is required when cfg.include_ego_feature is set.
TrainLog fine_tune_adapter(const SupportSet& support, const EgoStack& ego, adapter::AdapterParams& params,
                           const TrainConfig& cfg,
                           const std::vector<percept::FeatureMap>* ego_features = nullptr);

}  // namespace phcp::selftrain
