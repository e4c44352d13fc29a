#include "phcp/selftrain/selftrain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "phcp/common/error.hpp"

namespace phcp::selftrain {

using nd::Tensor;

PseudoLabelSet make_pseudo_labels(const percept::DetectionSet& preds, const PseudoLabelConfig& cfg,
                                  int source_agent) {
  PseudoLabelSet out;
  out.mode = cfg.mode;
  out.threshold = cfg.mode == PseudoMode::Hard ? cfg.threshold : cfg.soft_floor;
  out.source_agent = source_agent;
  out.frame = preds.frame;
  for (const auto& d : preds.items) {
    if (d.confidence < out.threshold) continue;
    PseudoLabel l;
    l.box = d.box;
    l.source_confidence = d.confidence;
    l.target_score = cfg.mode == PseudoMode::Hard ? 1.0 : d.confidence;
    if (l.target_score <= 0.0) continue;  // target must lie in (0, 1]
    out.labels.push_back(l);
  }
  return out;
}

SupportSet build_support_set(const world::Scenario& scenario, int collaborator,
                             const std::vector<StageOneRecord>& traffic,
                             const PseudoLabelConfig& pseudo) {
  const auto& collab = scenario.agent(collaborator);
  const auto& ego = scenario.ego();
  if (collab.encoder_family == ego.encoder_family)
    throw ConfigError("collaborator " + std::to_string(collaborator) +
                      " is homogeneous with the ego; no adapter is needed");
  SupportSet s;
  s.collaborator = collaborator;
  s.family = collab.encoder_family;
  for (int f : scenario.support) {
    SupportEntry e;
    e.frame = f;
    const StageOneRecord* own = nullptr;
    for (const auto& rec : traffic) {
      if (rec.frame != f) continue;
      if (scenario.agent(rec.sender).encoder_family == collab.encoder_family)
        e.group.push_back(rec.feature);
      if (rec.sender == collaborator) own = &rec;
    }
    if (!own)
      throw ProtocolError("no Stage-I message from collaborator " + std::to_string(collaborator) +
                          " for support frame " + std::to_string(f));
    const auto& ego_pose = scenario.frames.at(f).agent_poses.at(0);
    e.labels = make_pseudo_labels(percept::to_ego(own->detections, ego_pose), pseudo, collaborator);
    e.labels.frame = f;
    s.entries.push_back(std::move(e));
  }
  return s;
}

LossTargets assign_targets(const std::vector<PseudoLabel>& labels, const world::GridSpec& grid) {
  const std::size_t hw = grid.height * grid.width;
  LossTargets t;
  t.objectness.assign(hw, 0.0);
  t.regression.assign(percept::kRegressionChannels * hw, 0.0);
  t.reg_mask.assign(percept::kRegressionChannels * hw, 0);
  for (const auto& l : labels) {
    std::size_t r, c;
    if (!grid.locate({l.box.center_x, l.box.center_y}, r, c)) {
      ++t.skipped;
      continue;
    }
    const std::size_t i = r * grid.width + c;
    if (t.reg_mask[i] && t.objectness[i] >= l.target_score) continue;
    if (!t.reg_mask[i]) ++t.positives;
    t.objectness[i] = l.target_score;
    const auto ctr = grid.cell_center(r, c);
    const double yaw = percept::canonical_yaw(l.box.yaw);
    const double vals[percept::kRegressionChannels] = {
        (l.box.center_x - ctr.x) / grid.cell_size, (l.box.center_y - ctr.y) / grid.cell_size,
        std::log(l.box.length), std::log(l.box.width), std::sin(yaw), std::cos(yaw)};
    for (std::size_t k = 0; k < percept::kRegressionChannels; ++k) {
      t.regression[k * hw + i] = vals[k];
      t.reg_mask[k * hw + i] = 1;
    }
  }
  return t;
}

LossValue detection_loss(nd::Tape& tape, const percept::RawHeadOutput& raw,
                         const std::vector<PseudoLabel>& labels, const world::GridSpec& grid,
                         const LossConfig& cfg) {
  const auto t = assign_targets(labels, grid);
  LossValue out;
  out.positives = t.positives;
  out.skipped = t.skipped;
  const double cls_norm = cfg.cls_normalization == ClsNormalization::Cells
                              ? static_cast<double>(grid.height * grid.width)
                              : static_cast<double>(std::max(1, t.positives));
  auto cls = nd::scale(
      tape, nd::sum(tape, nd::focal_bce_with_logits(tape, raw.objectness, t.objectness, cfg.focal_gamma)),
      1.0 / cls_norm);
  out.cls = cls.item();
  Tensor total = nd::scale(tape, cls, cfg.lambda_cls);
  if (t.positives > 0) {
    auto reg = nd::scale(
        tape,
        nd::sum(tape, nd::smooth_l1(tape, raw.regression, t.regression, t.reg_mask, cfg.smooth_l1_beta)),
        1.0 / t.positives);
    out.reg = reg.item();
    total = nd::add(tape, total, nd::scale(tape, reg, cfg.lambda_reg));
  }
  out.total = total;
  return out;
}

void validate(const TrainConfig& cfg) {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(cfg.base_lr > 0.0)) fail("base_lr must be positive");
  if (cfg.warmup_factor < 0.0 || cfg.warmup_factor > 1.0) fail("warmup_factor must lie in [0, 1]");
  if (cfg.warmup_epochs < 0) fail("warmup_epochs must be >= 0");
  if (cfg.epochs < 1) fail("epochs must be >= 1");
  if (cfg.batch != 1) fail("only batch size 1 is supported");
  for (int m : cfg.milestones) {
    if (m <= cfg.warmup_epochs) fail("milestones must exceed warmup_epochs");
    if (m > cfg.epochs) fail("epochs must be >= every milestone");
  }
  if (!std::is_sorted(cfg.milestones.begin(), cfg.milestones.end())) fail("milestones must be sorted");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) fail("momentum must lie in [0, 1)");
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw ConfigError("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(cfg.epochs) + ")");
  if (epoch < cfg.warmup_epochs) {
    const double alpha = static_cast<double>(epoch) / cfg.warmup_epochs;
    return cfg.base_lr * (cfg.warmup_factor + (1.0 - cfg.warmup_factor) * alpha);
  }
  double lr = cfg.base_lr;
  for (int m : cfg.milestones)
    if (epoch >= m) lr *= cfg.gamma;
  return lr;
}

Optimizer::Optimizer(std::vector<Tensor> params, OptimizerKind kind, double momentum)
    : params_(std::move(params)), kind_(kind), momentum_(momentum) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(kind == OptimizerKind::Adam ? p.numel() : 0, 0.0);
  }
}

void Optimizer::step(double lr) {
  ++t_;
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (kind_ == OptimizerKind::Sgd) {
        if (momentum_ > 0.0) {
          m_[k][i] = momentum_ * m_[k][i] + g[i];
          w[i] -= lr * m_[k][i];
        } else {
          w[i] -= lr * g[i];
        }
      } else {
        m_[k][i] = b1 * m_[k][i] + (1.0 - b1) * g[i];
        v_[k][i] = b2 * v_[k][i] + (1.0 - b2) * g[i] * g[i];
        const double mh = m_[k][i] / (1.0 - std::pow(b1, static_cast<double>(t_)));
        const double vh = v_[k][i] / (1.0 - std::pow(b2, static_cast<double>(t_)));
        w[i] -= lr * mh / (std::sqrt(vh) + eps);
      }
    }
    p.zero_grad();
  }
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,lr,loss,positives\n";
  for (const auto& e : epochs) os << e.epoch << ',' << e.lr << ',' << e.loss << ',' << e.positives << '\n';
  return os.str();
}

TrainLog fine_tune_adapter(const SupportSet& support, const EgoStack& ego, adapter::AdapterParams& params,
                           const TrainConfig& cfg, const std::vector<percept::FeatureMap>* ego_features) {
  validate(cfg);
  if (support.entries.empty()) throw ConfigError("fine_tune_adapter: empty support set");
  if (!ego.fusion || !ego.head) throw ConfigError("fine_tune_adapter: ego stack not set");
  for (const auto* t : {&ego.fusion->score_w, &ego.fusion->score_b, &ego.head->cls_w, &ego.head->cls_b,
                        &ego.head->reg_w, &ego.head->reg_b})
    if (t->requires_grad()) throw ConfigError("fine_tune_adapter: ego fusion/head must be frozen");
  if (cfg.include_ego_feature && (!ego_features || ego_features->size() != support.entries.size()))
    throw ConfigError("fine_tune_adapter: one ego feature per support entry is required");

  auto trainable = params.parameters();
  for (auto& t : trainable) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  Optimizer opt(trainable, cfg.optimizer, cfg.momentum);
  TrainLog log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    EpochLog rec;
    rec.epoch = epoch;
    rec.lr = lr;
    for (std::size_t i = 0; i < support.entries.size(); ++i) {
      const auto& entry = support.entries[i];
      nd::Tape tape;
      std::vector<Tensor> candidates;
      if (cfg.include_ego_feature) candidates.push_back((*ego_features)[i].values);
      for (const auto& f : entry.group)
        candidates.push_back(adapter::adapter_forward(tape, f, params, ego.family).values);
      const auto fused = percept::fuse(tape, candidates, *ego.fusion);
      const auto raw = percept::detect_head(tape, fused, *ego.head);
      const auto& grid = entry.group.front().grid;
      auto loss = detection_loss(tape, raw, entry.labels.labels, grid, cfg.loss);
      const double value = loss.total.item();
      if (!std::isfinite(value))
        throw NumericalError("fine_tune_adapter: non-finite loss at epoch " + std::to_string(epoch) +
                             ", support frame " + std::to_string(entry.frame));
      rec.loss += value / static_cast<double>(support.entries.size());
      rec.positives += loss.positives;
      tape.backward(loss.total);
      opt.step(lr);
    }
    log.epochs.push_back(rec);
  }
  for (auto& t : trainable) t.clear_grad();
  return log;
}

}  // namespace phcp::selftrain
