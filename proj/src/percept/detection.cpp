#include "phcp/percept/detection.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "phcp/common/error.hpp"

namespace phcp::percept {

namespace {
constexpr double kMinLogSize = -1.6;  // ~0.2 m
constexpr double kMaxLogSize = 3.0;   // ~20 m

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }
}  // namespace

double canonical_yaw(double yaw) {
  constexpr double pi = std::numbers::pi;
  yaw = wrap_angle(yaw);
  while (yaw > 0.75 * pi) yaw -= pi;
  while (yaw <= -0.25 * pi) yaw += pi;
  return yaw;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (rotated_iou(d.box, k.box) >= iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

DetectionSet decode_nms(const RawHeadOutput& raw, const world::GridSpec& grid, const DecodeConfig& cfg,
                        int frame) {
  if (cfg.conf_floor < 0.0 || cfg.conf_floor > 1.0 || cfg.nms_iou < 0.0 || cfg.nms_iou > 1.0)
    throw ConfigError("decode: conf_floor and nms_iou must lie in [0, 1]");
  const std::size_t h = grid.height, w = grid.width, hw = h * w;
  if (raw.objectness.numel() != hw || raw.regression.numel() != kRegressionChannels * hw)
    throw ShapeError("decode: head output does not match grid " + std::to_string(h) + "x" +
                     std::to_string(w));
  const auto obj = raw.objectness.data();
  const auto reg = raw.regression.data();
  std::vector<Detection> cands;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t i = r * w + c;
      const double p = sigmoid(obj[i]);
      if (p < cfg.conf_floor) continue;
      const auto ctr = grid.cell_center(r, c);
      Detection d;
      d.confidence = p;
      d.box.center_x = ctr.x + reg[i] * grid.cell_size;
      d.box.center_y = ctr.y + reg[hw + i] * grid.cell_size;
      d.box.length = std::exp(std::clamp(reg[2 * hw + i], kMinLogSize, kMaxLogSize));
      d.box.width = std::exp(std::clamp(reg[3 * hw + i], kMinLogSize, kMaxLogSize));
      d.box.yaw = std::atan2(reg[4 * hw + i], reg[5 * hw + i]);
      cands.push_back(d);
    }
  DetectionSet out;
  out.frame = frame;
  out.coords = CoordFrame::Ego;
  out.items = nms(std::move(cands), cfg.nms_iou);
  return out;
}

DetectionSet to_global(const DetectionSet& in, const Pose& ego_pose) {
  if (in.coords == CoordFrame::Global) return in;
  DetectionSet out = in;
  for (auto& d : out.items) d.box = box_to_global(ego_pose, d.box);
  out.coords = CoordFrame::Global;
  return out;
}

DetectionSet to_ego(const DetectionSet& in, const Pose& ego_pose) {
  if (in.coords == CoordFrame::Ego) return in;
  DetectionSet out = in;
  for (auto& d : out.items) d.box = box_to_local(ego_pose, d.box);
  out.coords = CoordFrame::Ego;
  return out;
}

}  // namespace phcp::percept
