#pragma once

#include <vector>

#include "phcp/percept/model.hpp"

namespace phcp::percept {

enum class CoordFrame { Ego, Global };

struct Detection {
  ObjectBox box;
  double confidence = 0.0;
};

struct DetectionSet {
  std::vector<Detection> items;  // descending confidence
  int frame = 0;
  CoordFrame coords = CoordFrame::Ego;
};

struct DecodeConfig {
  double conf_floor = 0.25;
  double nms_iou = 0.15;
};

/// Greedy NMS: visit in descending confidence (ties by input order) and drop
/// any box whose IoU with an already kept box is >= iou_threshold.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

/// Cells with sigmoid(objectness) >= conf_floor become boxes, then NMS.
DetectionSet decode_nms(const RawHeadOutput& raw, const world::GridSpec& grid, const DecodeConfig& cfg,
                        int frame = 0);

/// Yaw folded into (-pi/4, 3pi/4]; a box is unchanged by a half turn.
double canonical_yaw(double yaw);

DetectionSet to_global(const DetectionSet& ego_frame, const Pose& ego_pose);
DetectionSet to_ego(const DetectionSet& global, const Pose& ego_pose);

}  // namespace phcp::percept
