#pragma once

#include <map>
#include <string>
#include <vector>

#include "phcp/percept/detection.hpp"

namespace phcp::eval {

/// IoU thresholds every report carries.
inline const std::vector<double> kIouThresholds{0.3, 0.5, 0.7};

/// Outcome of greedy matching for one prediction.
struct MatchRecord {
  int frame = 0;
  double confidence = 0.0;
  bool true_positive = false;
};

/// Per frame, predictions in descending confidence each take the unmatched
/// ground-truth box of highest IoU, provided IoU >= iou_thresh.
std::vector<MatchRecord> match_frames(const std::vector<percept::DetectionSet>& preds,
                                      const std::vector<std::vector<ObjectBox>>& gts,
                                      double iou_thresh);

/// All-point interpolated average precision over the global confidence
/// ranking. Predictions sharing a confidence enter the curve together.
/// No ground truth and no predictions gives 1; no ground truth with
/// predictions gives 0.
double ap_at_iou(const std::vector<percept::DetectionSet>& preds,
                 const std::vector<std::vector<ObjectBox>>& gts, double iou_thresh);

struct ScenarioResult {
  std::string scenario_id;
  std::map<double, double> ap;  // IoU threshold -> AP
  int frames = 0;
  int ground_truth = 0;
  int predictions = 0;
};

ScenarioResult evaluate_scenario(const std::string& scenario_id,
                                 const std::vector<percept::DetectionSet>& preds,
                                 const std::vector<std::vector<ObjectBox>>& gts,
                                 const std::vector<double>& thresholds = kIouThresholds);

struct Report {
  std::string mode;
  std::vector<ScenarioResult> results;
  std::map<double, double> msap;  // mean over scenarios
  std::map<double, double> wsap;  // minimum over scenarios
  std::string fingerprint;
  std::vector<std::uint64_t> seeds;
};

/// Throws ConfigError on an empty result list or mismatched thresholds.
Report aggregate(std::vector<ScenarioResult> results, const std::string& mode = "");

/// raw[i][j] = AP of the adapter trained on scenario i, evaluated on j.
/// Each column is divided by its diagonal entry; a zero diagonal is an error.
std::vector<std::vector<double>> normalize_cross_matrix(const std::vector<std::vector<double>>& raw,
                                                        const std::vector<std::string>& ids);

/// Median of the off-diagonal entries.
double off_diagonal_median(const std::vector<std::vector<double>>& m);

std::string report_to_json(const Report& r);
/// Flat table: scenario,mode,iou,ap (plus msap/wsap summary rows).
std::string report_to_csv(const Report& r);
std::string matrix_to_csv(const std::vector<std::vector<double>>& m, const std::vector<std::string>& ids,
                          const std::string& fingerprint);
/// One "x,y,value" row per entry.
std::string matrix_plot_data(const std::vector<std::vector<double>>& m, const std::string& fingerprint);

/// Fixed-precision rendering used by every report writer so that reruns are
/// byte-identical.
std::string format_number(double v);

}  // namespace phcp::eval
