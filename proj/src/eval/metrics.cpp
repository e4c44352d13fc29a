#include "phcp/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "phcp/common/error.hpp"

namespace phcp::eval {

std::vector<MatchRecord> match_frames(const std::vector<percept::DetectionSet>& preds,
                                      const std::vector<std::vector<ObjectBox>>& gts,
                                      double iou_thresh) {
  if (preds.size() != gts.size())
    throw ShapeError("evaluation: " + std::to_string(preds.size()) + " prediction frames but " +
                     std::to_string(gts.size()) + " ground-truth frames");
  std::vector<MatchRecord> out;
  for (std::size_t f = 0; f < preds.size(); ++f) {
    auto items = preds[f].items;
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
    std::vector<bool> taken(gts[f].size(), false);
    for (const auto& d : items) {
      int best = -1;
      double best_iou = iou_thresh;
      for (std::size_t g = 0; g < gts[f].size(); ++g) {
        if (taken[g]) continue;
        const double iou = rotated_iou(d.box, gts[f][g]);
        if (iou >= best_iou && (best < 0 || iou > best_iou)) {
          best = static_cast<int>(g);
          best_iou = iou;
        }
      }
      if (best >= 0) taken[best] = true;
      out.push_back({static_cast<int>(f), d.confidence, best >= 0});
    }
  }
  return out;
}

double ap_at_iou(const std::vector<percept::DetectionSet>& preds,
                 const std::vector<std::vector<ObjectBox>>& gts, double iou_thresh) {
  auto recs = match_frames(preds, gts, iou_thresh);
  std::size_t total_gt = 0;
  for (const auto& g : gts) total_gt += g.size();
  if (total_gt == 0) return recs.empty() ? 1.0 : 0.0;
  if (recs.empty()) return 0.0;

  std::stable_sort(recs.begin(), recs.end(),
                   [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
  std::vector<double> recall, precision;
  std::size_t tp = 0, n = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    ++n;
    if (recs[i].true_positive) ++tp;
    if (i + 1 < recs.size() && recs[i + 1].confidence == recs[i].confidence) continue;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(n));
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_r = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_r) * precision[i];
    prev_r = recall[i];
  }
  return ap;
}

ScenarioResult evaluate_scenario(const std::string& scenario_id,
                                 const std::vector<percept::DetectionSet>& preds,
                                 const std::vector<std::vector<ObjectBox>>& gts,
                                 const std::vector<double>& thresholds) {
  ScenarioResult r;
  r.scenario_id = scenario_id;
  r.frames = static_cast<int>(preds.size());
  for (const auto& g : gts) r.ground_truth += static_cast<int>(g.size());
  for (const auto& p : preds) r.predictions += static_cast<int>(p.items.size());
  for (double t : thresholds) r.ap[t] = ap_at_iou(preds, gts, t);
  return r;
}

Report aggregate(std::vector<ScenarioResult> results, const std::string& mode) {
  if (results.empty()) throw ConfigError("aggregate: no scenario results");
  Report rep;
  rep.mode = mode;
  for (const auto& [iou, _] : results.front().ap) {
    double sum = 0.0, worst = std::numeric_limits<double>::infinity();
    for (const auto& r : results) {
      auto it = r.ap.find(iou);
      if (it == r.ap.end())
        throw ConfigError("aggregate: scenario " + r.scenario_id + " lacks AP at IoU " + format_number(iou));
      sum += it->second;
      worst = std::min(worst, it->second);
    }
    rep.msap[iou] = sum / static_cast<double>(results.size());
    rep.wsap[iou] = worst;
  }
  rep.results = std::move(results);
  return rep;
}

std::vector<std::vector<double>> normalize_cross_matrix(const std::vector<std::vector<double>>& raw,
                                                        const std::vector<std::string>& ids) {
  const std::size_t n = raw.size();
  for (const auto& row : raw)
    if (row.size() != n) throw ShapeError("cross matrix must be square");
  auto out = raw;
  for (std::size_t j = 0; j < n; ++j) {
    const double d = raw[j][j];
    if (!(d > 0.0))
      throw NumericalError("cross matrix: scenario " + (j < ids.size() ? ids[j] : std::to_string(j)) +
                           " has zero AP under its own adapter; the scenario is degenerate");
    for (std::size_t i = 0; i < n; ++i) out[i][j] = i == j ? 1.0 : raw[i][j] / d;
  }
  return out;
}

double off_diagonal_median(const std::vector<std::vector<double>>& m) {
  std::vector<double> v;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j)
      if (i != j) v.push_back(m[i][j]);
  if (v.empty()) throw ConfigError("off-diagonal median needs at least two scenarios");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

namespace {
std::string iou_key(double iou) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.1f", iou);
  return buf;
}

nlohmann::ordered_json ap_map(const std::map<double, double>& m) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m) j[iou_key(k)] = std::round(v * 1e6) / 1e6;
  return j;
}
}  // namespace

std::string report_to_json(const Report& r) {
  nlohmann::ordered_json j;
  j["schema"] = "phcp.report";
  j["version"] = 1;
  j["fingerprint"] = r.fingerprint;
  j["mode"] = r.mode;
  j["seeds"] = r.seeds;
  j["msap"] = ap_map(r.msap);
  j["wsap"] = ap_map(r.wsap);
  auto& arr = j["scenarios"] = nlohmann::ordered_json::array();
  for (const auto& s : r.results) {
    nlohmann::ordered_json e;
    e["id"] = s.scenario_id;
    e["frames"] = s.frames;
    e["ground_truth"] = s.ground_truth;
    e["predictions"] = s.predictions;
    e["ap"] = ap_map(s.ap);
    arr.push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

std::string report_to_csv(const Report& r) {
  std::ostringstream os;
  os << "# fingerprint " << r.fingerprint << "\n";
  os << "scenario,mode,iou,ap\n";
  for (const auto& s : r.results)
    for (const auto& [iou, ap] : s.ap)
      os << s.scenario_id << ',' << r.mode << ',' << iou_key(iou) << ',' << format_number(ap) << '\n';
  for (const auto& [iou, v] : r.msap) os << "mSAP," << r.mode << ',' << iou_key(iou) << ',' << format_number(v) << '\n';
  for (const auto& [iou, v] : r.wsap) os << "wSAP," << r.mode << ',' << iou_key(iou) << ',' << format_number(v) << '\n';
  return os.str();
}

std::string matrix_to_csv(const std::vector<std::vector<double>>& m, const std::vector<std::string>& ids,
                          const std::string& fingerprint) {
  std::ostringstream os;
  os << "# fingerprint " << fingerprint << "\n";
  os << "trained_on";
  for (const auto& id : ids) os << ',' << id;
  os << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    os << (i < ids.size() ? ids[i] : std::to_string(i));
    for (double v : m[i]) os << ',' << format_number(v);
    os << '\n';
  }
  return os.str();
}

std::string matrix_plot_data(const std::vector<std::vector<double>>& m, const std::string& fingerprint) {
  std::ostringstream os;
  os << "# fingerprint " << fingerprint << "\n";
  os << "x,y,value\n";
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) os << j << ',' << i << ',' << format_number(m[i][j]) << '\n';
  return os.str();
}

}  // namespace phcp::eval
