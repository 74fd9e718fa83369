#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "json.hpp"
#include "partner/head.hpp"

// Greedy BEV matching, 40-point interpolated AP, heading-weighted APH, range bins.
namespace partner::eval
{

struct MatchResult
{
  std::vector<int> det_gt;           // matched GT index or -1
  std::vector<double> det_iou;       // IoU with the matched GT (best IoU seen when unmatched)
  std::vector<double> det_heading;   // h = max(0, 1 - dtheta / pi) when matched, else 0
  std::vector<char> gt_matched;
};

/// Detections in descending score (input order breaks ties) take the unmatched GT of highest
/// rotated BEV IoU when it is >= iou_threshold. Classes are not checked.
MatchResult match(const std::vector<head::Detection> & dets, const std::vector<head::Box3D> & gts, double iou_threshold);

/// Heading accuracy weight of a true positive.
double heading_weight(double theta_det, double theta_gt);

struct ScoredDet
{
  double score{0.0};
  bool tp{false};
  double h{1.0};  // heading weight of a true positive
};

struct PrInput
{
  std::vector<ScoredDet> dets;
  std::size_t n_gt{0};
};

inline constexpr std::size_t kRecallPoints = 40;

/// Mean over recall r = 1/40 ... 40/40 of the best precision at recall >= r (0 when unreached).
/// Absent when there is no ground truth.
std::optional<double> average_precision(const PrInput & in);

/// As average_precision with true positives counted by their heading weight in the precision.
std::optional<double> average_precision_heading(const PrInput & in);

inline const std::vector<double> kRangeEdges{0.0, 30.0, 50.0};

struct BinMetrics
{
  std::optional<double> ap;
  std::optional<double> aph;
  std::size_t n_gt{0};
  std::size_t n_det{0};
};

/// One scene of one class: detections, boxes and per-GT point counts (empty = all counted).
struct SceneCase
{
  std::vector<head::Detection> dets;
  std::vector<head::Box3D> gts;
  std::vector<std::size_t> gt_points;
};

/// GT kept at a difficulty level: level 1 needs more than 5 points, level 2 at least 1.
bool gt_in_level(std::size_t n_points, int level);

/// Matches each scene against all its GT, then drops detections matched to GT outside the level
/// and splits the rest into bins: GT and their matches by GT center range, unmatched detections
/// by their own center range. Bin k covers [edges[k], edges[k+1]), the last is open.
std::vector<BinMetrics> range_breakdown(
  const std::vector<SceneCase> & scenes, double iou_threshold, int level = 2,
  const std::vector<double> & edges = kRangeEdges);

/// Whole-range AP / APH for one class over scenes, same filtering as range_breakdown.
BinMetrics evaluate_class(const std::vector<SceneCase> & scenes, double iou_threshold, int level = 2);

struct EvalConfig
{
  std::array<double, 3> iou_threshold{0.7, 0.5, 0.5};
  int level{2};
};

struct ClassMetrics
{
  BinMetrics overall;
  std::vector<BinMetrics> per_range;
};

struct SceneDetections
{
  std::vector<head::Detection> dets;
  std::vector<head::LabeledBox> gts;
  std::vector<std::size_t> gt_points;
};

/// Metrics for every class that has ground truth or detections.
std::map<int, ClassMetrics> evaluate(const std::vector<SceneDetections> & scenes, const EvalConfig & cfg);

/// {class_name: {ap, aph, per_range: {"0-30": {...}, ...}, level}}; absent values are null.
nlohmann::json metrics_to_json(const std::map<int, ClassMetrics> & metrics, const EvalConfig & cfg);

/// One JSON object per line: {cls, score, iou, box: [cx, cy, cz, w, l, h, theta]}.
void save_detections(const std::vector<head::Detection> & dets, const std::filesystem::path & path);
std::vector<head::Detection> load_detections(const std::filesystem::path & path);

}  // namespace partner::eval
