#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "partner/eval.hpp"
#include "partner/head.hpp"
#include "partner/model.hpp"
#include "partner/voxelize.hpp"

// Sector-by-sector processing of a sweep with a modeled arrival/compute schedule.
namespace partner::streaming
{

struct LatencyModel
{
  double rotation_period{0.1};
  /// Seconds per coarse azimuth column of the processed grid.
  double per_column_cost{1e-4};
  double overhead_per_sector{5e-4};

  /// Throws std::invalid_argument on negative values or a zero period.
  void validate() const;
};

/// Keys rotation_period, per_column_cost, overhead_per_sector; unknown keys throw.
LatencyModel latency_model_from_json(const nlohmann::json & j);
LatencyModel load_latency_model(const std::filesystem::path & path);

struct SectorTiming
{
  double arrival{0.0};
  double start{0.0};
  double finish{0.0};
  double latency() const { return finish - arrival; }
};

/// arrival_k = (k+1)/n T, start_k = max(arrival_k, finish_{k-1}), finish_k = start_k + cost.
std::vector<SectorTiming> schedule(std::size_t n_sectors, double sector_cost, const LatencyModel & model);

/// Detector plus decoding used on every sector.
struct Pipeline
{
  GridSpec spec;
  ModelConfig model;
  const ModelParams * params{nullptr};
  head::DecodeConfig decode{};
};

/// Throws std::invalid_argument unless the sector grid tiles evenly and fits the attention windows.
void check_sector_count(const GridSpec & spec, const ModelConfig & model, std::size_t n_sectors);

struct SectorResult
{
  SectorTiming timing;
  std::vector<head::Detection> detections;
  std::size_t n_points{0};
  std::size_t peak_cells{0};
};

struct StreamReport
{
  std::vector<SectorResult> sectors;
  double mean_latency{0.0};
  double max_latency{0.0};
  std::size_t peak_cells{0};
  /// Concatenation over sectors in arrival order.
  std::vector<head::Detection> detections;
};

/// Full-sweep detections (the pipeline on the periodic grid).
std::vector<head::Detection> run_full(const PointCloud & cloud, const Pipeline & pipeline);

StreamReport run_streaming(
  const PointCloud & cloud, std::size_t n_sectors, const Pipeline & pipeline, const LatencyModel & model);

struct CompareRow
{
  std::size_t n_sectors{1};
  double mean_latency{0.0};
  double max_latency{0.0};
  std::size_t peak_cells{0};
  double ap{0.0};
  double aph{0.0};
};

/// Mean AP / APH over the classes with ground truth in the scenes (0 when none).
std::pair<double, double> mean_ap(const std::vector<eval::SceneDetections> & scenes, const eval::EvalConfig & cfg);

/// One row per n: latency, peak memory and AP against the scene boxes.
std::vector<CompareRow> compare_streaming_vs_full(
  const PointCloud & cloud, const std::vector<head::LabeledBox> & boxes, const std::vector<std::size_t> & n_list,
  const Pipeline & pipeline, const LatencyModel & model, const eval::EvalConfig & eval_cfg = {});

}  // namespace partner::streaming
