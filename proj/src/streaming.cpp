#include "partner/streaming.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "partner/synth.hpp"

namespace partner::streaming
{

void LatencyModel::validate() const
{
  if (!(rotation_period > 0.0) || !(per_column_cost >= 0.0) || !(overhead_per_sector >= 0.0)) {
    throw std::invalid_argument("latency model: period must be positive and costs non-negative");
  }
}

LatencyModel latency_model_from_json(const nlohmann::json & j)
{
  if (!j.is_object()) {
    throw std::invalid_argument("latency model: expected an object");
  }
  LatencyModel m;
  for (const auto & [key, v] : j.items()) {
    if (key == "rotation_period") {
      m.rotation_period = v.get<double>();
    } else if (key == "per_column_cost") {
      m.per_column_cost = v.get<double>();
    } else if (key == "overhead_per_sector") {
      m.overhead_per_sector = v.get<double>();
    } else {
      throw std::invalid_argument("latency model: unknown key '" + key + "'");
    }
  }
  m.validate();
  return m;
}

LatencyModel load_latency_model(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  return latency_model_from_json(nlohmann::json::parse(in));
}

std::vector<SectorTiming> schedule(std::size_t n_sectors, double sector_cost, const LatencyModel & model)
{
  model.validate();
  std::vector<SectorTiming> out(n_sectors);
  double prev_finish = 0.0;
  for (std::size_t k = 0; k < n_sectors; ++k) {
    SectorTiming & t = out[k];
    t.arrival = static_cast<double>(k + 1) / static_cast<double>(n_sectors) * model.rotation_period;
    t.start = std::max(t.arrival, prev_finish);
    t.finish = t.start + sector_cost;
    prev_finish = t.finish;
  }
  return out;
}

void check_sector_count(const GridSpec & spec, const ModelConfig & model, std::size_t n_sectors)
{
  spec.validate();
  if (n_sectors == 0 || spec.cols() % n_sectors != 0) {
    throw std::invalid_argument(
      "streaming: " + std::to_string(n_sectors) + " sectors do not divide " + std::to_string(spec.cols()) + " BEV columns");
  }
  const std::size_t cols = spec.cols() / n_sectors;
  const bool periodic = n_sectors == 1;
  if (model.use_grr) {
    model.grr.validate(spec.rows(), cols, periodic);
  }
  if (model.use_ga) {
    model.ga.validate(spec.rows(), cols, periodic);
  }
}

std::vector<head::Detection> run_full(const PointCloud & cloud, const Pipeline & pipeline)
{
  if (pipeline.params == nullptr) {
    throw std::invalid_argument("pipeline: no parameters");
  }
  const PolarGrid grid(pipeline.spec);
  return detect(voxelize(cloud, grid), grid, pipeline.model, *pipeline.params, pipeline.decode);
}

StreamReport run_streaming(
  const PointCloud & cloud, std::size_t n_sectors, const Pipeline & pipeline, const LatencyModel & model)
{
  if (pipeline.params == nullptr) {
    throw std::invalid_argument("pipeline: no parameters");
  }
  check_sector_count(pipeline.spec, pipeline.model, n_sectors);
  model.validate();
  const std::size_t cols = pipeline.spec.cols() / n_sectors;
  const double cost = model.per_column_cost * static_cast<double>(cols) + model.overhead_per_sector;
  const auto timings = schedule(n_sectors, cost, model);
  const auto clouds = sectorize(cloud, n_sectors, pipeline.spec.n_azimuth);

  StreamReport report;
  for (std::size_t k = 0; k < n_sectors; ++k) {
    const PolarGrid grid(pipeline.spec, k, n_sectors);
    SectorResult r;
    r.timing = timings[k];
    r.n_points = clouds[k].size();
    r.peak_cells = grid.peak_fine_cells();
    r.detections = detect(voxelize(clouds[k], grid), grid, pipeline.model, *pipeline.params, pipeline.decode);
    report.detections.insert(report.detections.end(), r.detections.begin(), r.detections.end());
    report.mean_latency += r.timing.latency();
    report.max_latency = std::max(report.max_latency, r.timing.latency());
    report.peak_cells = std::max(report.peak_cells, r.peak_cells);
    report.sectors.push_back(std::move(r));
  }
  report.mean_latency /= static_cast<double>(n_sectors);
  return report;
}

std::pair<double, double> mean_ap(const std::vector<eval::SceneDetections> & scenes, const eval::EvalConfig & cfg)
{
  double ap = 0.0, aph = 0.0;
  std::size_t n = 0;
  for (const auto & [cls, m] : eval::evaluate(scenes, cfg)) {
    if (m.overall.ap) {
      ap += *m.overall.ap;
      aph += *m.overall.aph;
      ++n;
    }
  }
  if (n == 0) {
    return {0.0, 0.0};
  }
  return {ap / static_cast<double>(n), aph / static_cast<double>(n)};
}

std::vector<CompareRow> compare_streaming_vs_full(
  const PointCloud & cloud, const std::vector<head::LabeledBox> & boxes, const std::vector<std::size_t> & n_list,
  const Pipeline & pipeline, const LatencyModel & model, const eval::EvalConfig & eval_cfg)
{
  std::vector<std::size_t> points;
  for (const auto & b : boxes) {
    points.push_back(synth::points_in_box(cloud, b.box));
  }
  std::vector<CompareRow> rows;
  for (std::size_t n : n_list) {
    const StreamReport report = run_streaming(cloud, n, pipeline, model);
    const auto [ap, aph] = mean_ap({{report.detections, boxes, points}}, eval_cfg);
    rows.push_back({n, report.mean_latency, report.max_latency, report.peak_cells, ap, aph});
  }
  return rows;
}

}  // namespace partner::streaming
