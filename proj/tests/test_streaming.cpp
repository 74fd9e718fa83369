#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "checks.hpp"
#include "partner/streaming.hpp"
#include "partner/synth.hpp"

using namespace partner;
using streaming::LatencyModel;

namespace
{

GridSpec toy_grid()
{
  GridSpec s;
  s.range = {RangeDiscretization::UD, 1.0, 52.2, 128};
  s.n_azimuth = 256;
  s.downsample = 2;
  return s;
}

struct Fixture
{
  GridSpec spec = toy_grid();
  ModelConfig model;
  ModelParams params;
  synth::Scene scene;
  streaming::Pipeline pipeline;

  Fixture()
  {
    model.channels = 16;
    model.attn_dim = 16;
    params = init_params(model, 5);
    scene = synth::generate(synth::SceneConfig{}, 3);
    pipeline = {spec, model, &params, {}};
    pipeline.decode.max_dets = 100000;
  }
};

using checks::same_detection;

}  // namespace

TEST_CASE("schedule example")
{
  const LatencyModel m{0.1, 0.0, 0.0};
  const auto t = streaming::schedule(4, 0.005, m);
  const double arrivals[] = {0.025, 0.05, 0.075, 0.1}, finishes[] = {0.030, 0.055, 0.080, 0.105};
  double mean = 0.0;
  for (int k = 0; k < 4; ++k) {
    CHECK(t[k].arrival == doctest::Approx(arrivals[k]).epsilon(1e-12));
    CHECK(t[k].start == t[k].arrival);
    CHECK(t[k].finish == doctest::Approx(finishes[k]).epsilon(1e-12));
    mean += t[k].latency() / 4;
  }
  CHECK(mean == doctest::Approx(0.005).epsilon(1e-9));
  const auto one = streaming::schedule(1, 0.020, m);
  CHECK(one[0].latency() == doctest::Approx(0.020).epsilon(1e-12));
}

TEST_CASE("schedule queues when compute outlasts the sector period")
{
  const LatencyModel m{0.1, 0.0, 0.0};
  const auto t = streaming::schedule(4, 0.04, m);
  for (std::size_t k = 0; k < t.size(); ++k) {
    CHECK(t[k].start >= t[k].arrival);
    CHECK(t[k].finish == t[k].start + 0.04);
    if (k > 0) {
      CHECK(t[k].start == std::max(t[k].arrival, t[k - 1].finish));
    }
  }
  CHECK(t[1].start == t[0].finish);  // 0.065 > 0.05
  CHECK(t[3].latency() > t[0].latency());
  CHECK_THROWS_AS(streaming::schedule(2, 0.01, LatencyModel{0.0, 0.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(streaming::latency_model_from_json({{"rotation_period", 0.1}, {"jitter", 1}}), std::invalid_argument);
  CHECK(streaming::latency_model_from_json({{"per_column_cost", 2e-4}}).per_column_cost == 2e-4);
}

TEST_CASE("sector counts must tile the grid")
{
  const GridSpec spec = toy_grid();
  ModelConfig model;
  for (std::size_t n : {1u, 2u, 4u, 8u, 16u}) {
    CHECK_NOTHROW(streaming::check_sector_count(spec, model, n));
  }
  CHECK_THROWS_AS(streaming::check_sector_count(spec, model, 6), std::invalid_argument);
  CHECK_THROWS_AS(streaming::check_sector_count(spec, model, 0), std::invalid_argument);
  // 32 sectors leave 4 columns, narrower than the attention window
  CHECK_THROWS_AS(streaming::check_sector_count(spec, model, 32), std::invalid_argument);
}

TEST_CASE("streaming runs: identity, memory and latency")
{
  const Fixture f;
  const auto full = streaming::run_full(f.scene.cloud, f.pipeline);
  const LatencyModel model;
  const auto one = streaming::run_streaming(f.scene.cloud, 1, f.pipeline, model);
  REQUIRE(one.detections.size() == full.size());
  for (std::size_t k = 0; k < full.size(); ++k) {
    CHECK(same_detection(one.detections[k], full[k], 0.0));
  }
  const std::size_t full_cells = PolarGrid(f.spec).peak_fine_cells();
  CHECK(full_cells == 128 * 256 * kRawChannels);
  double prev_latency = 1e300;
  for (std::size_t n : {1u, 2u, 4u, 8u}) {
    const auto r = streaming::run_streaming(f.scene.cloud, n, f.pipeline, model);
    CHECK(r.peak_cells * n == full_cells);
    CHECK(r.mean_latency < prev_latency);
    prev_latency = r.mean_latency;
    std::size_t points = 0, dets = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const auto & s = r.sectors[k];
      points += s.n_points;
      dets += s.detections.size();
      CHECK(s.timing.start >= s.timing.arrival);
      CHECK(s.timing.finish >= s.timing.start);
      if (k > 0) {
        CHECK(s.timing.start == std::max(s.timing.arrival, r.sectors[k - 1].timing.finish));
      }
    }
    CHECK(points == f.scene.cloud.size());
    CHECK(dets == r.detections.size());
  }
}

TEST_CASE("per-sector voxel columns equal the full sweep")
{
  const synth::Scene scene = synth::generate(synth::SceneConfig{}, 4);
  const checks::Count c = checks::sector_columns_vs_full(scene.cloud, toy_grid(), {1, 2, 4, 8});
  CHECK(c.checked == 15);
  CHECK(c.failed == 0);
}

TEST_CASE("objects interior to a sector are detected identically")
{
  const Fixture f;
  const auto r = checks::interior_objects_vs_full(f.scene, f.pipeline, {2, 4}, 2 * f.model.grr.window, 1e-9);
  MESSAGE("interior objects: " << r.objects << ", detections compared: " << r.compared);
  CHECK(r.objects > 0);
  CHECK(r.compared > 0);
  CHECK(r.failed == 0);
}

TEST_CASE("comparison table")
{
  const Fixture f;
  const auto rows = streaming::compare_streaming_vs_full(f.scene.cloud, f.scene.boxes, {1, 2, 4, 8}, f.pipeline, LatencyModel{});
  REQUIRE(rows.size() == 4);
  std::vector<std::size_t> points;
  for (const auto & b : f.scene.boxes) {
    points.push_back(synth::points_in_box(f.scene.cloud, b.box));
  }
  const auto [ap, aph] = streaming::mean_ap({{streaming::run_full(f.scene.cloud, f.pipeline), f.scene.boxes, points}}, {});
  CHECK(rows[0].ap == ap);
  CHECK(rows[0].aph == aph);
  for (std::size_t k = 1; k < rows.size(); ++k) {
    CHECK(rows[k].mean_latency < rows[k - 1].mean_latency);
    CHECK(rows[k].peak_cells * rows[k].n_sectors == rows[0].peak_cells);
  }
}
