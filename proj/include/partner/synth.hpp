#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "partner/head.hpp"
#include "partner/voxelize.hpp"

// Ray-cast LiDAR scenes: a spinning sensor over a flat ground plane with oriented cuboids.
namespace partner::synth
{

/// MT19937-64 (the standard-specified engine) with doubles formed from the top 53 bits,
/// so sequences are identical on every platform.
class Rng
{
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }

private:
  std::mt19937_64 engine_;
};

enum class ObjectClass : int
{
  Vehicle = 0,
  Pedestrian = 1,
  Cyclist = 2,
};

inline constexpr std::size_t kNumClasses = 3;
const char * class_name(int cls);

struct SizeRange
{
  double w_lo, w_hi;
  double l_lo, l_hi;
  double h_lo, h_hi;
};

struct SceneConfig
{
  std::size_t n_azimuth_rays{1024};
  std::size_t n_elevation_rays{32};
  double elevation_min{-0.4363323129985824};  // -25 degrees
  double elevation_max{0.05235987755982988};  // +3 degrees
  double sensor_height{1.8};
  double max_range{75.0};
  std::size_t min_boxes{4};
  std::size_t max_boxes{12};
  double box_range_min{5.0};
  double box_range_max{45.0};
  /// Relative class frequencies (vehicle, pedestrian, cyclist).
  double class_weights[kNumClasses]{0.6, 0.25, 0.15};
  SizeRange sizes[kNumClasses]{
    {1.8, 2.2, 4.0, 5.0, 1.5, 1.9}, {0.5, 0.8, 0.5, 0.9, 1.6, 1.9}, {0.6, 0.8, 1.6, 1.9, 1.6, 1.8}};
  double ground_intensity{0.2};
  double box_intensity{0.6};
  double intensity_jitter{0.05};

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

struct Scene
{
  PointCloud cloud;
  std::vector<head::LabeledBox> boxes;
  /// Per point: -1 for ground, otherwise the index of the box that was hit.
  std::vector<int> hit;
  std::uint64_t seed{0};
};

/// First intersection distance of the ray o + t d (t > 0) with a cuboid standing on z = box.cz -
/// h / 2; negative when missed.
double ray_box_distance(const double o[3], const double d[3], const head::Box3D & box);

/// Places boxes (rejecting BEV overlaps), then casts n_az x n_elev rays in (azimuth, elevation)
/// order; each ray keeps its first hit within max_range. Ground is z = 0, the sensor sits at
/// (0, 0, sensor_height) and points are reported in that ground frame.
Scene generate(const SceneConfig & config, std::uint64_t seed);

/// Same ray casting over a given box list.
Scene render(const SceneConfig & config, const std::vector<head::LabeledBox> & boxes, std::uint64_t seed);

/// Number of points whose BEV position is inside the footprint and z within the box height.
std::size_t points_in_box(const PointCloud & cloud, const head::Box3D & box);

/// Per coarse column, the sorted coarse radial bins that hold at least one point.
std::vector<std::vector<std::size_t>> occlusion_demo(const Scene & scene, const GridSpec & spec);
double mean_occupied_bins(const std::vector<std::vector<std::size_t>> & columns);

/// Keys as in SceneConfig; unknown keys throw std::invalid_argument, missing keys keep defaults.
nlohmann::json config_to_json(const SceneConfig & config);
SceneConfig config_from_json(const nlohmann::json & j);

/// Scene file: {points: [[x,y,z,i]...], boxes: [{cls, box: [cx,cy,cz,w,l,h,theta]}...],
/// meta: {seed, config}}.
void save_scene(const Scene & scene, const SceneConfig & config, const std::filesystem::path & path);
/// `hit` is not stored and comes back empty.
Scene load_scene(const std::filesystem::path & path);

}  // namespace partner::synth
