#include "partner/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace partner::synth
{

namespace
{

// splitmix64 finalizer; per-ray jitter depends only on (seed, ray index)
std::uint64_t mix64(std::uint64_t z)
{
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double unit_double(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

constexpr double kSurfaceEps = 1e-9;

}  // namespace

const char * class_name(int cls)
{
  switch (cls) {
    case 0:
      return "vehicle";
    case 1:
      return "pedestrian";
    case 2:
      return "cyclist";
    default:
      return "unknown";
  }
}

void SceneConfig::validate() const
{
  if (n_azimuth_rays == 0 || n_elevation_rays == 0) {
    throw std::invalid_argument("scene config: ray counts must be positive");
  }
  if (!(elevation_min <= elevation_max) || elevation_min <= -kPi / 2 || elevation_max >= kPi / 2) {
    throw std::invalid_argument("scene config: bad elevation range");
  }
  if (!(sensor_height > 0.0) || !(max_range > 0.0)) {
    throw std::invalid_argument("scene config: sensor height and max range must be positive");
  }
  if (min_boxes > max_boxes) {
    throw std::invalid_argument("scene config: min_boxes > max_boxes");
  }
  if (!(box_range_min >= 0.0) || !(box_range_min <= box_range_max) || box_range_max > max_range) {
    throw std::invalid_argument("scene config: box distances must lie within the sensor range");
  }
  double total = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (!(class_weights[c] >= 0.0)) {
      throw std::invalid_argument("scene config: negative class weight");
    }
    total += class_weights[c];
    const SizeRange & s = sizes[c];
    if (!(s.w_lo > 0.0 && s.w_lo <= s.w_hi && s.l_lo > 0.0 && s.l_lo <= s.l_hi && s.h_lo > 0.0 && s.h_lo <= s.h_hi)) {
      throw std::invalid_argument("scene config: bad size range");
    }
  }
  if (!(total > 0.0)) {
    throw std::invalid_argument("scene config: class weights sum to zero");
  }
}

double ray_box_distance(const double o[3], const double d[3], const head::Box3D & box)
{
  const double c = std::cos(box.theta), s = std::sin(box.theta);
  const double ox = o[0] - box.cx, oy = o[1] - box.cy;
  const double lo[3] = {c * ox + s * oy, -s * ox + c * oy, o[2] - box.cz};
  const double ld[3] = {c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]};
  const double half[3] = {0.5 * box.l, 0.5 * box.w, 0.5 * box.h};
  double t_near = -1e300, t_far = 1e300;
  for (int k = 0; k < 3; ++k) {
    if (ld[k] == 0.0) {
      if (std::abs(lo[k]) > half[k]) {
        return -1.0;
      }
      continue;
    }
    double t1 = (-half[k] - lo[k]) / ld[k];
    double t2 = (half[k] - lo[k]) / ld[k];
    if (t1 > t2) {
      std::swap(t1, t2);
    }
    t_near = std::max(t_near, t1);
    t_far = std::min(t_far, t2);
  }
  if (t_near > t_far || t_near <= 0.0) {
    return -1.0;
  }
  return t_near;
}

Scene render(const SceneConfig & config, const std::vector<head::LabeledBox> & boxes, std::uint64_t seed)
{
  config.validate();
  Scene scene;
  scene.boxes = boxes;
  scene.seed = seed;
  const double o[3] = {0.0, 0.0, config.sensor_height};
  const std::size_t n_az = config.n_azimuth_rays, n_el = config.n_elevation_rays;
  const double el_step = n_el > 1 ? (config.elevation_max - config.elevation_min) / static_cast<double>(n_el - 1) : 0.0;
  const std::uint64_t jitter_seed = mix64(seed ^ 0x6a09e667f3bcc909ULL);
  for (std::size_t k = 0; k < n_az; ++k) {
    const double az = -kPi + (static_cast<double>(k) + 0.5) * kTwoPi / static_cast<double>(n_az);
    for (std::size_t e = 0; e < n_el; ++e) {
      const double el = config.elevation_min + static_cast<double>(e) * el_step;
      const double d[3] = {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
      double best = config.max_range;
      int hit = -2;
      if (d[2] < 0.0) {
        const double t = -config.sensor_height / d[2];
        if (t <= best) {
          best = t;
          hit = -1;
        }
      }
      for (std::size_t b = 0; b < boxes.size(); ++b) {
        const double t = ray_box_distance(o, d, boxes[b].box);
        if (t > 0.0 && t < best) {
          best = t;
          hit = static_cast<int>(b);
        }
      }
      if (hit == -2) {
        continue;
      }
      const double u = unit_double(mix64(jitter_seed + k * n_el + e));
      const double base = hit == -1 ? config.ground_intensity : config.box_intensity;
      const double z = hit == -1 ? 0.0 : o[2] + best * d[2];
      scene.cloud.add(best * d[0], best * d[1], z, base + config.intensity_jitter * (2.0 * u - 1.0));
      scene.hit.push_back(hit);
    }
  }
  return scene;
}

Scene generate(const SceneConfig & config, std::uint64_t seed)
{
  config.validate();
  Rng rng(seed);
  const std::size_t n_boxes = config.min_boxes + rng.below(config.max_boxes - config.min_boxes + 1);
  double weight_total = 0.0;
  for (double w : config.class_weights) {
    weight_total += w;
  }
  std::vector<head::LabeledBox> boxes;
  std::vector<BoxBEV> keep_out;  // footprints inflated by 0.5 m per side
  constexpr int kAttempts = 100;
  for (std::size_t n = 0; n < n_boxes; ++n) {
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
      double pick = rng.uniform() * weight_total;
      int cls = 0;
      while (cls + 1 < static_cast<int>(kNumClasses) && pick >= config.class_weights[cls]) {
        pick -= config.class_weights[cls];
        ++cls;
      }
      const SizeRange & s = config.sizes[cls];
      const double w = rng.uniform(s.w_lo, s.w_hi);
      const double l = rng.uniform(s.l_lo, s.l_hi);
      const double h = rng.uniform(s.h_lo, s.h_hi);
      const double r = rng.uniform(config.box_range_min, config.box_range_max);
      const double a = rng.uniform(-kPi, kPi);
      const double theta = rng.uniform(-kPi, kPi);
      const CartPoint c = polar_to_cart({r, a});
      const BoxBEV fp = make_box_bev(c.x, c.y, l + 1.0, w + 1.0, theta);
      const bool clash = std::any_of(keep_out.begin(), keep_out.end(), [&](const BoxBEV & o) { return rotated_iou_bev(o, fp) > 0.0; });
      if (clash) {
        continue;
      }
      keep_out.push_back(fp);
      boxes.push_back({head::make_box3d(c.x, c.y, 0.5 * h, w, l, h, theta), cls});
      break;
    }
  }
  return render(config, boxes, seed);
}

std::size_t points_in_box(const PointCloud & cloud, const head::Box3D & box)
{
  const BoxBEV fp = make_box_bev(box.cx, box.cy, box.l + 2 * kSurfaceEps, box.w + 2 * kSurfaceEps, box.theta);
  std::size_t n = 0;
  for (const auto & p : cloud.points()) {
    if (std::abs(p.z - box.cz) <= 0.5 * box.h + kSurfaceEps && point_in_rotated_box({p.x, p.y}, fp)) {
      ++n;
    }
  }
  return n;
}

std::vector<std::vector<std::size_t>> occlusion_demo(const Scene & scene, const GridSpec & spec)
{
  const PolarGrid grid(spec);
  std::vector<std::vector<char>> occupied(grid.cols(), std::vector<char>(grid.rows(), 0));
  for (const auto & p : scene.cloud.points()) {
    if (p.z < spec.z_min || p.z >= spec.z_max) {
      continue;
    }
    if (const auto cell = grid.locate({p.x, p.y})) {
      occupied[cell->second][cell->first] = 1;
    }
  }
  std::vector<std::vector<std::size_t>> out(grid.cols());
  for (std::size_t j = 0; j < grid.cols(); ++j) {
    for (std::size_t i = 0; i < grid.rows(); ++i) {
      if (occupied[j][i]) {
        out[j].push_back(i);
      }
    }
  }
  return out;
}

double mean_occupied_bins(const std::vector<std::vector<std::size_t>> & columns)
{
  if (columns.empty()) {
    return 0.0;
  }
  double total = 0.0;
  for (const auto & c : columns) {
    total += static_cast<double>(c.size());
  }
  return total / static_cast<double>(columns.size());
}

nlohmann::json config_to_json(const SceneConfig & c)
{
  nlohmann::json sizes = nlohmann::json::array();
  for (const auto & s : c.sizes) {
    sizes.push_back({s.w_lo, s.w_hi, s.l_lo, s.l_hi, s.h_lo, s.h_hi});
  }
  return {
    {"n_azimuth_rays", c.n_azimuth_rays},
    {"n_elevation_rays", c.n_elevation_rays},
    {"elevation_min", c.elevation_min},
    {"elevation_max", c.elevation_max},
    {"sensor_height", c.sensor_height},
    {"max_range", c.max_range},
    {"min_boxes", c.min_boxes},
    {"max_boxes", c.max_boxes},
    {"box_range_min", c.box_range_min},
    {"box_range_max", c.box_range_max},
    {"class_weights", {c.class_weights[0], c.class_weights[1], c.class_weights[2]}},
    {"sizes", sizes},
    {"ground_intensity", c.ground_intensity},
    {"box_intensity", c.box_intensity},
    {"intensity_jitter", c.intensity_jitter},
  };
}

SceneConfig config_from_json(const nlohmann::json & j)
{
  if (!j.is_object()) {
    throw std::invalid_argument("scene config: expected an object");
  }
  SceneConfig c;
  for (const auto & [key, v] : j.items()) {
    if (key == "n_azimuth_rays") {
      c.n_azimuth_rays = v.get<std::size_t>();
    } else if (key == "n_elevation_rays") {
      c.n_elevation_rays = v.get<std::size_t>();
    } else if (key == "elevation_min") {
      c.elevation_min = v.get<double>();
    } else if (key == "elevation_max") {
      c.elevation_max = v.get<double>();
    } else if (key == "sensor_height") {
      c.sensor_height = v.get<double>();
    } else if (key == "max_range") {
      c.max_range = v.get<double>();
    } else if (key == "min_boxes") {
      c.min_boxes = v.get<std::size_t>();
    } else if (key == "max_boxes") {
      c.max_boxes = v.get<std::size_t>();
    } else if (key == "box_range_min") {
      c.box_range_min = v.get<double>();
    } else if (key == "box_range_max") {
      c.box_range_max = v.get<double>();
    } else if (key == "class_weights") {
      const auto w = v.get<std::vector<double>>();
      if (w.size() != kNumClasses) {
        throw std::invalid_argument("scene config: class_weights needs 3 entries");
      }
      std::copy(w.begin(), w.end(), c.class_weights);
    } else if (key == "sizes") {
      const auto s = v.get<std::vector<std::vector<double>>>();
      if (s.size() != kNumClasses) {
        throw std::invalid_argument("scene config: sizes needs 3 entries");
      }
      for (std::size_t k = 0; k < kNumClasses; ++k) {
        if (s[k].size() != 6) {
          throw std::invalid_argument("scene config: each size range has 6 entries");
        }
        c.sizes[k] = {s[k][0], s[k][1], s[k][2], s[k][3], s[k][4], s[k][5]};
      }
    } else if (key == "ground_intensity") {
      c.ground_intensity = v.get<double>();
    } else if (key == "box_intensity") {
      c.box_intensity = v.get<double>();
    } else if (key == "intensity_jitter") {
      c.intensity_jitter = v.get<double>();
    } else {
      throw std::invalid_argument("scene config: unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

void save_scene(const Scene & scene, const SceneConfig & config, const std::filesystem::path & path)
{
  nlohmann::json points = nlohmann::json::array();
  for (const auto & p : scene.cloud.points()) {
    points.push_back({p.x, p.y, p.z, p.intensity});
  }
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto & b : scene.boxes) {
    const head::Box3D & x = b.box;
    boxes.push_back({{"cls", b.cls}, {"box", {x.cx, x.cy, x.cz, x.w, x.l, x.h, x.theta}}});
  }
  const nlohmann::json doc = {
    {"points", points}, {"boxes", boxes}, {"meta", {{"seed", scene.seed}, {"config", config_to_json(config)}}}};
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << doc.dump() << '\n';
}

Scene load_scene(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  const nlohmann::json doc = nlohmann::json::parse(in);
  Scene scene;
  for (const auto & p : doc.at("points")) {
    scene.cloud.add(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>(), p.at(3).get<double>());
  }
  for (const auto & b : doc.at("boxes")) {
    const auto v = b.at("box").get<std::vector<double>>();
    if (v.size() != 7) {
      throw std::invalid_argument("scene file: box needs 7 numbers");
    }
    scene.boxes.push_back({head::make_box3d(v[0], v[1], v[2], v[3], v[4], v[5], v[6]), b.at("cls").get<int>()});
  }
  if (doc.contains("meta") && doc["meta"].contains("seed")) {
    scene.seed = doc["meta"]["seed"].get<std::uint64_t>();
  }
  return scene;
}

}  // namespace partner::synth
