#include "partner/voxelize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <tuple>

namespace partner
{

void PointCloud::add(double x, double y, double z, double intensity)
{
  const PolarPoint p = cart_to_polar({x, y});
  points_.push_back(LidarPoint{x, y, z, intensity, p.r, p.a});
}

void GridSpec::validate() const
{
  if (downsample == 0 || n_azimuth == 0) {
    throw std::invalid_argument("grid: downsample and n_azimuth must be positive");
  }
  if (n_azimuth % downsample != 0) {
    throw std::invalid_argument("grid: n_azimuth must be divisible by downsample");
  }
  if (range.n_bins % downsample != 0) {
    throw std::invalid_argument("grid: range bins must be divisible by downsample");
  }
  if (!(z_min < z_max)) {
    throw std::invalid_argument("grid: z_min must be below z_max");
  }
  (void)range_bin_edges(range);
}

GridSpec GridSpec::from_voxel_size(
  double r_min, double r_max, double range_size, double azimuth_size, double z_min, double z_max,
  std::size_t downsample)
{
  if (!(range_size > 0.0) || !(azimuth_size > 0.0) || downsample == 0) {
    throw std::invalid_argument("grid: voxel sizes and downsample must be positive");
  }
  GridSpec s;
  s.range = {RangeDiscretization::UD, r_min, r_max,
             static_cast<std::size_t>(std::llround((r_max - r_min) / range_size))};
  const double ds = static_cast<double>(downsample);
  const auto blocks = static_cast<std::size_t>(std::llround(kTwoPi / azimuth_size / ds));
  s.n_azimuth = std::max<std::size_t>(1, blocks) * downsample;
  s.z_min = z_min;
  s.z_max = z_max;
  s.downsample = downsample;
  return s;
}

std::size_t azimuth_bin(double a, std::size_t n_azimuth)
{
  const double t = (a + kPi) / kTwoPi * static_cast<double>(n_azimuth);
  if (!(t > 0.0)) {
    return 0;
  }
  return std::min(static_cast<std::size_t>(t), n_azimuth - 1);
}

PolarGrid::PolarGrid(const GridSpec & spec, std::size_t sector, std::size_t n_sectors)
: spec_(spec), sector_(sector), n_sectors_(n_sectors)
{
  spec_.validate();
  if (n_sectors == 0 || spec_.cols() % n_sectors != 0) {
    throw std::invalid_argument("grid: BEV columns must be divisible by the sector count");
  }
  if (sector >= n_sectors) {
    throw std::invalid_argument("grid: sector index out of range");
  }
  rows_ = spec_.rows();
  cols_ = spec_.cols() / n_sectors;
  edges_ = range_bin_edges(spec_.range);
}

double PolarGrid::col_center(std::size_t j) const
{
  return -kPi + (static_cast<double>(global_col(j)) + 0.5) * col_width();
}

std::optional<std::pair<std::size_t, std::size_t>> PolarGrid::locate(const CartPoint & p) const
{
  const PolarPoint pp = cart_to_polar(p);
  const auto fine_row = range_to_bin(pp.r, edges_);
  if (!fine_row) {
    return std::nullopt;
  }
  const std::size_t fine_col = azimuth_bin(pp.a, spec_.n_azimuth);
  if (fine_col < fine_col_offset() || fine_col >= fine_col_offset() + fine_cols()) {
    return std::nullopt;
  }
  return std::make_pair(*fine_row / spec_.downsample, (fine_col - fine_col_offset()) / spec_.downsample);
}

Tensor PolarGrid::positions() const
{
  Tensor out(Shape{rows_, cols_, 4});
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t j = 0; j < cols_; ++j) {
      const PolarPoint pp = pixel_polar(i, j);
      const CartPoint cp = polar_to_cart(pp);
      out.at(i, j, 0) = pp.r;
      out.at(i, j, 1) = pp.a;
      out.data[(i * cols_ + j) * 4 + 2] = cp.x;
      out.data[(i * cols_ + j) * 4 + 3] = cp.y;
    }
  }
  return out;
}

std::ptrdiff_t PolarGrid::col_delta(std::size_t q, std::size_t k) const
{
  std::ptrdiff_t d = static_cast<std::ptrdiff_t>(q) - static_cast<std::ptrdiff_t>(k);
  if (!periodic()) {
    return d;
  }
  const auto n = static_cast<std::ptrdiff_t>(cols_);
  d = ((d % n) + n) % n;
  if (d >= (n + 1) / 2) {
    d -= n;
  }
  return d;
}

namespace
{

struct Binned
{
  std::size_t cell;
  const LidarPoint * p;
};

// In-wedge, in-range points with their fine cell, sorted by (cell, x, y, z, i) so that
// accumulation order does not depend on input order.
std::vector<Binned> bin_points(const PointCloud & cloud, const PolarGrid & grid)
{
  const GridSpec & spec = grid.spec();
  const std::size_t fcols = grid.fine_cols();
  std::vector<Binned> out;
  out.reserve(cloud.size());
  for (const auto & p : cloud.points()) {
    if (p.z < spec.z_min || p.z > spec.z_max) {
      continue;
    }
    const auto row = range_to_bin(p.r, grid.fine_edges());
    if (!row) {
      continue;
    }
    const std::size_t col = azimuth_bin(p.a, spec.n_azimuth);
    if (col < grid.fine_col_offset() || col >= grid.fine_col_offset() + fcols) {
      continue;
    }
    out.push_back({*row * fcols + (col - grid.fine_col_offset()), &p});
  }
  std::sort(out.begin(), out.end(), [](const Binned & a, const Binned & b) {
    return std::tie(a.cell, a.p->x, a.p->y, a.p->z, a.p->intensity) <
           std::tie(b.cell, b.p->x, b.p->y, b.p->z, b.p->intensity);
  });
  return out;
}

}  // namespace

FeatureMap voxelize(const PointCloud & cloud, const PolarGrid & grid)
{
  const GridSpec & spec = grid.spec();
  const std::size_t frows = grid.fine_rows();
  const std::size_t fcols = grid.fine_cols();
  const auto & edges = grid.fine_edges();
  const double fine_width = spec.fine_azimuth_width();

  Tensor fine(Shape{frows, fcols, kRawChannels});
  const auto binned = bin_points(cloud, grid);
  std::size_t k = 0;
  while (k < binned.size()) {
    const std::size_t cell = binned[k].cell;
    const std::size_t row = cell / fcols;
    const std::size_t col = cell % fcols;
    const double rc = 0.5 * (edges[row] + edges[row + 1]);
    const double ac = -kPi + (static_cast<double>(grid.fine_col_offset() + col) + 0.5) * fine_width;
    const CartPoint cc = polar_to_cart({rc, ac});
    double n = 0.0;
    double s_dr = 0.0, s_dar = 0.0, s_z = 0.0, s_i = 0.0, s_dx = 0.0, s_dy = 0.0;
    double max_z = -std::numeric_limits<double>::infinity();
    double max_i = -std::numeric_limits<double>::infinity();
    for (; k < binned.size() && binned[k].cell == cell; ++k) {
      const LidarPoint & p = *binned[k].p;
      n += 1.0;
      s_dr += p.r - rc;
      s_dar += wrap_angle(p.a - ac) * p.r;
      s_z += p.z;
      s_i += p.intensity;
      s_dx += p.x - cc.x;
      s_dy += p.y - cc.y;
      max_z = std::max(max_z, p.z);
      max_i = std::max(max_i, p.intensity);
    }
    double * f = &fine.data[cell * kRawChannels];
    f[0] = std::log1p(n);
    f[1] = s_dr / n;
    f[2] = s_dar / n;
    f[3] = s_z / n;
    f[4] = max_z;
    f[5] = s_i / n;
    f[6] = max_i;
    f[7] = s_dx / n;
    f[8] = s_dy / n;
    f[9] = 1.0;
  }

  const std::size_t ds = spec.downsample;
  Tensor out(Shape{grid.rows(), grid.cols(), kRawChannels});
  for (std::size_t i = 0; i < grid.rows(); ++i) {
    for (std::size_t j = 0; j < grid.cols(); ++j) {
      double * o = &out.data[(i * grid.cols() + j) * kRawChannels];
      std::fill(o, o + kRawChannels, -std::numeric_limits<double>::infinity());
      for (std::size_t a = 0; a < ds; ++a) {
        for (std::size_t b = 0; b < ds; ++b) {
          const double * f = &fine.data[((i * ds + a) * fcols + j * ds + b) * kRawChannels];
          for (std::size_t c = 0; c < kRawChannels; ++c) {
            o[c] = std::max(o[c], f[c]);
          }
        }
      }
    }
  }
  return out;
}

FeatureMap voxelize(const PointCloud & cloud, const GridSpec & spec)
{
  return voxelize(cloud, PolarGrid(spec));
}

std::vector<std::size_t> fine_cell_counts(const PointCloud & cloud, const PolarGrid & grid)
{
  std::vector<std::size_t> counts(grid.fine_rows() * grid.fine_cols(), 0);
  for (const auto & b : bin_points(cloud, grid)) {
    ++counts[b.cell];
  }
  return counts;
}

double OccupancyStats::row_cov() const
{
  std::vector<double> means;
  for (const auto & r : rows) {
    if (r.occupied_cells > 0) {
      means.push_back(r.mean_points);
    }
  }
  if (means.size() < 2) {
    return 0.0;
  }
  double mean = 0.0;
  for (double m : means) {
    mean += m;
  }
  mean /= static_cast<double>(means.size());
  double var = 0.0;
  for (double m : means) {
    var += (m - mean) * (m - mean);
  }
  var /= static_cast<double>(means.size());
  return mean > 0.0 ? std::sqrt(var) / mean : 0.0;
}

double OccupancyStats::overflow_fraction() const
{
  return total_points == 0 ? 0.0 : static_cast<double>(overflow_points) / static_cast<double>(total_points);
}

namespace
{

// rows[r] accumulates the point counts of occupied cells assigned to row r
OccupancyStats summarize(
  const std::vector<std::vector<std::size_t>> & per_row, std::size_t capacity)
{
  OccupancyStats s;
  s.capacity = capacity;
  s.rows.resize(per_row.size());
  for (std::size_t r = 0; r < per_row.size(); ++r) {
    const auto & cells = per_row[r];
    RowOccupancy & ro = s.rows[r];
    ro.occupied_cells = cells.size();
    if (cells.empty()) {
      continue;
    }
    double sum = 0.0;
    for (std::size_t c : cells) {
      sum += static_cast<double>(c);
      s.total_points += c;
      if (c > capacity) {
        s.overflow_points += c - capacity;
      }
    }
    ro.mean_points = sum / static_cast<double>(cells.size());
    double var = 0.0;
    for (std::size_t c : cells) {
      const double d = static_cast<double>(c) - ro.mean_points;
      var += d * d;
    }
    ro.var_points = var / static_cast<double>(cells.size());
  }
  return s;
}

}  // namespace

OccupancyStats occupancy_stats(const PointCloud & cloud, const GridSpec & spec, std::size_t capacity)
{
  const PolarGrid grid(spec);
  const auto fine = fine_cell_counts(cloud, grid);
  const std::size_t ds = spec.downsample;
  std::vector<std::vector<std::size_t>> per_row(grid.rows());
  for (std::size_t i = 0; i < grid.rows(); ++i) {
    for (std::size_t j = 0; j < grid.cols(); ++j) {
      std::size_t n = 0;
      for (std::size_t a = 0; a < ds; ++a) {
        for (std::size_t b = 0; b < ds; ++b) {
          n += fine[(i * ds + a) * grid.fine_cols() + j * ds + b];
        }
      }
      if (n > 0) {
        per_row[i].push_back(n);
      }
    }
  }
  return summarize(per_row, capacity);
}

OccupancyStats cartesian_occupancy_stats(
  const PointCloud & cloud, double cell_size, const std::vector<double> & row_edges, double z_min,
  double z_max, std::size_t capacity)
{
  if (!(cell_size > 0.0) || row_edges.size() < 2) {
    throw std::invalid_argument("cartesian grid: positive cell size and at least one row required");
  }
  const double extent = row_edges.back();
  std::map<std::pair<std::int64_t, std::int64_t>, std::size_t> cells;
  for (const auto & p : cloud.points()) {
    if (p.z < z_min || p.z > z_max || p.r < row_edges.front() || p.r > row_edges.back()) {
      continue;
    }
    const auto ix = static_cast<std::int64_t>(std::floor((p.x + extent) / cell_size));
    const auto iy = static_cast<std::int64_t>(std::floor((p.y + extent) / cell_size));
    ++cells[{ix, iy}];
  }
  std::vector<std::vector<std::size_t>> per_row(row_edges.size() - 1);
  for (const auto & [key, n] : cells) {
    const double cx = (static_cast<double>(key.first) + 0.5) * cell_size - extent;
    const double cy = (static_cast<double>(key.second) + 0.5) * cell_size - extent;
    const double rc = std::clamp(std::hypot(cx, cy), row_edges.front(), row_edges.back());
    const std::size_t row = *range_to_bin(rc, row_edges);
    per_row[row].push_back(n);
  }
  return summarize(per_row, capacity);
}

std::vector<PointCloud> sectorize(const PointCloud & cloud, std::size_t n_sectors, std::size_t n_azimuth)
{
  if (n_sectors == 0 || n_azimuth == 0 || n_azimuth % n_sectors != 0) {
    throw std::invalid_argument("sectorize: n_azimuth must be divisible by the sector count");
  }
  const std::size_t per = n_azimuth / n_sectors;
  std::vector<PointCloud> out(n_sectors);
  for (const auto & p : cloud.points()) {
    out[azimuth_bin(p.a, n_azimuth) / per].add(p);
  }
  return out;
}

}  // namespace partner
