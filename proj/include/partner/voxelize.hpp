#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "partner/geometry.hpp"
#include "partner/tensor.hpp"

namespace partner
{

struct LidarPoint
{
  double x{0.0};
  double y{0.0};
  double z{0.0};
  double intensity{0.0};
  // polar cache, always consistent with cart_to_polar(x, y)
  double r{0.0};
  double a{0.0};
};

class PointCloud
{
public:
  PointCloud() = default;

  void add(double x, double y, double z, double intensity);
  void add(const LidarPoint & p) { add(p.x, p.y, p.z, p.intensity); }

  const std::vector<LidarPoint> & points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

private:
  std::vector<LidarPoint> points_;
};

/// Dense (R, A, C) map; radial rows, angular columns, channels.
using FeatureMap = Tensor;

struct GridSpec
{
  DiscretizationStrategy range{RangeDiscretization::UD, 0.3, 75.18, 1152};
  std::size_t n_azimuth{2048};
  double z_min{-2.0};
  double z_max{4.0};
  std::size_t downsample{8};

  /// Throws std::invalid_argument when the grid cannot be tiled/downsampled evenly.
  void validate() const;

  std::size_t rows() const { return range.n_bins / downsample; }
  std::size_t cols() const { return n_azimuth / downsample; }
  double fine_azimuth_width() const { return kTwoPi / static_cast<double>(n_azimuth); }

  /// Uniform range bins of `range_size`; azimuth count rounded to the nearest multiple of
  /// `downsample` so that the bins tile [-pi, pi) exactly.
  static GridSpec from_voxel_size(
    double r_min, double r_max, double range_size, double azimuth_size, double z_min, double z_max,
    std::size_t downsample);
};

inline constexpr std::size_t kRawChannels = 10;

/// Fine azimuth bin of angle a in [-pi, pi): floor((a + pi) / 2pi * n), clamped to n - 1.
std::size_t azimuth_bin(double a, std::size_t n_azimuth);

/// Coarse BEV geometry of a GridSpec, optionally restricted to one of `n_sectors` equal wedges.
/// Local column j of sector k is global coarse column k * cols() + j.
class PolarGrid
{
public:
  explicit PolarGrid(const GridSpec & spec, std::size_t sector = 0, std::size_t n_sectors = 1);

  const GridSpec & spec() const { return spec_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t sector() const { return sector_; }
  std::size_t n_sectors() const { return n_sectors_; }
  /// Only the full sweep wraps around the -pi/pi seam.
  bool periodic() const { return n_sectors_ == 1; }

  std::size_t fine_rows() const { return spec_.range.n_bins; }
  std::size_t fine_cols() const { return cols_ * spec_.downsample; }
  std::size_t fine_col_offset() const { return sector_ * fine_cols(); }
  std::size_t global_col(std::size_t local) const { return sector_ * cols_ + local; }
  std::size_t global_cols() const { return spec_.cols(); }

  const std::vector<double> & fine_edges() const { return edges_; }
  double row_low(std::size_t i) const { return edges_[i * spec_.downsample]; }
  double row_high(std::size_t i) const { return edges_[(i + 1) * spec_.downsample]; }
  double row_center(std::size_t i) const { return 0.5 * (row_low(i) + row_high(i)); }
  double row_width(std::size_t i) const { return row_high(i) - row_low(i); }
  double col_width() const { return kTwoPi / static_cast<double>(global_cols()); }
  /// Azimuth of the local column's center, from the global index.
  double col_center(std::size_t j) const;

  PolarPoint pixel_polar(std::size_t i, std::size_t j) const { return {row_center(i), col_center(j)}; }
  CartPoint pixel_cart(std::size_t i, std::size_t j) const { return polar_to_cart(pixel_polar(i, j)); }

  /// Local coarse pixel containing a Cartesian point, if inside this grid's range and wedge.
  std::optional<std::pair<std::size_t, std::size_t>> locate(const CartPoint & p) const;

  /// (R, A, 4) map of pixel-center (r, a, x, y).
  Tensor positions() const;

  /// Signed column difference q - k, wrapped into [-A/2, A/2) on periodic grids.
  std::ptrdiff_t col_delta(std::size_t q, std::size_t k) const;

  std::size_t peak_fine_cells() const { return fine_rows() * fine_cols() * kRawChannels; }

private:
  GridSpec spec_;
  std::size_t sector_;
  std::size_t n_sectors_;
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> edges_;
};

/// Channels: log(1+count), mean dr, mean da*r, mean z, max z, mean i, max i, mean dx, mean dy,
/// occupancy. Offsets are relative to the fine cell center. Fine cells are max-pooled over
/// downsample x downsample blocks.
FeatureMap voxelize(const PointCloud & cloud, const PolarGrid & grid);
FeatureMap voxelize(const PointCloud & cloud, const GridSpec & spec);

/// Per-fine-cell point counts (fine_rows x fine_cols) of the grid's wedge.
std::vector<std::size_t> fine_cell_counts(const PointCloud & cloud, const PolarGrid & grid);

struct RowOccupancy
{
  std::size_t occupied_cells{0};
  double mean_points{0.0};
  double var_points{0.0};
};

struct OccupancyStats
{
  std::vector<RowOccupancy> rows;
  std::size_t total_points{0};
  /// Points beyond the per-cell capacity, summed over cells.
  std::size_t overflow_points{0};
  std::size_t capacity{0};

  /// std/mean across rows of the per-row mean points-per-occupied-cell (occupied rows only).
  double row_cov() const;
  double overflow_fraction() const;
};

inline constexpr std::size_t kDefaultCellCapacity = 32;

/// Statistics over the coarse cells of the grid, one entry per coarse radial row.
OccupancyStats occupancy_stats(
  const PointCloud & cloud, const GridSpec & spec, std::size_t capacity = kDefaultCellCapacity);

/// Square Cartesian cells of side `cell_size` over [-extent, extent]^2, grouped into rows by the
/// polar row (of `row_edges`) that contains each cell center. Points outside
/// [row_edges.front(), row_edges.back()] or the z range are ignored.
OccupancyStats cartesian_occupancy_stats(
  const PointCloud & cloud, double cell_size, const std::vector<double> & row_edges, double z_min,
  double z_max, std::size_t capacity = kDefaultCellCapacity);

/// Sector k holds the points whose fine azimuth bin lies in [k n_az / n, (k+1) n_az / n), i.e.
/// a in [-pi + k 2pi/n, -pi + (k+1) 2pi/n). Throws when n_azimuth % n_sectors != 0.
std::vector<PointCloud> sectorize(
  const PointCloud & cloud, std::size_t n_sectors, std::size_t n_azimuth);

}  // namespace partner
