#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "partner/model.hpp"
#include "partner/voxelize.hpp"

// Voxel-resolution study: polar vs Cartesian cell occupancy at matched cell counts.
namespace partner::resolution
{

/// Coarse cells `scale` times larger along range and azimuth. Fine range bins are rounded to a
/// multiple of the downsample factor and fine azimuth bins to a multiple of downsample times the
/// attention windows of `model`, so the model can run on the result.
GridSpec scaled_grid(const GridSpec & base, double scale, const ModelConfig & model);

/// Side of the square Cartesian cell whose count over the annulus [r_min, r_max] equals the
/// number of coarse polar cells: pi (r_max^2 - r_min^2) / c^2 = rows * cols.
double matched_cell_size(const GridSpec & spec);

struct DensityRow
{
  double scale{1.0};
  std::string layout;  // "polar" or "cartesian"
  std::size_t cells{0};
  double cell_size{0.0};  // matched Cartesian side, m
  double row_cov{0.0};    // mean over scenes
  double overflow_fraction{0.0};  // mean over scenes
};

/// Two rows per scale (polar, then Cartesian), in the order of `scales`.
std::vector<DensityRow> density_study(
  const std::vector<PointCloud> & clouds, const GridSpec & base, const std::vector<double> & scales,
  const ModelConfig & model, std::size_t capacity = kDefaultCellCapacity);

}  // namespace partner::resolution
