#include "partner/resolution.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace partner::resolution
{

namespace
{

std::size_t round_to(double v, std::size_t multiple)
{
  const auto k = static_cast<std::size_t>(std::llround(v / static_cast<double>(multiple)));
  return std::max<std::size_t>(k, 1) * multiple;
}

}  // namespace

GridSpec scaled_grid(const GridSpec & base, double scale, const ModelConfig & model)
{
  if (!(scale > 0.0)) {
    throw std::invalid_argument("resolution: scale must be positive");
  }
  base.validate();
  std::size_t window = 1;
  if (model.use_grr) {
    window = std::lcm(window, model.grr.window);
  }
  if (model.use_ga) {
    window = std::lcm(window, model.ga.window);
  }
  GridSpec s = base;
  s.range.n_bins = round_to(static_cast<double>(base.range.n_bins) / scale, base.downsample);
  s.n_azimuth = round_to(static_cast<double>(base.n_azimuth) / scale, base.downsample * window);
  s.validate();
  return s;
}

double matched_cell_size(const GridSpec & spec)
{
  const double r0 = spec.range.r_min, r1 = spec.range.r_max;
  const double cells = static_cast<double>(spec.rows() * spec.cols());
  return std::sqrt(kPi * (r1 * r1 - r0 * r0) / cells);
}

std::vector<DensityRow> density_study(
  const std::vector<PointCloud> & clouds, const GridSpec & base, const std::vector<double> & scales,
  const ModelConfig & model, std::size_t capacity)
{
  if (clouds.empty()) {
    throw std::invalid_argument("resolution: no scenes");
  }
  std::vector<DensityRow> out;
  const double inv = 1.0 / static_cast<double>(clouds.size());
  for (double scale : scales) {
    const GridSpec spec = scaled_grid(base, scale, model);
    const double side = matched_cell_size(spec);
    std::vector<double> coarse_edges;
    const auto fine_edges = range_bin_edges(spec.range);
    for (std::size_t i = 0; i < fine_edges.size(); i += spec.downsample) {
      coarse_edges.push_back(fine_edges[i]);
    }
    DensityRow polar{scale, "polar", spec.rows() * spec.cols(), side};
    DensityRow cart{scale, "cartesian", spec.rows() * spec.cols(), side};
    for (const auto & cloud : clouds) {
      const OccupancyStats p = occupancy_stats(cloud, spec, capacity);
      const OccupancyStats c =
        cartesian_occupancy_stats(cloud, side, coarse_edges, spec.z_min, spec.z_max, capacity);
      polar.row_cov += inv * p.row_cov();
      polar.overflow_fraction += inv * p.overflow_fraction();
      cart.row_cov += inv * c.row_cov();
      cart.overflow_fraction += inv * c.overflow_fraction();
    }
    out.push_back(polar);
    out.push_back(cart);
  }
  return out;
}

}  // namespace partner::resolution
