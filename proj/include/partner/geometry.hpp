#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

namespace partner
{

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

/// Wraps an angle into [-pi, pi).
double wrap_angle(double a);

struct CartPoint
{
  double x{0.0};
  double y{0.0};
};

struct PolarPoint
{
  double r{0.0};
  double a{0.0};
};

PolarPoint cart_to_polar(const CartPoint & p);
CartPoint polar_to_cart(const PolarPoint & p);

/// Oriented BEV rectangle. `w` is the extent along the heading axis, `h` across it.
struct BoxBEV
{
  double cx{0.0};
  double cy{0.0};
  double w{1.0};
  double h{1.0};
  double theta{0.0};

  /// Corners in counter-clockwise order.
  std::array<CartPoint, 4> corners() const;
  double area() const { return w * h; }
};

/// Throws std::invalid_argument for non-positive extents; wraps theta.
BoxBEV make_box_bev(double cx, double cy, double w, double h, double theta);

bool point_in_rotated_box(const CartPoint & p, const BoxBEV & b);

double rotated_iou_bev(const BoxBEV & a, const BoxBEV & b);

/// Smallest absolute difference between two headings, in [0, pi].
double heading_delta(double t1, double t2);

enum class RangeDiscretization { UD, SID, LID };

struct DiscretizationStrategy
{
  RangeDiscretization kind{RangeDiscretization::UD};
  double r_min{0.0};
  double r_max{1.0};
  std::size_t n_bins{1};
};

/// n_bins + 1 strictly increasing edges with edge[0] = r_min and edge[n_bins] = r_max.
std::vector<double> range_bin_edges(const DiscretizationStrategy & s);

/// Bin index i with edge[i] <= r < edge[i+1]; r_max lands in the last bin.
/// Returns nullopt outside [r_min, r_max].
std::optional<std::size_t> range_to_bin(double r, const DiscretizationStrategy & s);
std::optional<std::size_t> range_to_bin(double r, const std::vector<double> & edges);

/// Signed area of a simple polygon (positive for counter-clockwise order).
double polygon_area(const std::vector<CartPoint> & poly);

/// Sutherland-Hodgman clip of `subject` against the convex counter-clockwise polygon `clip`.
std::vector<CartPoint> clip_convex(
  const std::vector<CartPoint> & subject, const std::vector<CartPoint> & clip);

}  // namespace partner
