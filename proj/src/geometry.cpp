#include "partner/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

namespace partner
{

double wrap_angle(double a)
{
  if (a >= -kPi && a < kPi) {
    return a;
  }
  double w = std::fmod(a + kPi, kTwoPi);
  if (w < 0.0) {
    w += kTwoPi;
  }
  w -= kPi;
  // fmod rounding can land exactly on +pi
  if (w >= kPi) {
    w -= kTwoPi;
  }
  return w;
}

PolarPoint cart_to_polar(const CartPoint & p)
{
  const double r = std::hypot(p.x, p.y);
  if (r == 0.0) {
    return {0.0, 0.0};
  }
  return {r, wrap_angle(std::atan2(p.y, p.x))};
}

CartPoint polar_to_cart(const PolarPoint & p)
{
  return {p.r * std::cos(p.a), p.r * std::sin(p.a)};
}

std::array<CartPoint, 4> BoxBEV::corners() const
{
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double hw = 0.5 * w;
  const double hh = 0.5 * h;
  const std::array<std::array<double, 2>, 4> local{{{hw, hh}, {-hw, hh}, {-hw, -hh}, {hw, -hh}}};
  std::array<CartPoint, 4> out{};
  for (std::size_t k = 0; k < 4; ++k) {
    out[k] = {cx + c * local[k][0] - s * local[k][1], cy + s * local[k][0] + c * local[k][1]};
  }
  return out;
}

BoxBEV make_box_bev(double cx, double cy, double w, double h, double theta)
{
  if (!(w > 0.0) || !(h > 0.0)) {
    throw std::invalid_argument("BoxBEV extents must be positive");
  }
  return {cx, cy, w, h, wrap_angle(theta)};
}

bool point_in_rotated_box(const CartPoint & p, const BoxBEV & b)
{
  const double dx = p.x - b.cx;
  const double dy = p.y - b.cy;
  const double c = std::cos(b.theta);
  const double s = std::sin(b.theta);
  const double u = c * dx + s * dy;
  const double v = -s * dx + c * dy;
  return std::abs(u) <= 0.5 * b.w && std::abs(v) <= 0.5 * b.h;
}

double polygon_area(const std::vector<CartPoint> & poly)
{
  const std::size_t n = poly.size();
  if (n < 3) {
    return 0.0;
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto & p = poly[i];
    const auto & q = poly[(i + 1) % n];
    acc += p.x * q.y - q.x * p.y;
  }
  return 0.5 * acc;
}

std::vector<CartPoint> clip_convex(
  const std::vector<CartPoint> & subject, const std::vector<CartPoint> & clip)
{
  std::vector<CartPoint> out = subject;
  const std::size_t m = clip.size();
  for (std::size_t e = 0; e < m && !out.empty(); ++e) {
    const CartPoint a = clip[e];
    const CartPoint b = clip[(e + 1) % m];
    // positive side = left of a->b = inside for ccw clip polygons
    auto side = [&](const CartPoint & p) {
      return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    };
    std::vector<CartPoint> in = std::move(out);
    out.clear();
    const std::size_t n = in.size();
    for (std::size_t i = 0; i < n; ++i) {
      const CartPoint & p = in[i];
      const CartPoint & q = in[(i + 1) % n];
      const double sp = side(p);
      const double sq = side(q);
      if (sp >= 0.0) {
        out.push_back(p);
      }
      if ((sp >= 0.0) != (sq >= 0.0)) {
        const double t = sp / (sp - sq);
        out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
  }
  return out;
}

double rotated_iou_bev(const BoxBEV & a, const BoxBEV & b)
{
  const auto ca = a.corners();
  const auto cb = b.corners();
  const std::vector<CartPoint> pa(ca.begin(), ca.end());
  const std::vector<CartPoint> pb(cb.begin(), cb.end());
  // clip the box with the lexicographically smaller tuple against the other so iou(a,b) == iou(b,a)
  const bool a_first = std::tie(a.cx, a.cy, a.w, a.h, a.theta) <= std::tie(b.cx, b.cy, b.w, b.h, b.theta);
  const auto inter_poly = a_first ? clip_convex(pa, pb) : clip_convex(pb, pa);
  const double inter = std::max(0.0, polygon_area(inter_poly));
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) {
    return 0.0;
  }
  return std::clamp(inter / uni, 0.0, 1.0);
}

double heading_delta(double t1, double t2)
{
  const double d = std::abs(wrap_angle(t1 - t2));
  return std::min(d, kPi);
}

std::vector<double> range_bin_edges(const DiscretizationStrategy & s)
{
  if (s.n_bins == 0) {
    throw std::invalid_argument("range discretization needs at least one bin");
  }
  if (!(s.r_min < s.r_max) || s.r_min < 0.0) {
    throw std::invalid_argument("range discretization needs 0 <= r_min < r_max");
  }
  const auto n = static_cast<double>(s.n_bins);
  std::vector<double> edges(s.n_bins + 1);
  switch (s.kind) {
    case RangeDiscretization::UD: {
      const double width = (s.r_max - s.r_min) / n;
      for (std::size_t i = 0; i <= s.n_bins; ++i) {
        edges[i] = s.r_min + width * static_cast<double>(i);
      }
      break;
    }
    case RangeDiscretization::SID: {
      if (!(s.r_min > 0.0)) {
        throw std::invalid_argument("SID discretization requires r_min > 0");
      }
      const double log_min = std::log(s.r_min);
      const double log_ratio = std::log(s.r_max / s.r_min);
      for (std::size_t i = 0; i <= s.n_bins; ++i) {
        edges[i] = std::exp(log_min + log_ratio * static_cast<double>(i) / n);
      }
      break;
    }
    case RangeDiscretization::LID: {
      const double scale = (s.r_max - s.r_min) / (n * (n + 1.0));
      for (std::size_t i = 0; i <= s.n_bins; ++i) {
        const auto di = static_cast<double>(i);
        edges[i] = s.r_min + scale * di * (di + 1.0);
      }
      break;
    }
  }
  edges.front() = s.r_min;
  edges.back() = s.r_max;
  return edges;
}

std::optional<std::size_t> range_to_bin(double r, const std::vector<double> & edges)
{
  if (edges.size() < 2 || !(r >= edges.front()) || !(r <= edges.back())) {
    return std::nullopt;
  }
  const auto it = std::upper_bound(edges.begin(), edges.end(), r);
  const auto idx = static_cast<std::size_t>(std::distance(edges.begin(), it));
  // idx is one past the containing bin; r == r_max gives edges.size()
  return std::min(idx, edges.size() - 1) - 1;
}

std::optional<std::size_t> range_to_bin(double r, const DiscretizationStrategy & s)
{
  return range_to_bin(r, range_bin_edges(s));
}

}  // namespace partner
