#include <cmath>
#include <random>

#include "checks.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "partner/geometry.hpp"

using namespace partner;

TEST_CASE("cart_to_polar examples")
{
  auto p = cart_to_polar({3.0, 4.0});
  CHECK(p.r == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(p.a == doctest::Approx(std::atan2(4.0, 3.0)));
  CHECK(p.a == doctest::Approx(0.927295).epsilon(1e-6));

  p = cart_to_polar({0.0, -1.0});
  CHECK(p.r == doctest::Approx(1.0));
  CHECK(p.a == doctest::Approx(-kPi / 2));

  p = cart_to_polar({-2.0, 0.0});
  CHECK(p.r == doctest::Approx(2.0));
  CHECK(p.a == -kPi);

  p = cart_to_polar({0.0, 0.0});
  CHECK(p.r == 0.0);
  CHECK(p.a == 0.0);
}

TEST_CASE("polar_to_cart examples")
{
  auto c = polar_to_cart({2.0, wrap_angle(kPi)});
  CHECK(c.x == doctest::Approx(-2.0));
  CHECK(std::abs(c.y) < 1e-12);

  c = polar_to_cart({0.0, 1.234});
  CHECK(c.x == 0.0);
  CHECK(c.y == 0.0);

  c = polar_to_cart({5.0, std::atan2(4.0, 3.0)});
  CHECK(std::abs(c.x - 3.0) < 1e-9);
  CHECK(std::abs(c.y - 4.0) < 1e-9);
}

TEST_CASE("polar round trip on random samples")
{
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ur(1e-6, 100.0);
  std::uniform_real_distribution<double> ua(-kPi, kPi);
  for (int n = 0; n < 10000; ++n) {
    const PolarPoint p{ur(rng), ua(rng)};
    const PolarPoint q = cart_to_polar(polar_to_cart(p));
    REQUIRE(std::abs(q.r - p.r) < 1e-9);
    REQUIRE(heading_delta(q.a, p.a) < 1e-9);
    REQUIRE(q.a >= -kPi);
    REQUIRE(q.a < kPi);
  }
}

TEST_CASE("wrap_angle lands in [-pi, pi)")
{
  CHECK(wrap_angle(kPi) == -kPi);
  CHECK(wrap_angle(-kPi) == -kPi);
  CHECK(wrap_angle(3 * kPi) == doctest::Approx(-kPi));
  CHECK(wrap_angle(0.5) == 0.5);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const double w = wrap_angle(u(rng));
    REQUIRE(w >= -kPi);
    REQUIRE(w < kPi);
  }
}

TEST_CASE("range_bin_edges examples")
{
  const auto lid = range_bin_edges({RangeDiscretization::LID, 0.0, 75.0, 5});
  const std::vector<double> expected_lid{0, 5, 15, 30, 50, 75};
  REQUIRE(lid.size() == expected_lid.size());
  for (std::size_t i = 0; i < lid.size(); ++i) {
    CHECK(lid[i] == doctest::Approx(expected_lid[i]).epsilon(1e-12));
  }

  const auto ud = range_bin_edges({RangeDiscretization::UD, 0.3, 75.18, 1152});
  REQUIRE(ud.size() == 1153);
  for (std::size_t i = 0; i + 1 < ud.size(); ++i) {
    REQUIRE(ud[i + 1] - ud[i] == doctest::Approx(0.065).epsilon(1e-9));
  }

  const auto sid = range_bin_edges({RangeDiscretization::SID, 1.0, 16.0, 4});
  const std::vector<double> expected_sid{1, 2, 4, 8, 16};
  for (std::size_t i = 0; i < sid.size(); ++i) {
    CHECK(sid[i] == doctest::Approx(expected_sid[i]).epsilon(1e-12));
  }

  CHECK_THROWS_AS(range_bin_edges({RangeDiscretization::SID, 0.0, 16.0, 4}), std::invalid_argument);
  CHECK_THROWS_AS(range_bin_edges({RangeDiscretization::UD, 5.0, 1.0, 4}), std::invalid_argument);
}

TEST_CASE("range_bin_edges properties over random parameters")
{
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 50.0);
  std::uniform_int_distribution<std::size_t> nb(1, 300);
  for (int t = 0; t < 300; ++t) {
    const double lo = u(rng);
    const double hi = lo + u(rng);
    const std::size_t n = nb(rng);
    for (auto kind : {RangeDiscretization::UD, RangeDiscretization::SID, RangeDiscretization::LID}) {
      const auto e = range_bin_edges({kind, lo, hi, n});
      REQUIRE(e.size() == n + 1);
      REQUIRE(e.front() == lo);
      REQUIRE(e.back() == hi);
      for (std::size_t i = 0; i < n; ++i) {
        REQUIRE(e[i] < e[i + 1]);
      }
      if (kind == RangeDiscretization::LID && n >= 3) {
        const double step = (e[2] - e[1]) - (e[1] - e[0]);
        for (std::size_t i = 1; i + 1 < n; ++i) {
          const double diff = (e[i + 2] - e[i + 1]) - (e[i + 1] - e[i]);
          REQUIRE(std::abs(diff - step) < 1e-9);
        }
      }
    }
  }
}

TEST_CASE("range_to_bin examples")
{
  const DiscretizationStrategy ud{RangeDiscretization::UD, 0.3, 75.18, 1152};
  CHECK(range_to_bin(0.3, ud) == std::optional<std::size_t>(0));
  CHECK(range_to_bin(1.0, ud) == std::optional<std::size_t>(10));
  CHECK(range_to_bin(75.18, ud) == std::optional<std::size_t>(1151));
  CHECK_FALSE(range_to_bin(76.18, ud).has_value());
  CHECK_FALSE(range_to_bin(0.2, ud).has_value());
  // lower edge belongs to the upper bin
  const DiscretizationStrategy lid{RangeDiscretization::LID, 0.0, 75.0, 5};
  CHECK(range_to_bin(15.0, lid) == std::optional<std::size_t>(2));
}

TEST_CASE("point_in_rotated_box examples")
{
  CHECK(point_in_rotated_box({0.5, 0.5}, make_box_bev(0, 0, 2, 2, 0)));
  CHECK(point_in_rotated_box({1.3, 0.0}, make_box_bev(0, 0, 2, 2, kPi / 4)));
  CHECK_FALSE(point_in_rotated_box({1.5, 0.0}, make_box_bev(0, 0, 2, 2, 0)));
  CHECK(point_in_rotated_box({1.0, 1.0}, make_box_bev(0, 0, 2, 2, 0)));  // boundary counts
  CHECK_THROWS_AS(make_box_bev(0, 0, 0, 1, 0), std::invalid_argument);
}

TEST_CASE("point_in_rotated_box agrees with a polygon membership oracle")
{
  std::mt19937_64 rng(17);
  for (int b = 0; b < 100; ++b) {
    const BoxBEV box = oracle::random_box(rng, 5.0);
    const auto corners = box.corners();
    std::uniform_real_distribution<double> ux(box.cx - 4.0, box.cx + 4.0);
    std::uniform_real_distribution<double> uy(box.cy - 4.0, box.cy + 4.0);
    for (int s = 0; s < 10000; ++s) {
      const CartPoint p{ux(rng), uy(rng)};
      REQUIRE(point_in_rotated_box(p, box) == oracle::inside_convex(p, corners));
    }
  }
}

TEST_CASE("rotated_iou_bev examples")
{
  const auto a = make_box_bev(0, 0, 1, 1, 0);
  CHECK(rotated_iou_bev(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rotated_iou_bev(a, make_box_bev(5, 5, 1, 1, 0.3)) == 0.0);
  CHECK(rotated_iou_bev(a, make_box_bev(0.5, 0, 1, 1, 0)) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("rotated_iou_bev matches a Monte-Carlo area oracle")
{
  const checks::Count c = checks::iou_vs_monte_carlo(1000, 23);
  CHECK(c.checked == 1000);
  CHECK(c.failed == 0);
  CHECK(c.worst < 1e-2);
}

TEST_CASE("axis-aligned IoU matches the analytic formula")
{
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> uc(-2.0, 2.0);
  std::uniform_real_distribution<double> us(0.2, 3.0);
  for (int t = 0; t < 1000; ++t) {
    const BoxBEV a = make_box_bev(uc(rng), uc(rng), us(rng), us(rng), 0.0);
    const BoxBEV b = make_box_bev(uc(rng), uc(rng), us(rng), us(rng), 0.0);
    const double ix = std::max(0.0, std::min(a.cx + a.w / 2, b.cx + b.w / 2) - std::max(a.cx - a.w / 2, b.cx - b.w / 2));
    const double iy = std::max(0.0, std::min(a.cy + a.h / 2, b.cy + b.h / 2) - std::max(a.cy - a.h / 2, b.cy - b.h / 2));
    const double inter = ix * iy;
    const double expected = inter / (a.area() + b.area() - inter);
    REQUIRE(std::abs(rotated_iou_bev(a, b) - expected) < 1e-9);
  }
}

TEST_CASE("heading_delta examples")
{
  CHECK(heading_delta(0.0, 0.0) == 0.0);
  CHECK(heading_delta(kPi - 0.1, -kPi + 0.1) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(heading_delta(0.0, kPi / 2) == doctest::Approx(kPi / 2));
  CHECK(heading_delta(0.0, kPi) == doctest::Approx(kPi));
}
