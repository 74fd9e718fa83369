#include <cmath>
#include <random>

#include "doctest.h"
#include "kernel_gradcheck.hpp"
#include "partner/graph.hpp"
#include "partner/kernels.hpp"

using namespace partner;
namespace k = partner::kernels;

namespace
{

Tensor eye(std::size_t n)
{
  Tensor t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    t.at(i, i) = 1.0;
  }
  return t;
}

double max_abs_diff(const Tensor & a, const Tensor & b)
{
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  }
  return m;
}

}  // namespace

TEST_CASE("linear with identity weight is a no-op")
{
  std::mt19937_64 rng(1);
  const Tensor x = gradcheck::random_tensor(rng, {5, 3});
  CHECK(k::linear(x, eye(3), Tensor(Shape{3})) == x);
  CHECK(k::linear(x, eye(3), Tensor{}) == x);
  CHECK_THROWS_AS(k::linear(x, eye(4), Tensor{}), std::invalid_argument);
}

TEST_CASE("relu values and gradient gating")
{
  const Tensor x(Shape{2}, {-1.0, 2.0});
  const Tensor y = k::relu(x);
  CHECK(y.data[0] == 0.0);
  CHECK(y.data[1] == 2.0);
  const Tensor g = k::relu_vjp(x, Tensor(Shape{2}, {5.0, 7.0}));
  CHECK(g.data[0] == 0.0);
  CHECK(g.data[1] == 7.0);
}

TEST_CASE("conv2d with a 1x1 identity kernel is a no-op")
{
  std::mt19937_64 rng(2);
  const Tensor x = gradcheck::random_tensor(rng, {4, 6, 3});
  Tensor kern(Shape{1, 1, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) {
    kern.data[c * 3 + c] = 1.0;
  }
  CHECK(k::conv2d(x, kern, Tensor{}, {1, true}) == x);
  CHECK(k::conv2d(x, kern, Tensor{}, {1, false}) == x);
}

TEST_CASE("conv2d pads the angular axis circularly and the radial axis with zeros")
{
  // 3x3 box filter over a 3x4 single-channel map with a single one at (0, 0)
  Tensor x(Shape{3, 4, 1});
  x.data[0] = 1.0;
  const Tensor kern(Shape{3, 3, 1, 1}, 1.0);
  const Tensor circ = k::conv2d(x, kern, Tensor{}, {1, true});
  CHECK(circ.at(0, 3, 0) == 1.0);  // wraps to the last column
  CHECK(circ.at(2, 0, 0) == 0.0);  // no radial wrap
  const Tensor flat = k::conv2d(x, kern, Tensor{}, {1, false});
  CHECK(flat.at(0, 3, 0) == 0.0);
  CHECK(flat.at(1, 1, 0) == 1.0);
}

TEST_CASE("softmax examples and invariants")
{
  Tensor y = k::softmax(Tensor(Shape{2}, {0.0, 0.0}));
  CHECK(y.data[0] == doctest::Approx(0.5));
  y = k::softmax(Tensor(Shape{2}, {0.0, std::log(3.0)}));
  CHECK(y.data[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(y.data[1] == doctest::Approx(0.75).epsilon(1e-12));
  y = k::softmax(Tensor(Shape{7}, 2.5));
  for (double v : y.data) {
    CHECK(v == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  }

  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    const Tensor x = gradcheck::random_tensor(rng, {4, 6}, -5.0, 5.0);
    Tensor shifted = x;
    const double c = std::uniform_real_distribution<double>(-20.0, 20.0)(rng);
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t r = 0; r < 4; ++r) {
        shifted.data[r * 6 + i] += c;
      }
    }
    const Tensor a = k::softmax(x);
    REQUIRE(max_abs_diff(a, k::softmax(shifted)) < 1e-12);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t i = 0; i < 6; ++i) {
        s += a.data[r * 6 + i];
      }
      REQUIRE(std::abs(s - 1.0) < 1e-12);
    }
  }

  // Jacobian of softmax at [0, 0]: every row sums to zero
  const Tensor y0 = k::softmax(Tensor(Shape{1, 2}, {0.0, 0.0}));
  for (std::size_t j = 0; j < 2; ++j) {
    Tensor up(Shape{1, 2});
    up.data[j] = 1.0;
    const Tensor row = k::softmax_vjp(y0, up);
    CHECK(std::abs(row.data[0] + row.data[1]) < 1e-15);
  }
}

TEST_CASE("scaled_dot_attention examples")
{
  std::mt19937_64 rng(4);
  // single key: output is that value row for any query
  const Tensor q = gradcheck::random_tensor(rng, {3, 4});
  const Tensor k1 = gradcheck::random_tensor(rng, {1, 4});
  const Tensor v1 = gradcheck::random_tensor(rng, {1, 4});
  const Tensor out1 = k::scaled_dot_attention(q, k1, v1, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t t = 0; t < 4; ++t) {
      CHECK(out1.at(i, t) == doctest::Approx(v1.at(0, t)).epsilon(1e-14));
    }
  }

  // orthogonal Q and K: uniform weights average V
  Tensor qo(Shape{2, 2}, {1.0, 0.0, 1.0, 0.0});
  Tensor ko(Shape{3, 2}, {0.0, 1.0, 0.0, -2.0, 0.0, 0.5});
  const Tensor vo = gradcheck::random_tensor(rng, {3, 2});
  const Tensor outo = k::scaled_dot_attention(qo, ko, vo);
  for (std::size_t t = 0; t < 2; ++t) {
    const double mean = (vo.at(0, t) + vo.at(1, t) + vo.at(2, t)) / 3.0;
    CHECK(outo.at(0, t) == doctest::Approx(mean).epsilon(1e-14));
  }

  // Q = K = V = I, d = 2: rows are softmax of (1/sqrt2, 0) and (0, 1/sqrt2)
  const Tensor id = eye(2);
  const Tensor out2 = k::scaled_dot_attention(id, id, id);
  const double p = 1.0 / (1.0 + std::exp(-1.0 / std::sqrt(2.0)));
  CHECK(out2.at(0, 0) == doctest::Approx(p).epsilon(1e-14));
  CHECK(out2.at(0, 1) == doctest::Approx(1.0 - p).epsilon(1e-14));
  CHECK(out2.at(1, 0) == doctest::Approx(1.0 - p).epsilon(1e-14));
  CHECK(out2.at(1, 1) == doctest::Approx(p).epsilon(1e-14));
}

TEST_CASE("attention is equivariant to key/value permutations")
{
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    const Tensor q = gradcheck::random_tensor(rng, {1, 3, 4});
    const Tensor kk = gradcheck::random_tensor(rng, {1, 6, 4});
    const Tensor v = gradcheck::random_tensor(rng, {1, 6, 4});
    std::vector<std::int64_t> perm{0, 1, 2, 3, 4, 5};
    std::shuffle(perm.begin(), perm.end(), rng);
    const Tensor kp = k::gather_rows(kk.reshaped({6, 4}), perm).reshaped({1, 6, 4});
    const Tensor vp = k::gather_rows(v.reshaped({6, 4}), perm).reshaped({1, 6, 4});
    const Tensor a = k::attention(q, kk, v, {}, {2});
    const Tensor b = k::attention(q, kp, vp, {}, {2});
    REQUIRE(max_abs_diff(a, b) < 1e-12);
  }
}

TEST_CASE("masked keys are excluded from attention")
{
  std::mt19937_64 rng(6);
  const Tensor q = gradcheck::random_tensor(rng, {1, 2, 2});
  const Tensor kk = gradcheck::random_tensor(rng, {1, 3, 2});
  const Tensor v = gradcheck::random_tensor(rng, {1, 3, 2});
  const Tensor masked = k::attention(q, kk, v, {1, 0, 1}, {1});
  const Tensor sub_k = k::gather_rows(kk.reshaped({3, 2}), {0, 2}).reshaped({1, 2, 2});
  const Tensor sub_v = k::gather_rows(v.reshaped({3, 2}), {0, 2}).reshaped({1, 2, 2});
  CHECK(max_abs_diff(masked, k::attention(q, sub_k, sub_v, {}, {1})) < 1e-15);
}

TEST_CASE("relative positional encoding examples")
{
  std::mt19937_64 rng(7);
  const Tensor w = gradcheck::random_tensor(rng, {4, 5});
  const Tensor p = gradcheck::random_tensor(rng, {1, 4});
  const Tensor e = k::relative_pos_encoding(p, p, w);
  for (double v : e.data) {
    CHECK(v == 0.0);
  }
  const Tensor e0 = k::relative_pos_encoding(p, gradcheck::random_tensor(rng, {3, 4}), Tensor(Shape{4, 5}));
  for (double v : e0.data) {
    CHECK(v == 0.0);
  }
  Tensor w1(Shape{4, 3});
  w1.at(0, 0) = 1.0;
  w1.at(0, 1) = -1.0;
  w1.at(0, 2) = 0.5;
  const Tensor pq(Shape{1, 4}, {1.0, 0.0, 0.0, 0.0});
  const Tensor pk(Shape{1, 4}, {0.0, 0.0, 0.0, 0.0});
  const Tensor e1 = k::relative_pos_encoding(pq, pk, w1);
  CHECK(e1.data[0] == 1.0);
  CHECK(e1.data[1] == 0.0);
  CHECK(e1.data[2] == 0.5);
  // query-shaped form is the key-average of the pairwise encodings
  const Tensor pk3 = gradcheck::random_tensor(rng, {3, 4});
  const Tensor pw = k::relative_pos_encoding_pairwise(p, pk3, w);
  const Tensor avg = k::relative_pos_encoding(p, pk3, w);
  for (std::size_t t = 0; t < 5; ++t) {
    const double m = (pw.at(0, 0, t) + pw.at(0, 1, t) + pw.at(0, 2, t)) / 3.0;
    CHECK(avg.data[t] == doctest::Approx(m).epsilon(1e-14));
  }
}

TEST_CASE("focal loss examples")
{
  const Tensor target(Shape{1}, 1.0);
  const double v = k::focal_loss(Tensor(Shape{1}, 0.5), target, {1.0, 2.0}).data[0];
  CHECK(v == doctest::Approx(-0.25 * std::log(0.5)).epsilon(1e-12));
  CHECK(v == doctest::Approx(0.173287).epsilon(1e-6));

  const Tensor tgt(Shape{4}, {1.0, 0.0, 0.0, 1.0});
  const Tensor perfect(Shape{4}, {1.0, 0.0, 0.0, 1.0});
  CHECK(k::focal_loss(perfect, tgt, {1.0, 2.0}).data[0] <= 1e-5);

  const Tensor h(Shape{4}, {0.3, 0.6, 0.1, 0.8});
  const double one = k::focal_loss(h, tgt, {1.0, 2.0}, 2.0).data[0];
  const double two = k::focal_loss(h, tgt, {1.0, 2.0}, 4.0).data[0];
  CHECK(two == one / 2.0);
}

TEST_CASE("smooth l1 examples")
{
  const Tensor z(Shape{1}, 0.0);
  CHECK(k::smooth_l1(Tensor(Shape{1}, 0.0), z).data[0] == 0.0);
  CHECK(k::smooth_l1(Tensor(Shape{1}, 0.5), z).data[0] == 0.125);
  CHECK(k::smooth_l1(Tensor(Shape{1}, 2.0), z).data[0] == 1.5);
  CHECK(k::smooth_l1(Tensor(Shape{1}, -2.0), z).data[0] == 1.5);
}

TEST_CASE("losses are non-negative")
{
  std::mt19937_64 rng(8);
  for (int t = 0; t < 200; ++t) {
    const Tensor h = gradcheck::random_tensor(rng, {5, 5}, 0.0, 1.0);
    Tensor tgt(h.shape);
    for (double & v : tgt.data) {
      v = std::bernoulli_distribution(0.4)(rng) ? 1.0 : 0.0;
    }
    REQUIRE(k::focal_loss(h, tgt, {1.0, 2.0}).data[0] >= 0.0);
    REQUIRE(k::gaussian_focal_loss(h, gradcheck::random_tensor(rng, {5, 5}, 0.0, 1.0)).data[0] >= 0.0);
    REQUIRE(k::smooth_l1(h, gradcheck::random_tensor(rng, {5, 5}, -3.0, 3.0)).data[0] >= 0.0);
  }
}

TEST_CASE("mlp is linear-relu stacks")
{
  std::mt19937_64 rng(9);
  const Tensor x = gradcheck::random_tensor(rng, {3, 4});
  const k::MlpLayer l1{gradcheck::random_tensor(rng, {4, 6}), gradcheck::random_tensor(rng, {6})};
  const k::MlpLayer l2{gradcheck::random_tensor(rng, {6, 2}), Tensor{}};
  const Tensor expected = k::linear(k::relu(k::linear(x, l1.w, l1.b)), l2.w, l2.b);
  CHECK(k::mlp(x, {l1, l2}) == expected);
}

TEST_CASE("every kernel vjp matches central finite differences")
{
  for (const auto & r : gradcheck::run_kernel_suite(100)) {
    INFO(r.name << ": " << r.failed << "/" << r.checked << " worst rel " << r.worst_rel);
    CHECK(r.checked > 0);
    CHECK(r.failed == 0);
  }
}

TEST_CASE("graph backward composes kernel vjps")
{
  std::mt19937_64 rng(10);
  const Tensor x0 = gradcheck::random_tensor(rng, {4, 3});
  const Tensor w0 = gradcheck::random_tensor(rng, {3, 5});
  const Tensor t0 = gradcheck::random_tensor(rng, {4, 5});
  auto loss = [&](const Tensor & w) {
    ad::Graph g;
    const auto x = g.constant(x0);
    const auto wv = g.parameter(w);
    const auto y = ad::sigmoid(g, ad::linear(g, x, wv));
    const auto l = ad::smooth_l1(g, y, t0);
    return std::make_pair(g.value(l).data[0], [&] {
      g.backward(l);
      return g.grad(wv);
    }());
  };
  const Tensor analytic = loss(w0).second;
  const Tensor numeric = oracle::finite_difference([&](const Tensor & w) { return loss(w).first; }, w0);
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    CHECK(oracle::grad_close(analytic.data[i], numeric.data[i], 1e-6));
  }
}
