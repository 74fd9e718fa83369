#include "partner/grr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace partner::grr
{

void GrrConfig::validate(std::size_t rows, std::size_t cols, bool periodic) const
{
  if (S == 0 || S % 2 == 0) {
    throw std::invalid_argument("grr: S must be odd and positive");
  }
  if (N == 0 || N > rows) {
    throw std::invalid_argument("grr: N must lie in [1, R]");
  }
  if (window == 0 || cols % window != 0) {
    throw std::invalid_argument("grr: window must divide the angular size");
  }
  if (shift >= window) {
    throw std::invalid_argument("grr: shift must be smaller than the window");
  }
  if (n_heads == 0) {
    throw std::invalid_argument("grr: n_heads must be positive");
  }
  (void)periodic;
}

std::array<double, 4> relative_position(
  const PolarGrid & grid, std::size_t iq, std::size_t jq, std::size_t ik, std::size_t jk)
{
  const double r_max = grid.spec().range.r_max;
  const double rq = grid.row_center(iq);
  const double rk = grid.row_center(ik);
  const double dcol = static_cast<double>(grid.col_delta(jq, jk)) * grid.col_width();
  // key azimuth relative to the query is -dcol
  return {
    (rq - rk) / r_max, dcol / kPi, (rq - rk * std::cos(dcol)) / r_max, (rk * std::sin(dcol)) / r_max};
}

Tensor radial_scores(const FeatureMap & f)
{
  if (f.rank() != 3) {
    throw std::invalid_argument("radial_scores: expected (R, A, C)");
  }
  const std::size_t r = f.dim(0), a = f.dim(1), c = f.dim(2);
  Tensor s({r, a});
  for (std::size_t p = 0; p < r * a; ++p) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < c; ++k) {
      m = std::max(m, f.data[p * c + k]);
    }
    s.data[p] = c == 0 ? 0.0 : m;
  }
  return s;
}

Tensor radial_local_max_suppress(const Tensor & scores, std::size_t s)
{
  if (s == 0 || s % 2 == 0) {
    throw std::invalid_argument("radial_local_max_suppress: S must be odd");
  }
  const std::size_t r = scores.dim(0), a = scores.dim(1);
  const auto half = static_cast<std::ptrdiff_t>(s / 2);
  Tensor out(scores.shape, -std::numeric_limits<double>::infinity());
  for (std::size_t j = 0; j < a; ++j) {
    for (std::size_t i = 0; i < r; ++i) {
      const double v = scores.data[i * a + j];
      double m = v;
      for (std::ptrdiff_t o = -half; o <= half; ++o) {
        const auto ii = static_cast<std::ptrdiff_t>(i) + o;
        const double nb = (ii < 0 || ii >= static_cast<std::ptrdiff_t>(r))
                            ? 0.0
                            : scores.data[static_cast<std::size_t>(ii) * a + j];
        m = std::max(m, nb);
      }
      if (v == m) {
        out.data[i * a + j] = v;
      }
    }
  }
  return out;
}

std::vector<std::size_t> select_topk(const Tensor & scores, const Tensor & sparse, std::size_t n)
{
  const std::size_t r = scores.dim(0), a = scores.dim(1);
  if (n > r) {
    throw std::invalid_argument("select_topk: N exceeds R");
  }
  std::vector<std::size_t> out(a * n);
  std::vector<std::size_t> order(r);
  for (std::size_t j = 0; j < a; ++j) {
    std::iota(order.begin(), order.end(), 0);
    // survivors first, then suppressed entries by their original score; ties to the lower index
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      const bool kx = std::isfinite(sparse.data[x * a + j]);
      const bool ky = std::isfinite(sparse.data[y * a + j]);
      if (kx != ky) {
        return kx;
      }
      return scores.data[x * a + j] > scores.data[y * a + j];
    });
    std::copy_n(order.begin(), n, out.begin() + static_cast<std::ptrdiff_t>(j * n));
  }
  return out;
}

RepresentativeSet select_representatives(
  const FeatureMap & f, const PolarGrid & grid, std::size_t s, std::size_t n)
{
  const Tensor scores = radial_scores(f);
  RepresentativeSet reps;
  reps.n_per_col = n;
  reps.indices = select_topk(scores, radial_local_max_suppress(scores, s), n);
  const std::size_t a = f.dim(1), c = f.dim(2);
  reps.features = Tensor({n, a, c});
  reps.positions = Tensor({n, a, 4});
  for (std::size_t j = 0; j < a; ++j) {
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = reps.indices[j * n + k];
      std::copy_n(f.data.begin() + static_cast<std::ptrdiff_t>((i * a + j) * c), c,
                  reps.features.data.begin() + static_cast<std::ptrdiff_t>((k * a + j) * c));
      const PolarPoint pp = grid.pixel_polar(i, j);
      const CartPoint cp = polar_to_cart(pp);
      double * pos = &reps.positions.data[(k * a + j) * 4];
      pos[0] = pp.r;
      pos[1] = pp.a;
      pos[2] = cp.x;
      pos[3] = cp.y;
    }
  }
  return reps;
}

AttentionVars bind_attention(ParamBinder & bind, const std::string & prefix, std::size_t n_heads)
{
  return {bind(prefix + ".wq"), bind(prefix + ".wk"), bind(prefix + ".wv"), bind(prefix + ".wpos"),
          bind(prefix + ".wo"), n_heads};
}

AttentionVars bind_attention(ad::Graph & g, const AttentionParams & p)
{
  return {g.constant(p.wq), g.constant(p.wk), g.constant(p.wv), g.constant(p.wpos), g.constant(p.wo),
          p.n_heads};
}

void declare_attention(std::vector<ParamDecl> & out, const std::string & prefix, std::size_t channels, std::size_t dim)
{
  out.push_back({prefix + ".wq", {channels, dim}, channels, false});
  out.push_back({prefix + ".wk", {channels, dim}, channels, false});
  out.push_back({prefix + ".wv", {channels, dim}, channels, false});
  out.push_back({prefix + ".wpos", {4, dim}, 4, false});
  out.push_back({prefix + ".wo", {dim, channels}, dim, false});
}

void declare_params(
  std::vector<ParamDecl> & out, const std::string & prefix, std::size_t channels, std::size_t dim,
  const GrrConfig & config)
{
  for (std::size_t s = 0; s < config.n_stacks; ++s) {
    const std::string p = prefix + "." + std::to_string(s);
    declare_attention(out, p + ".condense", channels, dim);
    declare_attention(out, p + ".angular", channels, dim);
    declare_attention(out, p + ".broadcast", channels, dim);
  }
}

std::vector<std::int64_t> angular_window_tokens(
  std::size_t cols, std::size_t n, std::size_t window, std::size_t shift, bool periodic,
  std::size_t & n_windows)
{
  n_windows = periodic ? cols / window : (cols + shift + window - 1) / window;
  std::vector<std::int64_t> idx;
  idx.reserve(n_windows * window * n);
  const auto a = static_cast<std::int64_t>(cols);
  for (std::size_t w = 0; w < n_windows; ++w) {
    for (std::size_t t = 0; t < window; ++t) {
      std::int64_t col = static_cast<std::int64_t>(w * window + t) - static_cast<std::int64_t>(shift);
      if (periodic) {
        col = ((col % a) + a) % a;
      }
      for (std::size_t k = 0; k < n; ++k) {
        idx.push_back(col < 0 || col >= a ? -1 : col * static_cast<std::int64_t>(n) + static_cast<std::int64_t>(k));
      }
    }
  }
  return idx;
}

namespace
{

// Row-major (i * A + j) <-> column-major (j * R + i) pixel orders.
std::vector<std::int64_t> column_major_index(std::size_t r, std::size_t a)
{
  std::vector<std::int64_t> idx(r * a);
  for (std::size_t j = 0; j < a; ++j) {
    for (std::size_t i = 0; i < r; ++i) {
      idx[j * r + i] = static_cast<std::int64_t>(i * a + j);
    }
  }
  return idx;
}

std::vector<std::int64_t> row_major_index(std::size_t r, std::size_t a)
{
  std::vector<std::int64_t> idx(r * a);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < a; ++j) {
      idx[i * a + j] = static_cast<std::int64_t>(j * r + i);
    }
  }
  return idx;
}

void put_delta(Tensor & deltas, std::size_t at, const std::array<double, 4> & d)
{
  std::copy(d.begin(), d.end(), deltas.data.begin() + static_cast<std::ptrdiff_t>(at * 4));
}

// Q, K, V projections followed by attention + E and the output projection; q_rows/kv_rows are
// flat [B * m, C] / [B * n, C].
ad::Var attend(
  ad::Graph & g, ad::Var q_rows, ad::Var kv_rows, std::size_t b, std::size_t m, std::size_t n,
  const std::vector<std::uint8_t> & mask, Tensor deltas, const AttentionVars & w)
{
  const std::size_t d = g.value(w.wq).dim(1);
  const ad::Var q = ad::reshape(g, ad::linear(g, q_rows, w.wq), {b, m, d});
  const ad::Var k = ad::reshape(g, ad::linear(g, kv_rows, w.wk), {b, n, d});
  const ad::Var v = ad::reshape(g, ad::linear(g, kv_rows, w.wv), {b, n, d});
  const ad::Var att = ad::attention(g, q, k, v, mask, kernels::AttentionSpec{w.n_heads});
  const ad::Var e = ad::relpos(g, std::move(deltas), mask, w.wpos);
  return ad::linear(g, ad::reshape(g, ad::add(g, att, e), {b * m, d}), w.wo);
}

}  // namespace

ad::Var condense_attention(
  ad::Graph & g, ad::Var f, const std::vector<std::size_t> & indices, std::size_t n,
  const PolarGrid & grid, const AttentionVars & w)
{
  const Tensor & fv = g.value(f);
  const std::size_t r = fv.dim(0), a = fv.dim(1), c = fv.dim(2);
  const ad::Var rows = ad::reshape(g, f, {r * a, c});
  std::vector<std::int64_t> q_idx(a * n);
  Tensor deltas({a, n, r, 4});
  for (std::size_t j = 0; j < a; ++j) {
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t iq = indices[j * n + k];
      q_idx[j * n + k] = static_cast<std::int64_t>(iq * a + j);
      for (std::size_t ik = 0; ik < r; ++ik) {
        put_delta(deltas, (j * n + k) * r + ik, relative_position(grid, iq, j, ik, j));
      }
    }
  }
  const ad::Var q_rows = ad::gather_rows(g, rows, std::move(q_idx));
  const ad::Var kv_rows = ad::gather_rows(g, rows, column_major_index(r, a));
  return attend(g, q_rows, kv_rows, a, n, r, {}, std::move(deltas), w);
}

ad::Var angular_window_attention(
  ad::Graph & g, ad::Var tokens, const std::vector<std::size_t> & indices, std::size_t n,
  const PolarGrid & grid, std::size_t window, std::size_t shift, const AttentionVars & w)
{
  const std::size_t a = grid.cols();
  std::size_t n_windows = 0;
  const auto win = angular_window_tokens(a, n, window, shift, grid.periodic(), n_windows);
  const std::size_t t = window * n;
  std::vector<std::uint8_t> mask(win.size());
  std::vector<std::int64_t> inverse(a * n, -1);
  for (std::size_t p = 0; p < win.size(); ++p) {
    mask[p] = win[p] >= 0 ? 1 : 0;
    if (win[p] >= 0) {
      inverse[static_cast<std::size_t>(win[p])] = static_cast<std::int64_t>(p);
    }
  }
  Tensor deltas({n_windows, t, t, 4});
  for (std::size_t wi = 0; wi < n_windows; ++wi) {
    for (std::size_t x = 0; x < t; ++x) {
      const auto qt = win[wi * t + x];
      if (qt < 0) {
        continue;
      }
      const auto qc = static_cast<std::size_t>(qt) / n;
      const std::size_t qi = indices[static_cast<std::size_t>(qt)];
      for (std::size_t y = 0; y < t; ++y) {
        const auto kt = win[wi * t + y];
        if (kt < 0) {
          continue;
        }
        const auto kc = static_cast<std::size_t>(kt) / n;
        put_delta(deltas, (wi * t + x) * t + y,
                  relative_position(grid, qi, qc, indices[static_cast<std::size_t>(kt)], kc));
      }
    }
  }
  const ad::Var windowed = ad::gather_rows(g, tokens, win);
  const ad::Var out = attend(g, windowed, windowed, n_windows, t, t, mask, std::move(deltas), w);
  return ad::add(g, tokens, ad::gather_rows(g, out, std::move(inverse)));
}

ad::Var broadcast_attention(
  ad::Graph & g, ad::Var f, ad::Var tokens, const std::vector<std::size_t> & indices, std::size_t n,
  const PolarGrid & grid, const AttentionVars & w)
{
  const Tensor & fv = g.value(f);
  const std::size_t r = fv.dim(0), a = fv.dim(1), c = fv.dim(2);
  const ad::Var rows = ad::reshape(g, f, {r * a, c});
  Tensor deltas({a, r, n, 4});
  for (std::size_t j = 0; j < a; ++j) {
    for (std::size_t iq = 0; iq < r; ++iq) {
      for (std::size_t k = 0; k < n; ++k) {
        put_delta(deltas, (j * r + iq) * n + k, relative_position(grid, iq, j, indices[j * n + k], j));
      }
    }
  }
  const ad::Var q_rows = ad::gather_rows(g, rows, column_major_index(r, a));
  const ad::Var out = attend(g, q_rows, tokens, a, r, n, {}, std::move(deltas), w);
  const ad::Var back = ad::reshape(g, ad::gather_rows(g, out, row_major_index(r, a)), {r, a, c});
  return ad::add(g, f, back);
}

ad::Var grr_forward(
  ad::Graph & g, ad::Var f, const PolarGrid & grid, const GrrConfig & config, ParamBinder & bind,
  const std::string & prefix)
{
  const Tensor & fv = g.value(f);
  if (fv.rank() != 3 || fv.dim(0) != grid.rows() || fv.dim(1) != grid.cols()) {
    throw std::invalid_argument("grr_forward: feature map does not match the grid");
  }
  config.validate(grid.rows(), grid.cols(), grid.periodic());
  ad::Var x = f;
  for (std::size_t s = 0; s < config.n_stacks; ++s) {
    const std::string p = prefix + "." + std::to_string(s);
    const auto indices = select_topk(
      radial_scores(g.value(x)), radial_local_max_suppress(radial_scores(g.value(x)), config.S), config.N);
    const ad::Var rep = condense_attention(g, x, indices, config.N, grid, bind_attention(bind, p + ".condense", config.n_heads));
    const ad::Var ang = angular_window_attention(
      g, rep, indices, config.N, grid, config.window, s % 2 == 1 ? config.shift : 0,
      bind_attention(bind, p + ".angular", config.n_heads));
    x = broadcast_attention(g, x, ang, indices, config.N, grid, bind_attention(bind, p + ".broadcast", config.n_heads));
  }
  return x;
}

Tensor rep_map_to_tokens(const Tensor & rep_map)
{
  const std::size_t n = rep_map.dim(0), a = rep_map.dim(1), c = rep_map.dim(2);
  Tensor out({a * n, c});
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < a; ++j) {
      std::copy_n(rep_map.data.begin() + static_cast<std::ptrdiff_t>((k * a + j) * c), c,
                  out.data.begin() + static_cast<std::ptrdiff_t>((j * n + k) * c));
    }
  }
  return out;
}

Tensor tokens_to_rep_map(const Tensor & tokens, std::size_t n, std::size_t cols)
{
  const std::size_t c = tokens.cols();
  Tensor out({n, cols, c});
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < cols; ++j) {
      std::copy_n(tokens.data.begin() + static_cast<std::ptrdiff_t>((j * n + k) * c), c,
                  out.data.begin() + static_cast<std::ptrdiff_t>((k * cols + j) * c));
    }
  }
  return out;
}

Tensor condense_attention(
  const FeatureMap & f, const RepresentativeSet & reps, const PolarGrid & grid, const AttentionParams & p)
{
  ad::Graph g;
  const ad::Var out = condense_attention(g, g.constant(f), reps.indices, reps.n_per_col, grid, bind_attention(g, p));
  return tokens_to_rep_map(g.value(out), reps.n_per_col, f.dim(1));
}

Tensor angular_window_attention(
  const Tensor & f_rep, const RepresentativeSet & reps, const PolarGrid & grid, std::size_t window,
  std::size_t shift, const AttentionParams & p)
{
  ad::Graph g;
  const ad::Var out = angular_window_attention(
    g, g.constant(rep_map_to_tokens(f_rep)), reps.indices, reps.n_per_col, grid, window, shift, bind_attention(g, p));
  return tokens_to_rep_map(g.value(out), reps.n_per_col, f_rep.dim(1));
}

FeatureMap broadcast_attention(
  const FeatureMap & f, const Tensor & f_a, const RepresentativeSet & reps, const PolarGrid & grid,
  const AttentionParams & p)
{
  ad::Graph g;
  const ad::Var out = broadcast_attention(
    g, g.constant(f), g.constant(rep_map_to_tokens(f_a)), reps.indices, reps.n_per_col, grid, bind_attention(g, p));
  return g.value(out);
}

FeatureMap grr_forward(
  const FeatureMap & f, const PolarGrid & grid, const GrrConfig & config, const ModelParams & params,
  const std::string & prefix)
{
  ad::Graph g;
  ParamBinder bind(g, params, false);
  return g.value(grr_forward(g, g.constant(f), grid, config, bind, prefix));
}

}  // namespace partner::grr
