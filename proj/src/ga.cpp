#include "partner/ga.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace partner::ga
{

Tensor foreground_target(const PolarGrid & grid, const std::vector<BoxBEV> & boxes)
{
  Tensor h({grid.rows(), grid.cols()});
  for (std::size_t i = 0; i < grid.rows(); ++i) {
    for (std::size_t j = 0; j < grid.cols(); ++j) {
      const CartPoint p = grid.pixel_cart(i, j);
      for (const auto & b : boxes) {
        if (point_in_rotated_box(p, b)) {
          h.at(i, j) = 1.0;
          break;
        }
      }
    }
  }
  return h;
}

Tensor foreground_target(const GridSpec & spec, const std::vector<BoxBEV> & boxes)
{
  return foreground_target(PolarGrid(spec), boxes);
}

std::array<double, 4> offset_to_center(const CartPoint & pixel, const CartPoint & center)
{
  const PolarPoint pp = cart_to_polar(pixel);
  const PolarPoint pc = cart_to_polar(center);
  return {center.x - pixel.x, center.y - pixel.y, pc.r - pp.r, wrap_angle(pc.a - pp.a)};
}

TargetMaps center_offset_target(const PolarGrid & grid, const std::vector<BoxBEV> & boxes, std::uint64_t seed)
{
  const std::size_t r = grid.rows(), a = grid.cols();
  TargetMaps t{Tensor({r, a}), Tensor({r, a, 4}), std::vector<std::int64_t>(r * a, -1)};
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> inside;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < a; ++j) {
      const CartPoint p = grid.pixel_cart(i, j);
      inside.clear();
      for (std::size_t k = 0; k < boxes.size(); ++k) {
        if (point_in_rotated_box(p, boxes[k])) {
          inside.push_back(k);
        }
      }
      if (inside.empty()) {
        continue;
      }
      const std::size_t k = inside.size() == 1 ? inside[0] : inside[rng() % inside.size()];
      const std::size_t px = i * a + j;
      t.h_hat.data[px] = 1.0;
      t.owner[px] = static_cast<std::int64_t>(k);
      const auto d = offset_to_center(p, {boxes[k].cx, boxes[k].cy});
      std::copy(d.begin(), d.end(), t.d_hat.data.begin() + static_cast<std::ptrdiff_t>(px * 4));
    }
  }
  return t;
}

TargetMaps center_offset_target(const GridSpec & spec, const std::vector<BoxBEV> & boxes, std::uint64_t seed)
{
  return center_offset_target(PolarGrid(spec), boxes, seed);
}

void GaConfig::validate(std::size_t rows, std::size_t cols, bool periodic) const
{
  (void)rows;
  if (window == 0) {
    throw std::invalid_argument("ga: window must be positive");
  }
  if (periodic && cols % window != 0) {
    throw std::invalid_argument("ga: window must divide the angular size");
  }
  if (shift >= window) {
    throw std::invalid_argument("ga: shift must be smaller than the window");
  }
  if (n_heads == 0) {
    throw std::invalid_argument("ga: n_heads must be positive");
  }
}

Tensor normalized_positions(const PolarGrid & grid)
{
  Tensor p = grid.positions();
  const double r_max = grid.spec().range.r_max;
  for (std::size_t px = 0; px < grid.rows() * grid.cols(); ++px) {
    p.data[px * 4 + 0] /= r_max;
    p.data[px * 4 + 1] /= kPi;
    p.data[px * 4 + 2] /= r_max;
    p.data[px * 4 + 3] /= r_max;
  }
  return p;
}

void declare_params(std::vector<ParamDecl> & out, const std::string & prefix, std::size_t channels, const GaConfig & config)
{
  out.push_back({prefix + ".fg.k", {3, 3, channels, 1}, 9 * channels, false});
  out.push_back({prefix + ".fg.b", {1}, 1, true});
  out.push_back({prefix + ".dis.k", {3, 3, channels, 4}, 9 * channels, false});
  out.push_back({prefix + ".dis.b", {4}, 1, true});
  std::size_t in = kGeoChannels + kPosChannels;
  std::vector<std::size_t> widths = config.mlp_hidden;
  widths.push_back(channels);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const std::string p = prefix + ".mlp." + std::to_string(l);
    out.push_back({p + ".w", {in, widths[l]}, in, false});
    out.push_back({p + ".b", {widths[l]}, 1, true});
    in = widths[l];
  }
  for (std::size_t s = 0; s < config.n_stacks; ++s) {
    const std::string p = prefix + "." + std::to_string(s);
    for (const char * name : {".wq", ".wk", ".wv", ".wo"}) {
      out.push_back({p + name, {channels, channels}, channels, false});
    }
  }
}

Prediction geometry_prediction(ad::Graph & g, ad::Var f_neck, ParamBinder & bind, const std::string & prefix, bool circular)
{
  const kernels::Conv2dSpec spec{1, circular};
  const ad::Var h = ad::sigmoid(g, ad::conv2d(g, f_neck, bind(prefix + ".fg.k"), bind(prefix + ".fg.b"), spec));
  const ad::Var d = ad::conv2d(g, f_neck, bind(prefix + ".dis.k"), bind(prefix + ".dis.b"), spec);
  return {h, d};
}

AuxLosses auxiliary_losses(ad::Graph & g, const Prediction & pred, const TargetMaps & targets)
{
  const Tensor & h = g.value(pred.h);
  const std::size_t px = targets.h_hat.size();
  if (h.size() != px || g.value(pred.d).size() != 4 * px) {
    throw std::invalid_argument("auxiliary_losses: prediction/target shape mismatch");
  }
  const ad::Var fg = ad::focal_loss(g, pred.h, targets.h_hat.reshaped(h.shape), kernels::FocalSpec{});
  Tensor weight(g.value(pred.d).shape);
  double n_fg = 0.0;
  for (std::size_t p = 0; p < px; ++p) {
    if (targets.h_hat.data[p] == 1.0) {
      n_fg += 1.0;
      std::fill_n(weight.data.begin() + static_cast<std::ptrdiff_t>(p * 4), 4, 1.0);
    }
  }
  const ad::Var dis_sum = ad::smooth_l1(g, pred.d, targets.d_hat.reshaped(weight.shape), weight);
  return {fg, ad::scale(g, dis_sum, 1.0 / std::max(1.0, n_fg))};
}

ad::Var geometry_embedding(
  ad::Graph & g, ad::Var geo, ad::Var pos, const std::vector<std::pair<ad::Var, ad::Var>> & layers)
{
  const Tensor & gv = g.value(geo);
  const std::size_t r = gv.dim(0), a = gv.dim(1);
  ad::Var x = ad::reshape(g, ad::concat_last(g, geo, pos), {r * a, g.value(geo).dim(2) + g.value(pos).dim(2)});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    x = ad::linear(g, x, layers[l].first, layers[l].second);
    if (l + 1 < layers.size()) {
      x = ad::relu(g, x);
    }
  }
  return ad::reshape(g, x, {r, a, g.value(x).dim(1)});
}

std::vector<std::int64_t> window_tokens(
  std::size_t rows, std::size_t cols, std::size_t window, std::size_t shift, bool periodic,
  std::size_t & n_windows)
{
  const std::size_t nr = (rows + shift + window - 1) / window;
  const std::size_t na = periodic ? cols / window : (cols + shift + window - 1) / window;
  n_windows = nr * na;
  const auto r = static_cast<std::int64_t>(rows);
  const auto a = static_cast<std::int64_t>(cols);
  const auto s = static_cast<std::int64_t>(shift);
  std::vector<std::int64_t> idx;
  idx.reserve(n_windows * window * window);
  for (std::size_t wr = 0; wr < nr; ++wr) {
    for (std::size_t wa = 0; wa < na; ++wa) {
      for (std::size_t u = 0; u < window; ++u) {
        const std::int64_t i = static_cast<std::int64_t>(wr * window + u) - s;
        for (std::size_t t = 0; t < window; ++t) {
          std::int64_t j = static_cast<std::int64_t>(wa * window + t) - s;
          if (periodic) {
            j = ((j % a) + a) % a;
          }
          idx.push_back(i < 0 || i >= r || j < 0 || j >= a ? -1 : i * a + j);
        }
      }
    }
  }
  return idx;
}

ad::Var ga_window_attention(
  ad::Graph & g, ad::Var f_neck, ad::Var f_geo, std::size_t window, std::size_t shift, bool periodic,
  const WindowVars & w, const std::vector<std::uint8_t> & valid)
{
  const Tensor & fv = g.value(f_neck);
  const std::size_t r = fv.dim(0), a = fv.dim(1), c = fv.dim(2);
  std::size_t n_windows = 0;
  const auto win = window_tokens(r, a, window, shift, periodic, n_windows);
  const std::size_t t = window * window;
  std::vector<std::uint8_t> mask(win.size());
  std::vector<std::int64_t> inverse(r * a, -1);
  for (std::size_t p = 0; p < win.size(); ++p) {
    mask[p] = win[p] >= 0 && (valid.empty() || valid[static_cast<std::size_t>(win[p])]) ? 1 : 0;
    if (win[p] >= 0) {
      inverse[static_cast<std::size_t>(win[p])] = static_cast<std::int64_t>(p);
    }
  }
  const ad::Var rows = ad::reshape(g, f_neck, {r * a, c});
  const ad::Var geo = ad::reshape(g, f_geo, {r * a, c});
  const std::size_t d = g.value(w.wq).dim(1);
  auto project = [&](ad::Var wm) {
    const ad::Var x = ad::add(g, ad::linear(g, rows, wm), geo);
    return ad::reshape(g, ad::gather_rows(g, x, win), {n_windows, t, d});
  };
  const ad::Var att = ad::attention(g, project(w.wq), project(w.wk), project(w.wv), mask, kernels::AttentionSpec{w.n_heads});
  const ad::Var out = ad::linear(g, ad::reshape(g, att, {n_windows * t, d}), w.wo);
  return ad::add(g, f_neck, ad::reshape(g, ad::gather_rows(g, out, std::move(inverse)), {r, a, c}));
}

GaOutputs ga_forward(
  ad::Graph & g, ad::Var f_neck, const PolarGrid & grid, const GaConfig & config, ParamBinder & bind,
  const std::string & prefix)
{
  config.validate(grid.rows(), grid.cols(), grid.periodic());
  const Prediction pred = geometry_prediction(g, f_neck, bind, prefix, grid.periodic());
  std::vector<std::pair<ad::Var, ad::Var>> layers;
  for (std::size_t l = 0; l <= config.mlp_hidden.size(); ++l) {
    const std::string p = prefix + ".mlp." + std::to_string(l);
    layers.emplace_back(bind(p + ".w"), bind(p + ".b"));
  }
  const ad::Var geo = ad::concat_last(g, pred.h, pred.d);
  const ad::Var f_geo = geometry_embedding(g, geo, g.constant(normalized_positions(grid)), layers);
  ad::Var x = f_neck;
  for (std::size_t s = 0; s < config.n_stacks; ++s) {
    const std::string p = prefix + "." + std::to_string(s);
    const WindowVars w{bind(p + ".wq"), bind(p + ".wk"), bind(p + ".wv"), bind(p + ".wo"), config.n_heads};
    x = ga_window_attention(g, x, f_geo, config.window, s % 2 == 1 ? config.shift : 0, grid.periodic(), w);
  }
  return {x, pred};
}

}  // namespace partner::ga
