#include "partner/head.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace partner::head
{

Box3D make_box3d(double cx, double cy, double cz, double w, double l, double h, double theta)
{
  if (!(w > 0.0) || !(l > 0.0) || !(h > 0.0)) {
    throw std::invalid_argument("make_box3d: extents must be positive");
  }
  return {cx, cy, cz, w, l, h, theta};
}

void declare_neck(std::vector<ParamDecl> & out, const std::string & prefix, std::size_t channels)
{
  out.push_back({prefix + ".c1.k", {3, 3, channels, channels}, 9 * channels, false});
  out.push_back({prefix + ".c1.b", {channels}, 1, true});
  out.push_back({prefix + ".c2.k", {3, 3, channels, channels}, 9 * channels, false});
  out.push_back({prefix + ".c2.b", {channels}, 1, true});
  out.push_back({prefix + ".fuse.k", {1, 1, 2 * channels, channels}, 2 * channels, false});
  out.push_back({prefix + ".fuse.b", {channels}, 1, true});
}

void declare_head(std::vector<ParamDecl> & out, const std::string & prefix, std::size_t channels, std::size_t n_cls)
{
  out.push_back({prefix + ".shared.k", {3, 3, channels, channels}, 9 * channels, false});
  out.push_back({prefix + ".shared.b", {channels}, 1, true});
  out.push_back({prefix + ".hm.k", {3, 3, channels, n_cls}, 9 * channels, false});
  out.push_back({prefix + ".hm.b", {n_cls}, 1, true});
  out.push_back({prefix + ".reg.k", {3, 3, channels, kRegChannels}, 9 * channels, false});
  out.push_back({prefix + ".reg.b", {kRegChannels}, 1, true});
  out.push_back({prefix + ".iou.k", {3, 3, channels, 1}, 9 * channels, false});
  out.push_back({prefix + ".iou.b", {1}, 1, true});
}

ad::Var neck(ad::Graph & g, ad::Var f, ParamBinder & bind, const std::string & prefix, bool circular)
{
  const std::size_t r = g.value(f).dim(0), a = g.value(f).dim(1), c = g.value(f).dim(2);
  const ad::Var c1 = ad::relu(g, ad::conv2d(g, f, bind(prefix + ".c1.k"), bind(prefix + ".c1.b"), {1, circular}));
  const ad::Var c2 = ad::relu(g, ad::conv2d(g, c1, bind(prefix + ".c2.k"), bind(prefix + ".c2.b"), {2, circular}));
  const std::size_t r2 = g.value(c2).dim(0), a2 = g.value(c2).dim(1);
  std::vector<std::int64_t> up(r * a);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < a; ++j) {
      up[i * a + j] = static_cast<std::int64_t>((i / 2) * a2 + j / 2);
    }
  }
  const ad::Var low = ad::reshape(g, ad::gather_rows(g, ad::reshape(g, c2, {r2 * a2, c}), std::move(up)), {r, a, c});
  return ad::conv2d(g, ad::concat_last(g, c1, low), bind(prefix + ".fuse.k"), bind(prefix + ".fuse.b"), {1, circular});
}

HeadOutputs head_forward(ad::Graph & g, ad::Var f, ParamBinder & bind, const std::string & prefix, bool circular)
{
  const kernels::Conv2dSpec spec{1, circular};
  const ad::Var x = ad::relu(g, ad::conv2d(g, f, bind(prefix + ".shared.k"), bind(prefix + ".shared.b"), spec));
  return {
    ad::sigmoid(g, ad::conv2d(g, x, bind(prefix + ".hm.k"), bind(prefix + ".hm.b"), spec)),
    ad::conv2d(g, x, bind(prefix + ".reg.k"), bind(prefix + ".reg.b"), spec),
    ad::sigmoid(g, ad::conv2d(g, x, bind(prefix + ".iou.k"), bind(prefix + ".iou.b"), spec))};
}

double rectify_scores(double score, double iou_pred, double alpha)
{
  return score * std::pow(std::clamp(iou_pred, 0.0, 1.0), alpha);
}

std::array<double, kRegChannels> encode_box(const PolarGrid & grid, std::size_t i, std::size_t j, const Box3D & box)
{
  const PolarPoint c = cart_to_polar({box.cx, box.cy});
  return {(c.r - grid.row_center(i)) / grid.row_width(i),
          wrap_angle(c.a - grid.col_center(j)) / grid.col_width(),
          box.cz,
          std::log(box.w),
          std::log(box.l),
          std::log(box.h),
          std::sin(box.theta),
          std::cos(box.theta)};
}

namespace
{

constexpr double kMaxLogExtent = 8.0;

}  // namespace

Box3D decode_box(const PolarGrid & grid, std::size_t i, std::size_t j, const double * reg)
{
  const double r = grid.row_center(i) + reg[0] * grid.row_width(i);
  const double a = grid.col_center(j) + reg[1] * grid.col_width();
  const CartPoint p = polar_to_cart({r, a});
  // log-extents clamped so that untrained outputs still decode to finite boxes
  auto extent = [](double v) { return std::exp(std::clamp(v, -kMaxLogExtent, kMaxLogExtent)); };
  return {p.x, p.y, reg[2], extent(reg[3]), extent(reg[4]), extent(reg[5]), std::atan2(reg[6], reg[7])};
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold)
{
  std::stable_sort(dets.begin(), dets.end(), [](const Detection & a, const Detection & b) { return a.score > b.score; });
  std::vector<Detection> kept;
  std::vector<BoxBEV> kept_bev;
  for (const auto & d : dets) {
    const BoxBEV bev = d.box.bev();
    bool keep = true;
    for (std::size_t k = 0; k < kept.size() && keep; ++k) {
      keep = kept[k].cls != d.cls || rotated_iou_bev(kept_bev[k], bev) <= iou_threshold;
    }
    if (keep) {
      kept.push_back(d);
      kept_bev.push_back(bev);
    }
  }
  return kept;
}

std::vector<Detection> decode(
  const Tensor & heatmap, const Tensor & reg, const Tensor & iou, const PolarGrid & grid, const DecodeConfig & cfg)
{
  const std::size_t r = grid.rows(), a = grid.cols(), n_cls = heatmap.dim(2);
  if (heatmap.dim(0) != r || heatmap.dim(1) != a || reg.size() != r * a * kRegChannels || iou.size() != r * a) {
    throw std::invalid_argument("decode: head maps do not match the grid");
  }
  Tensor rect(heatmap.shape);
  for (std::size_t p = 0; p < r * a; ++p) {
    for (std::size_t c = 0; c < n_cls; ++c) {
      rect.data[p * n_cls + c] = rectify_scores(heatmap.data[p * n_cls + c], iou.data[p], cfg.alpha);
    }
  }
  std::vector<Detection> cands;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < a; ++j) {
      for (std::size_t c = 0; c < n_cls; ++c) {
        const double v = rect.data[(i * a + j) * n_cls + c];
        if (!(v > cfg.score_threshold)) {
          continue;
        }
        bool peak = true;
        for (int di = -1; di <= 1 && peak; ++di) {
          for (int dj = -1; dj <= 1 && peak; ++dj) {
            const auto ii = static_cast<std::ptrdiff_t>(i) + di;
            auto jj = static_cast<std::ptrdiff_t>(j) + dj;
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(r)) {
              continue;
            }
            if (grid.periodic()) {
              jj = (jj + static_cast<std::ptrdiff_t>(a)) % static_cast<std::ptrdiff_t>(a);
            } else if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(a)) {
              continue;
            }
            peak = rect.data[(static_cast<std::size_t>(ii) * a + static_cast<std::size_t>(jj)) * n_cls + c] <= v;
          }
        }
        if (!peak) {
          continue;
        }
        Detection d;
        d.box = decode_box(grid, i, j, &reg.data[(i * a + j) * kRegChannels]);
        d.score = v;
        d.cls = static_cast<int>(c);
        d.iou_pred = iou.data[i * a + j];
        cands.push_back(d);
      }
    }
  }
  std::vector<Detection> out = nms(std::move(cands), cfg.nms_iou);
  if (out.size() > cfg.max_dets) {
    out.resize(cfg.max_dets);
  }
  return out;
}

double gaussian_radius(double height, double width, double min_overlap)
{
  const double a1 = 1.0;
  const double b1 = height + width;
  const double c1 = width * height * (1.0 - min_overlap) / (1.0 + min_overlap);
  const double r1 = (b1 + std::sqrt(b1 * b1 - 4.0 * a1 * c1)) / 2.0;

  const double a2 = 4.0;
  const double b2 = 2.0 * (height + width);
  const double c2 = (1.0 - min_overlap) * width * height;
  const double r2 = (b2 + std::sqrt(b2 * b2 - 4.0 * a2 * c2)) / 2.0;

  const double a3 = 4.0 * min_overlap;
  const double b3 = -2.0 * min_overlap * (height + width);
  const double c3 = (min_overlap - 1.0) * width * height;
  const double r3 = (b3 + std::sqrt(b3 * b3 - 4.0 * a3 * c3)) / 2.0;
  return std::min({r1, r2, r3});
}

namespace
{

constexpr int kMinRadius = 2;

void draw_gaussian(Tensor & hm, const PolarGrid & grid, std::size_t ci, std::size_t cj, std::size_t cls, int radius)
{
  const std::size_t r = grid.rows(), a = grid.cols(), n_cls = hm.dim(2);
  const double sigma = (2.0 * radius + 1.0) / 6.0;
  for (int di = -radius; di <= radius; ++di) {
    const auto i = static_cast<std::ptrdiff_t>(ci) + di;
    if (i < 0 || i >= static_cast<std::ptrdiff_t>(r)) {
      continue;
    }
    for (int dj = -radius; dj <= radius; ++dj) {
      auto j = static_cast<std::ptrdiff_t>(cj) + dj;
      if (grid.periodic()) {
        j = ((j % static_cast<std::ptrdiff_t>(a)) + static_cast<std::ptrdiff_t>(a)) % static_cast<std::ptrdiff_t>(a);
      } else if (j < 0 || j >= static_cast<std::ptrdiff_t>(a)) {
        continue;
      }
      const double v = std::exp(-static_cast<double>(di * di + dj * dj) / (2.0 * sigma * sigma));
      double & cell = hm.data[(static_cast<std::size_t>(i) * a + static_cast<std::size_t>(j)) * n_cls + cls];
      cell = std::max(cell, v);
    }
  }
}

// Footprint extent in pixels along the radial and angular axes at the center pixel.
std::pair<double, double> footprint_pixels(const PolarGrid & grid, std::size_t i, const Box3D & box)
{
  const auto corners = box.bev().corners();
  const double a0 = cart_to_polar({box.cx, box.cy}).a;
  double rlo = 1e300, rhi = -1e300, alo = 1e300, ahi = -1e300;
  for (const auto & p : corners) {
    const PolarPoint q = cart_to_polar(p);
    rlo = std::min(rlo, q.r);
    rhi = std::max(rhi, q.r);
    const double da = wrap_angle(q.a - a0);
    alo = std::min(alo, da);
    ahi = std::max(ahi, da);
  }
  return {(rhi - rlo) / grid.row_width(i), (ahi - alo) / grid.col_width()};
}

}  // namespace

HeadTargets build_head_targets(const PolarGrid & grid, const std::vector<LabeledBox> & boxes, std::size_t n_cls)
{
  const std::size_t r = grid.rows(), a = grid.cols();
  HeadTargets t{Tensor({r, a, n_cls}), Tensor({r, a, kRegChannels}), Tensor({r, a, kRegChannels}), {}, {}};
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    const auto & lb = boxes[k];
    if (lb.cls < 0 || static_cast<std::size_t>(lb.cls) >= n_cls) {
      throw std::invalid_argument("build_head_targets: class id out of range");
    }
    const auto px = grid.locate({lb.box.cx, lb.box.cy});
    if (!px) {
      continue;
    }
    const auto [i, j] = *px;
    const auto [h_px, w_px] = footprint_pixels(grid, i, lb.box);
    const int radius = std::max(kMinRadius, static_cast<int>(gaussian_radius(h_px, w_px)));
    draw_gaussian(t.heatmap, grid, i, j, static_cast<std::size_t>(lb.cls), radius);
    const std::size_t p = i * a + j;
    if (std::find(t.centers.begin(), t.centers.end(), p) != t.centers.end()) {
      continue;
    }
    const auto enc = encode_box(grid, i, j, lb.box);
    std::copy(enc.begin(), enc.end(), t.reg.data.begin() + static_cast<std::ptrdiff_t>(p * kRegChannels));
    std::fill_n(t.reg_mask.data.begin() + static_cast<std::ptrdiff_t>(p * kRegChannels), kRegChannels, 1.0);
    t.centers.push_back(p);
    t.objects.push_back(k);
  }
  return t;
}

Tensor iou_targets(
  const Tensor & reg, const HeadTargets & targets, const std::vector<LabeledBox> & boxes, const PolarGrid & grid)
{
  Tensor out({grid.rows(), grid.cols(), 1});
  std::vector<BoxBEV> gt_bev;
  gt_bev.reserve(boxes.size());
  for (const auto & b : boxes) {
    gt_bev.push_back(b.box.bev());
  }
  for (const std::size_t p : targets.centers) {
    const BoxBEV pred = decode_box(grid, p / grid.cols(), p % grid.cols(), &reg.data[p * kRegChannels]).bev();
    double best = 0.0;
    for (const auto & gt : gt_bev) {
      best = std::max(best, rotated_iou_bev(pred, gt));
    }
    out.data[p] = best;
  }
  return out;
}

HeadLosses head_losses(
  ad::Graph & g, const HeadOutputs & out, const HeadTargets & targets, const std::vector<LabeledBox> & boxes,
  const PolarGrid & grid, const Tensor * fixed_iou)
{
  const double norm = 1.0 / std::max<double>(1.0, static_cast<double>(targets.centers.size()));
  const ad::Var cls = ad::gaussian_focal_loss(g, out.heatmap, targets.heatmap);
  const ad::Var reg = ad::scale(g, ad::smooth_l1(g, out.reg, targets.reg, targets.reg_mask), norm);
  Tensor target = fixed_iou ? *fixed_iou : iou_targets(g.value(out.reg), targets, boxes, grid);
  Tensor mask(target.shape);
  for (const std::size_t p : targets.centers) {
    mask.data[p] = 1.0;
  }
  const ad::Var iou = ad::scale(g, ad::smooth_l1(g, out.iou, std::move(target), std::move(mask)), norm);
  return {cls, reg, iou};
}

}  // namespace partner::head
