#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "partner/geometry.hpp"
#include "partner/graph.hpp"
#include "partner/params.hpp"
#include "partner/voxelize.hpp"

// Minimal neck plus a center-based detection head with an IoU branch.
namespace partner::head
{

/// 3D box: center, width (across heading), length (along heading), height, yaw.
struct Box3D
{
  double cx{0.0};
  double cy{0.0};
  double cz{0.0};
  double w{1.0};
  double l{1.0};
  double h{1.0};
  double theta{0.0};

  BoxBEV bev() const { return make_box_bev(cx, cy, l, w, theta); }
};

/// Throws std::invalid_argument unless w, l, h > 0.
Box3D make_box3d(double cx, double cy, double cz, double w, double l, double h, double theta);

struct LabeledBox
{
  Box3D box;
  int cls{0};
};

struct Detection
{
  Box3D box;
  double score{0.0};
  int cls{0};
  double iou_pred{1.0};
};

inline constexpr std::size_t kRegChannels = 8;

void declare_neck(std::vector<ParamDecl> & out, const std::string & prefix, std::size_t channels);
void declare_head(std::vector<ParamDecl> & out, const std::string & prefix, std::size_t channels, std::size_t n_cls);

/// relu(conv3x3) -> relu(conv3x3, stride 2) -> nearest upsample, concat, 1x1 fusion. (R, A, C).
ad::Var neck(ad::Graph & g, ad::Var f, ParamBinder & bind, const std::string & prefix, bool circular);

struct HeadOutputs
{
  ad::Var heatmap;  // (R, A, n_cls), sigmoid
  ad::Var reg;      // (R, A, 8): dr, da (pixel units), z, log w, log l, log h, sin, cos
  ad::Var iou;      // (R, A, 1), sigmoid
};

HeadOutputs head_forward(ad::Graph & g, ad::Var f, ParamBinder & bind, const std::string & prefix, bool circular);

/// score * iou^alpha, with iou clamped to [0, 1].
double rectify_scores(double score, double iou_pred, double alpha);

/// Regression target of a box relative to pixel (i, j).
std::array<double, kRegChannels> encode_box(const PolarGrid & grid, std::size_t i, std::size_t j, const Box3D & box);
Box3D decode_box(const PolarGrid & grid, std::size_t i, std::size_t j, const double * reg);

struct DecodeConfig
{
  double score_threshold{0.1};
  std::size_t max_dets{100};
  double nms_iou{0.2};
  double alpha{1.0};
};

/// Greedy per-class rotated BEV NMS. Input order breaks score ties; a detection is dropped
/// when its IoU with a kept detection of the same class exceeds `iou_threshold`.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

/// Peaks (3x3 local maxima) of the rectified heatmaps above the threshold, decoded, NMS'd and
/// truncated to max_dets by descending score. Tensors are the head output values.
std::vector<Detection> decode(
  const Tensor & heatmap, const Tensor & reg, const Tensor & iou, const PolarGrid & grid, const DecodeConfig & cfg);

/// Gaussian radius for a (height, width) footprint in pixels so that a box shifted by the
/// radius keeps IoU >= min_overlap with the original.
double gaussian_radius(double height, double width, double min_overlap = 0.1);

struct HeadTargets
{
  Tensor heatmap;                     // (R, A, n_cls) Gaussian splats, 1 at object centers
  Tensor reg;                         // (R, A, 8)
  Tensor reg_mask;                    // (R, A, 8), 1 at assigned center pixels
  std::vector<std::size_t> centers;   // pixel index i * A + j per assigned object
  std::vector<std::size_t> objects;   // index into the box list per assigned object
};

/// Objects whose center is outside the grid are skipped; a center pixel shared by several
/// objects is assigned to the first.
HeadTargets build_head_targets(const PolarGrid & grid, const std::vector<LabeledBox> & boxes, std::size_t n_cls);

struct LossConfig
{
  double w_reg{2.0};
  double w_fg{1.0};
  double w_dis{0.75};
  double w_iou{2.0};

  static LossConfig waymo() { return {2.0, 1.0, 0.75, 2.0}; }
  static LossConfig once() { return {0.75, 1.0, 0.75, 2.0}; }
};

struct HeadLosses
{
  ad::Var cls;
  ad::Var reg;
  ad::Var iou;
};

/// (R, A, 1) IoU of the box decoded at each assigned center pixel with its best-matching ground
/// truth; zero elsewhere.
Tensor iou_targets(
  const Tensor & reg, const HeadTargets & targets, const std::vector<LabeledBox> & boxes, const PolarGrid & grid);

/// Gaussian focal loss on the heatmap, smooth-L1 on regression at center pixels and on the IoU
/// branch at center pixels. The IoU target is treated as a constant; it is computed from the
/// current regression output unless `fixed_iou` is given. Regression and IoU terms are divided
/// by max(1, #assigned objects).
HeadLosses head_losses(
  ad::Graph & g, const HeadOutputs & out, const HeadTargets & targets, const std::vector<LabeledBox> & boxes,
  const PolarGrid & grid, const Tensor * fixed_iou = nullptr);

}  // namespace partner::head
