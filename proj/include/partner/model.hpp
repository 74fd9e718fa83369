#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "partner/ga.hpp"
#include "partner/graph.hpp"
#include "partner/grr.hpp"
#include "partner/head.hpp"
#include "partner/params.hpp"
#include "partner/voxelize.hpp"

// Full detector: raw polar features -> input projection -> GRR -> neck -> GA -> head.
namespace partner
{

struct ModelConfig
{
  std::size_t channels{32};
  std::size_t attn_dim{32};
  std::size_t n_cls{3};
  grr::GrrConfig grr{};
  ga::GaConfig ga{};
  bool use_grr{true};
  bool use_ga{true};
};

std::vector<ParamDecl> declare_model(const ModelConfig & config);
ModelParams init_params(const ModelConfig & config, std::uint64_t seed);

struct ModelOutputs
{
  head::HeadOutputs head;
  std::optional<ga::Prediction> geo;  // present when GA is enabled
};

ModelOutputs model_forward(
  ad::Graph & g, ad::Var raw, const PolarGrid & grid, const ModelConfig & config, ParamBinder & bind);

/// Per-scene supervision for the full model.
struct SceneTargets
{
  head::HeadTargets head;
  ga::TargetMaps geo;
  /// When set, replaces the IoU-branch target computed from the current regression output.
  std::optional<Tensor> iou;
};

SceneTargets build_targets(
  const PolarGrid & grid, const std::vector<head::LabeledBox> & boxes, std::size_t n_cls, std::uint64_t seed);

struct LossTerms
{
  ad::Var total;
  ad::Var cls;
  ad::Var reg;
  ad::Var iou;
  std::optional<ad::Var> fg;
  std::optional<ad::Var> dis;
};

/// L_cls + w_reg L_reg + w_fg L_fg + w_dis L_dis + w_iou L_iou (GA terms only when enabled).
LossTerms total_loss(
  ad::Graph & g, const ModelOutputs & out, const SceneTargets & targets,
  const std::vector<head::LabeledBox> & boxes, const PolarGrid & grid, const head::LossConfig & cfg);

/// Forward pass without a tape, then decoding.
std::vector<head::Detection> detect(
  const FeatureMap & raw, const PolarGrid & grid, const ModelConfig & config, const ModelParams & params,
  const head::DecodeConfig & decode_cfg = {});

}  // namespace partner
