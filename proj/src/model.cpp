#include "partner/model.hpp"

#include <stdexcept>

namespace partner
{

std::vector<ParamDecl> declare_model(const ModelConfig & config)
{
  const std::size_t c = config.channels;
  std::vector<ParamDecl> decls;
  decls.push_back({"input.w", {kRawChannels, c}, kRawChannels, false});
  decls.push_back({"input.b", {c}, 1, true});
  if (config.use_grr) {
    grr::declare_params(decls, "grr", c, config.attn_dim, config.grr);
  }
  head::declare_neck(decls, "neck", c);
  if (config.use_ga) {
    ga::declare_params(decls, "ga", c, config.ga);
  }
  head::declare_head(decls, "head", c, config.n_cls);
  return decls;
}

ModelParams init_params(const ModelConfig & config, std::uint64_t seed)
{
  return init_params(declare_model(config), seed);
}

ModelOutputs model_forward(
  ad::Graph & g, ad::Var raw, const PolarGrid & grid, const ModelConfig & config, ParamBinder & bind)
{
  const Tensor & rv = g.value(raw);
  if (rv.rank() != 3 || rv.dim(0) != grid.rows() || rv.dim(1) != grid.cols() || rv.dim(2) != kRawChannels) {
    throw std::invalid_argument("model_forward: raw features must be (R, A, 10) on the grid");
  }
  const std::size_t r = grid.rows(), a = grid.cols(), c = config.channels;
  const bool circular = grid.periodic();
  ad::Var x = ad::relu(g, ad::linear(g, ad::reshape(g, raw, {r * a, kRawChannels}), bind("input.w"), bind("input.b")));
  x = ad::reshape(g, x, {r, a, c});
  if (config.use_grr) {
    x = grr::grr_forward(g, x, grid, config.grr, bind, "grr");
  }
  x = head::neck(g, x, bind, "neck", circular);
  ModelOutputs out;
  if (config.use_ga) {
    const ga::GaOutputs geo = ga::ga_forward(g, x, grid, config.ga, bind, "ga");
    x = geo.agg;
    out.geo = geo.pred;
  }
  out.head = head::head_forward(g, x, bind, "head", circular);
  return out;
}

SceneTargets build_targets(
  const PolarGrid & grid, const std::vector<head::LabeledBox> & boxes, std::size_t n_cls, std::uint64_t seed)
{
  std::vector<BoxBEV> bev;
  bev.reserve(boxes.size());
  for (const auto & b : boxes) {
    bev.push_back(b.box.bev());
  }
  return {head::build_head_targets(grid, boxes, n_cls), ga::center_offset_target(grid, bev, seed), std::nullopt};
}

LossTerms total_loss(
  ad::Graph & g, const ModelOutputs & out, const SceneTargets & targets,
  const std::vector<head::LabeledBox> & boxes, const PolarGrid & grid, const head::LossConfig & cfg)
{
  const head::HeadLosses hl = head::head_losses(g, out.head, targets.head, boxes, grid, targets.iou ? &*targets.iou : nullptr);
  LossTerms t{0, hl.cls, hl.reg, hl.iou, std::nullopt, std::nullopt};
  std::vector<std::pair<ad::Var, double>> terms{{hl.cls, 1.0}, {hl.reg, cfg.w_reg}, {hl.iou, cfg.w_iou}};
  if (out.geo) {
    const ga::AuxLosses aux = ga::auxiliary_losses(g, *out.geo, targets.geo);
    t.fg = aux.fg;
    t.dis = aux.dis;
    terms.emplace_back(aux.fg, cfg.w_fg);
    terms.emplace_back(aux.dis, cfg.w_dis);
  }
  t.total = ad::weighted_sum(g, terms);
  return t;
}

std::vector<head::Detection> detect(
  const FeatureMap & raw, const PolarGrid & grid, const ModelConfig & config, const ModelParams & params,
  const head::DecodeConfig & decode_cfg)
{
  ad::Graph g;
  ParamBinder bind(g, params, false);
  const ModelOutputs out = model_forward(g, g.constant(raw), grid, config, bind);
  return head::decode(g.value(out.head.heatmap), g.value(out.head.reg), g.value(out.head.iou), grid, decode_cfg);
}

}  // namespace partner
