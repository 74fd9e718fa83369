#pragma once

// Finite-difference probes of the total loss through the whole detector on a 16 x 16 x 8 toy
// configuration. Shared by the unit tests and the acceptance binary.

#include <map>
#include <random>
#include <string>
#include <vector>

#include "kernel_gradcheck.hpp"
#include "oracles.hpp"
#include "partner/model.hpp"

namespace gradcheck
{

inline constexpr double kPipelineRtol = 1e-3;

struct ModuleResult
{
  std::size_t checked{0};
  std::size_t failed{0};
  double worst_rel{0.0};
};

struct ToyPipeline
{
  partner::GridSpec spec;
  partner::ModelConfig config;
  partner::ModelParams params;
  partner::Tensor raw;
  std::vector<partner::head::LabeledBox> boxes;
};

inline ToyPipeline make_toy_pipeline(std::uint64_t seed)
{
  using namespace partner;
  ToyPipeline t;
  t.spec.range = {RangeDiscretization::UD, 1.0, 33.0, 16};
  t.spec.n_azimuth = 16;
  t.spec.downsample = 1;
  t.config.channels = 8;
  t.config.attn_dim = 8;
  t.config.n_cls = 2;
  t.config.grr.n_heads = 2;
  t.config.ga.mlp_hidden = {8};
  std::mt19937_64 rng(seed);
  t.params = init_params(t.config, seed);
  // nonzero biases keep relu pre-activations off their kinks
  for (const auto & d : declare_model(t.config)) {
    if (d.bias) {
      t.params.at(d.name) = random_tensor(rng, d.shape, -0.1, 0.1);
    }
  }
  t.raw = random_tensor(rng, {16, 16, kRawChannels}, 0.0, 1.0);
  std::uniform_real_distribution<double> ur(6.0, 26.0), ua(-kPi, kPi), uh(-kPi, kPi);
  for (int k = 0; k < 3; ++k) {
    const PolarPoint c{ur(rng), ua(rng)};
    const CartPoint p = polar_to_cart(c);
    t.boxes.push_back({head::make_box3d(p.x, p.y, 0.8, 1.8 + 0.2 * k, 4.0, 1.6, uh(rng)), k % 2});
  }
  return t;
}

/// `probes` random parameter entries per module (input, grr, neck, ga, head).
inline std::map<std::string, ModuleResult> run_pipeline_check(std::size_t probes, std::uint64_t seed)
{
  using namespace partner;
  const ToyPipeline t = make_toy_pipeline(seed);
  const PolarGrid grid(t.spec);
  SceneTargets targets = build_targets(grid, t.boxes, t.config.n_cls, seed);
  const head::LossConfig lc = head::LossConfig::waymo();

  ad::Graph g;
  ParamBinder bind(g, t.params);
  const ModelOutputs out = model_forward(g, g.constant(t.raw), grid, t.config, bind);
  // freeze the detached IoU target at the base point so both sides see the same function
  targets.iou = head::iou_targets(g.value(out.head.reg), targets.head, t.boxes, grid);
  const LossTerms loss = total_loss(g, out, targets, t.boxes, grid, lc);
  g.backward(loss.total);

  auto eval = [&](const ModelParams & p) {
    ad::Graph h;
    ParamBinder b(h, p, false);
    const ModelOutputs o = model_forward(h, h.constant(t.raw), grid, t.config, b);
    return h.value(total_loss(h, o, targets, t.boxes, grid, lc).total).data[0];
  };

  std::map<std::string, std::vector<std::pair<std::string, std::size_t>>> entries;
  for (const auto & [name, tensor] : t.params.tensors) {
    const std::string module = name.substr(0, name.find('.'));
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      entries[module].emplace_back(name, i);
    }
  }
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::map<std::string, ModuleResult> results;
  constexpr double h = 1e-5;
  for (const auto & [module, list] : entries) {
    ModuleResult & r = results[module];
    std::uniform_int_distribution<std::size_t> pick(0, list.size() - 1);
    for (std::size_t k = 0; k < probes; ++k) {
      const auto & [name, idx] = list[pick(rng)];
      ModelParams p = t.params;
      const double x0 = p.at(name).data[idx];
      p.at(name).data[idx] = x0 + h;
      const double fp = eval(p);
      p.at(name).data[idx] = x0 - h;
      const double fm = eval(p);
      const double numeric = (fp - fm) / (2 * h);
      const double analytic = g.grad(bind.bound().at(name)).data[idx];
      ++r.checked;
      if (!oracle::grad_close(analytic, numeric, kPipelineRtol, kAtol)) {
        ++r.failed;
      }
      if (std::abs(analytic - numeric) > kAtol) {
        r.worst_rel = std::max(r.worst_rel, std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric)));
      }
    }
  }
  return results;
}

}  // namespace gradcheck
