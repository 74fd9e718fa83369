#include "partner/train.hpp"

#include <cmath>
#include <fstream>

namespace partner::train
{

namespace
{

bool finite(const Tensor & t)
{
  for (double v : t.data) {
    if (!std::isfinite(v)) {
      return false;
    }
  }
  return true;
}

[[noreturn]] void abort_on(const std::string & tensor, const std::string & stage)
{
  throw NumericalError(tensor, "non-finite values in " + tensor + " (" + stage + ")");
}

LossValues read_losses(const ad::Graph & g, const LossTerms & t)
{
  LossValues v;
  v.total = g.value(t.total).data[0];
  v.cls = g.value(t.cls).data[0];
  v.reg = g.value(t.reg).data[0];
  v.iou = g.value(t.iou).data[0];
  v.fg = t.fg ? g.value(*t.fg).data[0] : 0.0;
  v.dis = t.dis ? g.value(*t.dis).data[0] : 0.0;
  return v;
}

// Parameters and input first, then network outputs, then loss terms: the earliest broken stage is named.
void check_forward(
  const ModelParams & params, const Tensor & raw, const ad::Graph & g, const ModelOutputs & out, const LossTerms & t)
{
  for (const auto & [name, tensor] : params.tensors) {
    if (!finite(tensor)) {
      abort_on(name, "parameter");
    }
  }
  if (!finite(raw)) {
    abort_on("input.features", "voxelized input");
  }
  std::vector<std::pair<std::string, ad::Var>> stages{
    {"head.heatmap", out.head.heatmap}, {"head.reg", out.head.reg}, {"head.iou", out.head.iou}};
  if (out.geo) {
    stages.emplace_back("ga.foreground", out.geo->h);
    stages.emplace_back("ga.offsets", out.geo->d);
  }
  stages.emplace_back("loss.cls", t.cls);
  stages.emplace_back("loss.reg", t.reg);
  stages.emplace_back("loss.iou", t.iou);
  if (t.fg) {
    stages.emplace_back("loss.fg", *t.fg);
    stages.emplace_back("loss.dis", *t.dis);
  }
  stages.emplace_back("loss.total", t.total);
  for (const auto & [name, v] : stages) {
    if (!finite(g.value(v))) {
      abort_on(name, "forward");
    }
  }
}

LossValues scaled_add(LossValues a, const LossValues & b, double s)
{
  a.total += s * b.total;
  a.cls += s * b.cls;
  a.reg += s * b.reg;
  a.iou += s * b.iou;
  a.fg += s * b.fg;
  a.dis += s * b.dis;
  return a;
}

}  // namespace

Sample make_sample(const synth::Scene & scene, const TrainConfig & config)
{
  const PolarGrid grid(config.grid);
  return {voxelize(scene.cloud, grid), scene.boxes, build_targets(grid, scene.boxes, config.model.n_cls, config.seed)};
}

double clip_gradients(std::map<std::string, Tensor> & grads, double max_norm)
{
  double sq = 0.0;
  for (const auto & [name, g] : grads) {
    for (double v : g.data) {
      sq += v * v;
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto & [name, g] : grads) {
      for (double & v : g.data) {
        v *= s;
      }
    }
  }
  return norm;
}

StepResult loss_and_gradients(
  const ModelParams & params, const std::vector<Sample> & batch, const TrainConfig & config,
  std::map<std::string, Tensor> & grads)
{
  if (batch.empty()) {
    throw std::invalid_argument("train: empty batch");
  }
  const PolarGrid grid(config.grid);
  const double inv = 1.0 / static_cast<double>(batch.size());
  grads.clear();
  for (const auto & [name, t] : params.tensors) {
    grads.emplace(name, Tensor(t.shape));
  }
  StepResult r;
  for (const Sample & s : batch) {
    ad::Graph g;
    ParamBinder bind(g, params);
    const ModelOutputs out = model_forward(g, g.constant(s.raw), grid, config.model, bind);
    const LossTerms terms = total_loss(g, out, s.targets, s.boxes, grid, config.loss);
    check_forward(params, s.raw, g, out, terms);
    r.loss = scaled_add(r.loss, read_losses(g, terms), inv);
    g.backward(terms.total);
    for (const auto & [name, var] : bind.bound()) {
      const Tensor & gv = g.grad(var);
      Tensor & acc = grads.at(name);
      for (std::size_t i = 0; i < acc.size(); ++i) {
        acc.data[i] += inv * gv.data[i];
      }
    }
  }
  for (const auto & [name, gt] : grads) {
    if (!finite(gt)) {
      abort_on("grad:" + name, "backward");
    }
  }
  return r;
}

StepResult train_step(ModelParams & params, const std::vector<Sample> & batch, const TrainConfig & config)
{
  std::map<std::string, Tensor> grads;
  StepResult r = loss_and_gradients(params, batch, config, grads);
  r.grad_norm = clip_gradients(grads, config.clip_norm);
  r.clipped = r.grad_norm > config.clip_norm;
  for (auto & [name, p] : params.tensors) {
    const Tensor & gr = grads.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p.data[i] -= config.learning_rate * gr.data[i];
    }
    if (!finite(p)) {
      abort_on(name, "update");
    }
  }
  return r;
}

LossValues evaluate_loss(const ModelParams & params, const Sample & sample, const TrainConfig & config)
{
  const PolarGrid grid(config.grid);
  ad::Graph g;
  ParamBinder bind(g, params, false);
  const ModelOutputs out = model_forward(g, g.constant(sample.raw), grid, config.model, bind);
  const LossTerms terms = total_loss(g, out, sample.targets, sample.boxes, grid, config.loss);
  check_forward(params, sample.raw, g, out, terms);
  return read_losses(g, terms);
}

std::filesystem::path checkpoint_config_path(const std::filesystem::path & path)
{
  return std::filesystem::path(path.string() + ".config.json");
}

void save_checkpoint(const Checkpoint & ckpt, const std::filesystem::path & path)
{
  save_weights(ckpt.params, path);
  std::ofstream out(checkpoint_config_path(path), std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + checkpoint_config_path(path).string());
  }
  const nlohmann::json j = {
    {"config", train_to_json(ckpt.config)}, {"config_hash", config_hash(ckpt.config)}, {"step", ckpt.step}};
  out << j.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path & path)
{
  std::ifstream in(checkpoint_config_path(path));
  if (!in) {
    throw std::runtime_error("cannot open " + checkpoint_config_path(path).string());
  }
  const nlohmann::json j = nlohmann::json::parse(in);
  Checkpoint c;
  c.config = train_from_json(j.at("config"));
  c.config_hash = j.at("config_hash").get<std::string>();
  c.step = j.at("step").get<std::size_t>();
  if (c.config_hash != config_hash(c.config)) {
    throw std::runtime_error("checkpoint config hash mismatch in " + checkpoint_config_path(path).string());
  }
  c.params = load_weights(path);
  const auto decls = declare_model(c.config.model);
  if (decls.size() != c.params.tensors.size()) {
    throw std::runtime_error("checkpoint tensors do not match the model config: " + path.string());
  }
  for (const auto & d : decls) {
    if (!c.params.contains(d.name) || c.params.at(d.name).shape != d.shape) {
      throw std::runtime_error("checkpoint tensor " + d.name + " does not match the model config");
    }
  }
  return c;
}

OverfitResult train_scenes(const std::vector<synth::Scene> & scenes, const TrainConfig & config)
{
  config.validate();
  if (scenes.empty()) {
    throw std::invalid_argument("train: no scenes");
  }
  std::vector<Sample> samples;
  for (const auto & s : scenes) {
    samples.push_back(make_sample(s, config));
  }
  OverfitResult r;
  r.checkpoint.config = config;
  r.checkpoint.config_hash = config_hash(config);
  r.checkpoint.params = init_params(config.model, config.seed);
  std::size_t cursor = 0;
  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<Sample> batch;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      batch.push_back(samples[cursor]);
      cursor = (cursor + 1) % samples.size();
    }
    r.trace.push_back(train_step(r.checkpoint.params, batch, config).loss);
  }
  r.checkpoint.step = config.steps;
  for (const Sample & s : samples) {
    r.final_loss = scaled_add(r.final_loss, evaluate_loss(r.checkpoint.params, s, config), 1.0 / samples.size());
  }
  return r;
}

OverfitResult overfit(const synth::Scene & scene, const TrainConfig & config)
{
  return train_scenes({scene}, config);
}

std::optional<double> foreground_iou(const ModelParams & params, const Sample & sample, const TrainConfig & config)
{
  if (!config.model.use_ga) {
    return std::nullopt;
  }
  const PolarGrid grid(config.grid);
  ad::Graph g;
  ParamBinder bind(g, params, false);
  const ModelOutputs out = model_forward(g, g.constant(sample.raw), grid, config.model, bind);
  const Tensor & h = g.value(out.geo->h);
  const Tensor & target = sample.targets.geo.h_hat;
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const bool p = h.data[i] > 0.5, t = target.data[i] > 0.5;
    inter += p && t;
    uni += p || t;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace partner::train
