#include "partner/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

namespace partner
{

namespace
{

using nlohmann::json;

void check_keys(const json & j, const std::string & where, const std::set<std::string> & allowed)
{
  if (!j.is_object()) {
    throw std::invalid_argument(where + ": expected an object");
  }
  for (const auto & [key, v] : j.items()) {
    (void)v;
    if (!allowed.count(key)) {
      throw std::invalid_argument(where + ": unknown key '" + key + "'");
    }
  }
}

template <class T>
void read(const json & j, const char * key, T & out, const std::string & where)
{
  if (!j.contains(key)) {
    return;
  }
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception & e) {
    throw std::invalid_argument(where + "." + key + ": " + e.what());
  }
}

const char * kind_name(RangeDiscretization k)
{
  switch (k) {
    case RangeDiscretization::UD:
      return "UD";
    case RangeDiscretization::SID:
      return "SID";
    case RangeDiscretization::LID:
      return "LID";
  }
  return "UD";
}

RangeDiscretization kind_from(const std::string & s)
{
  if (s == "UD") {
    return RangeDiscretization::UD;
  }
  if (s == "SID") {
    return RangeDiscretization::SID;
  }
  if (s == "LID") {
    return RangeDiscretization::LID;
  }
  throw std::invalid_argument("grid.range.kind: expected UD, SID or LID, got '" + s + "'");
}

json loss_to_json(const head::LossConfig & c)
{
  return {{"w_reg", c.w_reg}, {"w_fg", c.w_fg}, {"w_dis", c.w_dis}, {"w_iou", c.w_iou}};
}

head::LossConfig loss_from_json(const json & j, head::LossConfig c)
{
  if (j.is_string()) {
    const std::string preset = j.get<std::string>();
    if (preset == "waymo") {
      return head::LossConfig::waymo();
    }
    if (preset == "once") {
      return head::LossConfig::once();
    }
    throw std::invalid_argument("loss: unknown preset '" + preset + "'");
  }
  check_keys(j, "loss", {"w_reg", "w_fg", "w_dis", "w_iou"});
  read(j, "w_reg", c.w_reg, "loss");
  read(j, "w_fg", c.w_fg, "loss");
  read(j, "w_dis", c.w_dis, "loss");
  read(j, "w_iou", c.w_iou, "loss");
  return c;
}

json latency_to_json(const streaming::LatencyModel & m)
{
  return {
    {"rotation_period", m.rotation_period},
    {"per_column_cost", m.per_column_cost},
    {"overhead_per_sector", m.overhead_per_sector}};
}

json decode_to_json(const head::DecodeConfig & d)
{
  return {{"score_threshold", d.score_threshold}, {"max_dets", d.max_dets}, {"nms_iou", d.nms_iou}, {"alpha", d.alpha}};
}

}  // namespace

GridSpec toy_grid_spec()
{
  GridSpec s;
  s.range = {RangeDiscretization::UD, 1.0, 52.2, 128};
  s.n_azimuth = 256;
  s.z_min = -2.0;
  s.z_max = 4.0;
  s.downsample = 2;
  return s;
}

ModelConfig toy_model_config()
{
  ModelConfig m;
  m.channels = 32;
  m.attn_dim = 32;
  m.n_cls = 3;
  m.grr.n_heads = 4;
  return m;
}

void TrainConfig::validate() const
{
  if (!(learning_rate >= 0.0) || steps == 0 || batch_size == 0) {
    throw std::invalid_argument("train: learning rate must be >= 0, steps and batch size positive");
  }
  if (!(clip_norm > 0.0)) {
    throw std::invalid_argument("train: clip_norm must be positive");
  }
  grid.validate();
  const PolarGrid g(grid);
  if (model.use_grr) {
    model.grr.validate(g.rows(), g.cols(), true);
  }
  if (model.use_ga) {
    model.ga.validate(g.rows(), g.cols(), true);
  }
  if (model.channels == 0 || model.attn_dim == 0 || model.n_cls == 0) {
    throw std::invalid_argument("model: channels, attn_dim and n_cls must be positive");
  }
}

json grid_to_json(const GridSpec & s)
{
  return {
    {"range", {{"kind", kind_name(s.range.kind)}, {"r_min", s.range.r_min}, {"r_max", s.range.r_max}, {"n_bins", s.range.n_bins}}},
    {"n_azimuth", s.n_azimuth},
    {"z_min", s.z_min},
    {"z_max", s.z_max},
    {"downsample", s.downsample}};
}

GridSpec grid_from_json(const json & j, GridSpec s)
{
  check_keys(j, "grid", {"range", "n_azimuth", "z_min", "z_max", "downsample"});
  if (j.contains("range")) {
    const json & r = j.at("range");
    check_keys(r, "grid.range", {"kind", "r_min", "r_max", "n_bins"});
    std::string kind = kind_name(s.range.kind);
    read(r, "kind", kind, "grid.range");
    s.range.kind = kind_from(kind);
    read(r, "r_min", s.range.r_min, "grid.range");
    read(r, "r_max", s.range.r_max, "grid.range");
    read(r, "n_bins", s.range.n_bins, "grid.range");
  }
  read(j, "n_azimuth", s.n_azimuth, "grid");
  read(j, "z_min", s.z_min, "grid");
  read(j, "z_max", s.z_max, "grid");
  read(j, "downsample", s.downsample, "grid");
  s.validate();
  return s;
}

json model_to_json(const ModelConfig & m)
{
  return {
    {"channels", m.channels},
    {"attn_dim", m.attn_dim},
    {"n_cls", m.n_cls},
    {"use_grr", m.use_grr},
    {"use_ga", m.use_ga},
    {"grr",
     {{"S", m.grr.S},
      {"N", m.grr.N},
      {"window", m.grr.window},
      {"shift", m.grr.shift},
      {"n_stacks", m.grr.n_stacks},
      {"n_heads", m.grr.n_heads}}},
    {"ga",
     {{"window", m.ga.window},
      {"shift", m.ga.shift},
      {"n_stacks", m.ga.n_stacks},
      {"n_heads", m.ga.n_heads},
      {"mlp_hidden", m.ga.mlp_hidden}}}};
}

ModelConfig model_from_json(const json & j, ModelConfig m)
{
  check_keys(j, "model", {"channels", "attn_dim", "n_cls", "use_grr", "use_ga", "grr", "ga"});
  read(j, "channels", m.channels, "model");
  read(j, "attn_dim", m.attn_dim, "model");
  read(j, "n_cls", m.n_cls, "model");
  read(j, "use_grr", m.use_grr, "model");
  read(j, "use_ga", m.use_ga, "model");
  if (j.contains("grr")) {
    const json & g = j.at("grr");
    check_keys(g, "model.grr", {"S", "N", "window", "shift", "n_stacks", "n_heads"});
    read(g, "S", m.grr.S, "model.grr");
    read(g, "N", m.grr.N, "model.grr");
    read(g, "window", m.grr.window, "model.grr");
    read(g, "shift", m.grr.shift, "model.grr");
    read(g, "n_stacks", m.grr.n_stacks, "model.grr");
    read(g, "n_heads", m.grr.n_heads, "model.grr");
  }
  if (j.contains("ga")) {
    const json & g = j.at("ga");
    check_keys(g, "model.ga", {"window", "shift", "n_stacks", "n_heads", "mlp_hidden"});
    read(g, "window", m.ga.window, "model.ga");
    read(g, "shift", m.ga.shift, "model.ga");
    read(g, "n_stacks", m.ga.n_stacks, "model.ga");
    read(g, "n_heads", m.ga.n_heads, "model.ga");
    read(g, "mlp_hidden", m.ga.mlp_hidden, "model.ga");
  }
  return m;
}

json train_to_json(const TrainConfig & c)
{
  return {
    {"grid", grid_to_json(c.grid)},
    {"model", model_to_json(c.model)},
    {"loss", loss_to_json(c.loss)},
    {"train",
     {{"learning_rate", c.learning_rate},
      {"steps", c.steps},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"clip_norm", c.clip_norm}}}};
}

TrainConfig train_from_json(const json & j)
{
  if (!j.is_object()) {
    throw std::invalid_argument("config: expected an object");
  }
  TrainConfig t;
  if (j.contains("grid")) {
    t.grid = grid_from_json(j.at("grid"), t.grid);
  }
  if (j.contains("model")) {
    t.model = model_from_json(j.at("model"), t.model);
  }
  if (j.contains("loss")) {
    t.loss = loss_from_json(j.at("loss"), t.loss);
  }
  if (j.contains("train")) {
    const json & tr = j.at("train");
    check_keys(tr, "train", {"learning_rate", "steps", "batch_size", "seed", "clip_norm"});
    read(tr, "learning_rate", t.learning_rate, "train");
    read(tr, "steps", t.steps, "train");
    read(tr, "batch_size", t.batch_size, "train");
    read(tr, "seed", t.seed, "train");
    read(tr, "clip_norm", t.clip_norm, "train");
  }
  t.validate();
  return t;
}

json run_config_to_json(const RunConfig & c)
{
  json j = train_to_json(c.train);
  j["version"] = kConfigVersion;
  j["synth"] = synth::config_to_json(c.synth);
  j["stream"] = {{"sectors", c.stream.sectors}, {"latency", latency_to_json(c.stream.latency)}};
  j["eval"] = {
    {"iou_threshold", c.eval.iou_threshold}, {"level", c.eval.level}, {"decode", decode_to_json(c.decode)}};
  j["resolution"] = {{"scales", c.resolution.scales}, {"capacity", c.resolution.capacity}};
  j["paths"] = {{"scenes", c.paths.scenes}, {"checkpoint", c.paths.checkpoint}};
  return j;
}

RunConfig run_config_from_json(const json & j)
{
  check_keys(j, "config", {"version", "grid", "model", "loss", "train", "synth", "stream", "eval", "resolution", "paths"});
  if (j.contains("version") && j.at("version") != kConfigVersion) {
    throw std::invalid_argument("config: unsupported version " + j.at("version").dump());
  }
  RunConfig c;
  c.train = train_from_json(j);
  if (j.contains("synth")) {
    c.synth = synth::config_from_json(j.at("synth"));
  }
  if (j.contains("stream")) {
    const json & s = j.at("stream");
    check_keys(s, "stream", {"sectors", "latency"});
    read(s, "sectors", c.stream.sectors, "stream");
    if (s.contains("latency")) {
      c.stream.latency = streaming::latency_model_from_json(s.at("latency"));
    }
  }
  if (j.contains("eval")) {
    const json & e = j.at("eval");
    check_keys(e, "eval", {"iou_threshold", "level", "decode"});
    read(e, "iou_threshold", c.eval.iou_threshold, "eval");
    read(e, "level", c.eval.level, "eval");
    if (c.eval.level != 1 && c.eval.level != 2) {
      throw std::invalid_argument("eval.level: must be 1 or 2");
    }
    if (e.contains("decode")) {
      const json & d = e.at("decode");
      check_keys(d, "eval.decode", {"score_threshold", "max_dets", "nms_iou", "alpha"});
      read(d, "score_threshold", c.decode.score_threshold, "eval.decode");
      read(d, "max_dets", c.decode.max_dets, "eval.decode");
      read(d, "nms_iou", c.decode.nms_iou, "eval.decode");
      read(d, "alpha", c.decode.alpha, "eval.decode");
    }
  }
  if (j.contains("resolution")) {
    const json & r = j.at("resolution");
    check_keys(r, "resolution", {"scales", "capacity"});
    read(r, "scales", c.resolution.scales, "resolution");
    read(r, "capacity", c.resolution.capacity, "resolution");
  }
  if (j.contains("paths")) {
    const json & p = j.at("paths");
    check_keys(p, "paths", {"scenes", "checkpoint"});
    read(p, "scenes", c.paths.scenes, "paths");
    read(p, "checkpoint", c.paths.checkpoint, "paths");
  }
  for (double s : c.resolution.scales) {
    if (!(s > 0.0)) {
      throw std::invalid_argument("resolution.scales: must be positive");
    }
  }
  for (std::size_t n : c.stream.sectors) {
    streaming::check_sector_count(c.train.grid, c.train.model, n);
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error & e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

std::string json_hash(const json & j)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const TrainConfig & config) { return json_hash(train_to_json(config)); }

}  // namespace partner
