#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "partner/config.hpp"
#include "partner/eval.hpp"
#include "partner/resolution.hpp"
#include "partner/streaming.hpp"
#include "partner/synth.hpp"
#include "partner/train.hpp"

using namespace partner;
namespace fs = std::filesystem;

namespace
{

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr std::uint64_t kReferenceSeed = 1000;
constexpr std::size_t kReferenceScenes = 20;

struct MissingFile : std::runtime_error
{
  explicit MissingFile(const fs::path & p) : std::runtime_error(p.string()) {}
};

struct Options
{
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string ckpt;
  std::string scene;
  std::vector<std::string> scenes;
  std::vector<std::string> dets;
  std::vector<std::size_t> sectors;
  std::vector<double> scales;
  std::string latency_model;
  std::size_t count{1};
  bool no_grr{false};
  bool no_ga{false};
};

void require(const fs::path & p)
{
  if (!fs::exists(p)) {
    throw MissingFile(p);
  }
}

RunConfig load_config(const Options & o)
{
  if (o.config.empty()) {
    return {};
  }
  require(o.config);
  return load_run_config(o.config);
}

train::Checkpoint load_ckpt(const std::string & path)
{
  if (path.empty()) {
    throw std::invalid_argument("--ckpt is required");
  }
  require(path);
  require(train::checkpoint_config_path(path));
  require(weights_sidecar(path));
  return train::load_checkpoint(path);
}

synth::Scene load_scene_file(const std::string & path)
{
  require(path);
  return synth::load_scene(path);
}

void prepare_out(const std::string & out)
{
  if (out.empty()) {
    throw std::invalid_argument("--out is required");
  }
  const fs::path parent = fs::path(out).parent_path();
  if (!parent.empty()) {
    fs::create_directories(parent);
  }
}

// Shortest round-trip form; empty for a missing value.
std::string num(std::optional<double> v)
{
  if (!v) {
    return "";
  }
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), *v);
  return std::string(buf, r.ptr);
}

class Csv
{
public:
  Csv(const std::string & path, const std::string & hash, std::uint64_t seed, const std::vector<std::string> & header)
  {
    prepare_out(path);
    out_.open(path, std::ios::trunc);
    if (!out_) {
      throw std::runtime_error("cannot write " + path);
    }
    out_ << "# config_hash=" << hash << " seed=" << seed << '\n';
    row(header);
  }
  void row(const std::vector<std::string> & cells)
  {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      out_ << (i ? "," : "") << cells[i];
    }
    out_ << '\n';
  }

private:
  std::ofstream out_;
};

std::string run_hash(const RunConfig & rc)
{
  return json_hash(run_config_to_json(rc));
}

std::vector<synth::Scene> load_scenes(const std::vector<std::string> & paths)
{
  if (paths.empty()) {
    throw std::invalid_argument("no scenes given");
  }
  std::vector<synth::Scene> scenes;
  for (const auto & p : paths) {
    scenes.push_back(load_scene_file(p));
  }
  return scenes;
}

eval::SceneDetections scene_case(const synth::Scene & scene, std::vector<head::Detection> dets)
{
  eval::SceneDetections s{std::move(dets), scene.boxes, {}};
  for (const auto & b : scene.boxes) {
    s.gt_points.push_back(synth::points_in_box(scene.cloud, b.box));
  }
  return s;
}

int cmd_synth(const Options & o)
{
  const RunConfig rc = load_config(o);
  rc.synth.validate();
  if (o.out.empty()) {
    throw std::invalid_argument("--out is required");
  }
  fs::create_directories(o.out);
  const std::uint64_t seed = o.seed.value_or(0);
  for (std::size_t k = 0; k < o.count; ++k) {
    const synth::Scene scene = synth::generate(rc.synth, seed + k);
    const fs::path path = fs::path(o.out) / ("scene_" + std::to_string(seed + k) + ".json");
    synth::save_scene(scene, rc.synth, path);
    std::cout << path.string() << ": " << scene.cloud.size() << " points, " << scene.boxes.size() << " boxes\n";
  }
  return 0;
}

int cmd_train(const Options & o)
{
  RunConfig rc = load_config(o);
  if (o.seed) {
    rc.train.seed = *o.seed;
  }
  rc.train.model.use_grr = rc.train.model.use_grr && !o.no_grr;
  rc.train.model.use_ga = rc.train.model.use_ga && !o.no_ga;
  const auto scenes = load_scenes(o.scenes.empty() ? rc.paths.scenes : o.scenes);
  const std::string out = o.out.empty() ? rc.paths.checkpoint : o.out;
  prepare_out(out);
  const train::OverfitResult r = train::train_scenes(scenes, rc.train);
  train::save_checkpoint(r.checkpoint, out);
  Csv csv(out + ".trace.csv", run_hash(rc), rc.train.seed, {"step", "total", "cls", "reg", "iou", "fg", "dis"});
  for (std::size_t s = 0; s < r.trace.size(); ++s) {
    const auto & l = r.trace[s];
    csv.row({std::to_string(s), num(l.total), num(l.cls), num(l.reg), num(l.iou), num(l.fg), num(l.dis)});
  }
  std::cout << "trained " << r.checkpoint.step << " steps, loss " << r.trace.front().total << " -> "
            << r.final_loss.total << ", checkpoint " << out << '\n';
  return 0;
}

int cmd_infer(const Options & o)
{
  const RunConfig rc = load_config(o);
  const train::Checkpoint ck = load_ckpt(o.ckpt);
  const synth::Scene scene = load_scene_file(o.scene);
  prepare_out(o.out);
  const streaming::Pipeline pipe{ck.config.grid, ck.config.model, &ck.params, rc.decode};
  const auto dets = streaming::run_full(scene.cloud, pipe);
  eval::save_detections(dets, o.out);
  std::cout << dets.size() << " detections -> " << o.out << '\n';
  return 0;
}

int cmd_eval(const Options & o)
{
  const RunConfig rc = load_config(o);
  if (o.dets.size() != o.scenes.size() || o.dets.empty()) {
    throw std::invalid_argument("--dets and --scenes must list the same positive number of files");
  }
  std::vector<eval::SceneDetections> cases;
  for (std::size_t i = 0; i < o.dets.size(); ++i) {
    require(o.dets[i]);
    cases.push_back(scene_case(load_scene_file(o.scenes[i]), eval::load_detections(o.dets[i])));
  }
  prepare_out(o.out);
  const auto metrics = eval::evaluate(cases, rc.eval);
  std::ofstream out(o.out, std::ios::trunc);
  out << eval::metrics_to_json(metrics, rc.eval).dump(2) << '\n';
  std::cout << "metrics -> " << o.out << '\n';
  return 0;
}

int cmd_stream(const Options & o)
{
  RunConfig rc = load_config(o);
  const train::Checkpoint ck = load_ckpt(o.ckpt);
  rc.train = ck.config;
  if (!o.latency_model.empty()) {
    require(o.latency_model);
    rc.stream.latency = streaming::load_latency_model(o.latency_model);
  }
  if (!o.sectors.empty()) {
    rc.stream.sectors = o.sectors;
  }
  for (std::size_t n : rc.stream.sectors) {
    streaming::check_sector_count(ck.config.grid, ck.config.model, n);
  }
  const synth::Scene scene = load_scene_file(o.scene);
  const streaming::Pipeline pipe{ck.config.grid, ck.config.model, &ck.params, rc.decode};
  const auto rows =
    streaming::compare_streaming_vs_full(scene.cloud, scene.boxes, rc.stream.sectors, pipe, rc.stream.latency, rc.eval);
  Csv csv(o.out, run_hash(rc), o.seed.value_or(ck.config.seed), {"n_sectors", "mean_latency_s", "peak_cells", "ap", "aph"});
  for (const auto & r : rows) {
    csv.row({std::to_string(r.n_sectors), num(r.mean_latency), std::to_string(r.peak_cells), num(r.ap), num(r.aph)});
  }
  std::cout << rows.size() << " rows -> " << o.out << '\n';
  return 0;
}

int cmd_resolution(const Options & o)
{
  RunConfig rc = load_config(o);
  std::optional<train::Checkpoint> ck;
  if (!o.ckpt.empty()) {
    ck = load_ckpt(o.ckpt);
    rc.train = ck->config;
  }
  if (!o.scales.empty()) {
    rc.resolution.scales = o.scales;
  }
  const std::uint64_t seed = o.seed.value_or(kReferenceSeed);
  std::vector<synth::Scene> scenes;
  if (o.scenes.empty()) {
    for (std::size_t k = 0; k < kReferenceScenes; ++k) {
      scenes.push_back(synth::generate(rc.synth, seed + k));
    }
  } else {
    scenes = load_scenes(o.scenes);
  }
  std::vector<PointCloud> clouds;
  for (const auto & s : scenes) {
    clouds.push_back(s.cloud);
  }
  const GridSpec & base = rc.train.grid;
  const ModelConfig & model = rc.train.model;
  const auto rows = resolution::density_study(clouds, base, rc.resolution.scales, model, rc.resolution.capacity);
  Csv csv(
    o.out, run_hash(rc), seed,
    {"scale", "layout", "cells", "cell_size_m", "row_cov", "overflow_fraction", "ap", "aph"});
  for (const auto & r : rows) {
    std::optional<double> ap, aph;
    if (ck && r.layout == "polar") {
      const GridSpec spec = resolution::scaled_grid(base, r.scale, model);
      const streaming::Pipeline pipe{spec, model, &ck->params, rc.decode};
      std::vector<eval::SceneDetections> cases;
      for (const auto & s : scenes) {
        cases.push_back(scene_case(s, streaming::run_full(s.cloud, pipe)));
      }
      std::tie(ap, aph) = streaming::mean_ap(cases, rc.eval);
    }
    csv.row(
      {num(r.scale), r.layout, std::to_string(r.cells), num(r.cell_size), num(r.row_cov), num(r.overflow_fraction),
       num(ap), num(aph)});
  }
  std::cout << rows.size() << " rows -> " << o.out << '\n';
  return 0;
}

int cmd_ablate(const Options & o)
{
  RunConfig rc = load_config(o);
  if (o.seed) {
    rc.train.seed = *o.seed;
  }
  const auto scenes = load_scenes(o.scenes.empty() ? rc.paths.scenes : o.scenes);
  prepare_out(o.out);
  struct Variant
  {
    const char * name;
    bool grr;
    bool ga;
  };
  const Variant variants[] = {{"baseline", false, false}, {"grr", true, false}, {"ga", false, true}, {"grr+ga", true, true}};
  Csv csv(o.out, run_hash(rc), rc.train.seed, {"variant", "grr", "ga", "final_loss", "ap", "aph"});
  for (const auto & v : variants) {
    if ((v.grr && o.no_grr) || (v.ga && o.no_ga)) {
      continue;
    }
    TrainConfig tc = rc.train;
    tc.model.use_grr = v.grr;
    tc.model.use_ga = v.ga;
    const train::OverfitResult r = train::train_scenes(scenes, tc);
    const streaming::Pipeline pipe{tc.grid, tc.model, &r.checkpoint.params, rc.decode};
    std::vector<eval::SceneDetections> cases;
    for (const auto & s : scenes) {
      cases.push_back(scene_case(s, streaming::run_full(s.cloud, pipe)));
    }
    const auto [ap, aph] = streaming::mean_ap(cases, rc.eval);
    csv.row({v.name, v.grr ? "1" : "0", v.ga ? "1" : "0", num(r.final_loss.total), num(ap), num(aph)});
    std::cout << v.name << ": ap " << ap << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"Polar BEV detector toolkit"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App * c) {
    c->add_option("--config", o.config, "run config JSON");
    c->add_option("--seed", o.seed, "seed");
    c->add_option("--out", o.out, "output path");
  };
  auto variants = [&](CLI::App * c) {
    c->add_flag("--no-grr", o.no_grr, "disable GRR");
    c->add_flag("--no-ga", o.no_ga, "disable GA");
  };

  auto * synth_cmd = app.add_subcommand("synth", "write synthetic scenes");
  common(synth_cmd);
  synth_cmd->add_option("--count", o.count, "number of scenes")->check(CLI::PositiveNumber);

  auto * train_cmd = app.add_subcommand("train", "train on scenes and write a checkpoint");
  common(train_cmd);
  train_cmd->add_option("--scenes", o.scenes, "scene files");
  variants(train_cmd);

  auto * infer_cmd = app.add_subcommand("infer", "full-sweep inference to JSON lines");
  common(infer_cmd);
  infer_cmd->add_option("--ckpt", o.ckpt, "checkpoint")->required();
  infer_cmd->add_option("--scene", o.scene, "scene file")->required();

  auto * eval_cmd = app.add_subcommand("eval", "AP/APH of detections against scenes");
  common(eval_cmd);
  eval_cmd->add_option("--dets", o.dets, "detection files")->required();
  eval_cmd->add_option("--scenes", o.scenes, "scene files, one per detection file")->required();

  auto * stream_cmd = app.add_subcommand("stream", "streaming vs full-sweep table");
  common(stream_cmd);
  stream_cmd->add_option("--ckpt", o.ckpt, "checkpoint")->required();
  stream_cmd->add_option("--scene", o.scene, "scene file")->required();
  stream_cmd->add_option("--sectors", o.sectors, "sector counts")->delimiter(',');
  stream_cmd->add_option("--latency-model", o.latency_model, "latency model JSON");

  auto * res_cmd = app.add_subcommand("resolution", "occupancy and AP across voxel scales");
  common(res_cmd);
  res_cmd->add_option("--ckpt", o.ckpt, "checkpoint (enables the AP columns)");
  res_cmd->add_option("--scenes", o.scenes, "scene files (default: 20 generated scenes)");
  res_cmd->add_option("--scales", o.scales, "voxel scales")->delimiter(',');

  auto * ablate_cmd = app.add_subcommand("ablate", "train and evaluate GRR/GA variants");
  common(ablate_cmd);
  ablate_cmd->add_option("--scenes", o.scenes, "scene files");
  variants(ablate_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError & e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth_cmd) return cmd_synth(o);
    if (*train_cmd) return cmd_train(o);
    if (*infer_cmd) return cmd_infer(o);
    if (*eval_cmd) return cmd_eval(o);
    if (*stream_cmd) return cmd_stream(o);
    if (*res_cmd) return cmd_resolution(o);
    if (*ablate_cmd) return cmd_ablate(o);
  } catch (const MissingFile & e) {
    std::cerr << "error: missing file: " << e.what() << '\n';
    return kExitConfig;
  } catch (const train::NumericalError & e) {
    std::cerr << "error: numerical abort at " << e.tensor() << ": " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::invalid_argument & e) {
    std::cerr << "error: invalid configuration: " << e.what() << '\n';
    return kExitConfig;
  } catch (const nlohmann::json::exception & e) {
    std::cerr << "error: invalid configuration: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
