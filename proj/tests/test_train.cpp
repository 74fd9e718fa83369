#include <doctest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <limits>

#include "partner/train.hpp"

using namespace partner;

namespace
{

// 16 x 16 BEV grid over [1, 33] m, C = d = 8.
TrainConfig small_config()
{
  TrainConfig c;
  c.grid.range = {RangeDiscretization::UD, 1.0, 33.0, 32};
  c.grid.n_azimuth = 32;
  c.grid.downsample = 2;
  c.model.channels = 8;
  c.model.attn_dim = 8;
  c.model.grr.n_heads = 2;
  c.model.ga.mlp_hidden = {8};
  c.learning_rate = 0.01;
  c.steps = 3;
  return c;
}

synth::Scene small_scene()
{
  synth::SceneConfig sc;
  sc.n_azimuth_rays = 256;
  sc.n_elevation_rays = 16;
  sc.box_range_max = 25.0;
  return synth::generate(sc, 2);
}

bool same_params(const ModelParams & a, const ModelParams & b)
{
  if (a.tensors.size() != b.tensors.size()) {
    return false;
  }
  for (const auto & [name, t] : a.tensors) {
    if (!b.contains(name) || b.at(name).shape != t.shape) {
      return false;
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (std::bit_cast<std::uint64_t>(t.data[i]) != std::bit_cast<std::uint64_t>(b.at(name).data[i])) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace

TEST_CASE("parameter initialization")
{
  const TrainConfig c = small_config();
  const ModelParams a = init_params(c.model, 9), b = init_params(c.model, 9), d = init_params(c.model, 10);
  CHECK(same_params(a, b));
  CHECK_FALSE(same_params(a, d));
  for (const auto & decl : declare_model(c.model)) {
    const Tensor & t = a.at(decl.name);
    CHECK(t.shape == decl.shape);
    const double bound = 1.0 / std::sqrt(static_cast<double>(decl.fan_in));
    for (double v : t.data) {
      if (decl.bias) {
        CHECK(v == 0.0);
      } else {
        CHECK(std::abs(v) <= bound);
      }
    }
  }
  const ModelParams four = init_params({{"w", {4, 3}, 4, false}}, 1);
  for (double v : four.at("w").data) {
    CHECK(std::abs(v) <= 0.5);
  }
}

TEST_CASE("gradient clipping")
{
  std::map<std::string, Tensor> g;
  g.emplace("a", Tensor({2}, {60.0, 0.0}));
  g.emplace("b", Tensor({1}, {80.0}));
  const double norm = train::clip_gradients(g, 10.0);
  CHECK(norm == doctest::Approx(100.0).epsilon(1e-15));
  const double after = std::sqrt(g["a"].data[0] * g["a"].data[0] + g["b"].data[0] * g["b"].data[0]);
  CHECK(after == doctest::Approx(10.0).epsilon(1e-15));
  CHECK(g["a"].data[0] == doctest::Approx(6.0).epsilon(1e-15));
  std::map<std::string, Tensor> small;
  small.emplace("a", Tensor({1}, {3.0}));
  CHECK(train::clip_gradients(small, 10.0) == 3.0);
  CHECK(small["a"].data[0] == 3.0);
}

TEST_CASE("train step behaviour")
{
  const TrainConfig c = small_config();
  const train::Sample s = train::make_sample(small_scene(), c);
  REQUIRE(!s.boxes.empty());
  const ModelParams p0 = init_params(c.model, c.seed);

  SUBCASE("zero learning rate keeps parameters")
  {
    TrainConfig z = c;
    z.learning_rate = 0.0;
    ModelParams p = p0;
    train::train_step(p, {s}, z);
    CHECK(same_params(p, p0));
  }
  SUBCASE("one step lowers the loss")
  {
    ModelParams p = p0;
    const train::StepResult r = train::train_step(p, {s}, c);
    const double before = train::evaluate_loss(p0, s, c).total;
    CHECK(r.loss.total == doctest::Approx(before).epsilon(1e-12));
    const double after = train::evaluate_loss(p, s, c).total;
    MESSAGE("loss " << before << " -> " << after);
    CHECK(after < before);
    CHECK(r.grad_norm > 0.0);
  }
  SUBCASE("loss components add up")
  {
    const train::LossValues v = train::evaluate_loss(p0, s, c);
    const head::LossConfig & w = c.loss;
    CHECK(v.total == doctest::Approx(v.cls + w.w_reg * v.reg + w.w_fg * v.fg + w.w_dis * v.dis + w.w_iou * v.iou).epsilon(1e-12));
  }
  SUBCASE("steps are bitwise reproducible")
  {
    ModelParams a = p0, b = p0;
    train::train_step(a, {s, s}, c);
    train::train_step(b, {s, s}, c);
    CHECK(same_params(a, b));
  }
  SUBCASE("a batch of identical samples matches a single sample")
  {
    std::map<std::string, Tensor> g1, g2;
    train::loss_and_gradients(p0, {s}, c, g1);
    train::loss_and_gradients(p0, {s, s}, c, g2);
    for (const auto & [name, t] : g1) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        CHECK(g2.at(name).data[i] == doctest::Approx(t.data[i]).epsilon(1e-12));
      }
    }
  }
  SUBCASE("non-finite values abort with the tensor name")
  {
    ModelParams p = p0;
    p.at("neck.c1.k").data[3] = std::numeric_limits<double>::quiet_NaN();
    try {
      train::train_step(p, {s}, c);
      FAIL("expected a numerical abort");
    } catch (const train::NumericalError & e) {
      CHECK(e.tensor() == "neck.c1.k");
    }
    train::Sample bad = s;
    bad.raw.data[0] = std::numeric_limits<double>::infinity();
    ModelParams q = p0;
    try {
      train::train_step(q, {bad}, c);
      FAIL("expected a numerical abort");
    } catch (const train::NumericalError & e) {
      CHECK(e.tensor() == "input.features");
    }
  }
}

TEST_CASE("overfit trace and checkpoints")
{
  const TrainConfig c = small_config();
  const synth::Scene scene = small_scene();
  const train::OverfitResult r = train::overfit(scene, c);
  CHECK(r.trace.size() == c.steps);
  CHECK(r.checkpoint.step == c.steps);
  CHECK(r.final_loss.total < r.trace.front().total);
  const train::OverfitResult again = train::overfit(scene, c);
  CHECK(same_params(r.checkpoint.params, again.checkpoint.params));
  CHECK(again.final_loss.total == r.final_loss.total);

  const auto path = std::filesystem::temp_directory_path() / "partner_ckpt.bin";
  train::save_checkpoint(r.checkpoint, path);
  const train::Checkpoint back = train::load_checkpoint(path);
  CHECK(same_params(back.params, r.checkpoint.params));
  CHECK(back.step == c.steps);
  CHECK(back.config_hash == config_hash(c));
  CHECK(config_hash(back.config) == config_hash(c));

  // shapes must match the stored model config
  train::Checkpoint wrong = r.checkpoint;
  wrong.params.at("input.w") = Tensor({3, 3});
  train::save_checkpoint(wrong, path);
  CHECK_THROWS_AS(train::load_checkpoint(path), std::runtime_error);
  std::filesystem::remove(path);
  std::filesystem::remove(weights_sidecar(path));
  std::filesystem::remove(train::checkpoint_config_path(path));
  CHECK_THROWS_AS(train::load_checkpoint(path), std::runtime_error);
}

TEST_CASE("run config json")
{
  const RunConfig def;
  const nlohmann::json j = run_config_to_json(def);
  CHECK(j["version"] == kConfigVersion);
  const RunConfig back = run_config_from_json(j);
  CHECK(run_config_to_json(back) == j);
  CHECK(config_hash(back.train) == config_hash(def.train));
  CHECK(json_hash(j).size() == 16);

  CHECK_THROWS_AS(run_config_from_json({{"gird", nlohmann::json::object()}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json({{"model", {{"chanels", 4}}}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json({{"model", {{"grr", {{"window", 7}}}}}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json({{"train", {{"steps", "many"}}}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json({{"version", 2}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json({{"stream", {{"sectors", {6}}}}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json({{"eval", {{"level", 3}}}}), std::invalid_argument);

  const RunConfig partial = run_config_from_json({{"train", {{"steps", 7}}}, {"loss", "once"}});
  CHECK(partial.train.steps == 7);
  CHECK(partial.train.learning_rate == def.train.learning_rate);
  CHECK(partial.train.loss.w_reg == 0.75);
  CHECK(config_hash(partial.train) != config_hash(def.train));
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.json"), std::runtime_error);
}
