// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance <partner-cli> <small-run-config>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "checks.hpp"
#include "kernel_gradcheck.hpp"
#include "partner/config.hpp"
#include "partner/resolution.hpp"
#include "partner/train.hpp"
#include "pipeline_gradcheck.hpp"

using namespace partner;
namespace fs = std::filesystem;

namespace
{

// Reference overfit run (toy grid, default TrainConfig, scene seed 0), measured once:
// total loss 915.67 -> 0.0743 after 200 steps, foreground IoU 1.0, AP@0.5 1.0 for all classes.
constexpr std::uint64_t kReferenceSceneSeed = 0;
constexpr double kPinnedFinalLoss = 0.15;
constexpr double kPinnedForegroundIou = 0.95;
constexpr double kPinnedAp = 0.95;

constexpr std::uint64_t kDensitySeed = 1000;
constexpr std::size_t kDensityScenes = 20;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, const char * name, bool pass, const std::string & detail)
{
  failures += pass ? 0 : 1;
  std::printf("%s %d %s: %s\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
}

template <class... Args>
std::string fmt(const char * f, Args... args)
{
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

void gradient_integrity()
{
  const auto t0 = Clock::now();
  std::size_t k_checked = 0, k_failed = 0;
  double k_worst = 0.0;
  for (const auto & r : gradcheck::run_kernel_suite(100)) {
    k_checked += r.checked;
    k_failed += r.failed;
    k_worst = std::max(k_worst, r.worst_rel);
  }
  std::size_t p_checked = 0, p_failed = 0;
  double p_worst = 0.0;
  for (const auto & [module, r] : gradcheck::run_pipeline_check(20, 11)) {
    p_checked += r.checked;
    p_failed += r.failed;
    p_worst = std::max(p_worst, r.worst_rel);
  }
  const double secs = seconds_since(t0);
  const bool pass = k_checked > 0 && k_failed == 0 && p_checked == 100 && p_failed == 0 && secs < 300.0;
  report(1, "gradient integrity", pass,
         fmt("kernels %zu/%zu failed (worst rel %.2e, tol %.0e), pipeline %zu/%zu failed (worst rel %.2e, tol %.0e), %.1f s",
             k_failed, k_checked, k_worst, gradcheck::kKernelRtol, p_failed, p_checked, p_worst, gradcheck::kPipelineRtol, secs));
}

void oracle_equivalence()
{
  const checks::Count iou = checks::iou_vs_monte_carlo(1000, 23);
  const checks::Count topk = checks::topk_vs_oracle(1000, 7);
  const checks::Count fg = checks::foreground_vs_oracle(100, 17);
  const checks::Count ap = checks::ap_vs_exhaustive_oracle();
  const bool pass = iou.failed == 0 && iou.worst < 1e-2 && topk.failed == 0 && fg.failed == 0 && ap.failed == 0 &&
                    ap.checked > 100000;
  report(2, "oracle equivalence", pass,
         fmt("iou %zu/%zu off (worst %.4f < 0.01), topk %zu/%zu, foreground %zu/%zu, AP %zu/%zu datasets",
             iou.failed, iou.checked, iou.worst, topk.failed, topk.checked, fg.failed, fg.checked, ap.failed, ap.checked));
}

void shift_roll_identity()
{
  std::size_t a_checked = 0, a_failed = 0, g_checked = 0, g_failed = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const checks::Count a = checks::angular_shift_vs_roll(seed);
    const checks::Count g = checks::ga_shift_vs_roll(seed);
    a_checked += a.checked;
    a_failed += a.failed;
    g_checked += g.checked;
    g_failed += g.failed;
  }
  report(3, "shift/roll identity", a_failed == 0 && g_failed == 0 && a_checked > 0 && g_checked > 0,
         fmt("angular %zu/%zu differ, GA %zu/%zu differ (bitwise)", a_failed, a_checked, g_failed, g_checked));
}

void streaming_consistency()
{
  const GridSpec spec = toy_grid_spec();
  const ModelConfig model = toy_model_config();
  const ModelParams params = init_params(model, 5);
  const synth::Scene scene = synth::generate(synth::SceneConfig{}, 3);
  streaming::Pipeline pipeline{spec, model, &params, {}};
  pipeline.decode.max_dets = 100000;

  const auto full = streaming::run_full(scene.cloud, pipeline);
  const auto one = streaming::run_streaming(scene.cloud, 1, pipeline, streaming::LatencyModel{});
  bool identical = one.detections.size() == full.size();
  for (std::size_t k = 0; identical && k < full.size(); ++k) {
    identical = checks::same_detection(one.detections[k], full[k], 0.0);
  }
  const checks::Count cols = checks::sector_columns_vs_full(scene.cloud, spec, {1, 2, 4, 8});
  const auto interior = checks::interior_objects_vs_full(scene, pipeline, {2, 4}, 2 * model.grr.window, 1e-9);

  std::vector<double> lat;
  bool decreasing = true;
  for (std::size_t n : {1u, 2u, 4u, 8u}) {
    lat.push_back(streaming::run_streaming(scene.cloud, n, pipeline, streaming::LatencyModel{}).mean_latency);
    decreasing = decreasing && (lat.size() < 2 || lat.back() < lat[lat.size() - 2]);
  }
  const bool pass = identical && !full.empty() && cols.failed == 0 && interior.objects > 0 && interior.compared > 0 &&
                    interior.failed == 0 && decreasing;
  report(4, "streaming consistency", pass,
         fmt("n=1 %s (%zu dets), sector columns %zu/%zu differ, interior objects %zu with %zu/%zu dets off, "
             "mean latency ms %.2f > %.2f > %.2f > %.2f",
             identical ? "identical" : "differs", full.size(), cols.failed, cols.checked, interior.objects,
             interior.failed, interior.compared, 1e3 * lat[0], 1e3 * lat[1], 1e3 * lat[2], 1e3 * lat[3]));
}

void density_resolution()
{
  std::vector<PointCloud> clouds;
  for (std::size_t k = 0; k < kDensityScenes; ++k) {
    clouds.push_back(synth::generate(synth::SceneConfig{}, kDensitySeed + k).cloud);
  }
  const auto rows =
    resolution::density_study(clouds, toy_grid_spec(), {1.0, 2.0, 3.0, 4.0, 5.0}, toy_model_config(), kDefaultCellCapacity);
  bool cov_lower = true;
  std::string cov, loss;
  for (std::size_t s = 0; s < rows.size(); s += 2) {
    const auto & p = rows[s];
    const auto & c = rows[s + 1];
    cov_lower = cov_lower && p.row_cov < c.row_cov;
    cov += fmt(" %.0fx %.3f/%.3f", p.scale, p.row_cov, c.row_cov);
    loss += fmt(" %.0fx %.3f/%.3f", p.scale, p.overflow_fraction, c.overflow_fraction);
  }
  const double polar_growth = rows[rows.size() - 2].overflow_fraction - rows[0].overflow_fraction;
  const double cart_growth = rows.back().overflow_fraction - rows[1].overflow_fraction;
  const bool slower = polar_growth < cart_growth;
  report(5, "density/resolution", cov_lower && slower,
         fmt("row CoV polar/cartesian%s (%s); overflow polar/cartesian%s, growth 1x->5x %.3f vs %.3f (%s)", cov.c_str(),
             cov_lower ? "polar lower at every scale" : "polar not always lower", loss.c_str(), polar_growth,
             cart_growth, slower ? "polar slower" : "polar not slower"));
}

void toy_learning()
{
  const auto t0 = Clock::now();
  const TrainConfig config;
  const synth::Scene scene = synth::generate(synth::SceneConfig{}, kReferenceSceneSeed);
  const train::OverfitResult r = train::overfit(scene, config);
  const train::Sample sample = train::make_sample(scene, config);
  const double first = r.trace.front().total, last = r.final_loss.total;
  const double reduction = 1.0 - last / first;
  const double fg = train::foreground_iou(r.checkpoint.params, sample, config).value_or(0.0);

  checks::Count rt = checks::encode_decode_roundtrip(2000, 21);
  const PolarGrid grid(config.grid);
  for (const auto & b : scene.boxes) {
    const auto px = grid.locate({b.box.cx, b.box.cy});
    ++rt.checked;
    if (!px) {
      ++rt.failed;
      continue;
    }
    const auto enc = head::encode_box(grid, px->first, px->second, b.box);
    const head::Box3D d = head::decode_box(grid, px->first, px->second, enc.data());
    const double e = std::max({std::abs(d.cx - b.box.cx), std::abs(d.cy - b.box.cy), std::abs(d.cz - b.box.cz),
                               std::abs(d.w - b.box.w), std::abs(d.l - b.box.l), std::abs(d.h - b.box.h),
                               std::abs(wrap_angle(d.theta - b.box.theta))});
    rt.worst = std::max(rt.worst, e);
    rt.failed += e < 1e-6 ? 0 : 1;
  }

  const auto dets = detect(sample.raw, grid, config.model, r.checkpoint.params, {});
  eval::EvalConfig ec;
  ec.iou_threshold = {0.5, 0.5, 0.5};
  eval::SceneDetections sd{dets, scene.boxes, {}};
  for (const auto & b : scene.boxes) {
    sd.gt_points.push_back(synth::points_in_box(scene.cloud, b.box));
  }
  const double ap = streaming::mean_ap({sd}, ec).first;
  const double secs = seconds_since(t0);
  const bool pass = reduction >= 0.5 && fg >= 0.5 && rt.failed == 0 && ap >= 0.8 && last <= kPinnedFinalLoss &&
                    fg >= kPinnedForegroundIou && ap >= kPinnedAp && secs < 600.0;
  report(6, "toy learning", pass,
         fmt("loss %.4f -> %.4f (-%.2f%%, pinned <= %.2f), fg IoU %.3f (pinned >= %.2f), round trip %zu/%zu off "
             "(worst %.1e), AP@0.5 %.3f (pinned >= %.2f), %zu steps, %.0f s",
             first, last, 100.0 * reduction, kPinnedFinalLoss, fg, kPinnedForegroundIou, rt.failed, rt.checked, rt.worst,
             ap, kPinnedAp, config.steps, secs));
}

std::string slurp(const fs::path & p)
{
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> tree(const fs::path & root)
{
  std::map<std::string, std::string> files;
  for (const auto & e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) {
      files[fs::relative(e.path(), root).string()] = slurp(e.path());
    }
  }
  return files;
}

void cli_reproducibility(const std::string & cli, const std::string & config)
{
  const std::vector<std::string> commands = {
    "synth --config CFG --seed 7 --count 2 --out scenes",
    "train --config CFG --seed 3 --scenes scenes/scene_7.json scenes/scene_8.json --out ckpt/model.bin",
    "infer --config CFG --ckpt ckpt/model.bin --scene scenes/scene_7.json --out dets_7.jsonl",
    "infer --config CFG --ckpt ckpt/model.bin --scene scenes/scene_8.json --out dets_8.jsonl",
    "eval --config CFG --dets dets_7.jsonl dets_8.jsonl --scenes scenes/scene_7.json scenes/scene_8.json --out metrics.json",
    "stream --config CFG --ckpt ckpt/model.bin --scene scenes/scene_7.json --sectors 1,2 --out stream.csv",
    "resolution --config CFG --ckpt ckpt/model.bin --scales 1,2 --out resolution.csv",
    "ablate --config CFG --seed 3 --scenes scenes/scene_7.json scenes/scene_8.json --out ablate.csv",
  };
  const fs::path base = fs::temp_directory_path() / "partner_acceptance_cli";
  fs::remove_all(base);
  std::size_t bad_exit = 0;
  std::map<std::string, std::string> runs[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = base / (run == 0 ? "a" : "b");
    fs::create_directories(dir);
    for (std::string c : commands) {
      c.replace(c.find("CFG"), 3, "'" + fs::absolute(config).string() + "'");
      const std::string line = "cd '" + dir.string() + "' && '" + fs::absolute(cli).string() + "' " + c + " > /dev/null";
      bad_exit += std::system(line.c_str()) == 0 ? 0 : 1;
    }
    runs[run] = tree(dir);
  }
  std::size_t differ = 0;
  for (const auto & [name, bytes] : runs[0]) {
    const auto it = runs[1].find(name);
    differ += (it == runs[1].end() || it->second != bytes) ? 1 : 0;
  }
  const bool pass = bad_exit == 0 && !runs[0].empty() && runs[0].size() == runs[1].size() && differ == 0;
  report(7, "reproducibility", pass,
         fmt("%zu commands, %zu non-zero exits, %zu files, %zu differ between runs", commands.size(), bad_exit,
             runs[0].size(), differ));
  fs::remove_all(base);
}

void score_rectification()
{
  const double example = head::rectify_scores(0.8, 0.5, 1.0);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t checked = 0, violations = 0;
  for (double alpha : {0.0, 0.5, 1.0, 2.0}) {
    for (int t = 0; t < 1000; ++t) {
      const double iou = u(rng), a = u(rng), b = u(rng);
      const double ra = head::rectify_scores(a, iou, alpha), rb = head::rectify_scores(b, iou, alpha);
      ++checked;
      violations += ((a < b && ra > rb) || (a > b && ra < rb)) ? 1 : 0;
    }
  }
  report(8, "score rectification", example == 0.4 && violations == 0,
         fmt("0.8 * 0.5^1 = %g (%s 0.4), ranking violations %zu/%zu", example, example == 0.4 ? "==" : "!=", violations, checked));
}

}  // namespace

int main(int argc, char ** argv)
{
  if (argc != 3) {
    std::fprintf(stderr, "usage: %s <partner-cli> <small-run-config>\n", argv[0]);
    return 2;
  }
  gradient_integrity();
  oracle_equivalence();
  shift_roll_identity();
  streaming_consistency();
  density_resolution();
  toy_learning();
  cli_reproducibility(argv[1], argv[2]);
  score_rectification();
  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
