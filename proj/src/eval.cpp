#include "partner/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "partner/synth.hpp"

namespace partner::eval
{

namespace
{

std::vector<std::size_t> score_order(const std::vector<double> & scores)
{
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::optional<double> interpolated_ap(const PrInput & in, bool heading)
{
  if (in.n_gt == 0) {
    return std::nullopt;
  }
  std::vector<double> scores;
  scores.reserve(in.dets.size());
  for (const auto & d : in.dets) {
    scores.push_back(d.score);
  }
  const auto order = score_order(scores);
  // best[k]: precision envelope over cutoffs whose TP count reaches k
  const std::size_t n_gt = in.n_gt;
  std::vector<double> best(n_gt + 1, 0.0);
  std::size_t tp = 0;
  double weighted = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const ScoredDet & d = in.dets[order[k]];
    if (d.tp) {
      ++tp;
      weighted += heading ? d.h : 1.0;
    }
    if (tp > n_gt) {
      throw std::invalid_argument("average_precision: more true positives than ground truth");
    }
    best[tp] = std::max(best[tp], weighted / static_cast<double>(k + 1));
  }
  for (std::size_t k = n_gt; k-- > 0;) {
    best[k] = std::max(best[k], best[k + 1]);
  }
  double total = 0.0;
  for (std::size_t i = 1; i <= kRecallPoints; ++i) {
    // smallest TP count with tp / n_gt >= i / 40
    const std::size_t need = (i * n_gt + kRecallPoints - 1) / kRecallPoints;
    total += best[need];
  }
  return total / static_cast<double>(kRecallPoints);
}

double center_range(const head::Box3D & b) { return std::hypot(b.cx, b.cy); }

std::size_t bin_of(double r, const std::vector<double> & edges)
{
  std::size_t k = 0;
  while (k + 1 < edges.size() && r >= edges[k + 1]) {
    ++k;
  }
  return k;
}

BinMetrics finish(const PrInput & pr)
{
  return {average_precision(pr), average_precision_heading(pr), pr.n_gt, pr.dets.size()};
}

// Fills one PrInput per bin (a single bin when edges has one entry).
std::vector<PrInput> collect(
  const std::vector<SceneCase> & scenes, double iou_threshold, int level, const std::vector<double> & edges)
{
  if (edges.empty()) {
    throw std::invalid_argument("range bins: need at least one edge");
  }
  std::vector<PrInput> bins(edges.size());
  for (const SceneCase & s : scenes) {
    if (!s.gt_points.empty() && s.gt_points.size() != s.gts.size()) {
      throw std::invalid_argument("evaluate: gt_points must match gts");
    }
    const auto counted = [&](std::size_t g) { return s.gt_points.empty() || gt_in_level(s.gt_points[g], level); };
    const MatchResult m = match(s.dets, s.gts, iou_threshold);
    for (std::size_t g = 0; g < s.gts.size(); ++g) {
      if (counted(g)) {
        ++bins[bin_of(center_range(s.gts[g]), edges)].n_gt;
      }
    }
    for (std::size_t d = 0; d < s.dets.size(); ++d) {
      const int g = m.det_gt[d];
      if (g >= 0 && !counted(static_cast<std::size_t>(g))) {
        continue;
      }
      const double r = g >= 0 ? center_range(s.gts[g]) : center_range(s.dets[d].box);
      bins[bin_of(r, edges)].dets.push_back({s.dets[d].score, g >= 0, m.det_heading[d]});
    }
  }
  return bins;
}

}  // namespace

double heading_weight(double theta_det, double theta_gt)
{
  return std::max(0.0, 1.0 - heading_delta(theta_det, theta_gt) / kPi);
}

MatchResult match(const std::vector<head::Detection> & dets, const std::vector<head::Box3D> & gts, double iou_threshold)
{
  MatchResult m;
  m.det_gt.assign(dets.size(), -1);
  m.det_iou.assign(dets.size(), 0.0);
  m.det_heading.assign(dets.size(), 0.0);
  m.gt_matched.assign(gts.size(), 0);
  std::vector<BoxBEV> gt_bev;
  gt_bev.reserve(gts.size());
  for (const auto & g : gts) {
    gt_bev.push_back(g.bev());
  }
  std::vector<double> scores;
  for (const auto & d : dets) {
    scores.push_back(d.score);
  }
  for (std::size_t d : score_order(scores)) {
    const BoxBEV bev = dets[d].box.bev();
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (m.gt_matched[g]) {
        continue;
      }
      const double iou = rotated_iou_bev(bev, gt_bev[g]);
      if (iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    m.det_iou[d] = best_iou;
    if (best >= 0 && best_iou >= iou_threshold) {
      m.det_gt[d] = best;
      m.gt_matched[best] = 1;
      m.det_heading[d] = heading_weight(dets[d].box.theta, gts[best].theta);
    }
  }
  return m;
}

std::optional<double> average_precision(const PrInput & in) { return interpolated_ap(in, false); }

std::optional<double> average_precision_heading(const PrInput & in) { return interpolated_ap(in, true); }

bool gt_in_level(std::size_t n_points, int level)
{
  if (level == 1) {
    return n_points > 5;
  }
  if (level == 2) {
    return n_points >= 1;
  }
  throw std::invalid_argument("difficulty level must be 1 or 2");
}

std::vector<BinMetrics> range_breakdown(
  const std::vector<SceneCase> & scenes, double iou_threshold, int level, const std::vector<double> & edges)
{
  std::vector<BinMetrics> out;
  for (const PrInput & pr : collect(scenes, iou_threshold, level, edges)) {
    out.push_back(finish(pr));
  }
  return out;
}

BinMetrics evaluate_class(const std::vector<SceneCase> & scenes, double iou_threshold, int level)
{
  return finish(collect(scenes, iou_threshold, level, {0.0}).front());
}

std::map<int, ClassMetrics> evaluate(const std::vector<SceneDetections> & scenes, const EvalConfig & cfg)
{
  std::map<int, std::vector<SceneCase>> by_class;
  for (const auto & s : scenes) {
    std::map<int, SceneCase> local;
    for (std::size_t g = 0; g < s.gts.size(); ++g) {
      SceneCase & c = local[s.gts[g].cls];
      c.gts.push_back(s.gts[g].box);
      if (!s.gt_points.empty()) {
        c.gt_points.push_back(s.gt_points.at(g));
      }
    }
    for (const auto & d : s.dets) {
      local[d.cls].dets.push_back(d);
    }
    for (auto & [cls, c] : local) {
      by_class[cls].push_back(std::move(c));
    }
  }
  std::map<int, ClassMetrics> out;
  for (const auto & [cls, cases] : by_class) {
    const double thr = cls >= 0 && cls < 3 ? cfg.iou_threshold[cls] : 0.5;
    out[cls] = {evaluate_class(cases, thr, cfg.level), range_breakdown(cases, thr, cfg.level)};
  }
  return out;
}

nlohmann::json metrics_to_json(const std::map<int, ClassMetrics> & metrics, const EvalConfig & cfg)
{
  const auto bin_json = [](const BinMetrics & b) {
    nlohmann::json j;
    j["ap"] = b.ap ? nlohmann::json(*b.ap) : nlohmann::json(nullptr);
    j["aph"] = b.aph ? nlohmann::json(*b.aph) : nlohmann::json(nullptr);
    j["n_gt"] = b.n_gt;
    j["n_det"] = b.n_det;
    return j;
  };
  nlohmann::json out = nlohmann::json::object();
  for (const auto & [cls, m] : metrics) {
    nlohmann::json c = bin_json(m.overall);
    c["level"] = cfg.level;
    nlohmann::json ranges = nlohmann::json::object();
    for (std::size_t k = 0; k < m.per_range.size(); ++k) {
      std::ostringstream name;
      name << kRangeEdges[k] << '-';
      if (k + 1 < kRangeEdges.size()) {
        name << kRangeEdges[k + 1];
      } else {
        name << "inf";
      }
      ranges[name.str()] = bin_json(m.per_range[k]);
    }
    c["per_range"] = ranges;
    out[synth::class_name(cls)] = c;
  }
  return out;
}

void save_detections(const std::vector<head::Detection> & dets, const std::filesystem::path & path)
{
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  for (const auto & d : dets) {
    const head::Box3D & b = d.box;
    const nlohmann::json j = {
      {"cls", d.cls}, {"score", d.score}, {"iou", d.iou_pred}, {"box", {b.cx, b.cy, b.cz, b.w, b.l, b.h, b.theta}}};
    out << j.dump() << '\n';
  }
}

std::vector<head::Detection> load_detections(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::vector<head::Detection> dets;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const nlohmann::json j = nlohmann::json::parse(line);
    const auto v = j.at("box").get<std::vector<double>>();
    if (v.size() != 7) {
      throw std::invalid_argument("detection file: box needs 7 numbers");
    }
    dets.push_back({
      head::make_box3d(v[0], v[1], v[2], v[3], v[4], v[5], v[6]), j.at("score").get<double>(), j.at("cls").get<int>(),
      j.at("iou").get<double>()});
  }
  return dets;
}

}  // namespace partner::eval
