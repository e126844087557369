#include "cse/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <utility>

#include <json.hpp>

namespace cse {

Raster nodes_to_mask(const MergeResult& merge, const GridSpec& grid, int height, int width) {
  Raster out = make_raster(height, width);
  const double hx = grid.step_x / 2.0;
  const double hy = grid.step_y / 2.0;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      if (!merge.at(r, c)) continue;
      const double cx = grid.node_x(c);
      const double cy = grid.node_y(r);
      // half-open cell so adjacent nodes tile without overlap
      const int c0 = std::max(0, static_cast<int>(std::ceil(cx - hx)));
      const int c1 = std::min(width - 1, static_cast<int>(std::ceil(cx + hx)) - 1);
      const int r0 = std::max(0, static_cast<int>(std::ceil(cy - hy)));
      const int r1 = std::min(height - 1, static_cast<int>(std::ceil(cy + hy)) - 1);
      for (int pr = r0; pr <= r1; ++pr)
        for (int pc = c0; pc <= c1; ++pc) out.set(pr, pc, true);
    }
  }
  return out;
}

namespace {

// Crack-following tracer: walks the boundary of the union of unit pixel
// squares with the component kept on the right-hand side. Corner (cr, cc)
// sits at image point (cc - 0.5, cr - 0.5); pixel (r, c) owns corners
// (r, c)..(r+1, c+1).
struct Tracer {
  const std::vector<int>& labels;
  int height, width, comp;

  bool in_comp(int r, int c) const {
    if (r < 0 || r >= height || c < 0 || c >= width) return false;
    return labels[static_cast<std::size_t>(r) * width + c] == comp;
  }

  // directions in clockwise screen order: R, D, L, U
  static constexpr int kDr[4] = {0, 1, 0, -1};
  static constexpr int kDc[4] = {1, 0, -1, 0};

  bool valid(int cr, int cc, int dir) const {
    switch (dir) {
      case 0:
        return in_comp(cr, cc) && !in_comp(cr - 1, cc);
      case 1:
        return in_comp(cr, cc - 1) && !in_comp(cr, cc);
      case 2:
        return in_comp(cr - 1, cc - 1) && !in_comp(cr, cc - 1);
      case 3:
        return in_comp(cr - 1, cc) && !in_comp(cr - 1, cc - 1);
    }
    return false;
  }

  Polygon trace(int start_r, int start_c) const {
    std::vector<std::pair<int, int>> corners;
    int cr = start_r, cc = start_c, dir = 0;  // top-left corner, heading right
    const int sr = cr, sc = cc, sdir = dir;
    do {
      corners.emplace_back(cr, cc);
      cr += kDr[dir];
      cc += kDc[dir];
      // right-hand rule: tight turn first, so diagonally touching pixels are
      // kept apart in the trace
      const int candidates[3] = {(dir + 1) % 4, dir, (dir + 3) % 4};
      int chosen = -1;
      for (int cand : candidates) {
        if (valid(cr, cc, cand)) {
          chosen = cand;
          break;
        }
      }
      if (chosen < 0) throw std::logic_error("trace_contour: open boundary");
      dir = chosen;
    } while (!(cr == sr && cc == sc && dir == sdir));

    // merge collinear runs
    Polygon poly;
    const std::size_t n = corners.size();
    for (std::size_t i = 0; i < n; ++i) {
      const auto& prev = corners[(i + n - 1) % n];
      const auto& cur = corners[i];
      const auto& next = corners[(i + 1) % n];
      const bool collinear = (prev.first == cur.first && cur.first == next.first) ||
                             (prev.second == cur.second && cur.second == next.second);
      if (!collinear) poly.push_back({cur.second - 0.5, cur.first - 0.5});
    }
    return poly;
  }
};

}  // namespace

std::vector<Polygon> trace_contour(const Raster& mask) {
  std::vector<Polygon> out;
  std::vector<int> labels;
  const int n_comp = label_components(mask, labels);
  std::vector<std::uint8_t> done(static_cast<std::size_t>(n_comp), 0);
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      const int lab = labels[static_cast<std::size_t>(r) * mask.width + c];
      if (lab < 0 || done[lab]) continue;
      done[lab] = 1;  // row-major scan finds the topmost-leftmost pixel first
      Tracer tracer{labels, mask.height, mask.width, lab};
      out.push_back(tracer.trace(r, c));
    }
  }
  return out;
}

double polygon_area(const Polygon& poly) {
  double sum = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % n];
    sum += a[0] * b[1] - b[0] * a[1];
  }
  return sum / 2.0;
}

Raster rasterize_polygon(const Polygon& poly, int height, int width) {
  Raster out = make_raster(height, width);
  if (poly.size() < 3) return out;
  std::vector<double> xs;
  for (int r = 0; r < height; ++r) {
    xs.clear();
    const double y = r;
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const auto& a = poly[i];
      const auto& b = poly[(i + 1) % poly.size()];
      if (a[1] == b[1]) continue;
      const double ylo = std::min(a[1], b[1]);
      const double yhi = std::max(a[1], b[1]);
      if (y < ylo || y >= yhi) continue;  // half-open rule handles shared vertices
      xs.push_back(a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
      const int c0 = std::max(0, static_cast<int>(std::ceil(xs[i])));
      const int c1 = std::min(width - 1, static_cast<int>(std::floor(xs[i + 1])));
      for (int c = c0; c <= c1; ++c) out.set(r, c, true);
    }
  }
  return out;
}

double mask_iou(const Raster& a, const Raster& b) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("mask_iou: dimension mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool ia = a.data[i] != 0, ib = b.data[i] != 0;
    inter += (ia && ib) ? 1 : 0;
    uni += (ia || ib) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

EvalReport evaluate(const std::vector<DetectionResult>& preds,
                    const std::vector<const Raster*>& gts, double iou_thr) {
  EvalReport rep;
  rep.iou_thr = iou_thr;
  rep.n_preds = static_cast<int>(preds.size());
  rep.n_gts = static_cast<int>(gts.size());

  std::vector<int> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return preds[a].score > preds[b].score; });

  std::vector<std::uint8_t> gt_used(gts.size(), 0);
  for (const int pi : order) {
    int best_gt = -1;
    double best_iou = 0.0;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (gt_used[gi]) continue;
      const double iou = mask_iou(preds[pi].mask, *gts[gi]);
      if (iou > best_iou) {
        best_iou = iou;
        best_gt = static_cast<int>(gi);
      }
    }
    if (best_gt >= 0 && best_iou >= iou_thr) {
      gt_used[best_gt] = 1;
      rep.matches.push_back({pi, best_gt, best_iou});
    }
  }
  const auto n_match = static_cast<double>(rep.matches.size());
  rep.precision = rep.n_preds > 0 ? n_match / rep.n_preds : 0.0;
  rep.recall = rep.n_gts > 0 ? n_match / rep.n_gts : 0.0;
  rep.f_score = (rep.precision + rep.recall) > 0.0
                    ? 2.0 * rep.precision * rep.recall / (rep.precision + rep.recall)
                    : 0.0;
  return rep;
}

NodeMask node_mask_from_raster(const GridSpec& grid, const Raster& raster) {
  NodeMask mask = make_node_mask(grid.rows, grid.cols);
  for (int r = 0; r < grid.rows; ++r) {
    const int pr = static_cast<int>(std::lround(grid.node_y(r)));
    for (int c = 0; c < grid.cols; ++c) {
      const int pc = static_cast<int>(std::lround(grid.node_x(c)));
      mask.set(r, c, raster.in_bounds(pr, pc) && raster.at(pr, pc));
    }
  }
  return mask;
}

GridSpec with_seed_in_mask(const GridSpec& grid, const NodeMask& mask) {
  if (mask.rows != grid.rows || mask.cols != grid.cols)
    throw std::invalid_argument("with_seed_in_mask: mask dimensions mismatch");
  if (mask.at(grid.seed)) return grid;
  const double cx = grid.center_x();
  const double cy = grid.center_y();
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      if (!mask.at(r, c)) continue;
      const double dx = grid.node_x(c) - cx;
      const double dy = grid.node_y(r) - cy;
      const double d2 = dx * dx + dy * dy;
      if (d2 < best_d2) {
        best_d2 = d2;
        best = grid.node_id(r, c);
      }
    }
  }
  if (best < 0) throw std::invalid_argument("with_seed_in_mask: mask has no nodes");
  GridSpec out = grid;
  out.seed = out.node_at(best);
  return out;
}

DetectionResult detect_instance(const CellParams<float>& params, const FeatureMap& features,
                                const GridSpec& grid, unsigned threads) {
  const SectionPlan plan = compute_sections(grid);
  const SampledGrid<float> sampled = bilinear_sample<float>(features, grid);
  ForwardOptions opts;
  opts.threads = threads;
  const GridState<float> state = forward(params, sampled, plan, opts);
  const MergeResult merge = extract_region(state, plan);

  DetectionResult det;
  det.mask = nodes_to_mask(merge, grid, features.height, features.width);
  double score_sum = 0.0;
  for (int id = 0; id < grid.node_count(); ++id)
    if (merge.merged[id]) score_sum += state.outs[id].y.maxCoeff();
  det.score = merge.count > 0 ? score_sum / merge.count : 0.0;
  auto contours = trace_contour(det.mask);
  if (!contours.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < contours.size(); ++i)
      if (std::abs(polygon_area(contours[i])) > std::abs(polygon_area(contours[best]))) best = i;
    det.polygon = std::move(contours[best]);
  }
  return det;
}

namespace {

// Ground-truth grid for one instance, optionally rescaled and reseeded.
// Returns nullopt when no grid node lands inside the instance.
std::optional<GridSpec> instance_grid(const Instance& inst, int s,
                                      const std::optional<PerturbSetting>& perturb, Rng& rng) {
  const GridSpec base =
      build_grid_from_box(inst.box[0], inst.box[1], inst.box[2], inst.box[3], s);
  const double delta_s = perturb ? perturb->delta_s : 1.0;
  const double delta_c = perturb ? perturb->delta_c : 0.0;
  const GridSpec scaled = scale_about_center(base, delta_s);
  const NodeMask mask = node_mask_from_raster(scaled, inst.mask);
  if (mask.count() == 0) return std::nullopt;
  GridSpec seeded = base;
  seeded.seed = with_seed_in_mask(scaled, mask).seed;
  return perturb_grid(seeded, delta_s, delta_c, mask, rng);
}

}  // namespace

DatasetEvalResult evaluate_dataset(const CellParams<float>& params, const Dataset& dataset, int s,
                                   double iou_thr, const std::optional<PerturbSetting>& perturb,
                                   std::uint64_t seed, unsigned threads) {
  struct SceneOutcome {
    EvalReport report;
    std::vector<double> paired_ious;
  };
  std::vector<SceneOutcome> outcomes(dataset.scenes.size());

  parallel_for(dataset.scenes.size(), threads, [&](std::size_t si) {
    const Scene& scene = dataset.scenes[si];
    std::vector<DetectionResult> preds;
    std::vector<const Raster*> gts;
    for (std::size_t ii = 0; ii < scene.instances.size(); ++ii) {
      const Instance& inst = scene.instances[ii];
      Rng rng = Rng::substream(seed, si * 64 + ii);
      const auto grid = instance_grid(inst, s, perturb, rng);
      DetectionResult det;
      if (grid) det = detect_instance(params, scene.features, *grid, 1);
      else det.mask = make_raster(scene.features.height, scene.features.width);
      outcomes[si].paired_ious.push_back(mask_iou(det.mask, inst.mask));
      preds.push_back(std::move(det));
      gts.push_back(&inst.mask);
    }
    outcomes[si].report = evaluate(preds, gts, iou_thr);
  });

  DatasetEvalResult out;
  out.report.iou_thr = iou_thr;
  int pred_base = 0, gt_base = 0;
  double iou_sum = 0.0;
  std::size_t iou_n = 0;
  std::size_t n_match = 0;
  for (const auto& oc : outcomes) {
    for (const auto& m : oc.report.matches)
      out.report.matches.push_back({m.pred + pred_base, m.gt + gt_base, m.iou});
    n_match += oc.report.matches.size();
    out.report.n_preds += oc.report.n_preds;
    out.report.n_gts += oc.report.n_gts;
    pred_base += oc.report.n_preds;
    gt_base += oc.report.n_gts;
    for (double v : oc.paired_ious) {
      iou_sum += v;
      ++iou_n;
    }
  }
  out.report.precision =
      out.report.n_preds > 0 ? static_cast<double>(n_match) / out.report.n_preds : 0.0;
  out.report.recall = out.report.n_gts > 0 ? static_cast<double>(n_match) / out.report.n_gts : 0.0;
  out.report.f_score =
      (out.report.precision + out.report.recall) > 0.0
          ? 2.0 * out.report.precision * out.report.recall /
                (out.report.precision + out.report.recall)
          : 0.0;
  out.mean_paired_iou = iou_n > 0 ? iou_sum / static_cast<double>(iou_n) : 0.0;
  return out;
}

std::vector<SweepRow> robustness_sweep(const CellParams<float>& params, const Dataset& dataset,
                                       int s, const std::vector<double>& delta_s_grid,
                                       const std::vector<double>& delta_c_grid, double iou_thr,
                                       std::uint64_t seed, unsigned threads) {
  std::vector<SweepRow> rows;
  std::size_t setting = 0;
  for (const double ds : delta_s_grid) {
    for (const double dc : delta_c_grid) {
      PerturbSetting p{ds, dc};
      const std::uint64_t setting_seed = Rng::substream(seed, setting++).next_u64();
      const DatasetEvalResult res =
          evaluate_dataset(params, dataset, s, iou_thr, p, setting_seed, threads);
      rows.push_back({ds, dc, res.report.precision, res.report.recall, res.report.f_score});
    }
  }
  return rows;
}

void write_eval_report_json(const EvalReport& report, const std::string& config_summary,
                            const std::string& path) {
  nlohmann::json j;
  j["version"] = kVersion;
  j["config"] = config_summary;
  j["iou_thr"] = report.iou_thr;
  j["precision"] = report.precision;
  j["recall"] = report.recall;
  j["f_score"] = report.f_score;
  nlohmann::json matches = nlohmann::json::array();
  for (const auto& m : report.matches)
    matches.push_back({{"pred", m.pred}, {"gt", m.gt}, {"iou", m.iou}});
  j["matches"] = matches;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("write_eval_report_json: cannot open " + path);
  os << j.dump(2) << "\n";
}

namespace {

void write_rows_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "delta_s,delta_c,precision,recall,f_score\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6g,%.6g,%.9g,%.9g,%.9g\n", r.delta_s, r.delta_c,
                  r.precision, r.recall, r.f_score);
    os << buf;
  }
}

}  // namespace

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& config_summary,
                     const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("write_sweep_csv: cannot open " + path);
  os << "# cse " << kVersion << " " << config_summary << "\n";
  write_rows_csv(os, rows);
}

void write_sweep_json(const std::vector<SweepRow>& rows, const std::string& config_summary,
                      const std::string& path) {
  nlohmann::json j;
  j["version"] = kVersion;
  j["config"] = config_summary;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows)
    arr.push_back({{"delta_s", r.delta_s},
                   {"delta_c", r.delta_c},
                   {"precision", r.precision},
                   {"recall", r.recall},
                   {"f_score", r.f_score}});
  j["rows"] = arr;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("write_sweep_json: cannot open " + path);
  os << j.dump(2) << "\n";
}

}  // namespace cse
