#include "cse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>

#include <json.hpp>

#include "cse/eval.hpp"

namespace cse {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Polyline {
  std::vector<Point> points;
  std::vector<double> half_widths;
};

Point catmull_rom(const Point& p0, const Point& p1, const Point& p2, const Point& p3, double t) {
  const double t2 = t * t, t3 = t2 * t;
  Point out;
  for (int k = 0; k < 2; ++k) {
    out[k] = 0.5 * ((2.0 * p1[k]) + (-p0[k] + p2[k]) * t +
                    (2.0 * p0[k] - 5.0 * p1[k] + 4.0 * p2[k] - p3[k]) * t2 +
                    (-p0[k] + 3.0 * p1[k] - 3.0 * p2[k] + p3[k]) * t3);
  }
  return out;
}

Polyline densify(const std::vector<Point>& ctrl, const std::vector<double>& hw, int samples) {
  Polyline out;
  out.points.reserve(samples);
  out.half_widths.reserve(samples);
  const int n_seg = static_cast<int>(ctrl.size()) - 1;
  for (int i = 0; i < samples; ++i) {
    const double u = static_cast<double>(i) / (samples - 1) * n_seg;
    int seg = std::min(static_cast<int>(u), n_seg - 1);
    const double t = u - seg;
    const auto& p0 = ctrl[static_cast<std::size_t>(std::max(seg - 1, 0))];
    const auto& p1 = ctrl[seg];
    const auto& p2 = ctrl[seg + 1];
    const auto& p3 = ctrl[static_cast<std::size_t>(std::min(seg + 2, n_seg))];
    out.points.push_back(catmull_rom(p0, p1, p2, p3, t));
    out.half_widths.push_back(hw[seg] * (1.0 - t) + hw[seg + 1] * t);
  }
  return out;
}

double polyline_length(const std::vector<Point>& pts) {
  double len = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    len += std::hypot(pts[i][0] - pts[i - 1][0], pts[i][1] - pts[i - 1][1]);
  return len;
}

// Distant-in-arc samples must stay apart in space; keeps the swept band from
// nearly touching itself, which would make grid-level instance boundaries
// ambiguous.
bool self_clear(const Polyline& line, double arc_step) {
  const std::size_t n = line.points.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double arc = static_cast<double>(j - i) * arc_step;
      const double reach = 2.5 * (line.half_widths[i] + line.half_widths[j]);
      if (arc <= reach) continue;
      const double dist = std::hypot(line.points[j][0] - line.points[i][0],
                                     line.points[j][1] - line.points[i][1]);
      if (dist < line.half_widths[i] + line.half_widths[j] + 4.0) return false;
    }
  }
  return true;
}

void stamp_disc(Raster& mask, double x, double y, double radius) {
  const int r0 = std::max(0, static_cast<int>(std::ceil(y - radius)));
  const int r1 = std::min(mask.height - 1, static_cast<int>(std::floor(y + radius)));
  const int c0 = std::max(0, static_cast<int>(std::ceil(x - radius)));
  const int c1 = std::min(mask.width - 1, static_cast<int>(std::floor(x + radius)));
  const double rr = radius * radius;
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c)
      if ((c - x) * (c - x) + (r - y) * (r - y) <= rr) mask.set(r, c, true);
}

struct Bounds {
  double min_x, max_x, min_y, max_y;
};

Bounds sweep_bounds(const Polyline& line) {
  Bounds b{1e18, -1e18, 1e18, -1e18};
  for (std::size_t i = 0; i < line.points.size(); ++i) {
    const double hw = line.half_widths[i];
    b.min_x = std::min(b.min_x, line.points[i][0] - hw);
    b.max_x = std::max(b.max_x, line.points[i][0] + hw);
    b.min_y = std::min(b.min_y, line.points[i][1] - hw);
    b.max_y = std::max(b.max_y, line.points[i][1] + hw);
  }
  return b;
}

std::optional<Raster> translate_mask(const Raster& mask, int dr, int dc) {
  Raster out = make_raster(mask.height, mask.width);
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      if (!mask.at(r, c)) continue;
      const int nr = r + dr, nc = c + dc;
      if (!out.in_bounds(nr, nc)) return std::nullopt;
      out.set(nr, nc, true);
    }
  }
  return out;
}

Point mask_centroid(const Raster& mask) {
  double sr = 0, sc = 0, n = 0;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c)
      if (mask.at(r, c)) {
        sr += r;
        sc += c;
        ++n;
      }
  return {sc / n, sr / n};
}

void box3_blur(std::vector<float>& img, int h, int w) {
  std::vector<float> tmp(img.size());
  auto clampi = [](int v, int lo, int hi) { return std::min(std::max(v, lo), hi); };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      float sum = 0.0f;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc)
          sum += img[static_cast<std::size_t>(clampi(r + dr, 0, h - 1)) * w +
                     clampi(c + dc, 0, w - 1)];
      tmp[static_cast<std::size_t>(r) * w + c] = sum / 9.0f;
    }
  img.swap(tmp);
}

}  // namespace

Ribbon gen_ribbon(Rng& rng, const RibbonConfig& cfg) {
  if (cfg.canvas_h < 64 || cfg.canvas_w < 64)
    throw std::invalid_argument("gen_ribbon: canvas must be at least 64x64");
  if (cfg.halfwidth_lo <= 0 || cfg.halfwidth_hi < cfg.halfwidth_lo ||
      cfg.length_hi < cfg.length_lo || cfg.curvature_hi < cfg.curvature_lo ||
      cfg.curvature_lo < 0)
    throw std::invalid_argument("gen_ribbon: malformed parameter ranges");

  const double margin = 2.0;
  for (int attempt = 0; attempt < 200; ++attempt) {
    const double hw_base = rng.uniform(cfg.halfwidth_lo, cfg.halfwidth_hi);
    double length = rng.uniform(cfg.length_lo, cfg.length_hi);
    // text-like elongation: at least ~4x the nominal width (and well past the
    // 2x-max-width floor)
    length = std::max(length, 8.4 * hw_base);

    const int n_ctrl = std::max(4, static_cast<int>(std::lround(length / 30.0)) + 1);
    const double ds = length / (n_ctrl - 1);
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;

    std::vector<Point> ctrl(n_ctrl);
    std::vector<double> hw(n_ctrl);
    double theta = rng.uniform(0.0, 2.0 * M_PI);
    ctrl[0] = {0.0, 0.0};
    hw[0] = hw_base * rng.uniform(0.8, 1.2);
    double total_turn = 0.0;
    for (int i = 1; i < n_ctrl; ++i) {
      const double kappa = sign * rng.uniform(cfg.curvature_lo, cfg.curvature_hi);
      theta += kappa * ds;
      total_turn += std::abs(kappa) * ds;
      ctrl[i] = {ctrl[i - 1][0] + ds * std::cos(theta), ctrl[i - 1][1] + ds * std::sin(theta)};
      hw[i] = hw_base * rng.uniform(0.8, 1.2);
    }
    if (total_turn > 4.0) continue;  // overly coiled shapes risk self-contact

    const int n_dense = std::max(64, static_cast<int>(std::lround(length * 2.0)));
    Polyline line = densify(ctrl, hw, n_dense);
    const double arc_step = polyline_length(line.points) / (n_dense - 1);
    if (!self_clear(line, arc_step)) continue;

    const double max_hw = *std::max_element(line.half_widths.begin(), line.half_widths.end());
    if (polyline_length(line.points) <= 4.0 * max_hw) continue;

    const Bounds b = sweep_bounds(line);
    const double span_x = b.max_x - b.min_x, span_y = b.max_y - b.min_y;
    if (span_x > cfg.canvas_w - 1 - 2 * margin || span_y > cfg.canvas_h - 1 - 2 * margin)
      continue;
    const double off_x = rng.uniform(margin - b.min_x, (cfg.canvas_w - 1 - margin) - b.max_x);
    const double off_y = rng.uniform(margin - b.min_y, (cfg.canvas_h - 1 - margin) - b.max_y);
    for (auto& p : ctrl) {
      p[0] += off_x;
      p[1] += off_y;
    }
    for (auto& p : line.points) {
      p[0] += off_x;
      p[1] += off_y;
    }

    Raster mask = make_raster(cfg.canvas_h, cfg.canvas_w);
    for (std::size_t i = 0; i < line.points.size(); ++i)
      stamp_disc(mask, line.points[i][0], line.points[i][1], line.half_widths[i]);
    fill_holes(mask);

    std::vector<int> labels;
    if (mask.count() == 0 || label_components(mask, labels) != 1) continue;

    Ribbon out;
    out.spec.centerline = std::move(ctrl);
    out.spec.half_widths = std::move(hw);
    out.spec.smoothing = n_dense;
    out.mask = std::move(mask);
    return out;
  }
  throw std::invalid_argument("gen_ribbon: parameter ranges infeasible for canvas");
}

namespace {

Raster union_of(const std::vector<Raster>& masks) {
  Raster u = make_raster(masks[0].height, masks[0].width);
  for (const auto& m : masks)
    for (std::size_t i = 0; i < m.data.size(); ++i)
      if (m.data[i]) u.data[i] = 1;
  return u;
}

Instance make_instance(Raster mask) {
  Instance inst;
  int min_r = mask.height, max_r = -1, min_c = mask.width, max_c = -1;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c)
      if (mask.at(r, c)) {
        min_r = std::min(min_r, r);
        max_r = std::max(max_r, r);
        min_c = std::min(min_c, c);
        max_c = std::max(max_c, c);
      }
  inst.box = {static_cast<double>(min_c), static_cast<double>(min_r),
              static_cast<double>(max_c - min_c), static_cast<double>(max_r - min_r)};
  auto contours = trace_contour(mask);
  std::size_t best = 0;
  for (std::size_t i = 1; i < contours.size(); ++i)
    if (std::abs(polygon_area(contours[i])) > std::abs(polygon_area(contours[best]))) best = i;
  inst.polygon = std::move(contours[best]);
  inst.mask = std::move(mask);
  return inst;
}

}  // namespace

Scene gen_scene(Rng& rng, int n_instances, bool touching, const SceneConfig& cfg) {
  if (n_instances < 1 || n_instances > 4)
    throw std::invalid_argument("gen_scene: n_instances must be in [1, 4]");

  SceneConfig conf = cfg;
  for (int shrink = 0; shrink < 4; ++shrink) {
    std::vector<Raster> masks;
    masks.push_back(gen_ribbon(rng, conf.ribbon).mask);
    bool ok = true;
    for (int i = 1; i < n_instances && ok; ++i) {
      const bool want_touch = touching && i == 1;
      bool placed = false;
      for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
        Raster cand = gen_ribbon(rng, conf.ribbon).mask;
        if (want_touch) {
          // slide the candidate toward the first instance until the gap
          // closes into (0, touch_gap]
          const Point from = mask_centroid(cand);
          const Point to = mask_centroid(masks[0]);
          const double norm = std::hypot(to[0] - from[0], to[1] - from[1]);
          if (norm < 1.0) continue;
          const double ux = (to[0] - from[0]) / norm, uy = (to[1] - from[1]) / norm;
          for (int step = 0; step < 600; ++step) {
            const int dc = static_cast<int>(std::lround(ux * step));
            const int dr = static_cast<int>(std::lround(uy * step));
            auto moved = translate_mask(cand, dr, dc);
            if (!moved) break;
            const double gap = min_mask_distance(masks[0], *moved);
            if (gap <= 0.0) break;  // overlapped; previous steps missed the window
            bool clear_others = true;
            for (std::size_t j = 1; j < masks.size(); ++j)
              if (min_mask_distance(masks[j], *moved) <= conf.clear_gap) clear_others = false;
            if (gap <= conf.touch_gap && clear_others) {
              masks.push_back(std::move(*moved));
              placed = true;
              break;
            }
          }
        } else {
          double gap = std::numeric_limits<double>::infinity();
          for (const auto& m : masks) gap = std::min(gap, min_mask_distance(m, cand));
          if (gap > conf.clear_gap) {
            masks.push_back(std::move(cand));
            placed = true;
          }
        }
      }
      ok = placed;
    }
    if (!ok) {
      conf.ribbon.length_lo *= 0.8;
      conf.ribbon.length_hi *= 0.8;
      conf.ribbon.halfwidth_lo *= 0.85;
      conf.ribbon.halfwidth_hi *= 0.85;
      continue;
    }

    Scene scene;
    std::vector<const Raster*> mask_ptrs;
    for (const auto& m : masks) mask_ptrs.push_back(&m);
    scene.features = render_features(mask_ptrs, conf.noise_sigma, rng);
    for (auto& m : masks) scene.instances.push_back(make_instance(std::move(m)));
    return scene;
  }
  throw std::runtime_error("gen_scene: instance placement failed");
}

FeatureMap render_features(const std::vector<const Raster*>& masks, double sigma, Rng& rng,
                           int channels) {
  if (channels != 8) throw std::invalid_argument("render_features: channel layout is fixed at 8");
  if (masks.empty()) throw std::invalid_argument("render_features: no masks");
  const int h = masks[0]->height, w = masks[0]->width;
  Raster u = make_raster(h, w);
  for (const Raster* m : masks) {
    if (m->height != h || m->width != w)
      throw std::invalid_argument("render_features: mask dimensions mismatch");
    for (std::size_t i = 0; i < m->data.size(); ++i)
      if (m->data[i]) u.data[i] = 1;
  }

  FeatureMap map = make_feature_map(h, w, 8);
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  std::vector<float> occ(plane);
  for (std::size_t i = 0; i < plane; ++i) occ[i] = u.data[i] ? 1.0f : 0.0f;

  std::vector<float> blur = occ;
  box3_blur(blur, h, w);
  box3_blur(blur, h, w);

  Raster inv = make_raster(h, w);
  for (std::size_t i = 0; i < plane; ++i) inv.data[i] = u.data[i] ? 0 : 1;
  const std::vector<double> d2_to_fg = squared_distance_transform(u);
  const std::vector<double> d2_to_bg = squared_distance_transform(inv);

  auto clampi = [](int v, int lo, int hi) { return std::min(std::max(v, lo), hi); };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      map.at(r, c, 0) = occ[i];
      map.at(r, c, 1) = blur[i];
      const double sd = u.data[i] ? std::sqrt(d2_to_bg[i]) : -std::sqrt(d2_to_fg[i]);
      map.at(r, c, 2) = static_cast<float>(std::clamp(sd, -8.0, 8.0) / 8.0);
      const float gx = (blur[static_cast<std::size_t>(r) * w + clampi(c + 1, 0, w - 1)] -
                        blur[static_cast<std::size_t>(r) * w + clampi(c - 1, 0, w - 1)]) /
                       2.0f;
      const float gy = (blur[static_cast<std::size_t>(clampi(r + 1, 0, h - 1)) * w + c] -
                        blur[static_cast<std::size_t>(clampi(r - 1, 0, h - 1)) * w + c]) /
                       2.0f;
      map.at(r, c, 3) = gx;
      map.at(r, c, 4) = gy;
    }
  }
  if (sigma > 0.0) {
    for (int ch = 0; ch < 5; ++ch)
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
          map.at(r, c, ch) += static_cast<float>(sigma * rng.normal());
  }
  for (int ch = 5; ch < 8; ++ch)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) map.at(r, c, ch) = static_cast<float>(rng.normal());
  return map;
}

Dataset gen_dataset(const DatasetConfig& cfg) {
  if (cfg.scenes < 1) throw std::invalid_argument("gen_dataset: need at least one scene");
  if (cfg.min_instances < 1 || cfg.max_instances > 4 || cfg.min_instances > cfg.max_instances)
    throw std::invalid_argument("gen_dataset: instance range must lie within [1, 4]");
  Dataset ds;
  ds.scenes.resize(cfg.scenes);
  for (int i = 0; i < cfg.scenes; ++i) {
    Rng rng = Rng::substream(cfg.seed, static_cast<std::uint64_t>(i));
    const int n =
        static_cast<int>(rng.uniform_int(cfg.min_instances, cfg.max_instances));
    const bool touching = n >= 2 && rng.uniform() < cfg.touching_prob;
    ds.scenes[i] = gen_scene(rng, n, touching, cfg.scene);
  }
  return ds;
}

namespace {

std::string scene_feature_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%05d.csef", i);
  return buf;
}

std::string scene_mask_name(int i, int j) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "scene_%05d_mask_%02d.pgm", i, j);
  return buf;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& dir, std::uint64_t seed) {
  fs::create_directories(dir);
  json manifest;
  manifest["version"] = 1;
  manifest["generator"] = std::string("cse-synth ") + kVersion;
  manifest["seed"] = seed;
  json scenes = json::array();
  for (std::size_t i = 0; i < dataset.scenes.size(); ++i) {
    const Scene& scene = dataset.scenes[i];
    const std::string feat = scene_feature_name(static_cast<int>(i));
    write_feature_map(scene.features, (fs::path(dir) / feat).string());
    json jscene;
    jscene["id"] = i;
    jscene["feature_file"] = feat;
    json insts = json::array();
    for (std::size_t j = 0; j < scene.instances.size(); ++j) {
      const Instance& inst = scene.instances[j];
      const std::string mask = scene_mask_name(static_cast<int>(i), static_cast<int>(j));
      write_pgm(inst.mask, (fs::path(dir) / mask).string());
      json jinst;
      json poly = json::array();
      for (const auto& p : inst.polygon) poly.push_back({p[0], p[1]});
      jinst["polygon"] = poly;
      jinst["box"] = {inst.box[0], inst.box[1], inst.box[2], inst.box[3]};
      jinst["mask_file"] = mask;
      insts.push_back(jinst);
    }
    jscene["instances"] = insts;
    scenes.push_back(jscene);
  }
  manifest["scenes"] = scenes;
  std::ofstream os(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!os) throw FormatError("save_dataset: cannot write manifest in " + dir);
  os << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream is(manifest_path, std::ios::binary);
  if (!is) throw FormatError("load_dataset: missing manifest.json in " + dir);
  json manifest;
  try {
    is >> manifest;
  } catch (const json::exception& e) {
    throw FormatError("load_dataset: malformed manifest.json: " + std::string(e.what()));
  }
  try {
    if (manifest.at("version").get<int>() != 1)
      throw FormatError("load_dataset: unsupported manifest version");
    Dataset ds;
    for (const auto& jscene : manifest.at("scenes")) {
      Scene scene;
      scene.features =
          read_feature_map((fs::path(dir) / jscene.at("feature_file").get<std::string>()).string());
      for (const auto& jinst : jscene.at("instances")) {
        Instance inst;
        for (const auto& jp : jinst.at("polygon"))
          inst.polygon.push_back({jp.at(0).get<double>(), jp.at(1).get<double>()});
        const auto& jbox = jinst.at("box");
        inst.box = {jbox.at(0).get<double>(), jbox.at(1).get<double>(), jbox.at(2).get<double>(),
                    jbox.at(3).get<double>()};
        inst.mask = read_pgm((fs::path(dir) / jinst.at("mask_file").get<std::string>()).string());
        scene.instances.push_back(std::move(inst));
      }
      ds.scenes.push_back(std::move(scene));
    }
    return ds;
  } catch (const json::exception& e) {
    throw FormatError("load_dataset: manifest schema error: " + std::string(e.what()));
  }
}

}  // namespace cse
