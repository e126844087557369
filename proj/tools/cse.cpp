#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cse/eval.hpp"
#include "cse/supervision.hpp"
#include "cse/synth.hpp"
#include "cse/training.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitThreshold = 1;  // gradcheck above tolerance
constexpr int kExitUsage = 2;      // bad flags, unreadable inputs, IO errors

std::pair<int, int> parse_int_range(const std::string& text) {
  const auto pos = text.find("..");
  if (pos == std::string::npos)
    throw std::invalid_argument("expected range of the form A..B: " + text);
  return {std::stoi(text.substr(0, pos)), std::stoi(text.substr(pos + 2))};
}

std::vector<double> parse_sweep_range(const std::string& text) {
  double lo = 0, hi = 0, step = 0;
  char extra = 0;
  if (std::sscanf(text.c_str(), "%lf:%lf:%lf%c", &lo, &hi, &step, &extra) != 3 || step <= 0.0 ||
      hi < lo)
    throw std::invalid_argument("expected range of the form lo:hi:step: " + text);
  std::vector<double> values;
  for (double v = lo; v <= hi + 1e-9; v += step) values.push_back(v);
  return values;
}

std::array<double, 4> parse_box(const std::string& text) {
  std::array<double, 4> box{};
  char extra = 0;
  if (std::sscanf(text.c_str(), "%lf,%lf,%lf,%lf%c", &box[0], &box[1], &box[2], &box[3], &extra) !=
      4)
    throw std::invalid_argument("expected box of the form x,y,w,h: " + text);
  return box;
}

void draw_segment(std::vector<std::uint8_t>& rgb, int h, int w, double x0, double y0, double x1,
                  double y1) {
  const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
    const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
    if (x < 0 || x >= w || y < 0 || y >= h) continue;
    const std::size_t at = (static_cast<std::size_t>(y) * w + x) * 3;
    rgb[at] = 255;
    rgb[at + 1] = 0;
    rgb[at + 2] = 0;
  }
}

int cmd_synth(const std::string& out_dir, int scenes, const std::string& instances,
              double touching_prob, std::uint64_t seed) {
  const auto [lo, hi] = parse_int_range(instances);
  cse::DatasetConfig cfg;
  cfg.scenes = scenes;
  cfg.min_instances = lo;
  cfg.max_instances = hi;
  cfg.touching_prob = touching_prob;
  cfg.seed = seed;
  std::cout << "config: synth out=" << out_dir << " scenes=" << scenes << " instances=" << lo
            << ".." << hi << " touching-prob=" << touching_prob << " rng=" << seed << "\n";
  const cse::Dataset ds = cse::gen_dataset(cfg);
  cse::save_dataset(ds, out_dir, seed);
  std::cout << "wrote " << ds.scenes.size() << " scenes to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const std::string& data_dir, const std::string& out_path, std::string log_path,
              cse::TrainConfig cfg) {
  if (log_path.empty()) log_path = out_path + ".loss.csv";
  const cse::Dataset ds = cse::load_dataset(data_dir);
  if (ds.scenes.empty()) throw std::invalid_argument("train: dataset has no scenes");
  cfg.d_x = ds.scenes[0].features.channels;
  std::cout << "config: train data=" << data_dir << " out=" << out_path << " dim=" << cfg.d
            << " d_x=" << cfg.d_x << " grid=" << cfg.s << " iters=" << cfg.iters
            << " lr=" << cfg.lr0 << " decay=" << cfg.decay << "/" << cfg.decay_every
            << " batch=" << cfg.batch << " rng=" << cfg.seed << " threads=" << cfg.threads
            << "\n";
  const cse::FitResult result = cse::fit(ds, cfg);
  cse::save_checkpoint(result.params, cfg.s, out_path);

  std::ofstream os(log_path, std::ios::binary);
  if (!os) throw cse::FormatError("train: cannot write loss log: " + log_path);
  os << "# cse " << cse::kVersion << " train iters=" << cfg.iters << " lr0=" << cfg.lr0
     << " decay=" << cfg.decay << " decay_every=" << cfg.decay_every << " batch=" << cfg.batch
     << " rng=" << cfg.seed << "\n";
  os << "step,lr,loss\n";
  char buf[96];
  for (const auto& e : result.log) {
    std::snprintf(buf, sizeof(buf), "%d,%.8g,%.9g\n", e.step, e.lr, e.loss);
    os << buf;
  }
  if (!result.log.empty())
    std::cout << "final loss " << result.log.back().loss << " at step " << result.log.back().step
              << "\n";
  std::cout << "wrote checkpoint " << out_path << " and log " << log_path << "\n";
  return kExitOk;
}

int cmd_infer(const std::string& model_path, const std::string& scene_path,
              const std::string& box_text, const std::string& seed_node_text,
              const std::string& heatmap_path, const std::string& overlay_path,
              const std::string& polygon_path, unsigned threads) {
  const cse::Checkpoint ckpt = cse::load_checkpoint(model_path);
  const cse::FeatureMap features = cse::read_feature_map(scene_path);
  if (features.channels != ckpt.params.d_x)
    throw std::invalid_argument("infer: scene feature width does not match the model");
  const auto box = parse_box(box_text);
  cse::GridSpec grid = cse::build_grid_from_box(box[0], box[1], box[2], box[3], ckpt.s);
  if (!seed_node_text.empty()) {
    int r = 0, c = 0;
    char extra = 0;
    if (std::sscanf(seed_node_text.c_str(), "%d,%d%c", &r, &c, &extra) != 2)
      throw std::invalid_argument("infer: expected --seed-node r,c");
    if (r < 0 || r >= grid.rows || c < 0 || c >= grid.cols)
      throw std::invalid_argument("infer: seed node outside grid");
    grid.seed = {r, c};
  }
  std::cout << "config: infer model=" << model_path << " scene=" << scene_path
            << " box=" << box_text << " grid=" << ckpt.s << " seed=" << grid.seed.r << ","
            << grid.seed.c << " threads=" << threads << "\n";

  const cse::SectionPlan plan = cse::compute_sections(grid);
  const cse::SampledGrid<float> sampled = cse::bilinear_sample<float>(features, grid);
  cse::ForwardOptions opts;
  opts.threads = threads;
  const cse::GridState<float> state = cse::forward(ckpt.params, sampled, plan, opts);
  const cse::MergeResult merge = cse::extract_region(state, plan);
  const cse::Raster mask = cse::nodes_to_mask(merge, grid, features.height, features.width);

  cse::Polygon polygon;
  auto contours = cse::trace_contour(mask);
  if (!contours.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < contours.size(); ++i)
      if (std::abs(cse::polygon_area(contours[i])) > std::abs(cse::polygon_area(contours[best])))
        best = i;
    polygon = contours[best];
  }
  double score = 0.0;
  for (int id = 0; id < grid.node_count(); ++id)
    if (merge.merged[id]) score += state.outs[id].y.maxCoeff();
  if (merge.count > 0) score /= merge.count;

  if (!heatmap_path.empty()) {
    std::vector<std::uint8_t> gray(static_cast<std::size_t>(grid.rows) * grid.cols, 0);
    for (int id = 0; id < grid.node_count(); ++id)
      if (merge.merged[id])
        gray[id] = static_cast<std::uint8_t>(std::lround(255.0 * state.outs[id].y.maxCoeff()));
    cse::write_pgm_gray(gray, grid.rows, grid.cols, heatmap_path);
  }
  if (!overlay_path.empty()) {
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(features.height) * features.width * 3);
    for (int r = 0; r < features.height; ++r)
      for (int c = 0; c < features.width; ++c) {
        const float v = std::min(1.0f, std::max(0.0f, features.at(r, c, 0)));
        const auto g = static_cast<std::uint8_t>(std::lround(255.0f * v));
        const std::size_t at = (static_cast<std::size_t>(r) * features.width + c) * 3;
        rgb[at] = rgb[at + 1] = rgb[at + 2] = g;
      }
    for (std::size_t i = 0; i < polygon.size(); ++i) {
      const auto& a = polygon[i];
      const auto& b = polygon[(i + 1) % polygon.size()];
      draw_segment(rgb, features.height, features.width, a[0], a[1], b[0], b[1]);
    }
    cse::write_ppm_rgb(rgb, features.height, features.width, overlay_path);
  }
  if (!polygon_path.empty()) {
    nlohmann::json j;
    j["version"] = cse::kVersion;
    j["config"] = "infer box=" + box_text + " grid=" + std::to_string(ckpt.s);
    j["score"] = score;
    nlohmann::json verts = nlohmann::json::array();
    for (const auto& p : polygon) verts.push_back({p[0], p[1]});
    j["vertices"] = verts;
    std::ofstream os(polygon_path, std::ios::binary);
    if (!os) throw cse::FormatError("infer: cannot write " + polygon_path);
    os << j.dump(2) << "\n";
  }
  std::cout << "merged " << merge.count << " nodes, score " << score << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& data_dir, double iou_thr,
             const std::string& out_path, std::uint64_t seed, unsigned threads) {
  const cse::Checkpoint ckpt = cse::load_checkpoint(model_path);
  const cse::Dataset ds = cse::load_dataset(data_dir);
  if (ds.scenes.empty()) throw std::invalid_argument("eval: dataset has no scenes");
  std::ostringstream cfg;
  cfg << "eval model=" << model_path << " data=" << data_dir << " iou=" << iou_thr
      << " rng=" << seed << " threads=" << threads;
  std::cout << "config: " << cfg.str() << "\n";
  const cse::DatasetEvalResult res =
      cse::evaluate_dataset(ckpt.params, ds, ckpt.s, iou_thr, std::nullopt, seed, threads);
  if (!out_path.empty()) cse::write_eval_report_json(res.report, cfg.str(), out_path);
  std::printf("precision %.4f recall %.4f f %.4f mean-iou %.4f\n", res.report.precision,
              res.report.recall, res.report.f_score, res.mean_paired_iou);
  return kExitOk;
}

int cmd_sweep(const std::string& model_path, const std::string& data_dir, const std::string& ds_range,
              const std::string& dc_range, double iou_thr, std::uint64_t seed,
              const std::string& csv_path, const std::string& json_path, unsigned threads) {
  const cse::Checkpoint ckpt = cse::load_checkpoint(model_path);
  const cse::Dataset ds = cse::load_dataset(data_dir);
  if (ds.scenes.empty()) throw std::invalid_argument("sweep: dataset has no scenes");
  const std::vector<double> ds_grid = parse_sweep_range(ds_range);
  const std::vector<double> dc_grid = parse_sweep_range(dc_range);
  std::ostringstream cfg;
  cfg << "sweep model=" << model_path << " data=" << data_dir << " ds=" << ds_range
      << " dc=" << dc_range << " iou=" << iou_thr << " rng=" << seed << " threads=" << threads;
  std::cout << "config: " << cfg.str() << "\n";
  const auto rows =
      cse::robustness_sweep(ckpt.params, ds, ckpt.s, ds_grid, dc_grid, iou_thr, seed, threads);
  if (!csv_path.empty()) cse::write_sweep_csv(rows, cfg.str(), csv_path);
  if (!json_path.empty()) cse::write_sweep_json(rows, cfg.str(), json_path);
  for (const auto& r : rows)
    std::printf("ds %.3f dc %.3f precision %.4f recall %.4f f %.4f\n", r.delta_s, r.delta_c,
                r.precision, r.recall, r.f_score);
  return kExitOk;
}

int cmd_gradcheck(int grid, int dim, int dx, double eps, std::uint64_t seed, int coords,
                  double tol) {
  cse::GradCheckConfig cfg;
  cfg.s = grid;
  cfg.d = dim;
  cfg.d_x = dx;
  cfg.eps = eps;
  cfg.seed = seed;
  cfg.max_coords = static_cast<std::size_t>(coords);
  std::cout << "config: gradcheck grid=" << grid << " dim=" << dim << " dx=" << dx
            << " eps=" << eps << " rng=" << seed << " coords=" << coords << " tol=" << tol
            << "\n";
  const cse::GradCheckReport rep = cse::grad_check(cfg);
  std::printf("checked %zu coordinates: max rel error %.3e, mean rel error %.3e\n",
              rep.coords_checked, rep.max_rel_error, rep.mean_rel_error);
  return rep.max_rel_error < tol ? kExitOk : kExitThreshold;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cse: seeded conditional region expansion over sampled feature grids"};
  app.require_subcommand(1);
  const unsigned hw_threads = cse::default_threads();

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic ribbon dataset");
  std::string synth_out;
  int synth_scenes = 10;
  std::string synth_instances = "1..1";
  double synth_touch = 0.0;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--scenes", synth_scenes, "number of scenes");
  synth->add_option("--instances", synth_instances, "instances per scene, A..B");
  synth->add_option("--touching-prob", synth_touch, "probability of a touching pair");
  synth->add_option("--rng", synth_seed, "random seed");

  // train
  auto* train = app.add_subcommand("train", "train a model on a dataset directory");
  std::string train_data, train_out, train_log;
  cse::TrainConfig tcfg;
  tcfg.threads = hw_threads;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "checkpoint output path")->required();
  train->add_option("--dim", tcfg.d, "state width d");
  train->add_option("--grid", tcfg.s, "sampling grid size S");
  train->add_option("--iters", tcfg.iters, "training iterations");
  train->add_option("--lr", tcfg.lr0, "initial learning rate");
  train->add_option("--decay", tcfg.decay, "learning-rate decay factor");
  train->add_option("--decay-every", tcfg.decay_every, "iterations per decay step");
  train->add_option("--batch", tcfg.batch, "samples per step");
  train->add_option("--rng", tcfg.seed, "random seed");
  train->add_option("--log", train_log, "loss log CSV path (default: <out>.loss.csv)");
  train->add_option("--threads", tcfg.threads, "worker threads");

  // infer
  auto* infer = app.add_subcommand("infer", "run seeded extraction on one scene");
  std::string infer_model, infer_scene, infer_box, infer_seed_node, infer_heatmap, infer_overlay,
      infer_polygon;
  unsigned infer_threads = hw_threads;
  infer->add_option("--model", infer_model, "checkpoint path")->required();
  infer->add_option("--scene", infer_scene, "CSEF feature file")->required();
  infer->add_option("--box", infer_box, "proposal box x,y,w,h")->required();
  infer->add_option("--seed-node", infer_seed_node, "seed node override r,c");
  infer->add_option("--heatmap", infer_heatmap, "merge-confidence PGM output");
  infer->add_option("--overlay", infer_overlay, "scene overlay PPM output");
  infer->add_option("--polygon", infer_polygon, "polygon JSON output");
  infer->add_option("--threads", infer_threads, "worker threads");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a model on a dataset");
  std::string eval_model, eval_data, eval_out;
  double eval_iou = 0.5;
  std::uint64_t eval_seed = 0;
  unsigned eval_threads = hw_threads;
  eval->add_option("--model", eval_model, "checkpoint path")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--iou", eval_iou, "IoU matching threshold");
  eval->add_option("--out", eval_out, "report JSON path");
  eval->add_option("--rng", eval_seed, "random seed");
  eval->add_option("--threads", eval_threads, "worker threads");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "rescaling/relocation robustness sweep");
  std::string sweep_model, sweep_data, sweep_ds = "1.0:2.0:0.25", sweep_dc = "0.0:1.0:0.25";
  std::string sweep_csv, sweep_json;
  double sweep_iou = 0.5;
  std::uint64_t sweep_seed = 0;
  unsigned sweep_threads = hw_threads;
  sweep->add_option("--model", sweep_model, "checkpoint path")->required();
  sweep->add_option("--data", sweep_data, "dataset directory")->required();
  sweep->add_option("--ds", sweep_ds, "rescale factors lo:hi:step");
  sweep->add_option("--dc", sweep_dc, "relocation factors lo:hi:step");
  sweep->add_option("--iou", sweep_iou, "IoU matching threshold");
  sweep->add_option("--rng", sweep_seed, "random seed");
  sweep->add_option("--out-csv", sweep_csv, "sweep CSV path");
  sweep->add_option("--out-json", sweep_json, "sweep JSON path");
  sweep->add_option("--threads", sweep_threads, "worker threads");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  int gc_grid = 7, gc_dim = 8, gc_dx = 6, gc_coords = 500;
  double gc_eps = 1e-4, gc_tol = 1e-4;
  std::uint64_t gc_seed = 42;
  gradcheck->add_option("--grid", gc_grid, "grid size S");
  gradcheck->add_option("--dim", gc_dim, "state width d");
  gradcheck->add_option("--dx", gc_dx, "feature width d_x");
  gradcheck->add_option("--eps", gc_eps, "finite-difference step");
  gradcheck->add_option("--rng", gc_seed, "random seed");
  gradcheck->add_option("--coords", gc_coords, "parameter coordinates to probe");
  gradcheck->add_option("--tol", gc_tol, "max relative error tolerance");

  try {
    app.parse(argc, argv);
    if (synth->parsed())
      return cmd_synth(synth_out, synth_scenes, synth_instances, synth_touch, synth_seed);
    if (train->parsed()) return cmd_train(train_data, train_out, train_log, tcfg);
    if (infer->parsed())
      return cmd_infer(infer_model, infer_scene, infer_box, infer_seed_node, infer_heatmap,
                       infer_overlay, infer_polygon, infer_threads);
    if (eval->parsed())
      return cmd_eval(eval_model, eval_data, eval_iou, eval_out, eval_seed, eval_threads);
    if (sweep->parsed())
      return cmd_sweep(sweep_model, sweep_data, sweep_ds, sweep_dc, sweep_iou, sweep_seed,
                       sweep_csv, sweep_json, sweep_threads);
    if (gradcheck->parsed())
      return cmd_gradcheck(gc_grid, gc_dim, gc_dx, gc_eps, gc_seed, gc_coords, gc_tol);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
