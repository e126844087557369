#ifndef CSE_EVAL_HPP_
#define CSE_EVAL_HPP_

#include <optional>
#include <string>
#include <vector>

#include "cse/engine.hpp"
#include "cse/raster.hpp"
#include "cse/synth.hpp"

namespace cse {

// Paints, for every merged node, the step_x x step_y cell centered on its
// sample point, clipped to the image.
Raster nodes_to_mask(const MergeResult& merge, const GridSpec& grid, int height, int width);

// Outer boundaries of the 4-connected components, one counter-clockwise
// polygon each, traced along pixel edges (a single pixel yields its unit
// square). Holes are ignored.
std::vector<Polygon> trace_contour(const Raster& mask);

double polygon_area(const Polygon& poly);

// Even-odd scanline fill of a polygon at pixel centers.
Raster rasterize_polygon(const Polygon& poly, int height, int width);

double mask_iou(const Raster& a, const Raster& b);

struct DetectionResult {
  Raster mask;
  Polygon polygon;
  double score = 0.0;  // mean max(y) over merged nodes
};

struct MatchRecord {
  int pred = -1;
  int gt = -1;
  double iou = 0.0;
};

struct EvalReport {
  double iou_thr = 0.5;
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
  int n_preds = 0;
  int n_gts = 0;
  std::vector<MatchRecord> matches;
};

// Greedy matching in descending prediction score; every ground truth matches
// at most once.
EvalReport evaluate(const std::vector<DetectionResult>& preds,
                    const std::vector<const Raster*>& gts, double iou_thr);

// Node mask sampled from an image-space raster at the grid node positions
// (nearest pixel).
NodeMask node_mask_from_raster(const GridSpec& grid, const Raster& raster);

// Moves the seed to the in-mask node closest to the grid center when the
// current seed falls outside the mask (possible for curved instances whose
// box center lies off the region).
GridSpec with_seed_in_mask(const GridSpec& grid, const NodeMask& mask);

// Full single-instance pipeline: sample, propagate, extract, map back.
DetectionResult detect_instance(const CellParams<float>& params, const FeatureMap& features,
                                const GridSpec& grid, unsigned threads = 1);

struct PerturbSetting {
  double delta_s = 1.0;
  double delta_c = 0.0;
};

struct DatasetEvalResult {
  EvalReport report;
  double mean_paired_iou = 0.0;  // mean IoU of each seeded extraction vs its own instance
};

// Evaluates seeded extraction on every instance of every scene, optionally
// perturbing the ground-truth grids first. s is the sampling grid size.
DatasetEvalResult evaluate_dataset(const CellParams<float>& params, const Dataset& dataset, int s,
                                   double iou_thr, const std::optional<PerturbSetting>& perturb,
                                   std::uint64_t seed, unsigned threads);

struct SweepRow {
  double delta_s = 1.0;
  double delta_c = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
};

std::vector<SweepRow> robustness_sweep(const CellParams<float>& params, const Dataset& dataset,
                                       int s, const std::vector<double>& delta_s_grid,
                                       const std::vector<double>& delta_c_grid, double iou_thr,
                                       std::uint64_t seed, unsigned threads);

// Report serialization; both carry the artifact version and the resolved
// configuration for provenance.
void write_eval_report_json(const EvalReport& report, const std::string& config_summary,
                            const std::string& path);
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& config_summary,
                     const std::string& path);
void write_sweep_json(const std::vector<SweepRow>& rows, const std::string& config_summary,
                      const std::string& path);

}  // namespace cse

#endif  // CSE_EVAL_HPP_
