#ifndef CSE_SYNTH_HPP_
#define CSE_SYNTH_HPP_

#include <array>
#include <string>
#include <vector>

#include "cse/feature_map.hpp"
#include "cse/raster.hpp"

namespace cse {

using Point = std::array<double, 2>;  // x, y in pixels
using Polygon = std::vector<Point>;

// A smooth curved band: spline centerline swept by a half-width profile.
struct RibbonSpec {
  std::vector<Point> centerline;      // >= 4 control points
  std::vector<double> half_widths;    // one per control point, > 0
  int smoothing = 0;                  // dense spline samples used for sweeping
};

struct RibbonConfig {
  int canvas_h = 256;
  int canvas_w = 256;
  double curvature_lo = 0.001;  // 1/px
  double curvature_hi = 0.010;
  double halfwidth_lo = 14.0;
  double halfwidth_hi = 20.0;
  double length_lo = 130.0;
  double length_hi = 215.0;
};

struct Ribbon {
  RibbonSpec spec;
  Raster mask;
};

// Generates one in-bounds, 4-connected, hole-free ribbon at a random pose.
Ribbon gen_ribbon(Rng& rng, const RibbonConfig& cfg);

struct Instance {
  Polygon polygon;
  std::array<double, 4> box{};  // x, y, w, h (tight, pixel-center units)
  Raster mask;
};

struct Scene {
  FeatureMap features;
  std::vector<Instance> instances;
};

struct SceneConfig {
  RibbonConfig ribbon;
  int feature_channels = 8;
  double noise_sigma = 0.1;
  // disjoint instances closer than this gap count as touching
  double touch_gap = 3.0;
  double clear_gap = 5.0;  // enforced spacing for non-touching pairs
};

// Places n disjoint ribbons; when touching is set, at least one pair is left
// with a boundary gap in (0, touch_gap].
Scene gen_scene(Rng& rng, int n_instances, bool touching, const SceneConfig& cfg = {});

// Instance-agnostic feature rendering from the union of masks: occupancy,
// blurred occupancy, clamped signed distance, blur gradients, then pure noise
// channels. Gaussian noise of deviation sigma is added to channels 0..4.
FeatureMap render_features(const std::vector<const Raster*>& masks, double sigma, Rng& rng,
                           int channels = 8);

struct Dataset {
  std::vector<Scene> scenes;
};

// Deterministic dataset generation: scene i is drawn from substream(seed, i).
struct DatasetConfig {
  int scenes = 10;
  int min_instances = 1;
  int max_instances = 1;
  double touching_prob = 0.0;
  std::uint64_t seed = 0;
  SceneConfig scene;
};

Dataset gen_dataset(const DatasetConfig& cfg);

// Directory layout: manifest.json plus per-scene "CSEF" feature files and
// per-instance binary PGM masks.
void save_dataset(const Dataset& dataset, const std::string& dir, std::uint64_t seed);
Dataset load_dataset(const std::string& dir);

}  // namespace cse

#endif  // CSE_SYNTH_HPP_
