#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "cse/eval.hpp"
#include "cse/synth.hpp"

using namespace cse;

namespace {

double polyline_length(const std::vector<Point>& pts) {
  double len = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    len += std::hypot(pts[i][0] - pts[i - 1][0], pts[i][1] - pts[i - 1][1]);
  return len;
}

// brute-force min center distance between two pixel sets
double brute_gap(const Raster& a, const Raster& b) {
  std::vector<std::pair<int, int>> pa, pb;
  for (int r = 0; r < a.height; ++r)
    for (int c = 0; c < a.width; ++c) {
      if (a.at(r, c)) pa.emplace_back(r, c);
      if (b.at(r, c)) pb.emplace_back(r, c);
    }
  double best = 1e18;
  for (const auto& [ra, ca] : pa)
    for (const auto& [rb, cb] : pb)
      best = std::min(best, std::hypot(ra - rb, ca - cb));
  return best;
}

}  // namespace

TEST_CASE("ribbons are reproducible, connected, in bounds and hole free") {
  const RibbonConfig cfg;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const Ribbon ribbon = gen_ribbon(rng, cfg);
    REQUIRE(ribbon.mask.count() > 0);

    std::vector<int> labels;
    CHECK(label_components(ribbon.mask, labels) == 1);

    Raster filled = ribbon.mask;
    fill_holes(filled);
    CHECK(filled.data == ribbon.mask.data);

    for (int c = 0; c < cfg.canvas_w; ++c) {
      CHECK_FALSE(ribbon.mask.at(0, c));
      CHECK_FALSE(ribbon.mask.at(cfg.canvas_h - 1, c));
    }
    for (int r = 0; r < cfg.canvas_h; ++r) {
      CHECK_FALSE(ribbon.mask.at(r, 0));
      CHECK_FALSE(ribbon.mask.at(r, cfg.canvas_w - 1));
    }

    REQUIRE(ribbon.spec.centerline.size() >= 4);
    const double max_hw =
        *std::max_element(ribbon.spec.half_widths.begin(), ribbon.spec.half_widths.end());
    CHECK(polyline_length(ribbon.spec.centerline) > 2.0 * (2.0 * max_hw));
    for (double hw : ribbon.spec.half_widths) CHECK(hw > 0.0);
  }

  Rng a(123), b(123);
  const Ribbon r1 = gen_ribbon(a, cfg);
  const Ribbon r2 = gen_ribbon(b, cfg);
  CHECK(r1.mask.data == r2.mask.data);
  CHECK(r1.spec.centerline == r2.spec.centerline);
}

TEST_CASE("gen_ribbon validates canvas and ranges") {
  RibbonConfig cfg;
  cfg.canvas_h = 32;
  Rng rng(0);
  CHECK_THROWS_AS(gen_ribbon(rng, cfg), std::invalid_argument);
  RibbonConfig huge;
  huge.length_lo = huge.length_hi = 5000.0;  // cannot fit the canvas
  CHECK_THROWS_AS(gen_ribbon(rng, huge), std::invalid_argument);
}

TEST_CASE("scenes respect instance count, gaps and touching") {
  SceneConfig cfg;
  Rng rng(7);

  const Scene one = gen_scene(rng, 1, false, cfg);
  REQUIRE(one.instances.size() == 1);
  const auto& box = one.instances[0].box;
  CHECK(box[0] >= 0.0);
  CHECK(box[1] >= 0.0);
  CHECK(box[0] + box[2] <= 255.0);
  CHECK(box[1] + box[3] <= 255.0);
  CHECK(one.features.height == 256);
  CHECK(one.features.channels == 8);

  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Rng trng(seed);
    const Scene touching = gen_scene(trng, 2, true, cfg);
    REQUIRE(touching.instances.size() == 2);
    const double gap = brute_gap(touching.instances[0].mask, touching.instances[1].mask);
    CHECK(gap > 0.0);
    CHECK(gap <= 3.0);
  }
  for (std::uint64_t seed = 100; seed < 105; ++seed) {
    Rng srng(seed);
    const Scene separate = gen_scene(srng, 2, false, cfg);
    REQUIRE(separate.instances.size() == 2);
    CHECK(brute_gap(separate.instances[0].mask, separate.instances[1].mask) > 3.0);
  }

  CHECK_THROWS_AS(gen_scene(rng, 0, false, cfg), std::invalid_argument);
  CHECK_THROWS_AS(gen_scene(rng, 5, false, cfg), std::invalid_argument);
}

TEST_CASE("instance polygons re-rasterize to their masks") {
  Rng rng(9);
  const Scene scene = gen_scene(rng, 2, false, {});
  for (const Instance& inst : scene.instances) {
    const Raster back = rasterize_polygon(inst.polygon, inst.mask.height, inst.mask.width);
    CHECK(back.data == inst.mask.data);
  }
}

TEST_CASE("feature channels carry the documented geometry") {
  Rng rng(3);
  Ribbon ribbon = gen_ribbon(rng, {});
  std::vector<const Raster*> masks{&ribbon.mask};
  Rng frng(5);
  const FeatureMap f = render_features(masks, 0.0, frng);

  const auto d2bg = squared_distance_transform([&] {
    Raster inv = make_raster(256, 256);
    for (std::size_t i = 0; i < inv.data.size(); ++i) inv.data[i] = ribbon.mask.data[i] ? 0 : 1;
    return inv;
  }());
  int deep_r = -1, deep_c = -1;
  double best = 0;
  for (int r = 0; r < 256; ++r)
    for (int c = 0; c < 256; ++c)
      if (ribbon.mask.at(r, c) && d2bg[static_cast<std::size_t>(r) * 256 + c] > best) {
        best = d2bg[static_cast<std::size_t>(r) * 256 + c];
        deep_r = r;
        deep_c = c;
      }
  REQUIRE(deep_r >= 0);
  CHECK(f.at(deep_r, deep_c, 0) == doctest::Approx(1.0));
  CHECK(f.at(0, 0, 2) == doctest::Approx(-1.0));  // canvas corner is far background

  // pure noise channels: standard normal at canvas scale
  for (int ch = 5; ch < 8; ++ch) {
    double sum = 0, sq = 0;
    for (int r = 0; r < 256; ++r)
      for (int c = 0; c < 256; ++c) {
        sum += f.at(r, c, ch);
        sq += f.at(r, c, ch) * f.at(r, c, ch);
      }
    const double n = 256.0 * 256.0;
    const double mean = sum / n;
    const double stddev = std::sqrt(sq / n - mean * mean);
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(stddev - 1.0) < 0.05);
  }
}

TEST_CASE("features are a function of the union of masks only") {
  Rng rng(11);
  const Scene scene = gen_scene(rng, 3, false, {});
  std::vector<const Raster*> fwd, rev;
  for (const auto& inst : scene.instances) fwd.push_back(&inst.mask);
  for (auto it = scene.instances.rbegin(); it != scene.instances.rend(); ++it)
    rev.push_back(&it->mask);
  Rng r1(99), r2(99);
  const FeatureMap a = render_features(fwd, 0.1, r1);
  const FeatureMap b = render_features(rev, 0.1, r2);
  CHECK(a.values == b.values);
}

TEST_CASE("datasets are reproducible and round-trip through the directory layout") {
  DatasetConfig cfg;
  cfg.scenes = 4;
  cfg.min_instances = 1;
  cfg.max_instances = 2;
  cfg.touching_prob = 0.5;
  cfg.seed = 77;
  const Dataset a = gen_dataset(cfg);
  const Dataset b = gen_dataset(cfg);
  REQUIRE(a.scenes.size() == 4);
  for (std::size_t i = 0; i < a.scenes.size(); ++i) {
    CHECK(a.scenes[i].features.values == b.scenes[i].features.values);
    REQUIRE(a.scenes[i].instances.size() == b.scenes[i].instances.size());
  }

  const std::string dir = "/tmp/cse_test_dataset";
  std::filesystem::remove_all(dir);
  save_dataset(a, dir, cfg.seed);
  const Dataset back = load_dataset(dir);
  REQUIRE(back.scenes.size() == a.scenes.size());
  for (std::size_t i = 0; i < a.scenes.size(); ++i) {
    CHECK(back.scenes[i].features.values == a.scenes[i].features.values);
    REQUIRE(back.scenes[i].instances.size() == a.scenes[i].instances.size());
    for (std::size_t j = 0; j < a.scenes[i].instances.size(); ++j) {
      CHECK(back.scenes[i].instances[j].mask.data == a.scenes[i].instances[j].mask.data);
      CHECK(back.scenes[i].instances[j].box == a.scenes[i].instances[j].box);
      CHECK(back.scenes[i].instances[j].polygon == a.scenes[i].instances[j].polygon);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("load_dataset rejects malformed manifests") {
  const std::string dir = "/tmp/cse_test_badds";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  CHECK_THROWS_AS(load_dataset(dir), FormatError);
  {
    std::ofstream os(dir + "/manifest.json");
    os << "{ not json";
  }
  CHECK_THROWS_AS(load_dataset(dir), FormatError);
  {
    std::ofstream os(dir + "/manifest.json");
    os << "{\"version\": 1, \"scenes\": [{\"id\": 0}]}";
  }
  CHECK_THROWS_AS(load_dataset(dir), FormatError);
  std::filesystem::remove_all(dir);
}
