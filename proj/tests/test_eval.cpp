#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cse/eval.hpp"
#include "oracles.hpp"

using namespace cse;

namespace {

MergeResult merge_of(const std::vector<std::pair<int, int>>& nodes, int rows, int cols) {
  MergeResult m;
  m.rows = rows;
  m.cols = cols;
  m.merged.assign(static_cast<std::size_t>(rows) * cols, 0);
  for (const auto& [r, c] : nodes) {
    m.merged[static_cast<std::size_t>(r) * cols + c] = 1;
    ++m.count;
  }
  return m;
}

Raster raster_from(const std::vector<std::pair<int, int>>& px, int h, int w) {
  Raster m = make_raster(h, w);
  for (const auto& [r, c] : px) m.set(r, c, true);
  return m;
}

DetectionResult det_from(Raster mask, double score) {
  DetectionResult d;
  d.mask = std::move(mask);
  d.score = score;
  return d;
}

}  // namespace

TEST_CASE("nodes_to_mask paints step-sized cells") {
  const GridSpec grid = build_grid_from_box(10, 20, 48, 24, 25);

  SUBCASE("seed only") {
    MergeResult m = merge_of({{12, 12}}, 25, 25);
    const Raster mask = nodes_to_mask(m, grid, 64, 96);
    // cell spans [33, 35) x [31.5, 32.5) around the center (34, 32)
    CHECK(mask.count() == 2);
    CHECK(mask.at(32, 33));
    CHECK(mask.at(32, 34));
  }

  SUBCASE("full grid approximates the padded box") {
    std::vector<std::pair<int, int>> all;
    for (int r = 0; r < 25; ++r)
      for (int c = 0; c < 25; ++c) all.emplace_back(r, c);
    const MergeResult m = merge_of(all, 25, 25);
    const Raster mask = nodes_to_mask(m, grid, 128, 128);
    // box grown by half a step on each side
    CHECK(mask.count() == 50 * 25);
    CHECK(mask.at(20, 9));
    CHECK(mask.at(44, 58));
    CHECK_FALSE(mask.at(19, 9));
    CHECK_FALSE(mask.at(20, 59));
  }

  SUBCASE("off-image cells are clipped") {
    const GridSpec off = build_grid_from_box(-20, -20, 48, 24, 25);
    std::vector<std::pair<int, int>> all;
    for (int r = 0; r < 25; ++r)
      for (int c = 0; c < 25; ++c) all.emplace_back(r, c);
    const Raster mask = nodes_to_mask(merge_of(all, 25, 25), off, 32, 32);
    CHECK(mask.count() > 0);
    CHECK(mask.count() < 32 * 32);
  }
}

TEST_CASE("nodes_to_mask is monotone in the merged set") {
  const GridSpec grid = build_grid_from_box(2, 2, 20, 20, 9);
  Rng rng(4);
  std::vector<std::pair<int, int>> some, more;
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 9; ++c) {
      if (rng.uniform() < 0.3) some.emplace_back(r, c);
      if (rng.uniform() < 0.3) more.emplace_back(r, c);
    }
  more.insert(more.end(), some.begin(), some.end());
  const Raster a = nodes_to_mask(merge_of(some, 9, 9), grid, 32, 32);
  const Raster b = nodes_to_mask(merge_of(more, 9, 9), grid, 32, 32);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    if (a.data[i]) CHECK(b.data[i]);
}

TEST_CASE("trace_contour of elementary shapes") {
  SUBCASE("single pixel is a unit square") {
    const Raster mask = raster_from({{3, 4}}, 8, 8);
    const auto polys = trace_contour(mask);
    REQUIRE(polys.size() == 1);
    REQUIRE(polys[0].size() == 4);
    CHECK(polygon_area(polys[0]) == doctest::Approx(1.0));
    std::set<std::pair<double, double>> verts;
    for (const auto& p : polys[0]) verts.insert({p[0], p[1]});
    CHECK(verts == std::set<std::pair<double, double>>{
                       {3.5, 2.5}, {4.5, 2.5}, {4.5, 3.5}, {3.5, 3.5}});
  }

  SUBCASE("2x2 block is a 2x2 square") {
    const Raster mask = raster_from({{1, 1}, {1, 2}, {2, 1}, {2, 2}}, 5, 5);
    const auto polys = trace_contour(mask);
    REQUIRE(polys.size() == 1);
    CHECK(polys[0].size() == 4);
    CHECK(polygon_area(polys[0]) == doctest::Approx(4.0));
  }

  SUBCASE("empty mask yields no polygons") {
    CHECK(trace_contour(make_raster(4, 4)).empty());
  }

  SUBCASE("two components yield two polygons") {
    const Raster mask = raster_from({{0, 0}, {3, 3}}, 5, 5);
    CHECK(trace_contour(mask).size() == 2);
  }
}

TEST_CASE("contours re-rasterize to the filled component") {
  Rng rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    Raster mask = make_raster(24, 24);
    // random blob: a few stamped discs
    for (int k = 0; k < 4; ++k) {
      const double cx = rng.uniform(4, 20), cy = rng.uniform(4, 20);
      const double rad = rng.uniform(1.5, 4.0);
      for (int r = 0; r < 24; ++r)
        for (int c = 0; c < 24; ++c)
          if ((c - cx) * (c - cx) + (r - cy) * (r - cy) <= rad * rad) mask.set(r, c, true);
    }
    if (mask.count() == 0) continue;

    std::vector<int> labels;
    const int n_comp = label_components(mask, labels);
    const auto polys = trace_contour(mask);
    REQUIRE(static_cast<int>(polys.size()) == n_comp);
    // contours come out in the scan order that assigned the labels
    for (int comp = 0; comp < n_comp; ++comp) {
      CHECK(polygon_area(polys[comp]) > 0.0);  // counter-clockwise
      Raster isolated = make_raster(24, 24);
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == comp) isolated.data[i] = 1;
      fill_holes(isolated);
      const Raster rebuilt = rasterize_polygon(polys[comp], 24, 24);
      CHECK(rebuilt.data == isolated.data);
    }
  }
}

TEST_CASE("trace and rasterize are idempotent on simply connected masks") {
  Rng rng(13);
  Raster mask = make_raster(16, 16);
  for (int r = 5; r < 12; ++r)
    for (int c = 3; c < 3 + r; ++c)
      if (c < 16) mask.set(r, c, true);
  const auto poly1 = trace_contour(mask);
  REQUIRE(poly1.size() == 1);
  const Raster once = rasterize_polygon(poly1[0], 16, 16);
  const auto poly2 = trace_contour(once);
  REQUIRE(poly2.size() == 1);
  CHECK(poly1[0] == poly2[0]);
  CHECK(rasterize_polygon(poly2[0], 16, 16).data == once.data);
}

TEST_CASE("mask_iou counts intersection over union") {
  const Raster a = raster_from({{0, 0}, {0, 1}, {1, 0}, {1, 1}}, 4, 4);
  const Raster b = raster_from({{0, 1}, {0, 2}, {1, 1}, {1, 2}}, 4, 4);
  CHECK(mask_iou(a, a) == doctest::Approx(1.0));
  const Raster far = raster_from({{3, 3}}, 4, 4);
  CHECK(mask_iou(a, far) == doctest::Approx(0.0));
  CHECK(mask_iou(a, b) == doctest::Approx(2.0 / 6.0));
  CHECK(mask_iou(make_raster(4, 4), make_raster(4, 4)) == 0.0);
  CHECK_THROWS_AS(mask_iou(a, make_raster(5, 5)), std::invalid_argument);
}

TEST_CASE("evaluate matches greedily by score") {
  const Raster gt = raster_from({{0, 0}, {0, 1}, {1, 0}, {1, 1}, {2, 0}}, 6, 6);

  SUBCASE("single good prediction") {
    const Raster pred = raster_from({{0, 0}, {0, 1}, {1, 0}, {1, 1}}, 6, 6);
    const EvalReport rep = evaluate({det_from(pred, 0.9)}, {&gt}, 0.5);
    CHECK(rep.precision == doctest::Approx(1.0));
    CHECK(rep.recall == doctest::Approx(1.0));
    CHECK(rep.f_score == doctest::Approx(1.0));
    REQUIRE(rep.matches.size() == 1);
    CHECK(rep.matches[0].iou == doctest::Approx(0.8));
  }

  SUBCASE("extra prediction halves precision") {
    const Raster pred = raster_from({{0, 0}, {0, 1}, {1, 0}, {1, 1}}, 6, 6);
    const Raster junk = raster_from({{5, 5}}, 6, 6);
    const EvalReport rep = evaluate({det_from(pred, 0.9), det_from(junk, 0.8)}, {&gt}, 0.5);
    CHECK(rep.precision == doctest::Approx(0.5));
    CHECK(rep.recall == doctest::Approx(1.0));
    CHECK(rep.f_score == doctest::Approx(2.0 / 3.0));
  }

  SUBCASE("empty inputs give zero scores") {
    const EvalReport rep = evaluate({}, {}, 0.5);
    CHECK(rep.precision == 0.0);
    CHECK(rep.recall == 0.0);
    CHECK(rep.f_score == 0.0);
  }
}

TEST_CASE("greedy matching equals exhaustive search on well-separated cases") {
  Rng rng(14);
  for (int trial = 0; trial < 60; ++trial) {
    const int np = 1 + static_cast<int>(rng.uniform_int(0, 2));
    const int ng = 1 + static_cast<int>(rng.uniform_int(0, 2));
    // disjoint grounds: 3x3 blocks on a diagonal; predictions overlap one
    // ground truth each with a random-sized block
    std::vector<Raster> gts;
    for (int g = 0; g < ng; ++g) {
      std::vector<std::pair<int, int>> px;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) px.emplace_back(4 * g + r, 4 * g + c);
      gts.push_back(raster_from(px, 16, 16));
    }
    std::vector<DetectionResult> preds;
    for (int p = 0; p < np; ++p) {
      const int target = static_cast<int>(rng.uniform_int(0, ng - 1));
      const int size = 1 + static_cast<int>(rng.uniform_int(0, 2));
      std::vector<std::pair<int, int>> px;
      for (int r = 0; r < size; ++r)
        for (int c = 0; c < 3; ++c) px.emplace_back(4 * target + r, 4 * target + c);
      preds.push_back(det_from(raster_from(px, 16, 16), rng.uniform(0.1, 1.0)));
    }
    std::vector<const Raster*> gt_ptrs;
    for (const auto& g : gts) gt_ptrs.push_back(&g);

    const EvalReport rep = evaluate(preds, gt_ptrs, 0.5);
    std::vector<std::vector<double>> iou(np, std::vector<double>(ng));
    for (int p = 0; p < np; ++p)
      for (int g = 0; g < ng; ++g) iou[p][g] = mask_iou(preds[p].mask, gts[g]);
    const auto [best_count, best_total] = oracles::best_matching(iou, 0.5);
    CHECK(static_cast<int>(rep.matches.size()) == best_count);
  }
}

TEST_CASE("evaluate is scale free") {
  // doubling every mask preserves IoUs and therefore the report
  const Raster gt1 = raster_from({{1, 1}, {1, 2}}, 8, 8);
  const Raster pred1 = raster_from({{1, 1}, {1, 2}, {1, 3}}, 8, 8);
  auto upscale = [](const Raster& m) {
    Raster out = make_raster(m.height * 2, m.width * 2);
    for (int r = 0; r < m.height; ++r)
      for (int c = 0; c < m.width; ++c)
        if (m.at(r, c))
          for (int dr = 0; dr < 2; ++dr)
            for (int dc = 0; dc < 2; ++dc) out.set(2 * r + dr, 2 * c + dc, true);
    return out;
  };
  const Raster gt2 = upscale(gt1);
  const Raster pred2 = upscale(pred1);
  const EvalReport a = evaluate({det_from(pred1, 1.0)}, {&gt1}, 0.5);
  const EvalReport b = evaluate({det_from(pred2, 1.0)}, {&gt2}, 0.5);
  CHECK(a.precision == b.precision);
  CHECK(a.recall == b.recall);
  CHECK(a.f_score == b.f_score);
}

TEST_CASE("node_mask_from_raster samples nearest pixels") {
  Raster raster = make_raster(32, 32);
  for (int r = 10; r < 20; ++r)
    for (int c = 10; c < 20; ++c) raster.set(r, c, true);
  const GridSpec grid = build_grid_from_box(10, 10, 9, 9, 5);
  const NodeMask mask = node_mask_from_raster(grid, raster);
  CHECK(mask.count() == 25);  // grid entirely inside the block

  const GridSpec outside = build_grid_from_box(0, 0, 5, 5, 5);
  CHECK(node_mask_from_raster(outside, raster).count() == 0);
}

TEST_CASE("with_seed_in_mask pulls the seed to the most central node") {
  const GridSpec grid = build_grid_from_box(0, 0, 8, 8, 9);
  NodeMask mask = make_node_mask(9, 9);
  mask.set(2, 7, true);
  mask.set(4, 6, true);  // closest to the center
  const GridSpec out = with_seed_in_mask(grid, mask);
  CHECK(out.seed == NodeIndex{4, 6});
  CHECK_THROWS_AS(with_seed_in_mask(grid, make_node_mask(9, 9)), std::invalid_argument);
}
