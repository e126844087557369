#include "cse/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

namespace cse {

Direction opposite(Direction d) {
  switch (d) {
    case Direction::kToBottom:
      return Direction::kToTop;
    case Direction::kToRight:
      return Direction::kToLeft;
    case Direction::kToLeft:
      return Direction::kToRight;
    case Direction::kToTop:
      return Direction::kToBottom;
    case Direction::kNone:
      break;
  }
  throw std::invalid_argument("opposite: undefined for Direction::kNone");
}

const char* to_string(Direction d) {
  switch (d) {
    case Direction::kToBottom:
      return "to-bottom";
    case Direction::kToRight:
      return "to-right";
    case Direction::kToLeft:
      return "to-left";
    case Direction::kToTop:
      return "to-top";
    case Direction::kNone:
      return "none";
  }
  return "?";
}

void validate(const GridSpec& grid) {
  if (grid.rows < 3 || grid.cols < 3)
    throw std::invalid_argument("GridSpec: rows/cols must be >= 3");
  if (!(grid.step_x > 0.0) || !(grid.step_y > 0.0))
    throw std::invalid_argument("GridSpec: steps must be positive");
  if (grid.seed.r < 0 || grid.seed.r >= grid.rows || grid.seed.c < 0 || grid.seed.c >= grid.cols)
    throw std::invalid_argument("GridSpec: seed outside grid");
}

std::size_t NodeMask::count() const {
  return static_cast<std::size_t>(std::count(inside.begin(), inside.end(), std::uint8_t{1}));
}

NodeMask make_node_mask(int rows, int cols) {
  NodeMask m;
  m.rows = rows;
  m.cols = cols;
  m.inside.assign(static_cast<std::size_t>(rows) * cols, 0);
  return m;
}

GridSpec build_grid_from_box(double x, double y, double w, double h, int s) {
  if (!(w > 0.0) || !(h > 0.0)) throw std::invalid_argument("build_grid_from_box: degenerate box");
  if (s < 3) throw std::invalid_argument("build_grid_from_box: grid size must be >= 3");
  GridSpec grid;
  grid.rows = s;
  grid.cols = s;
  grid.origin_x = x;
  grid.origin_y = y;
  grid.step_x = w / (s - 1);
  grid.step_y = h / (s - 1);
  const int mid = (s % 2 == 1) ? s / 2 : s / 2 - 1;
  grid.seed = {mid, mid};
  return grid;
}

std::optional<NodeIndex> neighbor(NodeIndex p, Direction d, int rows, int cols) {
  NodeIndex q = p;
  switch (d) {
    case Direction::kToBottom:
      ++q.r;
      break;
    case Direction::kToRight:
      ++q.c;
      break;
    case Direction::kToLeft:
      --q.c;
      break;
    case Direction::kToTop:
      --q.r;
      break;
    case Direction::kNone:
      throw std::invalid_argument("neighbor: Direction::kNone has no neighbor");
  }
  if (q.r < 0 || q.r >= rows || q.c < 0 || q.c >= cols) return std::nullopt;
  return q;
}

std::optional<NodeIndex> neighbor(NodeIndex p, Direction d, const GridSpec& grid) {
  return neighbor(p, d, grid.rows, grid.cols);
}

SectionPlan compute_sections(const GridSpec& grid) {
  validate(grid);
  SectionPlan plan;
  plan.rows = grid.rows;
  plan.cols = grid.cols;
  plan.seed = grid.seed;
  const int n = grid.node_count();
  plan.section.resize(n);
  plan.prev_dirs.assign(n, {});

  int max_section = 0;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const int k = std::abs(r - grid.seed.r) + std::abs(c - grid.seed.c);
      plan.section[grid.node_id(r, c)] = k;
      max_section = std::max(max_section, k);
    }
  }
  plan.sections.assign(max_section + 1, {});
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const int id = grid.node_id(r, c);
      const int k = plan.section[id];
      plan.sections[k].push_back(id);
      if (k == 0) continue;
      for (int di = 0; di < kNumDirections; ++di) {
        const auto d = static_cast<Direction>(di);
        const auto q = neighbor({r, c}, d, grid);
        if (q && plan.section[grid.node_id(*q)] == k - 1) plan.prev_dirs[id].push_back(d);
      }
    }
  }
  return plan;
}

GridSpec scale_about_center(const GridSpec& grid, double delta_s) {
  if (delta_s == 1.0) return grid;
  GridSpec out = grid;
  const double cx = grid.center_x();
  const double cy = grid.center_y();
  out.step_x = grid.step_x * delta_s;
  out.step_y = grid.step_y * delta_s;
  out.origin_x = cx - out.step_x * (grid.cols - 1) / 2.0;
  out.origin_y = cy - out.step_y * (grid.rows - 1) / 2.0;
  return out;
}

GridSpec perturb_grid(const GridSpec& grid, double delta_s, double delta_c,
                      const NodeMask& gt_mask, Rng& rng) {
  validate(grid);
  if (delta_s < 1.0) throw std::invalid_argument("perturb_grid: delta_s must be >= 1.0");
  if (delta_c < 0.0) throw std::invalid_argument("perturb_grid: delta_c must be >= 0.0");
  if (gt_mask.rows != grid.rows || gt_mask.cols != grid.cols)
    throw std::invalid_argument("perturb_grid: mask dimensions mismatch");
  if (gt_mask.count() == 0) throw std::invalid_argument("perturb_grid: empty mask");
  if (!gt_mask.at(grid.seed)) throw std::invalid_argument("perturb_grid: seed outside mask");

  // The relocation target distance is measured from the seed's position on
  // the unscaled grid and normalized by the unscaled grid area.
  const double seed_x = grid.node_x(grid.seed.c);
  const double seed_y = grid.node_y(grid.seed.r);
  const double target = delta_c * std::sqrt(grid.width() * grid.height());

  GridSpec out = scale_about_center(grid, delta_s);
  const double tol = 0.5 * std::min(out.step_x, out.step_y);

  std::vector<int> ring;
  int closest = -1;
  double closest_err = std::numeric_limits<double>::infinity();
  for (int r = 0; r < out.rows; ++r) {
    for (int c = 0; c < out.cols; ++c) {
      if (!gt_mask.at(r, c)) continue;
      const double dx = out.node_x(c) - seed_x;
      const double dy = out.node_y(r) - seed_y;
      const double err = std::abs(std::hypot(dx, dy) - target);
      if (err <= tol) ring.push_back(out.node_id(r, c));
      if (err < closest_err) {
        closest_err = err;
        closest = out.node_id(r, c);
      }
    }
  }
  const int chosen =
      ring.empty() ? closest : ring[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(ring.size()) - 1))];
  out.seed = out.node_at(chosen);
  return out;
}

}  // namespace cse
