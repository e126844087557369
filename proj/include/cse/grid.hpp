#ifndef CSE_GRID_HPP_
#define CSE_GRID_HPP_

#include <array>
#include <optional>
#include <vector>

#include "cse/common.hpp"

namespace cse {

// Merging-direction classes. The integer values are the class indices of the
// expanding indicator y and the slot order of all directional arrays; they
// must not be reordered.
enum class Direction : int {
  kToBottom = 0,
  kToRight = 1,
  kToLeft = 2,
  kToTop = 3,
  kNone = 4,
};

inline constexpr int kNumDirections = 4;  // moving directions, excluding kNone
inline constexpr int kNumClasses = 5;

Direction opposite(Direction d);
const char* to_string(Direction d);

struct NodeIndex {
  int r = 0;
  int c = 0;
  friend bool operator==(const NodeIndex&, const NodeIndex&) = default;
};

// An S x S sampling lattice in image coordinates (x right, y down) plus the
// seed node the expansion starts from.
struct GridSpec {
  int rows = 0;
  int cols = 0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  double step_x = 0.0;
  double step_y = 0.0;
  NodeIndex seed;

  int node_count() const { return rows * cols; }
  int node_id(int r, int c) const { return r * cols + c; }
  int node_id(NodeIndex p) const { return p.r * cols + p.c; }
  NodeIndex node_at(int id) const { return {id / cols, id % cols}; }
  double node_x(int c) const { return origin_x + step_x * c; }
  double node_y(int r) const { return origin_y + step_y * r; }
  double width() const { return step_x * (cols - 1); }
  double height() const { return step_y * (rows - 1); }
  double center_x() const { return origin_x + width() / 2.0; }
  double center_y() const { return origin_y + height() / 2.0; }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

void validate(const GridSpec& grid);

// Seed-centered decomposition of a grid. section[p] is the minimum number of
// 4-neighbor steps from p to the seed; sections[k] lists the nodes of section
// k in row-major order; prev_dirs[p] holds the directions whose neighbor lies
// in section k-1 (one or two of them for every non-seed node).
struct SectionPlan {
  int rows = 0;
  int cols = 0;
  NodeIndex seed;
  std::vector<int> section;
  std::vector<std::vector<int>> sections;
  std::vector<std::vector<Direction>> prev_dirs;

  int max_section() const { return static_cast<int>(sections.size()) - 1; }
  int node_id(NodeIndex p) const { return p.r * cols + p.c; }
};

// Node-level boolean mask over a grid (true = the node's sample point lies
// inside the target instance region).
struct NodeMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> inside;

  bool at(int r, int c) const { return inside[static_cast<std::size_t>(r) * cols + c] != 0; }
  bool at(NodeIndex p) const { return at(p.r, p.c); }
  void set(int r, int c, bool v) { inside[static_cast<std::size_t>(r) * cols + c] = v ? 1 : 0; }
  std::size_t count() const;
};

NodeMask make_node_mask(int rows, int cols);

// Builds the grid spanned by an axis-aligned box: corner nodes coincide with
// the box corners and the seed sits at the central node.
GridSpec build_grid_from_box(double x, double y, double w, double h, int s);

SectionPlan compute_sections(const GridSpec& grid);

// 4-neighbor of p in direction d, or nullopt when off-grid.
std::optional<NodeIndex> neighbor(NodeIndex p, Direction d, const GridSpec& grid);
std::optional<NodeIndex> neighbor(NodeIndex p, Direction d, int rows, int cols);

// Rescales width/height by delta_s about the grid center, keeping the lattice
// size and the seed index.
GridSpec scale_about_center(const GridSpec& grid, double delta_s);

// The grid perturbation used by the robustness analysis and by training
// augmentation: rescale by delta_s about the center, then move the seed to a
// node that is still inside gt_mask and whose distance from the original seed
// location is delta_c * sqrt(original grid area), up to half a lattice step.
// Candidate nodes live on the rescaled grid; gt_mask is indexed by node and
// must describe the rescaled geometry. When no node hits the distance ring,
// the in-mask node closest to the target distance is used instead.
GridSpec perturb_grid(const GridSpec& grid, double delta_s, double delta_c,
                      const NodeMask& gt_mask, Rng& rng);

}  // namespace cse

#endif  // CSE_GRID_HPP_
