#ifndef CSE_ENGINE_HPP_
#define CSE_ENGINE_HPP_

#include <algorithm>
#include <vector>

#include "cse/cell.hpp"
#include "cse/feature_map.hpp"
#include "cse/grid.hpp"

namespace cse {

// Outputs of a full grid pass, indexed by node id. Tapes are present when the
// pass was run with recording enabled (required for backpropagation).
template <typename T>
struct GridState {
  int rows = 0;
  int cols = 0;
  int rounds = 0;  // synchronization rounds = max section index + 1
  const SectionPlan* plan = nullptr;
  std::vector<NodeOutputs<T>> outs;
  std::vector<NodeTape<T>> tapes;
  std::vector<std::uint8_t> evaluated;

  bool has_tapes() const { return !tapes.empty(); }
};

// Gathers the inputs of node p from its previous-section neighbors: their
// local states, their expanding indicators, and the component of their
// transition vectors addressed to p. The self slot h_in[c] carries h_seed at
// the seed node and zeros elsewhere.
template <typename T>
NodeInputs<T> route_inputs(NodeIndex p, const GridState<T>& state, const SectionPlan& plan,
                           const SampledGrid<T>& sampled, const CellParams<T>& params) {
  const int d = params.d;
  if (sampled.channels != params.d_x)
    throw std::invalid_argument("route_inputs: feature width mismatch");
  NodeInputs<T> in = zero_inputs<T>(d, params.d_x);
  const int id = plan.node_id(p);
  in.x = Eigen::Map<const VecX<T>>(sampled.node(id), params.d_x);
  if (p == plan.seed) in.h_in[0] = params.h_seed;
  for (Direction dir : plan.prev_dirs[id]) {
    const auto q = neighbor(p, dir, plan.rows, plan.cols);
    const int qid = plan.node_id(*q);
    if (!state.evaluated[qid])
      throw SchedulingViolation("route_inputs: dependency not yet evaluated");
    const int slot = static_cast<int>(dir);
    in.c_in[slot] = state.outs[qid].c;
    in.y_in[slot] = state.outs[qid].y;
    // the neighbor's transition vector addressed back toward p
    const int block = static_cast<int>(opposite(dir));
    in.h_in[1 + slot] = state.outs[qid].h_out.segment(block * d, d);
  }
  return in;
}

struct ForwardOptions {
  bool with_tape = false;
  unsigned threads = 1;
};

// Section-synchronous forward pass: sections are evaluated in increasing
// order with a barrier in between; nodes of one section are independent and
// may run concurrently without changing any result bit.
template <typename T>
GridState<T> forward(const CellParams<T>& params, const SampledGrid<T>& sampled,
                     const SectionPlan& plan, const ForwardOptions& opts = {}) {
  validate(params);
  if (sampled.rows != plan.rows || sampled.cols != plan.cols)
    throw std::invalid_argument("forward: sampled grid does not match plan");
  GridState<T> state;
  state.rows = plan.rows;
  state.cols = plan.cols;
  state.plan = &plan;
  state.rounds = plan.max_section() + 1;
  const std::size_t n = static_cast<std::size_t>(plan.rows) * plan.cols;
  state.outs.resize(n);
  if (opts.with_tape) state.tapes.resize(n);
  state.evaluated.assign(n, 0);

  for (const auto& section : plan.sections) {
    auto eval_node = [&](std::size_t i) {
      const int id = section[i];
      const NodeIndex p{id / plan.cols, id % plan.cols};
      const NodeInputs<T> in = route_inputs(p, state, plan, sampled, params);
      state.outs[id] = node_forward(params, in, opts.with_tape ? &state.tapes[id] : nullptr);
    };
    parallel_for(section.size(), opts.threads, eval_node);
    for (int id : section) state.evaluated[id] = 1;
  }
  return state;
}

struct MergeResult {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> merged;
  int count = 0;

  bool at(int r, int c) const { return merged[static_cast<std::size_t>(r) * cols + c] != 0; }
};

// A node joins the region iff its strongest indicator points to an already
// merged previous-section neighbor. Ties pick the lowest class index; the
// previous-section restriction makes the rule independent of evaluation
// order within a section.
template <typename T>
MergeResult extract_region(const GridState<T>& state, const SectionPlan& plan) {
  MergeResult res;
  res.rows = plan.rows;
  res.cols = plan.cols;
  res.merged.assign(static_cast<std::size_t>(plan.rows) * plan.cols, 0);
  const int seed_id = plan.node_id(plan.seed);
  res.merged[seed_id] = 1;
  res.count = 1;
  for (std::size_t k = 1; k < plan.sections.size(); ++k) {
    for (int id : plan.sections[k]) {
      const auto& y = state.outs[id].y;
      int best = 0;
      for (int j = 1; j < kNumClasses; ++j)
        if (y(j) > y(best)) best = j;
      if (best == static_cast<int>(Direction::kNone)) continue;
      const auto dir = static_cast<Direction>(best);
      const auto& dirs = plan.prev_dirs[id];
      if (std::find(dirs.begin(), dirs.end(), dir) == dirs.end()) continue;
      const NodeIndex p{id / plan.cols, id % plan.cols};
      const auto q = neighbor(p, dir, plan.rows, plan.cols);
      if (res.merged[plan.node_id(*q)]) {
        res.merged[id] = 1;
        ++res.count;
      }
    }
  }
  return res;
}

}  // namespace cse

#endif  // CSE_ENGINE_HPP_
