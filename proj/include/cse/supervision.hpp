#ifndef CSE_SUPERVISION_HPP_
#define CSE_SUPERVISION_HPP_

#include <algorithm>
#include <cmath>
#include <vector>

#include "cse/engine.hpp"

namespace cse {

inline constexpr double kProbFloor = 1e-12;

// Per-node target directions. Candidates are the previous-section neighbors
// inside the mask (at most two); the label is the candidate the current
// prediction already scores highest.
struct LabelPlan {
  int rows = 0;
  int cols = 0;
  std::vector<Direction> label;
  std::vector<std::vector<Direction>> candidates;
};

template <typename T>
LabelPlan label_nodes(const NodeMask& mask, const SectionPlan& plan, const GridState<T>& state) {
  if (mask.rows != plan.rows || mask.cols != plan.cols)
    throw std::invalid_argument("label_nodes: mask dimensions mismatch");
  if (!mask.at(plan.seed)) throw std::invalid_argument("label_nodes: seed outside mask");
  LabelPlan out;
  out.rows = plan.rows;
  out.cols = plan.cols;
  const std::size_t n = static_cast<std::size_t>(plan.rows) * plan.cols;
  out.label.assign(n, Direction::kNone);
  out.candidates.assign(n, {});
  for (int r = 0; r < plan.rows; ++r) {
    for (int c = 0; c < plan.cols; ++c) {
      const int id = plan.node_id({r, c});
      if (!mask.at(r, c)) continue;                     // negative: none
      if (NodeIndex{r, c} == plan.seed) continue;        // seed: designated none
      auto& cands = out.candidates[id];
      for (Direction dir : plan.prev_dirs[id]) {
        const auto q = neighbor({r, c}, dir, plan.rows, plan.cols);
        if (mask.at(*q)) cands.push_back(dir);
      }
      if (cands.empty()) continue;  // positive but unreachable through the mask
      Direction best = cands[0];
      for (Direction dir : cands)
        if (state.outs[id].y(static_cast<int>(dir)) > state.outs[id].y(static_cast<int>(best)))
          best = dir;
      out.label[id] = best;
    }
  }
  return out;
}

struct LossReport {
  double total = 0.0;
  std::vector<double> per_node;
  int n = 0;
};

// Mean cross-entropy of the labeled class over all S*S nodes.
template <typename T>
LossReport cse_loss(const GridState<T>& state, const LabelPlan& labels) {
  if (labels.rows != state.rows || labels.cols != state.cols)
    throw std::invalid_argument("cse_loss: dimensions mismatch");
  LossReport rep;
  rep.n = state.rows * state.cols;
  rep.per_node.resize(rep.n);
  double sum = 0.0;
  for (int id = 0; id < rep.n; ++id) {
    const double p = std::max(static_cast<double>(state.outs[id].y(static_cast<int>(labels.label[id]))),
                              kProbFloor);
    rep.per_node[id] = -std::log(p);
    sum += rep.per_node[id];
  }
  rep.total = sum / rep.n;
  return rep;
}

// Reverse-schedule backpropagation: sections in decreasing order, each node
// combining its own loss term with the adjoints routed back from the nodes it
// fed, then forwarding input gradients to its previous-section neighbors.
// Accumulation follows a fixed node order, so results are bit-reproducible.
template <typename T>
CellParams<T> backward(const CellParams<T>& params, const GridState<T>& state,
                       const LabelPlan& labels, const SectionPlan& plan) {
  if (!state.has_tapes()) throw std::invalid_argument("backward: forward pass recorded no tapes");
  if (labels.rows != plan.rows || labels.cols != plan.cols)
    throw std::invalid_argument("backward: dimensions mismatch");
  const int d = params.d;
  const std::size_t n = static_cast<std::size_t>(plan.rows) * plan.cols;
  const T inv_n = T(1) / static_cast<T>(n);

  CellParams<T> grads = zeros_like(params);
  std::vector<NodeAdjoint<T>> adj(n);
  for (auto& a : adj) a = zero_adjoint<T>(d);

  for (int k = plan.max_section(); k >= 0; --k) {
    for (int id : plan.sections[k]) {
      NodeAdjoint<T>& a = adj[id];
      a.label = static_cast<int>(labels.label[id]);
      // inside the clipped region the loss is flat
      a.label_weight =
          state.outs[id].y(a.label) > static_cast<T>(kProbFloor) ? inv_n : T(0);
      const NodeInputGrads<T> g = node_backward(params, state.tapes[id], a, grads);
      const NodeIndex p{id / plan.cols, id % plan.cols};
      for (Direction dir : plan.prev_dirs[id]) {
        const int qid = plan.node_id(*neighbor(p, dir, plan.rows, plan.cols));
        const int slot = static_cast<int>(dir);
        adj[qid].c += g.c_in[slot];
        adj[qid].y_prob += g.y_in[slot];
        adj[qid].h_out.segment(static_cast<int>(opposite(dir)) * d, d) += g.h_in[1 + slot];
      }
      if (p == plan.seed) grads.h_seed += g.h_in[0];
    }
  }
  return grads;
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  std::size_t coords_checked = 0;
};

struct GradCheckConfig {
  int s = 7;
  int d = 8;
  int d_x = 6;
  double eps = 1e-4;
  std::uint64_t seed = 42;
  std::size_t max_coords = 500;  // random subset when the model is larger
};

// Central-finite-difference verification of the analytic gradient in 64-bit
// precision, with labels frozen at the unperturbed prediction.
GradCheckReport grad_check(const GradCheckConfig& cfg);

}  // namespace cse

#endif  // CSE_SUPERVISION_HPP_
