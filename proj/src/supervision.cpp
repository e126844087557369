#include "cse/supervision.hpp"

#include <numeric>

namespace cse {
namespace {

// Random blob mask grown from the seed; gives the labeler a mix of single-
// and two-candidate positives plus plenty of negatives.
NodeMask random_blob_mask(const SectionPlan& plan, double fill, Rng& rng) {
  NodeMask mask = make_node_mask(plan.rows, plan.cols);
  std::vector<int> frontier{plan.node_id(plan.seed)};
  mask.inside[frontier[0]] = 1;
  std::size_t want = std::max<std::size_t>(
      4, static_cast<std::size_t>(fill * plan.rows * plan.cols));
  std::size_t have = 1;
  while (have < want && !frontier.empty()) {
    const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(frontier.size()) - 1));
    const int id = frontier[pick];
    const NodeIndex p{id / plan.cols, id % plan.cols};
    bool grew = false;
    for (int di = 0; di < kNumDirections; ++di) {
      const auto q = neighbor(p, static_cast<Direction>(di), plan.rows, plan.cols);
      if (!q || mask.at(*q)) continue;
      if (rng.uniform() < 0.6) {
        mask.set(q->r, q->c, true);
        frontier.push_back(plan.node_id(*q));
        ++have;
        grew = true;
      }
    }
    if (!grew) frontier.erase(frontier.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return mask;
}

}  // namespace

GradCheckReport grad_check(const GradCheckConfig& cfg) {
  Rng rng(cfg.seed);
  CellParams<double> params = init_params<double>(cfg.d, cfg.d_x, rng);

  GridSpec grid = build_grid_from_box(0.0, 0.0, 10.0, 10.0, cfg.s);
  SectionPlan plan = compute_sections(grid);

  SampledGrid<double> sampled;
  sampled.rows = cfg.s;
  sampled.cols = cfg.s;
  sampled.channels = cfg.d_x;
  sampled.grid = grid;
  sampled.values.resize(static_cast<std::size_t>(cfg.s) * cfg.s * cfg.d_x);
  for (auto& v : sampled.values) v = rng.normal();

  NodeMask mask = random_blob_mask(plan, 0.4, rng);

  ForwardOptions opts;
  opts.with_tape = true;
  const GridState<double> state = forward(params, sampled, plan, opts);
  const LabelPlan labels = label_nodes(mask, plan, state);

  const CellParams<double> analytic = backward(params, state, labels, plan);

  // flatten both parameter and gradient tensors in the canonical order
  std::vector<double*> param_entries;
  std::vector<const double*> grad_entries;
  for_each_tensor(params, [&](const char*, auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) param_entries.push_back(t.data() + i);
  });
  for_each_tensor(analytic, [&](const char*, const auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) grad_entries.push_back(t.data() + i);
  });

  std::vector<std::size_t> coords(param_entries.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (coords.size() > cfg.max_coords) {
    // partial Fisher-Yates draw of max_coords distinct coordinates
    for (std::size_t i = 0; i < cfg.max_coords; ++i) {
      const auto j = static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(coords.size()) - 1));
      std::swap(coords[i], coords[j]);
    }
    coords.resize(cfg.max_coords);
  }

  auto loss_at = [&]() {
    const GridState<double> st = forward(params, sampled, plan);
    return cse_loss(st, labels).total;
  };

  GradCheckReport rep;
  rep.coords_checked = coords.size();
  double sum_rel = 0.0;
  for (const std::size_t idx : coords) {
    double* entry = param_entries[idx];
    const double saved = *entry;
    *entry = saved + cfg.eps;
    const double up = loss_at();
    *entry = saved - cfg.eps;
    const double down = loss_at();
    *entry = saved;
    const double numeric = (up - down) / (2.0 * cfg.eps);
    const double exact = *grad_entries[idx];
    const double rel = std::abs(exact - numeric) /
                       std::max({std::abs(exact), std::abs(numeric), 1e-6});
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
    sum_rel += rel;
  }
  rep.mean_rel_error = coords.empty() ? 0.0 : sum_rel / static_cast<double>(coords.size());
  return rep;
}

}  // namespace cse
