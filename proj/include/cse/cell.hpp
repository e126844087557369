#ifndef CSE_CELL_HPP_
#define CSE_CELL_HPP_

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <string>

#include "cse/common.hpp"
#include "cse/grid.hpp"

namespace cse {

template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

// All learnable parameters of the expansion cell. The per-node input vector s
// concatenates [x, y_in(b,r,l,t), h_in(c,b,r,l,t)] and has width
// m = d_x + 20 + 5d.
template <typename T>
struct CellParams {
  int d = 0;    // local state width
  int d_x = 0;  // sampled feature width

  MatX<T> w_c;    // d x m, candidate state
  VecX<T> b_c;    // d
  MatX<T> w_gci;  // 4d x m, neighbor-state gates [b,r,l,t]
  VecX<T> b_gci;  // 4d
  MatX<T> w_gct;  // d x m, candidate gate
  VecX<T> b_gct;  // d
  MatX<T> w_go;   // 4d x m, output gates [b,r,l,t]
  VecX<T> b_go;   // 4d
  VecX<T> b_o;    // 4d, transition-vector bias
  MatX<T> w_y;    // 5 x d, indicator logits
  VecX<T> b_y;    // 5
  VecX<T> h_seed; // d, learned seed transition vector
  VecX<T> ln_gain;  // d
  VecX<T> ln_bias;  // d

  T ln_eps = static_cast<T>(1e-5);
  bool use_layer_norm = true;  // diagnostic switch; training requires it on
  bool ln_affine = true;       // learnable gain/bias; off = plain normalization

  int m() const { return d_x + 5 * d + 4 * kNumClasses; }

  template <typename U>
  CellParams<U> cast() const {
    CellParams<U> out;
    out.d = d;
    out.d_x = d_x;
    out.w_c = w_c.template cast<U>();
    out.b_c = b_c.template cast<U>();
    out.w_gci = w_gci.template cast<U>();
    out.b_gci = b_gci.template cast<U>();
    out.w_gct = w_gct.template cast<U>();
    out.b_gct = b_gct.template cast<U>();
    out.w_go = w_go.template cast<U>();
    out.b_go = b_go.template cast<U>();
    out.b_o = b_o.template cast<U>();
    out.w_y = w_y.template cast<U>();
    out.b_y = b_y.template cast<U>();
    out.h_seed = h_seed.template cast<U>();
    out.ln_gain = ln_gain.template cast<U>();
    out.ln_bias = ln_bias.template cast<U>();
    out.ln_eps = static_cast<U>(ln_eps);
    out.use_layer_norm = use_layer_norm;
    out.ln_affine = ln_affine;
    return out;
  }
};

// Visits every tensor in a fixed order shared by initialization, Adam,
// serialization and the gradient checker.
template <typename T, typename Fn>
void for_each_tensor(CellParams<T>& p, Fn&& fn) {
  fn("w_c", p.w_c);
  fn("b_c", p.b_c);
  fn("w_gci", p.w_gci);
  fn("b_gci", p.b_gci);
  fn("w_gct", p.w_gct);
  fn("b_gct", p.b_gct);
  fn("w_go", p.w_go);
  fn("b_go", p.b_go);
  fn("b_o", p.b_o);
  fn("w_y", p.w_y);
  fn("b_y", p.b_y);
  fn("h_seed", p.h_seed);
  fn("ln_gain", p.ln_gain);
  fn("ln_bias", p.ln_bias);
}

template <typename T, typename Fn>
void for_each_tensor(const CellParams<T>& p, Fn&& fn) {
  for_each_tensor(const_cast<CellParams<T>&>(p), [&fn](const char* name, auto& t) {
    fn(name, static_cast<const std::remove_reference_t<decltype(t)>&>(t));
  });
}

// Lockstep visit of two same-shape parameter sets (e.g. gradients into an
// accumulator).
template <typename T, typename Fn>
void for_each_tensor_pair(CellParams<T>& a, const CellParams<T>& b, Fn&& fn) {
  fn(a.w_c, b.w_c);
  fn(a.b_c, b.b_c);
  fn(a.w_gci, b.w_gci);
  fn(a.b_gci, b.b_gci);
  fn(a.w_gct, b.w_gct);
  fn(a.b_gct, b.b_gct);
  fn(a.w_go, b.w_go);
  fn(a.b_go, b.b_go);
  fn(a.b_o, b.b_o);
  fn(a.w_y, b.w_y);
  fn(a.b_y, b.b_y);
  fn(a.h_seed, b.h_seed);
  fn(a.ln_gain, b.ln_gain);
  fn(a.ln_bias, b.ln_bias);
}

template <typename T>
std::size_t parameter_count(const CellParams<T>& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&n](const char*, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

// Gradients share the tensor layout of the parameters.
template <typename T>
CellParams<T> zeros_like(const CellParams<T>& p) {
  CellParams<T> g = p;
  for_each_tensor(g, [](const char*, auto& t) { t.setZero(); });
  return g;
}

template <typename T>
void validate(const CellParams<T>& p) {
  if (p.d < 2) throw std::invalid_argument("CellParams: d must be >= 2");
  if (p.d_x < 1) throw std::invalid_argument("CellParams: d_x must be >= 1");
  const int m = p.m();
  auto expect = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("CellParams: bad shape for ") + what);
  };
  expect(p.w_c.rows() == p.d && p.w_c.cols() == m, "w_c");
  expect(p.b_c.size() == p.d, "b_c");
  expect(p.w_gci.rows() == 4 * p.d && p.w_gci.cols() == m, "w_gci");
  expect(p.b_gci.size() == 4 * p.d, "b_gci");
  expect(p.w_gct.rows() == p.d && p.w_gct.cols() == m, "w_gct");
  expect(p.b_gct.size() == p.d, "b_gct");
  expect(p.w_go.rows() == 4 * p.d && p.w_go.cols() == m, "w_go");
  expect(p.b_go.size() == 4 * p.d, "b_go");
  expect(p.b_o.size() == 4 * p.d, "b_o");
  expect(p.w_y.rows() == kNumClasses && p.w_y.cols() == p.d, "w_y");
  expect(p.b_y.size() == kNumClasses, "b_y");
  expect(p.h_seed.size() == p.d, "h_seed");
  expect(p.ln_gain.size() == p.d, "ln_gain");
  expect(p.ln_bias.size() == p.d, "ln_bias");
  bool finite = true;
  for_each_tensor(p, [&finite](const char*, const auto& t) { finite = finite && t.allFinite(); });
  if (!finite) throw std::invalid_argument("CellParams: non-finite entries");
}

// Glorot-uniform weights, zero biases, unit gain, and a small random seed
// transition vector.
template <typename T>
CellParams<T> init_params(int d, int d_x, Rng& rng) {
  if (d < 2) throw std::invalid_argument("init_params: d must be >= 2");
  if (d_x < 1) throw std::invalid_argument("init_params: d_x must be >= 1");
  CellParams<T> p;
  p.d = d;
  p.d_x = d_x;
  const int m = p.m();
  auto glorot = [&rng](MatX<T>& w, int rows, int cols) {
    w.resize(rows, cols);
    const double bound = std::sqrt(6.0 / (rows + cols));
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) w(r, c) = static_cast<T>(rng.uniform(-bound, bound));
  };
  glorot(p.w_c, d, m);
  p.b_c = VecX<T>::Zero(d);
  glorot(p.w_gci, 4 * d, m);
  p.b_gci = VecX<T>::Zero(4 * d);
  glorot(p.w_gct, d, m);
  p.b_gct = VecX<T>::Zero(d);
  glorot(p.w_go, 4 * d, m);
  p.b_go = VecX<T>::Zero(4 * d);
  p.b_o = VecX<T>::Zero(4 * d);
  glorot(p.w_y, kNumClasses, d);
  p.b_y = VecX<T>::Zero(kNumClasses);
  p.h_seed.resize(d);
  for (int i = 0; i < d; ++i) p.h_seed(i) = static_cast<T>(rng.normal(0.0, 0.1));
  p.ln_gain = VecX<T>::Ones(d);
  p.ln_bias = VecX<T>::Zero(d);
  return p;
}

// Per-node inputs. Slots of absent or non-previous-section neighbors stay
// exact zeros; h_in[0] is the self slot and is nonzero only at the seed.
template <typename T>
struct NodeInputs {
  VecX<T> x;                       // d_x
  std::array<VecX<T>, 4> c_in;     // [b,r,l,t], each d
  std::array<VecX<T>, 5> h_in;     // [c,b,r,l,t], each d
  std::array<VecX<T>, 4> y_in;     // [b,r,l,t], each 5
};

template <typename T>
NodeInputs<T> zero_inputs(int d, int d_x) {
  NodeInputs<T> in;
  in.x = VecX<T>::Zero(d_x);
  for (auto& v : in.c_in) v = VecX<T>::Zero(d);
  for (auto& v : in.h_in) v = VecX<T>::Zero(d);
  for (auto& v : in.y_in) v = VecX<T>::Zero(kNumClasses);
  return in;
}

template <typename T>
struct NodeOutputs {
  VecX<T> c;      // d
  VecX<T> h_out;  // 4d, blocks [b,r,l,t]
  VecX<T> y;      // 5, probabilities
};

// Cached intermediates of one node evaluation; sufficient to replay the
// forward pass and to run the exact backward pass.
template <typename T>
struct NodeTape {
  VecX<T> s;        // m
  MatX<T> c_in;     // d x 4, neighbor states in slot order
  VecX<T> ctilde;   // d
  VecX<T> g_ci;     // 4d
  VecX<T> g_ct;     // d
  VecX<T> v;        // d, pre-normalization state
  T mu = 0;
  T inv_std = 1;
  VecX<T> c;        // d
  VecX<T> tanh_c;   // d
  VecX<T> g_o;      // 4d
  VecX<T> y;        // 5
};

// s = [x, y_in(b,r,l,t), h_in(c,b,r,l,t)].
template <typename T>
VecX<T> assemble_s(const NodeInputs<T>& inputs) {
  const auto d_x = inputs.x.size();
  const auto d = inputs.h_in[0].size();
  for (const auto& v : inputs.h_in)
    if (v.size() != d) throw std::invalid_argument("assemble_s: h_in width mismatch");
  for (const auto& v : inputs.y_in)
    if (v.size() != kNumClasses) throw std::invalid_argument("assemble_s: y_in must be 5-wide");
  VecX<T> s(d_x + 4 * kNumClasses + 5 * d);
  s.head(d_x) = inputs.x;
  for (int i = 0; i < 4; ++i) s.segment(d_x + i * kNumClasses, kNumClasses) = inputs.y_in[i];
  for (int i = 0; i < 5; ++i) s.segment(d_x + 4 * kNumClasses + i * d, d) = inputs.h_in[i];
  return s;
}

template <typename T>
VecX<T> layer_norm(const VecX<T>& v, const VecX<T>& gain, const VecX<T>& bias, T eps) {
  const auto d = v.size();
  const T mu = v.mean();
  const T var = (v.array() - mu).square().sum() / static_cast<T>(d);
  const T inv_std = T(1) / std::sqrt(var + eps);
  return (gain.array() * ((v.array() - mu) * inv_std) + bias.array()).matrix();
}

namespace detail {

template <typename T>
inline void sigmoid_inplace(VecX<T>& v) {
  v = v.unaryExpr([](T z) { return T(1) / (T(1) + std::exp(-z)); });
}

template <typename T>
inline VecX<T> softmax(const VecX<T>& logits) {
  VecX<T> out = (logits.array() - logits.maxCoeff()).exp().matrix();
  out /= out.sum();
  return out;
}

}  // namespace detail

// One cell evaluation. When tape is non-null the intermediates needed by
// node_backward are recorded.
template <typename T>
NodeOutputs<T> node_forward(const CellParams<T>& params, const NodeInputs<T>& inputs,
                            NodeTape<T>* tape = nullptr) {
  const int d = params.d;
  if (inputs.x.size() != params.d_x) throw std::invalid_argument("node_forward: x width mismatch");
  for (const auto& v : inputs.c_in)
    if (v.size() != d) throw std::invalid_argument("node_forward: c_in width mismatch");

  const VecX<T> s = assemble_s(inputs);

  VecX<T> ctilde = params.w_c * s + params.b_c;
  ctilde = ctilde.array().tanh().matrix();

  VecX<T> g_ci = params.w_gci * s + params.b_gci;
  detail::sigmoid_inplace(g_ci);
  VecX<T> g_ct = params.w_gct * s + params.b_gct;
  detail::sigmoid_inplace(g_ct);

  VecX<T> v = ctilde.cwiseProduct(g_ct);
  for (int i = 0; i < 4; ++i) v += inputs.c_in[i].cwiseProduct(g_ci.segment(i * d, d));

  NodeOutputs<T> out;
  T mu = 0, inv_std = 1;
  if (params.use_layer_norm) {
    mu = v.mean();
    const T var = (v.array() - mu).square().sum() / static_cast<T>(d);
    inv_std = T(1) / std::sqrt(var + params.ln_eps);
    VecX<T> xhat = ((v.array() - mu) * inv_std).matrix();
    out.c = params.ln_affine
                ? (params.ln_gain.array() * xhat.array() + params.ln_bias.array()).matrix()
                : xhat;
  } else {
    out.c = v;
  }

  VecX<T> g_o = params.w_go * s + params.b_go;
  detail::sigmoid_inplace(g_o);

  VecX<T> tanh_c = out.c.array().tanh().matrix();
  out.h_out.resize(4 * d);
  for (int i = 0; i < 4; ++i)
    out.h_out.segment(i * d, d) =
        tanh_c.cwiseProduct(g_o.segment(i * d, d)) + params.b_o.segment(i * d, d);

  out.y = detail::softmax<T>(params.w_y * out.c + params.b_y);
  if (!out.y.allFinite() || !out.c.allFinite())
    throw NumericFailure("node_forward: non-finite output");

  if (tape) {
    tape->s = s;
    tape->c_in.resize(d, 4);
    for (int i = 0; i < 4; ++i) tape->c_in.col(i) = inputs.c_in[i];
    tape->ctilde = std::move(ctilde);
    tape->g_ci = std::move(g_ci);
    tape->g_ct = std::move(g_ct);
    tape->v = std::move(v);
    tape->mu = mu;
    tape->inv_std = inv_std;
    tape->c = out.c;
    tape->tanh_c = std::move(tanh_c);
    tape->g_o = std::move(g_o);
    tape->y = out.y;
  }
  return out;
}

// Incoming adjoints of one node: gradients w.r.t. its outputs as seen by
// later sections, plus the node's own cross-entropy term in label form
// (handled on the logit path as y - onehot).
template <typename T>
struct NodeAdjoint {
  VecX<T> c;       // d
  VecX<T> h_out;   // 4d
  VecX<T> y_prob;  // 5, gradient w.r.t. the probability vector
  int label = -1;  // -1 = no loss term at this node
  T label_weight = 0;
};

template <typename T>
NodeAdjoint<T> zero_adjoint(int d) {
  NodeAdjoint<T> a;
  a.c = VecX<T>::Zero(d);
  a.h_out = VecX<T>::Zero(4 * d);
  a.y_prob = VecX<T>::Zero(kNumClasses);
  return a;
}

// Gradients w.r.t. the node inputs; same slot layout as NodeInputs. Slots the
// caller zero-masked during routing are still populated here and it is the
// caller's job to drop them.
template <typename T>
using NodeInputGrads = NodeInputs<T>;

// Exact adjoint of node_forward. Parameter gradients are accumulated into
// grads; input gradients are returned.
template <typename T>
NodeInputGrads<T> node_backward(const CellParams<T>& params, const NodeTape<T>& tape,
                                const NodeAdjoint<T>& adj, CellParams<T>& grads) {
  const int d = params.d;
  const int d_x = params.d_x;
  if (tape.s.size() != params.m()) throw std::invalid_argument("node_backward: tape/params mismatch");
  if (adj.c.size() != d || adj.h_out.size() != 4 * d || adj.y_prob.size() != kNumClasses)
    throw std::invalid_argument("node_backward: adjoint width mismatch");

  // softmax head: probability-space adjoints go through the softmax Jacobian,
  // the cross-entropy term contributes (y - onehot) directly at the logits.
  VecX<T> dlogits = tape.y.cwiseProduct(
      (adj.y_prob.array() - adj.y_prob.dot(tape.y)).matrix());
  if (adj.label >= 0 && adj.label_weight != T(0)) {
    dlogits += adj.label_weight * tape.y;
    dlogits(adj.label) -= adj.label_weight;
  }
  grads.w_y += dlogits * tape.c.transpose();
  grads.b_y += dlogits;

  VecX<T> dc = adj.c + params.w_y.transpose() * dlogits;

  // h_out = tile4(tanh(c)) .* g_o + b_o
  grads.b_o += adj.h_out;
  VecX<T> dg_o = adj.h_out.cwiseProduct(
      (VecX<T>(4 * d) << tape.tanh_c, tape.tanh_c, tape.tanh_c, tape.tanh_c).finished());
  VecX<T> dtanh_c = VecX<T>::Zero(d);
  for (int i = 0; i < 4; ++i)
    dtanh_c += adj.h_out.segment(i * d, d).cwiseProduct(tape.g_o.segment(i * d, d));
  dc += dtanh_c.cwiseProduct((T(1) - tape.tanh_c.array().square()).matrix());

  VecX<T> ds = VecX<T>::Zero(params.m());
  auto sigmoid_block = [&](const VecX<T>& dgate, const VecX<T>& gate, const MatX<T>& w,
                           MatX<T>& dw, VecX<T>& db) {
    VecX<T> dpre = dgate.cwiseProduct(gate.cwiseProduct((T(1) - gate.array()).matrix()));
    dw += dpre * tape.s.transpose();
    db += dpre;
    ds.noalias() += w.transpose() * dpre;
  };
  sigmoid_block(dg_o, tape.g_o, params.w_go, grads.w_go, grads.b_go);

  // layer normalization
  VecX<T> dv;
  if (params.use_layer_norm) {
    VecX<T> xhat = ((tape.v.array() - tape.mu) * tape.inv_std).matrix();
    VecX<T> dxhat = dc;
    if (params.ln_affine) {
      grads.ln_gain += dc.cwiseProduct(xhat);
      grads.ln_bias += dc;
      dxhat = dc.cwiseProduct(params.ln_gain);
    }
    const T mean_dxhat = dxhat.mean();
    const T mean_dxhat_xhat = dxhat.dot(xhat) / static_cast<T>(d);
    dv = (tape.inv_std * (dxhat.array() - mean_dxhat - xhat.array() * mean_dxhat_xhat)).matrix();
  } else {
    dv = dc;
  }

  // v = sum_dir c_in[dir] .* g_ci[dir] + ctilde .* g_ct
  NodeInputGrads<T> din = zero_inputs<T>(d, d_x);
  VecX<T> dg_ci(4 * d);
  for (int i = 0; i < 4; ++i) {
    din.c_in[i] = dv.cwiseProduct(tape.g_ci.segment(i * d, d));
    dg_ci.segment(i * d, d) = dv.cwiseProduct(tape.c_in.col(i));
  }
  sigmoid_block(dg_ci, tape.g_ci, params.w_gci, grads.w_gci, grads.b_gci);

  VecX<T> dg_ct = dv.cwiseProduct(tape.ctilde);
  sigmoid_block(dg_ct, tape.g_ct, params.w_gct, grads.w_gct, grads.b_gct);

  VecX<T> dctilde = dv.cwiseProduct(tape.g_ct);
  VecX<T> dpre_c = dctilde.cwiseProduct((T(1) - tape.ctilde.array().square()).matrix());
  grads.w_c += dpre_c * tape.s.transpose();
  grads.b_c += dpre_c;
  ds.noalias() += params.w_c.transpose() * dpre_c;

  // split ds by the s layout
  din.x = ds.head(d_x);
  for (int i = 0; i < 4; ++i) din.y_in[i] = ds.segment(d_x + i * kNumClasses, kNumClasses);
  for (int i = 0; i < 5; ++i) din.h_in[i] = ds.segment(d_x + 4 * kNumClasses + i * d, d);
  return din;
}

}  // namespace cse

#endif  // CSE_CELL_HPP_
