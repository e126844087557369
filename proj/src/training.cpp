#include "cse/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "cse/eval.hpp"

namespace cse {

AdamState make_adam_state(const CellParams<float>& params) {
  AdamState st;
  st.m = zeros_like(params);
  st.v = zeros_like(params);
  return st;
}

void adam_step(CellParams<float>& params, const CellParams<float>& grads, AdamState& state,
               float lr) {
  for_each_tensor(grads, [](const char* name, const auto& g) {
    if (!g.allFinite())
      throw NumericFailure(std::string("adam_step: non-finite gradient in ") + name);
  });
  ++state.step;
  const float bc1 = 1.0f - std::pow(state.beta1, static_cast<float>(state.step));
  const float bc2 = 1.0f - std::pow(state.beta2, static_cast<float>(state.step));

  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = state.beta1 * m + (1.0f - state.beta1) * g;
    v = (state.beta2 * v.array() + (1.0f - state.beta2) * g.array().square()).matrix();
    const auto m_hat = m.array() / bc1;
    const auto v_hat = v.array() / bc2;
    p = (p.array() - lr * m_hat / (v_hat.sqrt() + state.eps)).matrix();
  };
  update(params.w_c, grads.w_c, state.m.w_c, state.v.w_c);
  update(params.b_c, grads.b_c, state.m.b_c, state.v.b_c);
  update(params.w_gci, grads.w_gci, state.m.w_gci, state.v.w_gci);
  update(params.b_gci, grads.b_gci, state.m.b_gci, state.v.b_gci);
  update(params.w_gct, grads.w_gct, state.m.w_gct, state.v.w_gct);
  update(params.b_gct, grads.b_gct, state.m.b_gct, state.v.b_gct);
  update(params.w_go, grads.w_go, state.m.w_go, state.v.w_go);
  update(params.b_go, grads.b_go, state.m.b_go, state.v.b_go);
  update(params.b_o, grads.b_o, state.m.b_o, state.v.b_o);
  update(params.w_y, grads.w_y, state.m.w_y, state.v.w_y);
  update(params.b_y, grads.b_y, state.m.b_y, state.v.b_y);
  update(params.h_seed, grads.h_seed, state.m.h_seed, state.v.h_seed);
  if (params.ln_affine) {
    update(params.ln_gain, grads.ln_gain, state.m.ln_gain, state.v.ln_gain);
    update(params.ln_bias, grads.ln_bias, state.m.ln_bias, state.v.ln_bias);
  }
}

double clip_global_norm(CellParams<float>& grads, double max_norm) {
  double sq = 0.0;
  for_each_tensor(grads, [&sq](const char*, const auto& g) {
    sq += static_cast<double>(g.template cast<double>().squaredNorm());
  });
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const float scale = static_cast<float>(max_norm / norm);
    for_each_tensor(grads, [scale](const char*, auto& g) { g *= scale; });
  }
  return norm;
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr0 > 0.0f)) throw std::invalid_argument("TrainConfig: lr0 must be positive");
  if (!(cfg.decay > 0.0f && cfg.decay <= 1.0f))
    throw std::invalid_argument("TrainConfig: decay must be in (0, 1]");
  if (cfg.batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
  if (cfg.iters < 0) throw std::invalid_argument("TrainConfig: iters must be >= 0");
  if (cfg.decay_every < 1) throw std::invalid_argument("TrainConfig: decay_every must be >= 1");
  if (cfg.s < 3) throw std::invalid_argument("TrainConfig: grid size must be >= 3");
  if (cfg.aug_scale_lo < 1.0 || cfg.aug_scale_hi < cfg.aug_scale_lo)
    throw std::invalid_argument("TrainConfig: bad rescale bounds");
  if (cfg.aug_reloc_lo < 0.0 || cfg.aug_reloc_hi < cfg.aug_reloc_lo)
    throw std::invalid_argument("TrainConfig: bad relocation bounds");
}

namespace {

double box_overlap_fraction(const GridSpec& grid, const std::array<double, 4>& box) {
  const double gx0 = grid.origin_x, gx1 = grid.origin_x + grid.width();
  const double gy0 = grid.origin_y, gy1 = grid.origin_y + grid.height();
  const double bx0 = box[0], bx1 = box[0] + box[2];
  const double by0 = box[1], by1 = box[1] + box[3];
  const double ix = std::max(0.0, std::min(gx1, bx1) - std::max(gx0, bx0));
  const double iy = std::max(0.0, std::min(gy1, by1) - std::max(gy0, by0));
  const double box_area = box[2] * box[3];
  return box_area > 0.0 ? (ix * iy) / box_area : 0.0;
}

// Ground-truth grid for an instance: box-aligned lattice with the seed pulled
// into the mask when the box center misses the region.
TrainSample ground_truth_sample(const Scene& scene, const Instance& inst, int s) {
  GridSpec grid = build_grid_from_box(inst.box[0], inst.box[1], inst.box[2], inst.box[3], s);
  NodeMask mask = node_mask_from_raster(grid, inst.mask);
  if (mask.count() == 0)
    throw std::invalid_argument("make_batch: instance mask covers no grid node");
  grid = with_seed_in_mask(grid, mask);
  TrainSample sample;
  sample.grid = grid;
  sample.plan = compute_sections(grid);
  sample.mask = std::move(mask);
  sample.sampled = bilinear_sample<float>(scene.features, grid);
  sample.box = inst.box;
  return sample;
}

}  // namespace

std::vector<TrainSample> make_batch(const Dataset& dataset, const TrainConfig& cfg, Rng& rng) {
  if (dataset.scenes.empty()) throw std::invalid_argument("make_batch: empty dataset");
  for (const Scene& scene : dataset.scenes)
    for (const Instance& inst : scene.instances)
      if (inst.mask.data.empty()) throw std::invalid_argument("make_batch: instance without mask");

  std::vector<TrainSample> batch;
  batch.reserve(cfg.batch);
  const int n_gt = (cfg.batch + 1) / 2;
  for (int i = 0; i < cfg.batch; ++i) {
    const auto& scene =
        dataset.scenes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(dataset.scenes.size()) - 1))];
    const auto& inst =
        scene.instances[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(scene.instances.size()) - 1))];
    TrainSample gt = ground_truth_sample(scene, inst, cfg.s);
    if (i < n_gt) {
      batch.push_back(std::move(gt));
      continue;
    }
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const double delta_s = rng.uniform(cfg.aug_scale_lo, cfg.aug_scale_hi);
      const double delta_c = rng.uniform(cfg.aug_reloc_lo, cfg.aug_reloc_hi);
      const GridSpec scaled = scale_about_center(gt.grid, delta_s);
      NodeMask mask = node_mask_from_raster(scaled, inst.mask);
      if (mask.count() == 0) continue;
      GridSpec seeded = gt.grid;
      seeded.seed = with_seed_in_mask(scaled, mask).seed;
      const GridSpec grid = perturb_grid(seeded, delta_s, delta_c, mask, rng);
      if (box_overlap_fraction(grid, inst.box) < cfg.min_box_overlap) continue;
      TrainSample sample;
      sample.grid = grid;
      sample.plan = compute_sections(grid);
      sample.mask = std::move(mask);
      sample.sampled = bilinear_sample<float>(scene.features, grid);
      sample.box = inst.box;
      batch.push_back(std::move(sample));
      placed = true;
    }
    if (!placed) batch.push_back(std::move(gt));  // augmentation fell through
  }
  return batch;
}

FitResult fit(const Dataset& dataset, const TrainConfig& cfg) {
  validate(cfg);
  if (dataset.scenes.empty()) throw std::invalid_argument("fit: empty dataset");
  for (const Scene& scene : dataset.scenes) {
    if (scene.features.channels != cfg.d_x)
      throw std::invalid_argument("fit: dataset feature width does not match d_x");
    for (const Instance& inst : scene.instances)
      if (inst.mask.data.empty()) throw std::invalid_argument("fit: dataset missing masks");
  }

  Rng init_rng = Rng::substream(cfg.seed, 1);
  Rng batch_rng = Rng::substream(cfg.seed, 2);

  FitResult result;
  result.params = init_params<float>(cfg.d, cfg.d_x, init_rng);
  AdamState adam = make_adam_state(result.params);

  std::vector<CellParams<float>> sample_grads;
  std::vector<double> sample_losses;
  for (int step = 0; step < cfg.iters; ++step) {
    const float lr = cfg.lr0 * std::pow(cfg.decay, static_cast<float>(step / cfg.decay_every));
    std::vector<TrainSample> batch = make_batch(dataset, cfg, batch_rng);

    sample_grads.assign(batch.size(), zeros_like(result.params));
    sample_losses.assign(batch.size(), 0.0);
    parallel_for(batch.size(), cfg.threads, [&](std::size_t i) {
      const TrainSample& sample = batch[i];
      ForwardOptions opts;
      opts.with_tape = true;
      const GridState<float> state = forward(result.params, sample.sampled, sample.plan, opts);
      const LabelPlan labels = label_nodes(sample.mask, sample.plan, state);
      sample_losses[i] = cse_loss(state, labels).total;
      sample_grads[i] = backward(result.params, state, labels, sample.plan);
    });

    // reduce in fixed sample order for thread-count independence
    CellParams<float> grads = zeros_like(result.params);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for_each_tensor_pair(grads, sample_grads[i], [](auto& g, const auto& sg) { g += sg; });
      loss += sample_losses[i];
    }
    const float inv_b = 1.0f / static_cast<float>(batch.size());
    for_each_tensor(grads, [inv_b](const char*, auto& g) { g *= inv_b; });
    loss /= static_cast<double>(batch.size());

    clip_global_norm(grads, cfg.clip_norm);
    adam_step(result.params, grads, adam, lr);

    if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.iters)
      result.log.push_back({step, lr, loss});
  }
  return result;
}

namespace {

constexpr char kCheckpointMagic[4] = {'C', 'S', 'E', '1'};

void append_tensor_f32(std::string& out, const MatX<float>& t) {
  for (Eigen::Index r = 0; r < t.rows(); ++r)
    for (Eigen::Index c = 0; c < t.cols(); ++c) {
      float v = t(r, c);
      char b[4];
      std::memcpy(b, &v, 4);
      out.append(b, 4);
    }
}

void append_tensor_f32(std::string& out, const VecX<float>& t) {
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    float v = t(i);
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
  }
}

}  // namespace

void save_checkpoint(const CellParams<float>& params, int s, const std::string& path) {
  validate(params);
  nlohmann::json header;
  header["version"] = 1;
  header["d"] = params.d;
  header["d_x"] = params.d_x;
  header["s"] = s;
  header["ln_eps"] = params.ln_eps;
  header["use_layer_norm"] = params.use_layer_norm;
  header["ln_affine"] = params.ln_affine;
  nlohmann::json tensors = nlohmann::json::array();
  std::string body;
  for_each_tensor(params, [&](const char* name, const auto& t) {
    nlohmann::json jt;
    jt["name"] = name;
    if constexpr (std::remove_reference_t<decltype(t)>::ColsAtCompileTime == 1)
      jt["shape"] = {t.size()};
    else
      jt["shape"] = {t.rows(), t.cols()};
    tensors.push_back(jt);
    append_tensor_f32(body, t);
  });
  header["tensors"] = tensors;
  const std::string header_str = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("save_checkpoint: cannot open " + path);
  os.write(kCheckpointMagic, 4);
  const auto len = static_cast<std::uint32_t>(header_str.size());
  unsigned char lb[4] = {static_cast<unsigned char>(len & 0xff),
                         static_cast<unsigned char>((len >> 8) & 0xff),
                         static_cast<unsigned char>((len >> 16) & 0xff),
                         static_cast<unsigned char>((len >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(lb), 4);
  os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  os.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!os) throw FormatError("save_checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("load_checkpoint: cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError("load_checkpoint: bad magic in " + path);
  unsigned char lb[4];
  if (!is.read(reinterpret_cast<char*>(lb), 4))
    throw FormatError("load_checkpoint: truncated header length in " + path);
  const std::uint32_t len = static_cast<std::uint32_t>(lb[0]) |
                            (static_cast<std::uint32_t>(lb[1]) << 8) |
                            (static_cast<std::uint32_t>(lb[2]) << 16) |
                            (static_cast<std::uint32_t>(lb[3]) << 24);
  if (len > (1u << 20)) throw FormatError("load_checkpoint: implausible header size in " + path);
  std::string header_str(len, '\0');
  if (!is.read(header_str.data(), len))
    throw FormatError("load_checkpoint: truncated header in " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("load_checkpoint: malformed header: " + std::string(e.what()));
  }

  Checkpoint ckpt;
  try {
    if (header.at("version").get<int>() != 1)
      throw FormatError("load_checkpoint: unsupported version");
    const int d = header.at("d").get<int>();
    const int d_x = header.at("d_x").get<int>();
    ckpt.s = header.at("s").get<int>();
    if (d < 2 || d_x < 1) throw FormatError("load_checkpoint: implausible dimensions");

    Rng dummy(0);
    ckpt.params = init_params<float>(d, d_x, dummy);
    ckpt.params.ln_eps = header.at("ln_eps").get<float>();
    ckpt.params.use_layer_norm = header.at("use_layer_norm").get<bool>();
    ckpt.params.ln_affine = header.at("ln_affine").get<bool>();

    const auto& tensors = header.at("tensors");
    std::size_t ti = 0;
    for_each_tensor(ckpt.params, [&](const char* name, auto& t) {
      if (ti >= tensors.size()) throw FormatError("load_checkpoint: missing tensor entry");
      const auto& jt = tensors.at(ti++);
      if (jt.at("name").get<std::string>() != name)
        throw FormatError(std::string("load_checkpoint: tensor order mismatch at ") + name);
      const auto& shape = jt.at("shape");
      if constexpr (std::remove_reference_t<decltype(t)>::ColsAtCompileTime == 1) {
        if (shape.size() != 1 || shape.at(0).get<Eigen::Index>() != t.size())
          throw FormatError(std::string("load_checkpoint: shape mismatch for ") + name);
      } else {
        if (shape.size() != 2 || shape.at(0).get<Eigen::Index>() != t.rows() ||
            shape.at(1).get<Eigen::Index>() != t.cols())
          throw FormatError(std::string("load_checkpoint: shape mismatch for ") + name);
      }
    });
    if (ti != tensors.size()) throw FormatError("load_checkpoint: extra tensor entries");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("load_checkpoint: header schema error: " + std::string(e.what()));
  }

  // body, in header order, row-major
  auto read_f32 = [&is, &path]() {
    char b[4];
    if (!is.read(b, 4)) throw FormatError("load_checkpoint: truncated body in " + path);
    float v;
    std::memcpy(&v, b, 4);
    return v;
  };
  for_each_tensor(ckpt.params, [&](const char*, auto& t) {
    using Tensor = std::remove_reference_t<decltype(t)>;
    if constexpr (Tensor::ColsAtCompileTime == 1) {
      for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = read_f32();
    } else {
      for (Eigen::Index r = 0; r < t.rows(); ++r)
        for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = read_f32();
    }
  });
  char extra;
  if (is.read(&extra, 1)) throw FormatError("load_checkpoint: trailing bytes in " + path);
  validate(ckpt.params);
  return ckpt;
}

}  // namespace cse
