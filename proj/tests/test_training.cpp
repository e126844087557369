#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "cse/eval.hpp"
#include "cse/training.hpp"

using namespace cse;

namespace {

bool params_equal(const CellParams<float>& a, const CellParams<float>& b) {
  bool equal = true;
  for_each_tensor_pair(const_cast<CellParams<float>&>(a), b, [&equal](auto& x, const auto& y) {
    if (x != y) equal = false;
  });
  return equal;
}

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

Dataset tiny_dataset(int scenes, std::uint64_t seed) {
  DatasetConfig cfg;
  cfg.scenes = scenes;
  cfg.seed = seed;
  return gen_dataset(cfg);
}

}  // namespace

TEST_CASE("adam leaves parameters alone under zero gradients") {
  Rng rng(1);
  CellParams<float> params = init_params<float>(8, 6, rng);
  const CellParams<float> before = params;
  AdamState state = make_adam_state(params);
  adam_step(params, zeros_like(params), state, 0.001f);
  CHECK(params_equal(params, before));
  CHECK(state.step == 1);
}

TEST_CASE("first adam step moves a unit-gradient coordinate by about lr") {
  Rng rng(2);
  CellParams<float> params = init_params<float>(8, 6, rng);
  const float before = params.w_c(0, 0);
  CellParams<float> grads = zeros_like(params);
  grads.w_c(0, 0) = 1.0f;
  AdamState state = make_adam_state(params);
  adam_step(params, grads, state, 0.001f);
  CHECK(before - params.w_c(0, 0) == doctest::Approx(0.001).epsilon(1e-4));
  CHECK(params.w_c(0, 1) == doctest::Approx(0.0f + params.w_c(0, 1)));  // untouched
}

TEST_CASE("constant gradients move a coordinate monotonically") {
  Rng rng(3);
  CellParams<float> params = init_params<float>(8, 6, rng);
  CellParams<float> grads = zeros_like(params);
  grads.b_c(2) = 0.5f;
  AdamState state = make_adam_state(params);
  float prev = params.b_c(2);
  for (int step = 0; step < 5; ++step) {
    adam_step(params, grads, state, 0.01f);
    CHECK(params.b_c(2) < prev);
    prev = params.b_c(2);
  }
}

TEST_CASE("non-finite gradients are rejected with the tensor name") {
  Rng rng(4);
  CellParams<float> params = init_params<float>(8, 6, rng);
  CellParams<float> grads = zeros_like(params);
  grads.w_go(1, 1) = std::numeric_limits<float>::quiet_NaN();
  AdamState state = make_adam_state(params);
  try {
    adam_step(params, grads, state, 0.001f);
    FAIL("expected NumericFailure");
  } catch (const NumericFailure& e) {
    CHECK(std::string(e.what()).find("w_go") != std::string::npos);
  }
}

TEST_CASE("global norm clipping rescales large gradients") {
  Rng rng(5);
  CellParams<float> grads = zeros_like(init_params<float>(8, 6, rng));
  grads.b_c.setConstant(10.0f);
  const double before = clip_global_norm(grads, 5.0);
  CHECK(before > 5.0);
  double after_sq = 0.0;
  for_each_tensor(grads, [&after_sq](const char*, const auto& t) { after_sq += t.squaredNorm(); });
  CHECK(std::sqrt(after_sq) == doctest::Approx(5.0).epsilon(1e-4));
}

TEST_CASE("batches are half ground-truth, half augmented, and always valid") {
  const Dataset ds = tiny_dataset(3, 21);
  TrainConfig cfg;
  cfg.batch = 10;
  cfg.s = 9;
  Rng rng(8);

  auto box_overlap = [](const GridSpec& grid, const std::array<double, 4>& box) {
    const double ix = std::max(0.0, std::min(grid.origin_x + grid.width(), box[0] + box[2]) -
                                        std::max(grid.origin_x, box[0]));
    const double iy = std::max(0.0, std::min(grid.origin_y + grid.height(), box[1] + box[3]) -
                                        std::max(grid.origin_y, box[1]));
    return ix * iy / (box[2] * box[3]);
  };

  bool all_seeds_in_mask = true;
  bool all_overlaps_ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto batch = make_batch(ds, cfg, rng);
    REQUIRE(batch.size() == 10);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const TrainSample& sample = batch[i];
      all_seeds_in_mask = all_seeds_in_mask && sample.mask.at(sample.grid.seed);
      all_overlaps_ok = all_overlaps_ok && box_overlap(sample.grid, sample.box) >= 0.4;
      if (i < 5) {
        // ground-truth half: the lattice spans the instance box exactly
        CHECK(sample.grid.origin_x == sample.box[0]);
        CHECK(sample.grid.origin_y == sample.box[1]);
        CHECK(sample.grid.width() == doctest::Approx(sample.box[2]));
      }
    }
  }
  CHECK(all_seeds_in_mask);
  CHECK(all_overlaps_ok);
}

TEST_CASE("degenerate augmentation bounds reproduce the ground-truth grids") {
  const Dataset ds = tiny_dataset(1, 22);
  TrainConfig cfg;
  cfg.batch = 2;
  cfg.s = 9;
  cfg.aug_scale_lo = cfg.aug_scale_hi = 1.0;
  cfg.aug_reloc_lo = cfg.aug_reloc_hi = 0.0;
  Rng rng(9);
  const auto batch = make_batch(ds, cfg, rng);
  REQUIRE(batch.size() == 2);
  CHECK(batch[0].grid == batch[1].grid);
}

TEST_CASE("make_batch validates the dataset") {
  TrainConfig cfg;
  Rng rng(10);
  Dataset empty;
  CHECK_THROWS_AS(make_batch(empty, cfg, rng), std::invalid_argument);
  Dataset no_mask = tiny_dataset(1, 23);
  no_mask.scenes[0].instances[0].mask.data.clear();
  CHECK_THROWS_AS(make_batch(no_mask, cfg, rng), std::invalid_argument);
}

TEST_CASE("checkpoints round-trip byte-identically") {
  Rng rng(11);
  CellParams<float> params = init_params<float>(16, 8, rng);
  const std::string p1 = "/tmp/cse_test_ckpt1.cse";
  const std::string p2 = "/tmp/cse_test_ckpt2.cse";
  save_checkpoint(params, 25, p1);
  const Checkpoint loaded = load_checkpoint(p1);
  CHECK(loaded.s == 25);
  CHECK(params_equal(loaded.params, params));
  save_checkpoint(loaded.params, loaded.s, p2);
  CHECK(file_bytes(p1) == file_bytes(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("corrupt checkpoints are rejected") {
  Rng rng(12);
  CellParams<float> params = init_params<float>(16, 8, rng);
  const std::string path = "/tmp/cse_test_ckpt_bad.cse";
  save_checkpoint(params, 25, path);
  const std::string good = file_bytes(path);

  SUBCASE("bad magic") {
    std::string bytes = good;
    bytes[0] = 'X';
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("truncated body") {
    std::ofstream(path, std::ios::binary)
        .write(good.data(), static_cast<std::streamsize>(good.size() - 9));
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("trailing junk") {
    std::string bytes = good + "zz";
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("header dimensions disagree with the body") {
    // "d":16 -> "d":32 keeps the header length but breaks every tensor shape
    std::string bytes = good;
    const auto at = bytes.find("\"d\":16");
    REQUIRE(at != std::string::npos);
    bytes.replace(at, 6, "\"d\":32");
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  std::remove(path.c_str());
}

TEST_CASE("fit with zero iterations returns the initialized model") {
  const Dataset ds = tiny_dataset(1, 31);
  TrainConfig cfg;
  cfg.iters = 0;
  cfg.d = 8;
  cfg.s = 7;
  const FitResult result = fit(ds, cfg);
  CHECK(result.log.empty());
  Rng init_rng = Rng::substream(cfg.seed, 1);
  CHECK(params_equal(result.params, init_params<float>(cfg.d, cfg.d_x, init_rng)));
}

TEST_CASE("fit is deterministic and thread-count independent") {
  const Dataset ds = tiny_dataset(2, 32);
  TrainConfig cfg;
  cfg.iters = 12;
  cfg.d = 8;
  cfg.s = 7;
  cfg.batch = 4;
  cfg.seed = 5;
  cfg.log_every = 4;

  cfg.threads = 1;
  const FitResult a = fit(ds, cfg);
  const FitResult b = fit(ds, cfg);
  cfg.threads = 4;
  const FitResult c = fit(ds, cfg);

  REQUIRE(a.log.size() == b.log.size());
  REQUIRE(a.log.size() == c.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].loss == b.log[i].loss);
    CHECK(a.log[i].loss == c.log[i].loss);
    CHECK(a.log[i].lr == c.log[i].lr);
  }
  CHECK(params_equal(a.params, b.params));
  CHECK(params_equal(a.params, c.params));
}

TEST_CASE("learning rate follows the stepwise exponential schedule") {
  const Dataset ds = tiny_dataset(1, 33);
  TrainConfig cfg;
  cfg.iters = 9;
  cfg.d = 8;
  cfg.s = 7;
  cfg.batch = 2;
  cfg.decay = 0.5f;
  cfg.decay_every = 3;
  cfg.log_every = 1;
  const FitResult result = fit(ds, cfg);
  REQUIRE(result.log.size() == 9);
  CHECK(result.log[0].lr == doctest::Approx(cfg.lr0));
  for (std::size_t i = 1; i < result.log.size(); ++i)
    CHECK(result.log[i].lr <= result.log[i - 1].lr);
  CHECK(result.log[3].lr == doctest::Approx(cfg.lr0 * 0.5f));
  CHECK(result.log[6].lr == doctest::Approx(cfg.lr0 * 0.25f));
}

TEST_CASE("a tiny scene is overfit to near-zero loss") {
  const Dataset ds = tiny_dataset(1, 34);
  TrainConfig cfg;
  cfg.d = 16;
  cfg.s = 9;
  cfg.iters = 500;
  cfg.seed = 7;
  cfg.threads = 2;
  const FitResult result = fit(ds, cfg);
  REQUIRE_FALSE(result.log.empty());
  CHECK(result.log.back().loss < 0.05);

  // smoothed over 50-step windows the loss is non-increasing
  cfg.log_every = 1;
  cfg.iters = 300;
  const FitResult fine = fit(ds, cfg);
  double prev_window = 1e9;
  for (std::size_t start = 0; start + 50 <= fine.log.size(); start += 50) {
    double window = 0.0;
    for (std::size_t i = start; i < start + 50; ++i) window += fine.log[i].loss;
    window /= 50.0;
    CHECK(window <= prev_window + 1e-6);
    prev_window = window;
  }
}
