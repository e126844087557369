#ifndef CSE_TRAINING_HPP_
#define CSE_TRAINING_HPP_

#include <string>
#include <vector>

#include "cse/cell.hpp"
#include "cse/supervision.hpp"
#include "cse/synth.hpp"

namespace cse {

struct AdamState {
  CellParams<float> m;
  CellParams<float> v;
  long step = 0;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

AdamState make_adam_state(const CellParams<float>& params);

// Standard Adam update with bias correction.
void adam_step(CellParams<float>& params, const CellParams<float>& grads, AdamState& state,
               float lr);

// Scales gradients so their global euclidean norm does not exceed max_norm;
// returns the pre-clip norm.
double clip_global_norm(CellParams<float>& grads, double max_norm);

struct TrainConfig {
  int d = 32;
  int d_x = 8;
  int s = 25;
  float lr0 = 1e-3f;
  float decay = 0.9f;
  int decay_every = 2000;
  int iters = 20000;
  int batch = 10;
  std::uint64_t seed = 0;
  // augmentation bounds
  double aug_scale_lo = 1.0;
  double aug_scale_hi = 1.6;
  double aug_reloc_lo = 0.0;
  double aug_reloc_hi = 1.0;
  double min_box_overlap = 0.4;
  float clip_norm = 5.0f;
  int log_every = 100;
  unsigned threads = 1;
};

void validate(const TrainConfig& cfg);

struct TrainSample {
  SampledGrid<float> sampled;
  SectionPlan plan;
  NodeMask mask;
  GridSpec grid;
  std::array<double, 4> box{};  // the instance box the grid was built from
};

// Assembles one batch: the first half samples ground-truth grids directly,
// the second half rescaled/reseeded augmentations that keep at least
// min_box_overlap of the instance box covered and the seed inside the mask.
std::vector<TrainSample> make_batch(const Dataset& dataset, const TrainConfig& cfg, Rng& rng);

struct TrainLogEntry {
  int step = 0;
  float lr = 0.0f;
  double loss = 0.0;
};

struct FitResult {
  CellParams<float> params;
  std::vector<TrainLogEntry> log;
};

// Full optimization loop: forward, relabel, loss, backward, clipped Adam step
// with the stepwise-exponential learning-rate schedule. Deterministic for a
// fixed seed regardless of thread count.
FitResult fit(const Dataset& dataset, const TrainConfig& cfg);

// "CSE1" checkpoint: magic, u32le header length, JSON header
// {version, d, d_x, s, tensors: [{name, shape}], ...}, then float32le tensor
// bodies (row-major) in header order. Round-trips are byte-identical.
void save_checkpoint(const CellParams<float>& params, int s, const std::string& path);

struct Checkpoint {
  CellParams<float> params;
  int s = 0;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace cse

#endif  // CSE_TRAINING_HPP_
