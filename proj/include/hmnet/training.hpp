#pragma once

// RAdam with linear warmup, global-norm clipping, gradient accumulation and
// binary checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "hmnet/data.hpp"
#include "hmnet/model.hpp"
#include "json.hpp"

namespace hmnet {

struct TrainConfig {
  Index warmup_steps = 16000;
  double peak_lr = 1e-3;
  double initial_lr = 1e-9;
  double clip_norm = 2.0;
  Index accumulation_steps = 16;
  Index max_steps = 300000;
  Index checkpoint_every = 1000;
  Index eval_every = 1000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

// Linear ramp from initial_lr at t = 0 to peak_lr at t = warmup_steps, then flat.
double lr_at_step(Index t, const TrainConfig& cfg);

struct RAdamState {
  Index step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Tensor::Matrix> m;
  std::vector<Tensor::Matrix> v;

  // Zero moments shaped like `params`.
  static RAdamState init(std::span<const Tensor> params, double beta1 = 0.9, double beta2 = 0.999,
                         double epsilon = 1e-8);
};

// One rectified-Adam update of `params` in place from explicit `grads`.
void radam_step(std::span<Tensor> params, std::span<const Tensor::Matrix> grads, RAdamState& state,
                double lr);
// Same, reading each parameter's accumulated gradient.
void radam_step(std::span<Tensor> params, RAdamState& state, double lr);

// Global L2 norm over every gradient.
double global_grad_norm(std::span<const Tensor::Matrix> grads);

// Rescales all grads by max_norm/norm when the global norm exceeds max_norm.
// Returns the pre-clip norm. Throws NonFiniteGradient on NaN/inf entries.
double clip_gradients(std::span<Tensor::Matrix> grads, double max_norm);

struct StepResult {
  Index step = 0;
  double lr = 0.0;
  double loss = 0.0;       // mean micro-batch loss
  double grad_norm = 0.0;  // before clipping
};

// One optimizer step over `batch` micro-batches (one meeting each): every
// backward is scaled by 1/accumulation_steps, grads are clipped once, one
// RAdam step is taken at lr_at_step(state.step) and grads are zeroed.
StepResult accumulated_step(HMNet& net, std::span<const data::MeetingIds> batch, RAdamState& state,
                            const TrainConfig& cfg, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Training loop

struct TrainCallbacks {
  // One record per optimizer step.
  std::function<void(const StepResult&)> on_step;
  // Dev metric, higher is better; evaluated every eval_every steps and at the end.
  std::function<double(const HMNet&)> dev_score;
  // Called every checkpoint_every steps and at the end with the selected model.
  std::function<void(const HMNet&, const RAdamState&, Index step)> on_checkpoint;
};

struct TrainSummary {
  Index steps = 0;
  double final_loss = 0.0;
  std::optional<double> best_dev_score;
  Index best_step = 0;
  std::vector<double> losses;
};

// Runs cfg.max_steps optimizer steps over epoch-shuffled micro-batches. With
// a dev_score callback, `net` ends holding the best-scoring parameters.
TrainSummary train(HMNet& net, RAdamState& state, std::span<const data::MeetingIds> corpus,
                   const TrainConfig& cfg, const TrainCallbacks& callbacks = {});

// ---------------------------------------------------------------------------
// Checkpoints. Little-endian: "HMN1", u32 version, u64 length + JSON config
// text, u64 parameter count, then per parameter u32 name length, name, u32
// rank, u64 extents, raw float64 values. The optimizer state follows: u64
// step and the m and v payloads in parameter order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  HMNetConfig model;
  TrainConfig train;
  data::Lexicon lexicon;
  HMNetParams params;
  RAdamState optimizer;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hmnet
