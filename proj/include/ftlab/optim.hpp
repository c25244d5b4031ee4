#pragma once

#include <cstdint>
#include <vector>

#include "ftlab/model.hpp"

namespace ftlab::optim {

// Adam with decoupled weight decay and a switch for the bias-correction
// step. bias_correction=false reproduces the variant shipped with the
// original BERT release, which uses the raw moment estimates directly.
struct AdamConfig {
  double alpha = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool bias_correction = true;
  double weight_decay = 0.0;
  // Layer-norm and bias parameters are excluded from decay by default.
  bool decay_norm_and_bias = false;

  void validate() const;
  bool operator==(const AdamConfig&) const = default;
};

// Per-parameter moment accumulators plus the shared timestep.
struct AdamState {
  model::ModelParams m;
  model::ModelParams v;
  long t = 0;

  static AdamState init(const model::ModelParams& params);
};

struct ScheduleConfig {
  std::size_t total_steps = 1;
  double warmup_ratio = 0.10;
  double peak_lr = 2e-5;

  void validate() const;
  bool operator==(const ScheduleConfig&) const = default;
};

struct LlrdConfig {
  double decay = 1.0;  // multiplicative per-layer decay, top to bottom

  bool operator==(const LlrdConfig&) const = default;
};

// Moment update and parameter step for a single tensor at (1-based)
// timestep t. apply_decay enables the decoupled weight-decay subtraction.
void adam_update_tensor(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, long t,
                        const AdamConfig& config, double lr, bool apply_decay);

// One optimizer step over the whole parameter tree. lr_mult, when non-empty,
// holds one learning-rate multiplier per tensor in canonical traversal order
// (the LLRD hook). Throws on non-finite gradients, naming the parameter.
void adam_step(model::ModelParams& params, const model::ModelParams& grads, AdamState& state,
               const AdamConfig& config, double lr_t,
               const std::vector<double>& lr_mult = {});

// (1 - beta1^t) / sqrt(1 - beta2^t): the elementwise magnitude ratio of the
// uncorrected update to the bias-corrected one. Greater than 1 early in
// training whenever beta2 >= beta1, and tends to 1 as t grows.
double bias_ratio(long t, double beta1, double beta2);

// Slanted-triangular schedule: linear 0 -> peak over the first
// ceil(warmup_ratio * T) steps, then linear peak -> 0 at step T.
double lr_at(std::size_t step, const ScheduleConfig& schedule);

// Scales the whole gradient tree so its global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(model::ModelParams& grads, double max_norm = 1.0);

// Geometric learning-rate multipliers, index 0 = top layer. The embedding
// multiplier is one decay step below the bottom layer; head and pooler share
// the top rate.
std::vector<double> llrd_multipliers(std::size_t num_layers, double decay);

// Expands llrd_multipliers into per-tensor multipliers aligned with the
// canonical traversal order of the given config.
std::vector<double> llrd_tensor_multipliers(const model::ModelConfig& config, double decay);

}  // namespace ftlab::optim
