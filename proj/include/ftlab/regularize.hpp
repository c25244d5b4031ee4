#pragma once

#include "ftlab/model.hpp"
#include "ftlab/rng.hpp"

namespace ftlab::regularize {

struct MixoutConfig {
  double p = 0.0;  // per-parameter replacement probability, in [0, 1]
  // The freshly initialized head has no meaningful pretrained value, so it
  // is skipped unless asked for (in which case its own starting values act
  // as the reference).
  bool include_head = false;

  void validate() const;
};

struct PriorWdConfig {
  double lambda = 0.0;
  const model::PretrainedSnapshot* target = nullptr;

  void validate() const;
};

// Replaces each parameter scalar with its snapshot value with probability p,
// drawing from the data-order stream. Layer-norm parameters are never
// touched; the head is excluded by default. p=0 and p=1 short-circuit
// without consuming the rng.
void mixout_apply(model::ModelParams& params, const model::ModelParams& snapshot,
                  const MixoutConfig& cfg, Rng& order_rng);

// w <- w - lambda * (w - w_hat): shrink every parameter toward the snapshot.
void prior_wd_step(model::ModelParams& params, const model::ModelParams& snapshot, double lambda);

// w <- w - lambda * w: conventional weight decay (the zero-snapshot case).
void plain_wd_step(model::ModelParams& params, double lambda);

}  // namespace ftlab::regularize
