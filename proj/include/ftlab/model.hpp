#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ftlab/rng.hpp"
#include "ftlab/tensor.hpp"

namespace ftlab::model {

struct ModelConfig {
  std::size_t vocab_size = 64;
  std::size_t max_seq_len = 32;
  std::size_t hidden_dim = 64;
  std::size_t num_heads = 4;
  std::size_t num_blocks = 4;
  std::size_t ffn_dim = 256;
  double dropout_p = 0.1;
  std::size_t num_classes = 2;  // 1 selects the regression head
  double init_std = 0.02;

  void validate() const;
  std::size_t head_dim() const { return hidden_dim / num_heads; }
  bool operator==(const ModelConfig&) const = default;
};

struct BlockParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor norm1_gain, norm1_bias;
  Tensor w1, b1, w2, b2;
  Tensor norm2_gain, norm2_bias;
  bool operator==(const BlockParams&) const = default;
};

// The whole parameter tree. Blocks are indexed 1..N with N the topmost;
// blocks_[0] is block 1.
struct ModelParams {
  ModelConfig config;
  Tensor tok_emb, pos_emb;
  std::vector<BlockParams> blocks;
  Tensor pooler_w, pooler_b;
  Tensor head_w, head_b;
  bool operator==(const ModelParams&) const = default;
};

// Frozen copy of all parameters at fine-tuning start: the reference point for
// re-init diffs, mixout, weight decay toward the start, and L2 traces.
struct PretrainedSnapshot {
  ModelParams params;
};

struct ReinitSpec {
  bool reinit_pooler = false;
  std::size_t top_blocks = 0;  // L: number of topmost blocks to redraw
  bool operator==(const ReinitSpec&) const = default;
};

enum class ParamKind { Weight, Bias, NormGain, NormBias };
enum class Component { Embeddings, Block, Pooler, Head };

struct ParamInfo {
  std::string name;
  Component component;
  std::size_t block = 0;  // 1..N when component == Block
  ParamKind kind;
};

// Canonical traversal order: embeddings, block 1..N (each in declared field
// order), pooler, head. Everything that needs a stable order — init draws,
// checkpoints, flattening, gradients — uses this.
void for_each_tensor(ModelParams& p, const std::function<void(const ParamInfo&, Tensor&)>& fn);
void for_each_tensor(const ModelParams& p, const std::function<void(const ParamInfo&, const Tensor&)>& fn);
std::vector<Tensor*> tensor_list(ModelParams& p);
std::vector<const Tensor*> tensor_list(const ModelParams& p);
std::vector<ParamInfo> param_infos(const ModelConfig& c);

ModelParams zeros_like(const ModelParams& p);
std::uint64_t hash_params(const ModelParams& p);

// Weight matrices ~ N(0, init_std^2), biases 0, layer-norm gain 1 / bias 0.
// Draws happen in canonical traversal order.
ModelParams init_params(const ModelConfig& config, Rng& weight_rng);

// Redraws the head (weight ~ N(0, sigma^2), bias 0) in place; fine-tuning
// always starts from a fresh task head.
void init_head(ModelParams& p, Rng& weight_rng);

// Redraws blocks N-L+1..N and optionally the pooler by the init_params
// rules; all other tensors are returned bit-identical.
ModelParams apply_reinit(const ModelParams& p, const ReinitSpec& spec, Rng& weight_rng);

// All tensors of one block flattened in canonical field order
// (wq,bq,wk,bk,wv,bv,wo,bo,norm1 gain/bias,w1,b1,w2,b2,norm2 gain/bias).
std::vector<double> block_concat(const ModelParams& p, std::size_t block_index);

// One batch of encoded inputs. tokens/mask are B x S; mask 1 marks real
// positions, 0 padding. Position 0 must be the [CLS] token. labels are class
// indices (as doubles) or regression targets.
struct Batch {
  std::vector<std::vector<int>> tokens;
  std::vector<std::vector<std::uint8_t>> mask;
  std::vector<double> labels;
  std::size_t size() const { return tokens.size(); }
};

// Tape handles for every parameter tensor, mirroring ModelParams.
struct BlockVars {
  Tape::Var wq, bq, wk, bk, wv, bv, wo, bo;
  Tape::Var norm1_gain, norm1_bias;
  Tape::Var w1, b1, w2, b2;
  Tape::Var norm2_gain, norm2_bias;
};
struct ParamVars {
  Tape::Var tok_emb, pos_emb;
  std::vector<BlockVars> blocks;
  Tape::Var pooler_w, pooler_b;
  Tape::Var head_w, head_b;
};

ParamVars make_leaves(Tape& tape, const ModelParams& p);

// Runs the encoder stack; returns the final hidden states (S_i x d) per
// example, with padding positions dropped from attention entirely.
std::vector<Tape::Var> encode_batch(Tape& tape, const ParamVars& pv, const ModelConfig& cfg,
                                    const Batch& batch, Rng& order_rng, bool training);

// [CLS] hidden -> pooler tanh -> head. Returns B x C logits (C=1: scalar
// predictions).
Tape::Var forward_logits(Tape& tape, const ParamVars& pv, const ModelConfig& cfg,
                         const Batch& batch, Rng& order_rng, bool training);

// Cross-entropy for C >= 2 (labels as class indices), MSE for C == 1.
Tape::Var task_loss(Tape& tape, Tape::Var logits, const std::vector<double>& labels,
                    std::size_t num_classes);

// Gradients gathered back into a ModelParams-shaped tree after backward().
ModelParams collect_grads(const Tape& tape, const ParamVars& pv, const ModelConfig& cfg);

// Inference-style forward pass returning the logits tensor.
Tensor forward(const ModelParams& p, const Batch& batch, Rng& order_rng, bool training);

// Checkpoint file: little-endian binary; magic "FTLABCK1", the config
// fields, then each tensor in canonical order as (name, shape, row-major
// f64 data). Load/save round-trips are bit-exact.
void save_checkpoint(const ModelParams& p, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace ftlab::model
