#include "ftlab/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ftlab::model {

void ModelConfig::validate() const {
  if (hidden_dim == 0 || num_heads == 0 || hidden_dim % num_heads != 0)
    throw std::invalid_argument("model config: hidden_dim must be a positive multiple of num_heads");
  if (num_blocks < 1) throw std::invalid_argument("model config: num_blocks must be >= 1");
  if (init_std <= 0.0) throw std::invalid_argument("model config: init_std must be positive");
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw std::invalid_argument("model config: dropout_p must be in [0, 1)");
  if (vocab_size == 0 || max_seq_len == 0 || ffn_dim == 0 || num_classes == 0)
    throw std::invalid_argument("model config: sizes must be positive");
}

namespace {

ModelParams make_shaped(const ModelConfig& c) {
  ModelParams p;
  p.config = c;
  std::size_t d = c.hidden_dim;
  p.tok_emb = Tensor({c.vocab_size, d});
  p.pos_emb = Tensor({c.max_seq_len, d});
  p.blocks.resize(c.num_blocks);
  for (BlockParams& b : p.blocks) {
    b.wq = Tensor({d, d});
    b.bq = Tensor({d});
    b.wk = Tensor({d, d});
    b.bk = Tensor({d});
    b.wv = Tensor({d, d});
    b.bv = Tensor({d});
    b.wo = Tensor({d, d});
    b.bo = Tensor({d});
    b.norm1_gain = Tensor({d});
    b.norm1_bias = Tensor({d});
    b.w1 = Tensor({d, c.ffn_dim});
    b.b1 = Tensor({c.ffn_dim});
    b.w2 = Tensor({c.ffn_dim, d});
    b.b2 = Tensor({d});
    b.norm2_gain = Tensor({d});
    b.norm2_bias = Tensor({d});
  }
  p.pooler_w = Tensor({d, d});
  p.pooler_b = Tensor({d});
  p.head_w = Tensor({d, c.num_classes});
  p.head_b = Tensor({c.num_classes});
  return p;
}

template <typename Params, typename Fn>
void visit(Params& p, Fn&& fn) {
  using ftlab::model::Component;
  using ftlab::model::ParamInfo;
  using ftlab::model::ParamKind;
  fn(ParamInfo{"embeddings.token", Component::Embeddings, 0, ParamKind::Weight}, p.tok_emb);
  fn(ParamInfo{"embeddings.position", Component::Embeddings, 0, ParamKind::Weight}, p.pos_emb);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    std::size_t idx = i + 1;
    std::string base = "block" + std::to_string(idx) + ".";
    fn(ParamInfo{base + "attn.wq", Component::Block, idx, ParamKind::Weight}, b.wq);
    fn(ParamInfo{base + "attn.bq", Component::Block, idx, ParamKind::Bias}, b.bq);
    fn(ParamInfo{base + "attn.wk", Component::Block, idx, ParamKind::Weight}, b.wk);
    fn(ParamInfo{base + "attn.bk", Component::Block, idx, ParamKind::Bias}, b.bk);
    fn(ParamInfo{base + "attn.wv", Component::Block, idx, ParamKind::Weight}, b.wv);
    fn(ParamInfo{base + "attn.bv", Component::Block, idx, ParamKind::Bias}, b.bv);
    fn(ParamInfo{base + "attn.wo", Component::Block, idx, ParamKind::Weight}, b.wo);
    fn(ParamInfo{base + "attn.bo", Component::Block, idx, ParamKind::Bias}, b.bo);
    fn(ParamInfo{base + "norm1.gain", Component::Block, idx, ParamKind::NormGain}, b.norm1_gain);
    fn(ParamInfo{base + "norm1.bias", Component::Block, idx, ParamKind::NormBias}, b.norm1_bias);
    fn(ParamInfo{base + "ffn.w1", Component::Block, idx, ParamKind::Weight}, b.w1);
    fn(ParamInfo{base + "ffn.b1", Component::Block, idx, ParamKind::Bias}, b.b1);
    fn(ParamInfo{base + "ffn.w2", Component::Block, idx, ParamKind::Weight}, b.w2);
    fn(ParamInfo{base + "ffn.b2", Component::Block, idx, ParamKind::Bias}, b.b2);
    fn(ParamInfo{base + "norm2.gain", Component::Block, idx, ParamKind::NormGain}, b.norm2_gain);
    fn(ParamInfo{base + "norm2.bias", Component::Block, idx, ParamKind::NormBias}, b.norm2_bias);
  }
  fn(ParamInfo{"pooler.weight", Component::Pooler, 0, ParamKind::Weight}, p.pooler_w);
  fn(ParamInfo{"pooler.bias", Component::Pooler, 0, ParamKind::Bias}, p.pooler_b);
  fn(ParamInfo{"head.weight", Component::Head, 0, ParamKind::Weight}, p.head_w);
  fn(ParamInfo{"head.bias", Component::Head, 0, ParamKind::Bias}, p.head_b);
}

void fill_init(const ParamInfo& info, Tensor& t, double sigma, Rng& rng) {
  switch (info.kind) {
    case ParamKind::Weight:
      for (double& v : t.data) v = rng.normal(0.0, sigma);
      break;
    case ParamKind::Bias:
    case ParamKind::NormBias:
      std::fill(t.data.begin(), t.data.end(), 0.0);
      break;
    case ParamKind::NormGain:
      std::fill(t.data.begin(), t.data.end(), 1.0);
      break;
  }
}

}  // namespace

void for_each_tensor(ModelParams& p, const std::function<void(const ParamInfo&, Tensor&)>& fn) {
  visit(p, fn);
}

void for_each_tensor(const ModelParams& p, const std::function<void(const ParamInfo&, const Tensor&)>& fn) {
  visit(p, fn);
}

std::vector<Tensor*> tensor_list(ModelParams& p) {
  std::vector<Tensor*> out;
  visit(p, [&](const ParamInfo&, Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<const Tensor*> tensor_list(const ModelParams& p) {
  std::vector<const Tensor*> out;
  visit(p, [&](const ParamInfo&, const Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<ParamInfo> param_infos(const ModelConfig& c) {
  ModelParams shaped = make_shaped(c);
  std::vector<ParamInfo> out;
  visit(shaped, [&](const ParamInfo& info, Tensor&) { out.push_back(info); });
  return out;
}

ModelParams zeros_like(const ModelParams& p) { return make_shaped(p.config); }

std::uint64_t hash_params(const ModelParams& p) {
  std::uint64_t h = 1469598103934665603ull;
  visit(p, [&](const ParamInfo&, const Tensor& t) { h = hash_tensor(t, h); });
  return h;
}

ModelParams init_params(const ModelConfig& config, Rng& weight_rng) {
  config.validate();
  ModelParams p = make_shaped(config);
  visit(p, [&](const ParamInfo& info, Tensor& t) { fill_init(info, t, config.init_std, weight_rng); });
  return p;
}

void init_head(ModelParams& p, Rng& weight_rng) {
  for (double& v : p.head_w.data) v = weight_rng.normal(0.0, p.config.init_std);
  std::fill(p.head_b.data.begin(), p.head_b.data.end(), 0.0);
}

ModelParams apply_reinit(const ModelParams& p, const ReinitSpec& spec, Rng& weight_rng) {
  std::size_t n = p.config.num_blocks;
  if (spec.top_blocks > n) throw std::invalid_argument("reinit: L exceeds the number of blocks");
  ModelParams out = p;
  std::size_t first = n - spec.top_blocks + 1;  // blocks first..n are redrawn
  visit(out, [&](const ParamInfo& info, Tensor& t) {
    bool hit = (info.component == Component::Block && spec.top_blocks > 0 && info.block >= first) ||
               (info.component == Component::Pooler && spec.reinit_pooler);
    if (hit) fill_init(info, t, p.config.init_std, weight_rng);
  });
  return out;
}

std::vector<double> block_concat(const ModelParams& p, std::size_t block_index) {
  if (block_index < 1 || block_index > p.config.num_blocks)
    throw std::out_of_range("block_concat: block index out of range");
  std::vector<double> out;
  visit(p, [&](const ParamInfo& info, const Tensor& t) {
    if (info.component == Component::Block && info.block == block_index)
      out.insert(out.end(), t.data.begin(), t.data.end());
  });
  return out;
}

// ---------------------------------------------------------------------------
// forward graph

ParamVars make_leaves(Tape& tape, const ModelParams& p) {
  ParamVars pv;
  pv.tok_emb = tape.leaf(p.tok_emb, true);
  pv.pos_emb = tape.leaf(p.pos_emb, true);
  pv.blocks.reserve(p.blocks.size());
  for (const BlockParams& b : p.blocks) {
    BlockVars bv;
    bv.wq = tape.leaf(b.wq, true);
    bv.bq = tape.leaf(b.bq, true);
    bv.wk = tape.leaf(b.wk, true);
    bv.bk = tape.leaf(b.bk, true);
    bv.wv = tape.leaf(b.wv, true);
    bv.bv = tape.leaf(b.bv, true);
    bv.wo = tape.leaf(b.wo, true);
    bv.bo = tape.leaf(b.bo, true);
    bv.norm1_gain = tape.leaf(b.norm1_gain, true);
    bv.norm1_bias = tape.leaf(b.norm1_bias, true);
    bv.w1 = tape.leaf(b.w1, true);
    bv.b1 = tape.leaf(b.b1, true);
    bv.w2 = tape.leaf(b.w2, true);
    bv.b2 = tape.leaf(b.b2, true);
    bv.norm2_gain = tape.leaf(b.norm2_gain, true);
    bv.norm2_bias = tape.leaf(b.norm2_bias, true);
    pv.blocks.push_back(bv);
  }
  pv.pooler_w = tape.leaf(p.pooler_w, true);
  pv.pooler_b = tape.leaf(p.pooler_b, true);
  pv.head_w = tape.leaf(p.head_w, true);
  pv.head_b = tape.leaf(p.head_b, true);
  return pv;
}

std::vector<Tape::Var> encode_batch(Tape& tape, const ParamVars& pv, const ModelConfig& cfg,
                                    const Batch& batch, Rng& order_rng, bool training) {
  if (batch.tokens.size() != batch.mask.size())
    throw std::invalid_argument("encode_batch: tokens/mask batch sizes disagree");
  std::vector<Tape::Var> hidden;
  hidden.reserve(batch.size());
  std::size_t dh = cfg.head_dim();
  double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t ex = 0; ex < batch.size(); ++ex) {
    const auto& toks = batch.tokens[ex];
    const auto& msk = batch.mask[ex];
    if (toks.size() != msk.size()) throw std::invalid_argument("encode_batch: token/mask widths disagree");
    if (toks.empty() || msk[0] == 0)
      throw std::invalid_argument("encode_batch: position 0 must hold the [CLS] token");
    // Padding positions are dropped here, so their token ids can never
    // influence the result. Kept positions retain their original index for
    // the position embedding.
    std::vector<int> ids, positions;
    for (std::size_t s = 0; s < toks.size(); ++s) {
      if (!msk[s]) continue;
      if (toks[s] < 0 || static_cast<std::size_t>(toks[s]) >= cfg.vocab_size)
        throw std::out_of_range("encode_batch: token id out of range");
      if (s >= cfg.max_seq_len)
        throw std::invalid_argument("encode_batch: sequence longer than max_seq_len");
      ids.push_back(toks[s]);
      positions.push_back(static_cast<int>(s));
    }
    Tape::Var tok = tape.embedding_rows(pv.tok_emb, ids);
    Tape::Var pos = tape.embedding_rows(pv.pos_emb, positions);
    Tape::Var h = tape.add(tok, pos);
    h = tape.dropout(h, cfg.dropout_p, order_rng, training);
    for (const BlockVars& b : pv.blocks) {
      Tape::Var q = tape.linear(h, b.wq, b.bq);
      Tape::Var k = tape.linear(h, b.wk, b.bk);
      Tape::Var v = tape.linear(h, b.wv, b.bv);
      std::vector<Tape::Var> heads;
      heads.reserve(cfg.num_heads);
      for (std::size_t j = 0; j < cfg.num_heads; ++j) {
        std::size_t c0 = j * dh, c1 = (j + 1) * dh;
        Tape::Var qj = tape.slice_cols(q, c0, c1);
        Tape::Var kj = tape.slice_cols(k, c0, c1);
        Tape::Var vj = tape.slice_cols(v, c0, c1);
        Tape::Var scores = tape.scale(tape.matmul_transposed(qj, kj), att_scale);
        Tape::Var attn = tape.row_softmax(scores);
        attn = tape.dropout(attn, cfg.dropout_p, order_rng, training);
        heads.push_back(tape.matmul(attn, vj));
      }
      Tape::Var ctx = tape.concat_cols(heads);
      Tape::Var attn_out = tape.linear(ctx, b.wo, b.bo);
      attn_out = tape.dropout(attn_out, cfg.dropout_p, order_rng, training);
      h = tape.layer_norm(tape.add(h, attn_out), b.norm1_gain, b.norm1_bias);
      Tape::Var ff = tape.linear(tape.relu(tape.linear(h, b.w1, b.b1)), b.w2, b.b2);
      ff = tape.dropout(ff, cfg.dropout_p, order_rng, training);
      h = tape.layer_norm(tape.add(h, ff), b.norm2_gain, b.norm2_bias);
    }
    hidden.push_back(h);
  }
  return hidden;
}

Tape::Var forward_logits(Tape& tape, const ParamVars& pv, const ModelConfig& cfg,
                         const Batch& batch, Rng& order_rng, bool training) {
  std::vector<Tape::Var> hidden = encode_batch(tape, pv, cfg, batch, order_rng, training);
  std::vector<Tape::Var> cls;
  cls.reserve(hidden.size());
  for (Tape::Var h : hidden) cls.push_back(tape.take_row(h, 0));
  Tape::Var pooled = tape.tanh(tape.linear(tape.stack_rows(cls), pv.pooler_w, pv.pooler_b));
  pooled = tape.dropout(pooled, cfg.dropout_p, order_rng, training);
  return tape.linear(pooled, pv.head_w, pv.head_b);
}

Tape::Var task_loss(Tape& tape, Tape::Var logits, const std::vector<double>& labels,
                    std::size_t num_classes) {
  if (num_classes == 1) {
    Tensor target({labels.size(), 1}, labels);
    return tape.mse(logits, target);
  }
  std::vector<int> cls(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) cls[i] = static_cast<int>(labels[i]);
  return tape.softmax_cross_entropy(logits, std::move(cls));
}

ModelParams collect_grads(const Tape& tape, const ParamVars& pv, const ModelConfig& cfg) {
  ModelParams g = make_shaped(cfg);
  auto take = [&](Tape::Var v, Tensor& dst) {
    const Tensor& gv = tape.grad(v);
    if (gv.numel() == dst.numel()) dst.data = gv.data;
  };
  take(pv.tok_emb, g.tok_emb);
  take(pv.pos_emb, g.pos_emb);
  for (std::size_t i = 0; i < g.blocks.size(); ++i) {
    BlockParams& b = g.blocks[i];
    const BlockVars& bv = pv.blocks[i];
    take(bv.wq, b.wq);
    take(bv.bq, b.bq);
    take(bv.wk, b.wk);
    take(bv.bk, b.bk);
    take(bv.wv, b.wv);
    take(bv.bv, b.bv);
    take(bv.wo, b.wo);
    take(bv.bo, b.bo);
    take(bv.norm1_gain, b.norm1_gain);
    take(bv.norm1_bias, b.norm1_bias);
    take(bv.w1, b.w1);
    take(bv.b1, b.b1);
    take(bv.w2, b.w2);
    take(bv.b2, b.b2);
    take(bv.norm2_gain, b.norm2_gain);
    take(bv.norm2_bias, b.norm2_bias);
  }
  take(pv.pooler_w, g.pooler_w);
  take(pv.pooler_b, g.pooler_b);
  take(pv.head_w, g.head_w);
  take(pv.head_b, g.head_b);
  return g;
}

Tensor forward(const ModelParams& p, const Batch& batch, Rng& order_rng, bool training) {
  Tape tape;
  ParamVars pv = make_leaves(tape, p);
  Tape::Var logits = forward_logits(tape, pv, p.config, batch, order_rng, training);
  return tape.value(logits);
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kMagic[8] = {'F', 'T', 'L', 'A', 'B', 'C', 'K', '1'};

void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

double read_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

}  // namespace

void save_checkpoint(const ModelParams& p, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 8);
  const ModelConfig& c = p.config;
  write_u64(os, c.vocab_size);
  write_u64(os, c.max_seq_len);
  write_u64(os, c.hidden_dim);
  write_u64(os, c.num_heads);
  write_u64(os, c.num_blocks);
  write_u64(os, c.ffn_dim);
  write_u64(os, c.num_classes);
  write_f64(os, c.dropout_p);
  write_f64(os, c.init_std);
  std::uint64_t count = 0;
  visit(p, [&](const ParamInfo&, const Tensor&) { ++count; });
  write_u64(os, count);
  visit(p, [&](const ParamInfo& info, const Tensor& t) {
    write_u64(os, info.name.size());
    os.write(info.name.data(), static_cast<std::streamsize>(info.name.size()));
    write_u64(os, t.shape.size());
    for (std::size_t d : t.shape) write_u64(os, d);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  });
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  ModelConfig c;
  c.vocab_size = read_u64(is);
  c.max_seq_len = read_u64(is);
  c.hidden_dim = read_u64(is);
  c.num_heads = read_u64(is);
  c.num_blocks = read_u64(is);
  c.ffn_dim = read_u64(is);
  c.num_classes = read_u64(is);
  c.dropout_p = read_f64(is);
  c.init_std = read_f64(is);
  c.validate();
  ModelParams p = make_shaped(c);
  std::uint64_t count = read_u64(is);
  std::vector<ParamInfo> infos = param_infos(c);
  std::vector<Tensor*> tensors = tensor_list(p);
  if (count != tensors.size()) throw std::runtime_error("checkpoint tensor count mismatch: " + path);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t name_len = read_u64(is);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (name != infos[i].name)
      throw std::runtime_error("checkpoint tensor name mismatch at " + name);
    std::uint64_t ndim = read_u64(is);
    std::vector<std::size_t> shape(ndim);
    for (std::uint64_t d = 0; d < ndim; ++d) shape[d] = read_u64(is);
    if (shape != tensors[i]->shape)
      throw std::runtime_error("checkpoint tensor shape mismatch at " + name);
    is.read(reinterpret_cast<char*>(tensors[i]->data.data()),
            static_cast<std::streamsize>(tensors[i]->data.size() * sizeof(double)));
  }
  if (!is) throw std::runtime_error("checkpoint truncated: " + path);
  return p;
}

}  // namespace ftlab::model
