#include "ftlab/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ftlab::optim {

using model::ModelParams;
using model::ParamInfo;
using model::ParamKind;

void AdamConfig::validate() const {
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw std::invalid_argument("adam config: beta1/beta2 must be in [0, 1)");
  if (alpha <= 0.0) throw std::invalid_argument("adam config: alpha must be positive");
  if (eps <= 0.0) throw std::invalid_argument("adam config: eps must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("adam config: weight_decay must be >= 0");
}

void ScheduleConfig::validate() const {
  if (total_steps < 1) throw std::invalid_argument("schedule: total_steps must be >= 1");
  if (warmup_ratio <= 0.0 || warmup_ratio >= 1.0)
    throw std::invalid_argument("schedule: warmup_ratio must be in (0, 1)");
}

AdamState AdamState::init(const ModelParams& params) {
  AdamState s;
  s.m = model::zeros_like(params);
  s.v = model::zeros_like(params);
  s.t = 0;
  return s;
}

void adam_update_tensor(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, long t,
                        const AdamConfig& config, double lr, bool apply_decay) {
  if (param.numel() != grad.numel() || param.numel() != m.numel() || param.numel() != v.numel())
    throw std::invalid_argument("adam_update_tensor: shape mismatch");
  double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (std::size_t j = 0; j < param.numel(); ++j) {
    m.data[j] = config.beta1 * m.data[j] + (1.0 - config.beta1) * grad.data[j];
    v.data[j] = config.beta2 * v.data[j] + (1.0 - config.beta2) * grad.data[j] * grad.data[j];
    double mh = m.data[j];
    double vh = v.data[j];
    if (config.bias_correction) {
      mh /= bc1;
      vh /= bc2;
    }
    param.data[j] -= lr * mh / (std::sqrt(vh) + config.eps);
    if (apply_decay) param.data[j] -= lr * config.weight_decay * param.data[j];
  }
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const AdamConfig& config, double lr_t,
               const std::vector<double>& lr_mult) {
  if (lr_t < 0.0) throw std::invalid_argument("adam_step: lr_t must be >= 0");
  auto infos = model::param_infos(params.config);
  auto pt = model::tensor_list(params);
  auto gt = model::tensor_list(grads);
  auto mt = model::tensor_list(state.m);
  auto vt = model::tensor_list(state.v);
  if (mt.size() != pt.size() || gt.size() != pt.size())
    throw std::invalid_argument("adam_step: state/gradient tree does not match parameters");
  if (!lr_mult.empty() && lr_mult.size() != pt.size())
    throw std::invalid_argument("adam_step: lr_mult must have one entry per tensor");

  state.t += 1;
  for (std::size_t i = 0; i < pt.size(); ++i) {
    const Tensor& g = *gt[i];
    if (!g.all_finite())
      throw std::runtime_error("adam_step: non-finite gradient in " + infos[i].name);
    double lr = lr_t * (lr_mult.empty() ? 1.0 : lr_mult[i]);
    bool decay = config.weight_decay > 0.0 &&
                 (config.decay_norm_and_bias || infos[i].kind == ParamKind::Weight);
    adam_update_tensor(*pt[i], g, *mt[i], *vt[i], state.t, config, lr, decay);
  }
}

double bias_ratio(long t, double beta1, double beta2) {
  if (t < 1) throw std::invalid_argument("bias_ratio: t must be >= 1");
  double num = 1.0 - std::pow(beta1, static_cast<double>(t));
  double den = std::sqrt(1.0 - std::pow(beta2, static_cast<double>(t)));
  return num / den;
}

double lr_at(std::size_t step, const ScheduleConfig& schedule) {
  schedule.validate();
  if (step > schedule.total_steps) throw std::invalid_argument("lr_at: step beyond schedule end");
  auto warmup = static_cast<std::size_t>(
      std::ceil(schedule.warmup_ratio * static_cast<double>(schedule.total_steps)));
  if (step <= warmup)
    return schedule.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  return schedule.peak_lr * static_cast<double>(schedule.total_steps - step) /
         static_cast<double>(schedule.total_steps - warmup);
}

double clip_global_norm(ModelParams& grads, double max_norm) {
  double sq = 0.0;
  auto gt = model::tensor_list(grads);
  for (const Tensor* t : gt)
    for (double v : t->data) sq += v * v;
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (Tensor* t : gt)
      for (double& v : t->data) v *= s;
  }
  return norm;
}

std::vector<double> llrd_multipliers(std::size_t num_layers, double decay) {
  if (num_layers < 1) throw std::invalid_argument("llrd: num_layers must be >= 1");
  if (decay <= 0.0) throw std::invalid_argument("llrd: decay must be positive");
  std::vector<double> out(num_layers);
  double f = 1.0;
  for (std::size_t i = 0; i < num_layers; ++i) {
    out[i] = f;
    f *= decay;
  }
  return out;
}

std::vector<double> llrd_tensor_multipliers(const model::ModelConfig& config, double decay) {
  std::size_t n = config.num_blocks;
  std::vector<double> per_layer = llrd_multipliers(n, decay);
  double emb_mult = per_layer.back() * decay;
  std::vector<double> out;
  for (const ParamInfo& info : model::param_infos(config)) {
    switch (info.component) {
      case model::Component::Embeddings:
        out.push_back(emb_mult);
        break;
      case model::Component::Block:
        out.push_back(per_layer[n - info.block]);
        break;
      case model::Component::Pooler:
      case model::Component::Head:
        out.push_back(1.0);
        break;
    }
  }
  return out;
}

}  // namespace ftlab::optim
