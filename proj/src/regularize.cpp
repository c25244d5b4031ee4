#include "ftlab/regularize.hpp"

#include <stdexcept>

namespace ftlab::regularize {

using model::Component;
using model::ModelParams;
using model::ParamInfo;
using model::ParamKind;

void MixoutConfig::validate() const {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("mixout: p must be in [0, 1]");
}

void PriorWdConfig::validate() const {
  if (lambda < 0.0) throw std::invalid_argument("prior weight decay: lambda must be >= 0");
}

namespace {

bool mixout_includes(const ParamInfo& info, bool include_head) {
  if (info.kind == ParamKind::NormGain || info.kind == ParamKind::NormBias) return false;
  if (info.component == Component::Head) return include_head;
  return true;
}

}  // namespace

void mixout_apply(ModelParams& params, const ModelParams& snapshot, const MixoutConfig& cfg,
                  Rng& order_rng) {
  cfg.validate();
  auto pt = model::tensor_list(params);
  auto st = model::tensor_list(snapshot);
  auto infos = model::param_infos(params.config);
  if (pt.size() != st.size()) throw std::invalid_argument("mixout: snapshot tree mismatch");
  if (cfg.p == 0.0) return;
  for (std::size_t i = 0; i < pt.size(); ++i) {
    if (!mixout_includes(infos[i], cfg.include_head)) continue;
    Tensor& p = *pt[i];
    const Tensor& s = *st[i];
    if (!p.same_shape(s)) throw std::invalid_argument("mixout: shape mismatch in " + infos[i].name);
    if (cfg.p == 1.0) {
      p.data = s.data;
      continue;
    }
    for (std::size_t j = 0; j < p.numel(); ++j)
      if (order_rng.uniform() < cfg.p) p.data[j] = s.data[j];
  }
}

void prior_wd_step(ModelParams& params, const ModelParams& snapshot, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("prior_wd_step: lambda must be >= 0");
  auto pt = model::tensor_list(params);
  auto st = model::tensor_list(snapshot);
  if (pt.size() != st.size()) throw std::invalid_argument("prior_wd_step: snapshot tree mismatch");
  if (lambda == 0.0) return;
  for (std::size_t i = 0; i < pt.size(); ++i) {
    Tensor& p = *pt[i];
    const Tensor& s = *st[i];
    if (!p.same_shape(s)) throw std::invalid_argument("prior_wd_step: shape mismatch");
    for (std::size_t j = 0; j < p.numel(); ++j)
      p.data[j] -= lambda * (p.data[j] - s.data[j]);
  }
}

void plain_wd_step(ModelParams& params, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("plain_wd_step: lambda must be >= 0");
  if (lambda == 0.0) return;
  for (Tensor* t : model::tensor_list(params))
    for (double& v : t->data) v -= lambda * v;
}

}  // namespace ftlab::regularize
