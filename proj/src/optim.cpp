#include "fast/optim.hpp"

#include <cmath>
#include <unordered_map>

namespace fast {

double scheduled_lr(const AdamConfig& cfg, std::size_t step) {
  if (step == 0) return 0.0;
  if (cfg.warmup == 0) return cfg.lr;
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(cfg.warmup);
  if (step <= cfg.warmup) return cfg.lr * s / w;
  return cfg.lr * std::sqrt(w / s);
}

Adam::Adam(ParamList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
  lr_scale_.assign(params_.size(), 1.0);
}

void Adam::scale_lr(const std::string& prefix, double factor) {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name.rfind(prefix, 0) == 0) lr_scale_[i] *= factor;
}

void Adam::step() {
  ++step_;
  last_lr_ = scheduled_lr(cfg_, step_);

  double clip = 1.0;
  if (cfg_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& p : params_)
      for (double g : p.tensor.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;
  }

  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor t = params_[i].tensor;
    if (!t.has_grad()) continue;
    auto g = t.grad();
    auto w = t.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    const double lr = last_lr_ * lr_scale_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * clip;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
    t.clear_grad();
  }
}

ParamList Adam::state() const {
  ParamList out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& p = params_[i];
    out.push_back({"adam.m." + p.name, Tensor::from(p.tensor.rows(), p.tensor.cols(), m_[i])});
    out.push_back({"adam.v." + p.name, Tensor::from(p.tensor.rows(), p.tensor.cols(), v_[i])});
  }
  out.push_back({"adam.step", Tensor::scalar(static_cast<double>(step_))});
  return out;
}

void Adam::load_state(const ParamList& state) {
  std::unordered_map<std::string, const Tensor*> index;
  for (const auto& s : state) index.emplace(s.name, &s.tensor);
  auto fetch = [&](const std::string& name, std::vector<double>& dst) {
    auto it = index.find(name);
    if (it == index.end()) throw ContractError("Adam::load_state: missing " + name);
    if (it->second->size() != dst.size()) throw DimensionError("Adam::load_state: size mismatch for " + name);
    auto d = it->second->data();
    dst.assign(d.begin(), d.end());
  };
  for (std::size_t i = 0; i < params_.size(); ++i) {
    fetch("adam.m." + params_[i].name, m_[i]);
    fetch("adam.v." + params_[i].name, v_[i]);
  }
  auto it = index.find("adam.step");
  if (it == index.end()) throw ContractError("Adam::load_state: missing adam.step");
  step_ = static_cast<std::size_t>(it->second->item());
}

}  // namespace fast
