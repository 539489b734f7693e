#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fast/params.hpp"

namespace fast {

struct AdamConfig {
  double lr = 1e-3;
  std::size_t warmup = 200;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double clip_norm = 0.0;  // global grad-norm clip; 0 disables
};

/// Learning rate at 1-based step `step`: linear warmup to cfg.lr, then
/// inverse square-root decay.
double scheduled_lr(const AdamConfig& cfg, std::size_t step);

/// Adam over a fixed parameter registry. Parameters without a gradient at
/// step time are skipped and keep their moments.
class Adam {
 public:
  Adam(ParamList params, AdamConfig cfg);

  /// Applies one update from the accumulated gradients and clears them.
  void step();

  /// Multiplies the learning rate of every parameter whose name starts with
  /// `prefix` by `factor`.
  void scale_lr(const std::string& prefix, double factor);

  std::size_t step_count() const { return step_; }
  double last_lr() const { return last_lr_; }
  const AdamConfig& config() const { return cfg_; }
  const ParamList& params() const { return params_; }

  /// Moment buffers as named tensors ("adam.m.<name>", "adam.v.<name>",
  /// plus "adam.step") for checkpointing.
  ParamList state() const;
  void load_state(const ParamList& state);

 private:
  ParamList params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::vector<double> lr_scale_;
  std::size_t step_ = 0;
  double last_lr_ = 0.0;
};

}  // namespace fast
