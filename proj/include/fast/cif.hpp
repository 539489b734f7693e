#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "fast/nn.hpp"

namespace fast {

enum class TailMode {
  Streaming,  // never fire the leftover accumulation
  Offline,    // fire it iff it reaches the tail threshold
};

struct CifResult {
  std::vector<double> alpha;             // weights actually integrated (after any rescaling)
  Tensor h;                              // units x d
  std::vector<std::size_t> boundaries;   // 0-based frame index of each firing
  std::vector<double> unit_weight;       // contributing weight per unit
  double residual = 0.0;                 // accumulation left after the last full firing
  bool tail_fired = false;
};

/// Accumulate-and-fire walk over plain weights. Splits a frame's weight when
/// it completes a unit (repeatedly, if a single weight spans several units).
struct FireWalk {
  std::vector<std::size_t> boundaries;
  std::vector<double> unit_weight;
  double residual = 0.0;
};
FireWalk fire_walk(const std::vector<double>& alpha, double beta);

/// Complete firings over a prefix, no rescaling, no tail fire.
std::size_t streaming_boundary_count(const std::vector<double>& alpha, double beta);

class CifDetector {
 public:
  CifDetector() = default;
  CifDetector(std::size_t dim, double beta, double tail_threshold, Rng& rng);

  /// alpha = sigmoid(a W + b): t x 1.
  Tensor compute_weights(const Tensor& a) const;

  /// Integrates a (t x d) under alpha (t x 1). With scale_to = J, alpha is
  /// first rescaled to sum to J and exactly J units come out.
  CifResult integrate_fire(const Tensor& a, const Tensor& alpha, std::optional<std::size_t> scale_to,
                           TailMode tail) const;

  double beta() const { return beta_; }
  double tail_threshold() const { return tail_threshold_; }

  void collect(ParamList& out) const;

  nn::Linear proj;

 private:
  double beta_ = 1.0;
  double tail_threshold_ = 0.5;
};

/// |J - sum(alpha)|.
Tensor cif_length_loss(const Tensor& alpha, std::size_t J);

std::vector<double> to_vector(const Tensor& column);

}  // namespace fast
