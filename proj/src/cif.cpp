#include "fast/cif.hpp"

#include <cmath>

namespace fast {

using namespace fast::ops;

FireWalk fire_walk(const std::vector<double>& alpha, double beta) {
  if (!(beta > 0.0)) throw ContractError("CIF threshold must be positive");
  FireWalk w;
  double acc = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    double remaining = alpha[i];
    while (acc + remaining >= beta) {
      const double take = beta - acc;
      remaining -= take;
      w.boundaries.push_back(i);
      w.unit_weight.push_back(acc + take);
      acc = 0.0;
    }
    acc += remaining;
  }
  w.residual = acc;
  return w;
}

std::size_t streaming_boundary_count(const std::vector<double>& alpha, double beta) {
  return fire_walk(alpha, beta).boundaries.size();
}

CifDetector::CifDetector(std::size_t dim, double beta, double tail_threshold, Rng& rng)
    : proj(dim, 1, rng), beta_(beta), tail_threshold_(tail_threshold) {
  if (!(beta > 0.0)) throw ContractError("CIF threshold must be positive");
}

Tensor CifDetector::compute_weights(const Tensor& a) const {
  if (a.rows() == 0) throw ContractError("compute_weights: empty input");
  return sigmoid(proj(a));
}

std::vector<double> to_vector(const Tensor& column) { return {column.data().begin(), column.data().end()}; }

CifResult CifDetector::integrate_fire(const Tensor& a, const Tensor& alpha, std::optional<std::size_t> scale_to,
                                      TailMode tail) const {
  if (alpha.size() != a.rows()) throw DimensionError("integrate_fire: alpha length does not match a");
  Tensor weights = alpha;
  if (scale_to) {
    double total = 0.0;
    for (double v : alpha.data()) total += v;
    if (!(total > 0.0)) throw ContractError("integrate_fire: cannot rescale weights that sum to zero");
    weights = mul_scalar(alpha, scale(reciprocal(sum(alpha)), static_cast<double>(*scale_to) * beta_));
  }
  CifResult r;
  r.alpha = to_vector(weights);
  FireWalk walk = fire_walk(r.alpha, beta_);
  r.boundaries = std::move(walk.boundaries);
  r.unit_weight = std::move(walk.unit_weight);
  r.residual = walk.residual;

  std::size_t units = r.boundaries.size();
  if (scale_to) {
    // Rounding may leave the last unit a hair short of the threshold.
    while (units < *scale_to) {
      r.boundaries.push_back(a.rows() - 1);
      r.unit_weight.push_back(r.residual);
      r.residual = 0.0;
      r.tail_fired = true;
      ++units;
    }
    units = *scale_to;
    r.boundaries.resize(units);
    r.unit_weight.resize(units);
  } else if (tail == TailMode::Offline && r.residual >= tail_threshold_) {
    r.boundaries.push_back(a.rows() - 1);
    r.unit_weight.push_back(r.residual);
    r.tail_fired = true;
    ++units;
  }
  if (units == 0) {
    r.h = Tensor::zeros(0, a.cols());
    return r;
  }
  r.h = scale(matmul(cif_weights(weights, beta_, units), a), 1.0 / beta_);
  return r;
}

void CifDetector::collect(ParamList& out) const { proj.collect("cif.proj", out); }

Tensor cif_length_loss(const Tensor& alpha, std::size_t J) {
  if (J == 0) throw ContractError("cif_length_loss: J must be >= 1");
  return ops::abs(add_scalar(sum(alpha), -static_cast<double>(J)));
}

}  // namespace fast
