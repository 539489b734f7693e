#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fast/tensor.hpp"

namespace fast {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered parameter registry. Entries share nodes with the owning module, so
/// writes through a ParamList update the module in place.
using ParamList = std::vector<NamedTensor>;

/// Deep copies of the current values, in registry order.
std::vector<std::vector<double>> snapshot(const ParamList& params);
void restore(const ParamList& params, const std::vector<std::vector<double>>& values);

/// Copies values from `src` into `dst` by name. Every dst entry must exist in
/// src with the same shape.
void copy_values(const ParamList& src, const ParamList& dst);

/// Element-wise mean of several snapshots of the same registry.
std::vector<std::vector<double>> average_snapshots(const std::vector<std::vector<std::vector<double>>>& snaps);

/// FNV-1a over the raw bytes of every tensor whose name starts with `prefix`.
std::uint64_t checksum(const ParamList& params, const std::string& prefix = "");

void set_requires_grad(const ParamList& params, bool on);
void clear_grads(const ParamList& params);

}  // namespace fast
