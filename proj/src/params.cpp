#include "fast/params.hpp"

#include <algorithm>
#include <cstring>
#include <unordered_map>

namespace fast {

std::vector<std::vector<double>> snapshot(const ParamList& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    auto d = p.tensor.data();
    out.emplace_back(d.begin(), d.end());
  }
  return out;
}

void restore(const ParamList& params, const std::vector<std::vector<double>>& values) {
  if (values.size() != params.size()) throw DimensionError("restore: snapshot has a different parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = Tensor(params[i].tensor).mutable_data();
    if (dst.size() != values[i].size()) throw DimensionError("restore: size mismatch for " + params[i].name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

void copy_values(const ParamList& src, const ParamList& dst) {
  std::unordered_map<std::string, const Tensor*> index;
  for (const auto& p : src) index.emplace(p.name, &p.tensor);
  for (const auto& p : dst) {
    auto it = index.find(p.name);
    if (it == index.end()) throw ContractError("copy_values: missing tensor " + p.name);
    const Tensor& s = *it->second;
    if (s.rows() != p.tensor.rows() || s.cols() != p.tensor.cols()) {
      throw DimensionError("copy_values: shape mismatch for " + p.name);
    }
    auto out = Tensor(p.tensor).mutable_data();
    std::copy(s.data().begin(), s.data().end(), out.begin());
  }
}

std::vector<std::vector<double>> average_snapshots(const std::vector<std::vector<std::vector<double>>>& snaps) {
  if (snaps.empty()) throw ContractError("average_snapshots: nothing to average");
  auto out = snaps.front();
  for (std::size_t s = 1; s < snaps.size(); ++s)
    for (std::size_t i = 0; i < out.size(); ++i)
      for (std::size_t j = 0; j < out[i].size(); ++j) out[i][j] += snaps[s][i][j];
  if (snaps.size() > 1) {
    const double inv = 1.0 / static_cast<double>(snaps.size());
    for (auto& v : out)
      for (auto& x : v) x *= inv;
  }
  return out;
}

std::uint64_t checksum(const ParamList& params, const std::string& prefix) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    for (double v : p.tensor.data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

void set_requires_grad(const ParamList& params, bool on) {
  for (const auto& p : params) Tensor(p.tensor).set_requires_grad(on);
}

void clear_grads(const ParamList& params) {
  for (const auto& p : params) Tensor(p.tensor).clear_grad();
}

}  // namespace fast
