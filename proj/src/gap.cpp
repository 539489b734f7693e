#include "fast/gap.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "fast/io.hpp"

namespace fast {

using namespace fast::ops;

namespace {

Tensor encode_prefix(const FastModel& model, const Tensor& c, std::size_t t, PrefixEncoding enc) {
  const Tensor prefix = slice_rows(c, 0, t);
  return enc.fai ? model.acoustic.encode_streaming_fai(prefix, enc.m, 1.0) : model.acoustic.encode_full(prefix);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9f", v);
  return buf;
}

}  // namespace

std::vector<std::vector<double>> prefix_similarities(const FastModel& model, const Tensor& c, PrefixEncoding enc) {
  NoGradGuard ng;
  const std::size_t T = c.rows();
  const Tensor full = model.acoustic.encode_full(c);
  std::vector<std::vector<double>> S(T);
  for (std::size_t t = 1; t <= T; ++t) {
    const Tensor cos = cosine_rows(encode_prefix(model, c, t, enc), slice_rows(full, 0, t));
    S[t - 1].assign(cos.data().begin(), cos.data().end());
  }
  return S;
}

double position_similarity(const FastModel& model, const Utterance& u, std::size_t t, std::size_t t_prime,
                           PrefixEncoding enc) {
  NoGradGuard ng;
  const Tensor c = model.speech_tokens(u);
  if (t == 0 || t > c.rows() || t_prime == 0 || t_prime > t)
    throw IndexError("position_similarity: need 1 <= t' <= t <= " + std::to_string(c.rows()));
  const Tensor a = encode_prefix(model, c, t, enc);
  const Tensor full = model.acoustic.encode_full(c);
  return cosine_rows(slice_rows(a, t_prime - 1, t_prime), slice_rows(full, t_prime - 1, t_prime)).item();
}

SimilarityProfile reverse_position_profile(const FastModel& model, const std::vector<Utterance>& test,
                                           PrefixEncoding enc, const std::string& mode, std::size_t t_max,
                                           std::size_t min_len, std::size_t max_len) {
  SimilarityProfile p;
  p.mode = mode;
  p.mean.assign(t_max, 0.0);
  p.count.assign(t_max, 0);
  for (const auto& u : test) {
    const Tensor c = model.speech_tokens(u);
    const std::size_t T = c.rows();
    if (T < std::max<std::size_t>(min_len, 2) || T > max_len) continue;
    const auto S = prefix_similarities(model, c, enc);
    for (std::size_t tau = 1; tau <= std::min(T, t_max); ++tau) {
      double s = 0.0;
      for (std::size_t t = tau; t <= T; ++t) s += S[t - 1][t - tau];
      p.mean[tau - 1] += s / static_cast<double>(T - tau + 1);
      p.count[tau - 1]++;
    }
  }
  for (std::size_t i = 0; i < t_max; ++i)
    if (p.count[i]) p.mean[i] /= static_cast<double>(p.count[i]);
  return p;
}

StepCurves per_step_stats(const FastModel& model, const std::vector<Utterance>& test, PrefixEncoding enc,
                          const std::string& mode) {
  StepCurves out;
  out.mode = mode;
  auto grow = [&](std::size_t n) {
    if (out.count.size() < n) {
      out.first.resize(n, 0.0);
      out.middle.resize(n, 0.0);
      out.last.resize(n, 0.0);
      out.count.resize(n, 0);
    }
  };
  auto avg = [](const std::vector<double>& row, long lo, long hi) {
    lo = std::max(lo, 1L);
    hi = std::min(hi, static_cast<long>(row.size()));
    double s = 0.0;
    for (long i = lo; i <= hi; ++i) s += row[static_cast<std::size_t>(i - 1)];
    return s / static_cast<double>(hi - lo + 1);
  };
  for (const auto& u : test) {
    const auto S = prefix_similarities(model, model.speech_tokens(u), enc);
    grow(S.size());
    for (std::size_t t = 1; t <= S.size(); ++t) {
      const auto& row = S[t - 1];
      const long tl = static_cast<long>(t);
      const long mid = (tl + 1) / 2;
      out.first[t - 1] += avg(row, 1, 3);
      out.middle[t - 1] += avg(row, mid - 1, mid + 1);
      out.last[t - 1] += avg(row, tl - 2, tl);
      out.count[t - 1]++;
    }
  }
  for (std::size_t i = 0; i < out.count.size(); ++i) {
    const double n = static_cast<double>(out.count[i]);
    out.first[i] /= n;
    out.middle[i] /= n;
    out.last[i] /= n;
  }
  return out;
}

DegradationGroups degradation_groups(const FastModel& model, const std::vector<Utterance>& test, PrefixEncoding enc,
                                     std::size_t n_groups) {
  if (n_groups == 0 || n_groups > test.size()) throw ContractError("degradation_groups: bad group count");
  DegradationGroups g;
  for (const auto& u : test) {
    const auto S = prefix_similarities(model, model.speech_tokens(u), enc);
    double s = 0.0;
    for (std::size_t t = 1; t <= S.size(); ++t) s += S[t - 1][t - 1];
    g.per_utterance.push_back(s / static_cast<double>(S.size()));
  }
  std::vector<std::size_t> order(test.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (g.per_utterance[a] != g.per_utterance[b]) return g.per_utterance[a] < g.per_utterance[b];
    return test[a].id < test[b].id;
  });
  const std::size_t size = test.size() / n_groups;
  for (std::size_t k = 0; k < n_groups; ++k) {
    const std::size_t begin = k * size;
    const std::size_t end = k + 1 == n_groups ? test.size() : begin + size;
    g.groups.emplace_back(order.begin() + static_cast<long>(begin), order.begin() + static_cast<long>(end));
    double s = 0.0;
    for (auto i : g.groups.back()) s += g.per_utterance[i];
    g.group_mean.push_back(s / static_cast<double>(end - begin));
  }
  return g;
}

SimilarityProfile predicted_context_similarity(const FastModel& model, const std::vector<Utterance>& test,
                                               std::size_t m) {
  if (m == 0) throw ContractError("predicted_context_similarity: m must be >= 1");
  NoGradGuard ng;
  SimilarityProfile p;
  p.mode = "predicted";
  p.mean.assign(m, 0.0);
  p.count.assign(m, 0);
  for (const auto& u : test) {
    const Tensor c = model.speech_tokens(u);
    const std::size_t T = c.rows();
    const Tensor full = model.acoustic.encode_full(c);
    for (std::size_t t = 1; t < T; ++t) {
      const std::size_t n = std::min(m, T - t);
      const Tensor a = model.acoustic.encode_streaming_fai(slice_rows(c, 0, t), m, 0.0);
      const Tensor cos = cosine_rows(slice_rows(a, t, t + n), slice_rows(full, t, t + n));
      for (std::size_t o = 0; o < n; ++o) {
        p.mean[o] += cos.data()[o];
        p.count[o]++;
      }
    }
  }
  for (std::size_t i = 0; i < m; ++i)
    if (p.count[i]) p.mean[i] /= static_cast<double>(p.count[i]);
  return p;
}

void write_profile_csv(const std::filesystem::path& path, const std::vector<SimilarityProfile>& profiles) {
  write_file_atomic(path, [&](std::ostream& out) {
    out << "index,mode,mean,count\n";
    for (const auto& p : profiles)
      for (std::size_t i = 0; i < p.mean.size(); ++i)
        if (p.count[i]) out << i + 1 << ',' << p.mode << ',' << fmt(p.mean[i]) << ',' << p.count[i] << '\n';
  });
}

void write_step_csv(const std::filesystem::path& path, const std::vector<StepCurves>& curves) {
  write_file_atomic(path, [&](std::ostream& out) {
    out << "t,mode,position,mean,count\n";
    for (const auto& c : curves) {
      for (std::size_t i = 0; i < c.count.size(); ++i) {
        if (!c.count[i]) continue;
        out << i + 1 << ',' << c.mode << ",first," << fmt(c.first[i]) << ',' << c.count[i] << '\n';
        out << i + 1 << ',' << c.mode << ",middle," << fmt(c.middle[i]) << ',' << c.count[i] << '\n';
        out << i + 1 << ',' << c.mode << ",last," << fmt(c.last[i]) << ',' << c.count[i] << '\n';
      }
    }
  });
}

}  // namespace fast
