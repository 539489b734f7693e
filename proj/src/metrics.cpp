#include "fast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "fast/tensor.hpp"

namespace fast {

void DelayTrace::validate() const {
  if (!(source_ms > 0.0)) throw ContractError("delay trace: source duration must be positive");
  double prev = 0.0;
  for (double g : delays) {
    if (!(g > 0.0) || g > source_ms) throw ContractError("delay trace: delay outside (0, source]");
    if (g < prev) throw ContractError("delay trace: delays must be non-decreasing");
    prev = g;
  }
}

namespace {

using Ngram = std::vector<int>;

std::map<Ngram, std::size_t> count_ngrams(const std::vector<int>& s, std::size_t n) {
  std::map<Ngram, std::size_t> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) out[Ngram(s.begin() + i, s.begin() + i + n)]++;
  return out;
}

}  // namespace

double corpus_bleu(const std::vector<std::vector<int>>& hyps, const std::vector<std::vector<int>>& refs) {
  if (hyps.size() != refs.size()) throw ContractError("corpus_bleu: hypothesis and reference counts differ");
  if (hyps.empty()) return 0.0;
  constexpr double eps = 1e-9;
  double matches[4] = {0, 0, 0, 0};
  double totals[4] = {0, 0, 0, 0};
  double hyp_len = 0.0, ref_len = 0.0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    hyp_len += static_cast<double>(hyps[s].size());
    ref_len += static_cast<double>(refs[s].size());
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto h = count_ngrams(hyps[s], n);
      const auto r = count_ngrams(refs[s], n);
      for (const auto& [gram, cnt] : h) {
        totals[n - 1] += static_cast<double>(cnt);
        auto it = r.find(gram);
        if (it != r.end()) matches[n - 1] += static_cast<double>(std::min(cnt, it->second));
      }
    }
  }
  if (hyp_len == 0.0) return 0.0;
  double log_p = 0.0;
  for (int n = 0; n < 4; ++n) {
    const double m = matches[n] > 0.0 ? matches[n] : eps;
    log_p += std::log(m / std::max(totals[n], 1.0));
  }
  const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return std::clamp(100.0 * bp * std::exp(log_p / 4.0), 0.0, 100.0);
}

std::optional<double> average_lagging(const DelayTrace& trace) {
  const auto& g = trace.delays;
  if (g.empty()) return std::nullopt;
  const double gamma = static_cast<double>(g.size()) / trace.source_ms;
  std::size_t tau = g.size();
  for (std::size_t j = 0; j < g.size(); ++j) {
    if (g[j] >= trace.source_ms) {
      tau = j + 1;
      break;
    }
  }
  double s = 0.0;
  for (std::size_t j = 0; j < tau; ++j) s += g[j] - static_cast<double>(j) / gamma;
  return s / static_cast<double>(tau);
}

std::optional<double> average_proportion(const DelayTrace& trace) {
  const auto& g = trace.delays;
  if (g.empty()) return std::nullopt;
  double s = 0.0;
  for (double v : g) s += v;
  return s / (trace.source_ms * static_cast<double>(g.size()));
}

std::optional<double> differentiable_average_lagging(const DelayTrace& trace) {
  const auto& g = trace.delays;
  if (g.empty()) return std::nullopt;
  const double inv_gamma = trace.source_ms / static_cast<double>(g.size());
  double prev = -inv_gamma;
  double s = 0.0;
  for (std::size_t j = 0; j < g.size(); ++j) {
    const double d = std::max(g[j], prev + inv_gamma);
    s += d - static_cast<double>(j) * inv_gamma;
    prev = d;
  }
  return s / static_cast<double>(g.size());
}

MetricReport evaluate(const std::vector<std::vector<int>>& hyps, const std::vector<std::vector<int>>& refs,
                      const std::vector<DelayTrace>& traces) {
  if (traces.size() != hyps.size()) throw ContractError("evaluate: trace and hypothesis counts differ");
  MetricReport r;
  r.utterances = hyps.size();
  r.bleu = corpus_bleu(hyps, refs);
  std::size_t n = 0;
  for (const auto& t : traces) {
    auto al = average_lagging(t);
    if (!al) {
      ++r.no_latency;
      continue;
    }
    r.al_ms += *al;
    r.ap += *average_proportion(t);
    r.dal_ms += *differentiable_average_lagging(t);
    ++n;
  }
  if (n > 0) {
    r.al_ms /= static_cast<double>(n);
    r.ap /= static_cast<double>(n);
    r.dal_ms /= static_cast<double>(n);
  }
  return r;
}

}  // namespace fast
