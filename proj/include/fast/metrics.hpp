#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace fast {

/// Per-token delays g(1..|y|) in ms against the total source duration.
struct DelayTrace {
  double source_ms = 0.0;
  std::vector<double> delays;

  /// Throws ContractError unless 0 < g(j) <= source_ms and non-decreasing.
  void validate() const;
};

/// Smoothed corpus BLEU-4 over token ids, in [0, 100].
double corpus_bleu(const std::vector<std::vector<int>>& hyps, const std::vector<std::vector<int>>& refs);

/// Empty hypotheses have no latency; these return nullopt for them.
std::optional<double> average_lagging(const DelayTrace& trace);
std::optional<double> average_proportion(const DelayTrace& trace);
std::optional<double> differentiable_average_lagging(const DelayTrace& trace);

struct MetricReport {
  double bleu = 0.0;
  double al_ms = 0.0;
  double ap = 0.0;
  double dal_ms = 0.0;
  std::size_t utterances = 0;
  std::size_t no_latency = 0;  // empty hypotheses, left out of the latency means
};

MetricReport evaluate(const std::vector<std::vector<int>>& hyps, const std::vector<std::vector<int>>& refs,
                      const std::vector<DelayTrace>& traces);

}  // namespace fast
