#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "fast/model.hpp"

namespace fast {

/// How a prefix of speech tokens is encoded: as is, or with m masks
/// appended (and their outputs dropped).
struct PrefixEncoding {
  bool fai = false;
  std::size_t m = 20;
};

/// cos(a_hat_{t,t'}, a_{t'}) with 1-based positions t' <= t <= T.
double position_similarity(const FastModel& model, const Utterance& u, std::size_t t, std::size_t t_prime,
                           PrefixEncoding enc = {});

/// S[t-1][t'-1] = s_{t,t'} for every prefix length t of the utterance.
std::vector<std::vector<double>> prefix_similarities(const FastModel& model, const Tensor& c, PrefixEncoding enc);

struct SimilarityProfile {
  std::string mode;
  std::vector<double> mean;         // index tau - 1
  std::vector<std::size_t> count;   // utterances contributing to each tau
};

/// Mean over utterances of the mean over t in [tau, T] of s_{t, t-tau+1}.
/// Only utterances with min_len <= T <= max_len take part.
SimilarityProfile reverse_position_profile(const FastModel& model, const std::vector<Utterance>& test,
                                           PrefixEncoding enc, const std::string& mode, std::size_t t_max = 100,
                                           std::size_t min_len = 8, std::size_t max_len = 60);

struct StepCurves {
  std::string mode;
  // index t - 1; first = positions 1..3, middle = around ceil(t/2),
  // last = t-2..t (positions clipped to [1, t])
  std::vector<double> first, middle, last;
  std::vector<std::size_t> count;
};
StepCurves per_step_stats(const FastModel& model, const std::vector<Utterance>& test, PrefixEncoding enc,
                          const std::string& mode);

struct DegradationGroups {
  std::vector<double> per_utterance;           // s_-1(x), in corpus order
  std::vector<std::vector<std::size_t>> groups;  // corpus indices, worst group first
  std::vector<double> group_mean;
};
/// Sorts utterances by mean last-position similarity and splits them into
/// n_groups equal buckets (the remainder joins the last one).
DegradationGroups degradation_groups(const FastModel& model, const std::vector<Utterance>& test, PrefixEncoding enc,
                                     std::size_t n_groups = 5);

/// Similarity between mask-position outputs (discard rate 0) and full-input
/// representations at the same positions, by offset 1..m past the prefix.
SimilarityProfile predicted_context_similarity(const FastModel& model, const std::vector<Utterance>& test,
                                               std::size_t m);

/// CSV with header `index,mode,mean,count`; rows with zero count are skipped.
void write_profile_csv(const std::filesystem::path& path, const std::vector<SimilarityProfile>& profiles);
void write_step_csv(const std::filesystem::path& path, const std::vector<StepCurves>& curves);

}  // namespace fast
