#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace fast {

inline constexpr double kFrameMs = 20.0;

struct FrameSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
};

/// One synthetic utterance. Indices in `alignment` are 0-based
/// (source index, target index) pairs.
struct Utterance {
  std::size_t id = 0;
  std::size_t n_frames = 0;
  std::size_t frame_dim = 0;
  std::vector<double> frames;  // n_frames x frame_dim, row-major
  std::vector<int> src;
  std::vector<int> tgt;
  std::vector<std::pair<int, int>> alignment;
  std::vector<FrameSpan> frame_spans;

  double duration_ms() const { return static_cast<double>(n_frames) * kFrameMs; }
};

struct CorpusConfig {
  std::size_t src_vocab = 64;
  std::size_t tgt_vocab = 64;
  std::size_t frame_dim = 16;
  std::size_t utterances = 2000;
  std::size_t min_tokens = 4;
  std::size_t max_tokens = 12;
  std::size_t min_frames_per_token = 3;
  std::size_t max_frames_per_token = 8;
  double noise_std = 0.5;
  /// Fraction of non-head source words that act as modifiers. A modifier
  /// directly followed by a head swaps with it in the target, so about
  /// swap_prob / 4 of adjacent pairs are reordered.
  double swap_prob = 0.3;
  /// Homophones with a delayed cue. When positive, words 2q and 2q+1 share
  /// one prototype and differ only by the sign of a cue vector of this norm,
  /// which is realized in the frames of the following word (or in
  /// cue_tail_frames extra frames after the last word).
  double cue_strength = 0.0;
  std::size_t cue_tail_frames = 2;
  /// Noise-only frames before the first and after the last word; they
  /// belong to the first and last word spans.
  std::size_t silence_frames = 0;
  /// Fixes token prototypes and the lexical map; shared by train/dev/test.
  std::uint64_t language_seed = 1234;
  /// Fixes the sampled utterances.
  std::uint64_t seed = 1;

  void validate() const;
};

/// Per-token prototype vectors, the source->target lexical bijection and the
/// word classes behind the reordering rule (modifier + head -> head + modifier).
struct Language {
  std::vector<std::vector<double>> prototypes;  // src_vocab x frame_dim
  std::vector<double> cue;                       // frame_dim, zero without homophones
  std::vector<int> lexicon;                     // src word -> tgt word
  std::vector<int> inverse_lexicon;
  std::vector<bool> is_head;
  std::vector<bool> is_modifier;
};

Language make_language(const CorpusConfig& cfg);

std::vector<Utterance> generate_corpus(const CorpusConfig& cfg);

/// Mean positive alignment shift, (1/|A|) * sum max(0, i - j).
double monotonic_level(const std::vector<std::pair<int, int>>& alignment);

/// Utterance indices sorted by (monotonic level, id) and cut into n_groups
/// equal groups; the remainder goes to the last group.
std::vector<std::vector<std::size_t>> split_by_monotonicity(const std::vector<Utterance>& corpus, std::size_t n_groups = 3);

void write_corpus_jsonl(const std::filesystem::path& path, const std::vector<Utterance>& corpus);
std::vector<Utterance> read_corpus_jsonl(const std::filesystem::path& path);

}  // namespace fast
