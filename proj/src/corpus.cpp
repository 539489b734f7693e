#include "fast/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "fast/io.hpp"
#include "fast/rng.hpp"
#include "fast/tensor.hpp"
#include "json.hpp"

namespace fast {

using nlohmann::json;

void CorpusConfig::validate() const {
  if (src_vocab == 0 || tgt_vocab == 0) throw ContractError("corpus: vocabularies must be nonempty");
  if (src_vocab != tgt_vocab) throw ContractError("corpus: the lexical map is a bijection, so vocab sizes must match");
  if (frame_dim == 0) throw ContractError("corpus: frame_dim must be positive");
  if (min_tokens == 0 || min_tokens > max_tokens) throw ContractError("corpus: invalid token-count range");
  if (min_frames_per_token == 0 || min_frames_per_token > max_frames_per_token) {
    throw ContractError("corpus: invalid frames-per-token range");
  }
  if (noise_std < 0.0) throw ContractError("corpus: noise_std must be nonnegative");
  if (swap_prob < 0.0 || swap_prob > 1.0) throw ContractError("corpus: swap_prob outside [0, 1]");
  if (cue_strength < 0.0) throw ContractError("corpus: cue_strength must be nonnegative");
}

Language make_language(const CorpusConfig& cfg) {
  cfg.validate();
  Rng rng(Rng::mix(cfg.language_seed, 0x1a2b));
  Language lang;
  lang.prototypes.assign(cfg.src_vocab, std::vector<double>(cfg.frame_dim));
  for (auto& p : lang.prototypes)
    for (auto& x : p) x = rng.normal();
  lang.lexicon.resize(cfg.src_vocab);
  std::iota(lang.lexicon.begin(), lang.lexicon.end(), 0);
  // Fisher-Yates with the portable generator.
  for (std::size_t i = lang.lexicon.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(lang.lexicon[i - 1], lang.lexicon[j]);
  }
  lang.is_head.resize(cfg.src_vocab);
  lang.is_modifier.resize(cfg.src_vocab);
  for (std::size_t w = 0; w < cfg.src_vocab; ++w) {
    const bool head = rng.uniform() < 0.5;
    const double u = rng.uniform();
    lang.is_head[w] = head;
    lang.is_modifier[w] = !head && u < cfg.swap_prob;
  }
  lang.inverse_lexicon.resize(cfg.tgt_vocab);
  for (std::size_t s = 0; s < lang.lexicon.size(); ++s) lang.inverse_lexicon[static_cast<std::size_t>(lang.lexicon[s])] = static_cast<int>(s);
  lang.cue.assign(cfg.frame_dim, 0.0);
  if (cfg.cue_strength > 0.0) {
    for (std::size_t w = 1; w < cfg.src_vocab; w += 2) lang.prototypes[w] = lang.prototypes[w - 1];
    Rng cue_rng(Rng::mix(cfg.language_seed, 0xc0e));
    double norm = 0.0;
    for (auto& x : lang.cue) {
      x = cue_rng.normal();
      norm += x * x;
    }
    for (auto& x : lang.cue) x *= cfg.cue_strength / std::sqrt(norm);
  }
  return lang;
}

namespace {

double cue_sign(int word) { return word % 2 == 1 ? 1.0 : -1.0; }

}  // namespace

std::vector<Utterance> generate_corpus(const CorpusConfig& cfg) {
  const Language lang = make_language(cfg);
  Rng rng(Rng::mix(cfg.seed, 0x5eed));
  std::vector<Utterance> corpus;
  corpus.reserve(cfg.utterances);
  for (std::size_t u = 0; u < cfg.utterances; ++u) {
    Utterance utt;
    utt.id = u;
    utt.frame_dim = cfg.frame_dim;
    const auto J = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(cfg.min_tokens), static_cast<std::int64_t>(cfg.max_tokens)));
    utt.src.resize(J);
    for (auto& s : utt.src) s = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(cfg.src_vocab) - 1));

    auto silence = [&](std::size_t n) {
      for (std::size_t f = 0; f < n * cfg.frame_dim; ++f) utt.frames.push_back(cfg.noise_std * rng.normal());
      utt.n_frames += n;
    };
    silence(cfg.silence_frames);
    for (std::size_t i = 0; i < J; ++i) {
      const auto k = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(cfg.min_frames_per_token),
                                                              static_cast<std::int64_t>(cfg.max_frames_per_token)));
      const auto& proto = lang.prototypes[static_cast<std::size_t>(utt.src[i])];
      // cue of the previous word, if any
      const double sign = i == 0 ? 0.0 : cue_sign(utt.src[i - 1]);
      const std::size_t tail = i + 1 == J && cfg.cue_strength > 0.0 ? cfg.cue_tail_frames : 0;
      utt.frame_spans.push_back({utt.n_frames, utt.n_frames + k + tail});
      for (std::size_t f = 0; f < k; ++f)
        for (std::size_t d = 0; d < cfg.frame_dim; ++d)
          utt.frames.push_back(proto[d] + sign * lang.cue[d] + cfg.noise_std * rng.normal());
      for (std::size_t f = 0; f < tail; ++f)
        for (std::size_t d = 0; d < cfg.frame_dim; ++d)
          utt.frames.push_back(cue_sign(utt.src[i]) * lang.cue[d] + cfg.noise_std * rng.normal());
      utt.n_frames += k + tail;
    }
    silence(cfg.silence_frames);
    utt.frame_spans.front().begin = 0;
    utt.frame_spans.back().end = utt.n_frames;

    // target position of each source index
    std::vector<int> order(J);
    std::iota(order.begin(), order.end(), 0);
    // heads and modifiers are disjoint, so swapped pairs never overlap
    for (std::size_t i = 0; i + 1 < J; ++i) {
      if (lang.is_modifier[static_cast<std::size_t>(utt.src[i])] && lang.is_head[static_cast<std::size_t>(utt.src[i + 1])]) {
        std::swap(order[i], order[i + 1]);
      }
    }
    utt.tgt.resize(J);
    for (std::size_t j = 0; j < J; ++j) {
      const int i = order[j];
      utt.tgt[j] = lang.lexicon[static_cast<std::size_t>(utt.src[static_cast<std::size_t>(i)])];
      utt.alignment.emplace_back(i, static_cast<int>(j));
    }
    std::sort(utt.alignment.begin(), utt.alignment.end());
    corpus.push_back(std::move(utt));
  }
  return corpus;
}

double monotonic_level(const std::vector<std::pair<int, int>>& alignment) {
  if (alignment.empty()) throw ContractError("monotonic_level: empty alignment");
  double total = 0.0;
  for (const auto& [i, j] : alignment) total += std::max(0, i - j);
  return total / static_cast<double>(alignment.size());
}

std::vector<std::vector<std::size_t>> split_by_monotonicity(const std::vector<Utterance>& corpus, std::size_t n_groups) {
  if (n_groups == 0) throw ContractError("split_by_monotonicity: n_groups must be >= 1");
  std::vector<std::pair<double, std::size_t>> keyed;  // (M, index)
  keyed.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) keyed.emplace_back(monotonic_level(corpus[i].alignment), i);
  std::sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return corpus[a.second].id < corpus[b.second].id;
  });
  const std::size_t base = corpus.size() / n_groups;
  std::vector<std::vector<std::size_t>> groups(n_groups);
  std::size_t pos = 0;
  for (std::size_t g = 0; g < n_groups; ++g) {
    const std::size_t size = (g + 1 == n_groups) ? corpus.size() - pos : base;
    for (std::size_t i = 0; i < size; ++i) groups[g].push_back(keyed[pos++].second);
  }
  return groups;
}

void write_corpus_jsonl(const std::filesystem::path& path, const std::vector<Utterance>& corpus) {
  write_file_atomic(path, [&](std::ostream& out) {
    for (const auto& u : corpus) {
      json frames = json::array();
      for (std::size_t f = 0; f < u.n_frames; ++f) {
        frames.push_back(std::vector<double>(u.frames.begin() + static_cast<std::ptrdiff_t>(f * u.frame_dim),
                                             u.frames.begin() + static_cast<std::ptrdiff_t>((f + 1) * u.frame_dim)));
      }
      json align = json::array();
      for (const auto& [i, j] : u.alignment) align.push_back({i, j});
      json spans = json::array();
      for (const auto& s : u.frame_spans) spans.push_back({s.begin, s.end});
      json line = {{"id", u.id}, {"frames", std::move(frames)}, {"src", u.src}, {"tgt", u.tgt},
                   {"alignment", std::move(align)}, {"frame_spans", std::move(spans)}};
      out << line.dump() << '\n';
    }
  });
}

std::vector<Utterance> read_corpus_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus " + path.string());
  std::vector<Utterance> corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Utterance u;
      u.id = j.at("id").get<std::size_t>();
      const auto& frames = j.at("frames");
      u.n_frames = frames.size();
      u.frame_dim = u.n_frames ? frames.at(0).size() : 0;
      for (const auto& f : frames) {
        if (f.size() != u.frame_dim) throw std::runtime_error("ragged frame dimensions");
        for (const auto& x : f) u.frames.push_back(x.get<double>());
      }
      u.src = j.at("src").get<std::vector<int>>();
      u.tgt = j.at("tgt").get<std::vector<int>>();
      for (const auto& p : j.at("alignment")) u.alignment.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
      for (const auto& s : j.at("frame_spans")) u.frame_spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
      if (u.src.empty()) throw std::runtime_error("empty source");
      corpus.push_back(std::move(u));
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

}  // namespace fast
