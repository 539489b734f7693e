#include "fast/streaming.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include "fast/io.hpp"
#include "json.hpp"

namespace fast {

using namespace fast::ops;
using json = nlohmann::json;

void StreamPolicy::validate() const {
  if (k == 0) throw ContractError("wait-k needs k >= 1");
  if (chunk_frames == 0) throw ContractError("chunk size must be >= 1 frame");
  if (discard_rate < 0.0 || discard_rate > 1.0) throw ContractError("discard rate must lie in [0, 1]");
}

StreamingSession::StreamingSession(const FastModel& model, const Utterance& u, StreamPolicy policy)
    : model_(model), u_(u), policy_(policy) {
  policy_.validate();
  if (u.n_frames == 0) throw ContractError("streaming: empty utterance");
  max_len_ = 2 * u.src.size() + 5;
  result_.trace.source_ms = static_cast<double>(u.n_frames) * kFrameMs;
}

Action StreamingSession::step() {
  if (done_) throw ContractError("streaming: step after the session finished");
  NoGradGuard ng;
  if (consumed_ < u_.n_frames && units_ < result_.ids.size() + policy_.k) {
    read_chunk();
    return Action::Read;
  }
  write_token();
  return done_ ? Action::Done : Action::Write;
}

void StreamingSession::read_chunk() {
  consumed_ = std::min(u_.n_frames, consumed_ + policy_.chunk_frames);
  const bool source_done = consumed_ == u_.n_frames;
  if (consumed_ < model_.acoustic.stride()) return;  // too short for one speech token

  const Tensor c = model_.acoustic.conv_subsample(
      std::span<const double>(u_.frames.data(), consumed_ * u_.frame_dim), consumed_);
  Tensor a;
  if (!policy_.fai || (source_done && !policy_.fai_final))
    a = model_.acoustic.encode_full(c);
  else
    a = model_.acoustic.encode_streaming_fai(c, policy_.m, policy_.discard_rate);
  const CifResult fired = model_.cif.integrate_fire(a, model_.cif.compute_weights(a), std::nullopt,
                                                    source_done ? TailMode::Offline : TailMode::Streaming);
  units_ = fired.boundaries.size();
  memory_mask_rows_ = 0;
  if (units_ == 0) {
    memory_ = Tensor();
    return;
  }
  const std::size_t last = fired.boundaries.back();
  if (last >= c.rows()) memory_mask_rows_ = last - c.rows() + 1;
  memory_ = model_.semantic(fired.h);
}

void StreamingSession::write_token() {
  const bool source_done = consumed_ == u_.n_frames;
  if (!memory_.defined()) {
    done_ = true;  // nothing fired over the whole utterance
    return;
  }
  const Tensor logits = next_token_logits(model_, memory_, result_.ids);
  std::vector<double> scores(logits.data().begin(), logits.data().end());
  if (!source_done) scores[kEos] = -std::numeric_limits<double>::infinity();
  const auto next = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
  if (next == kEos) {
    done_ = true;
    return;
  }
  result_.writes.push_back({units_, result_.ids.size(), source_done, memory_mask_rows_});
  result_.ids.push_back(next);
  result_.words.push_back(model_.target_word(next));
  result_.trace.delays.push_back(static_cast<double>(consumed_) * kFrameMs);
  if (result_.ids.size() >= max_len_) {
    result_.truncated = true;
    done_ = true;
  }
}

StreamResult run_session(const FastModel& model, const Utterance& u, const StreamPolicy& policy) {
  StreamingSession s(model, u, policy);
  while (!s.finished()) s.step();
  return s.result();
}

std::vector<SweepRow> sweep(const FastModel& model, const std::vector<Utterance>& corpus, std::vector<std::size_t> ks,
                            const StreamPolicy& base, const std::string& mode, std::vector<TraceRecord>* traces) {
  std::sort(ks.begin(), ks.end());
  std::vector<SweepRow> rows;
  for (std::size_t k : ks) {
    StreamPolicy policy = base;
    policy.k = k;
    std::vector<std::vector<int>> hyps, refs;
    std::vector<DelayTrace> delay;
    for (const auto& u : corpus) {
      StreamResult r = run_session(model, u, policy);
      hyps.push_back(r.words);
      refs.push_back(u.tgt);
      delay.push_back(r.trace);
      if (traces) traces->push_back({u.id, mode, policy, u.tgt, std::move(r)});
    }
    rows.push_back({k, evaluate(hyps, refs, delay)});
  }
  return rows;
}

void write_traces_jsonl(const std::filesystem::path& path, const std::vector<TraceRecord>& traces) {
  write_file_atomic(path, [&](std::ostream& out) {
    for (const auto& t : traces) {
      json j;
      j["id"] = t.id;
      j["src_ms"] = t.result.trace.source_ms;
      j["delays_ms"] = t.result.trace.delays;
      j["hyp"] = t.result.words;
      j["ref"] = t.ref;
      j["k"] = t.policy.k;
      j["m"] = t.policy.fai ? t.policy.m : 0;
      j["p"] = t.policy.discard_rate;
      j["mode"] = t.mode;
      out << j.dump() << '\n';
    }
  });
}

std::vector<LoadedTrace> read_traces_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trace file " + path.string());
  std::vector<LoadedTrace> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      LoadedTrace t;
      t.id = j.value("id", std::size_t{0});
      t.mode = j.value("mode", std::string{});
      t.k = j.value("k", std::size_t{0});
      t.m = j.value("m", std::size_t{0});
      t.p = j.value("p", 1.0);
      t.hyp = j.at("hyp").get<std::vector<int>>();
      t.ref = j.at("ref").get<std::vector<int>>();
      t.trace.source_ms = j.at("src_ms").get<double>();
      t.trace.delays = j.at("delays_ms").get<std::vector<double>>();
      if (t.trace.delays.size() != t.hyp.size()) throw DataError("delays_ms and hyp lengths differ");
      t.trace.validate();
      out.push_back(std::move(t));
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace fast
