#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "fast/metrics.hpp"
#include "fast/model.hpp"

namespace fast {

struct StreamPolicy {
  std::size_t k = 1;  // wait lag in detected acoustic units
  std::size_t m = 20;
  double discard_rate = 1.0;
  std::size_t chunk_frames = 2;
  bool fai = false;
  /// Keep the masks on the last READ too (otherwise the complete source is
  /// encoded as is).
  bool fai_final = false;

  void validate() const;
};

enum class Action { Read, Write, Done };

/// Per-WRITE record kept for policy checks.
struct WriteEvent {
  std::size_t units = 0;       // N when the token was written
  std::size_t emitted = 0;     // |y| before the write
  bool source_done = false;
  std::size_t mask_rows = 0;   // mask-position rows in the decoder memory
};

struct StreamResult {
  std::vector<std::size_t> ids;  // emitted output ids, no end-of-sequence
  std::vector<int> words;        // target words (-1 for non-target ids)
  DelayTrace trace;
  bool truncated = false;
  std::vector<WriteEvent> writes;
};

/// Wait-k over CIF units, optionally with future-aware masks on every
/// re-encoding of the consumed prefix.
class StreamingSession {
 public:
  StreamingSession(const FastModel& model, const Utterance& u, StreamPolicy policy);

  Action step();
  bool finished() const { return done_; }
  const StreamResult& result() const { return result_; }
  std::size_t consumed_frames() const { return consumed_; }
  std::size_t units() const { return units_; }

 private:
  void read_chunk();
  void write_token();

  const FastModel& model_;
  const Utterance& u_;
  StreamPolicy policy_;
  std::size_t consumed_ = 0;
  std::size_t units_ = 0;
  std::size_t max_len_ = 0;
  bool done_ = false;
  Tensor memory_;  // semantic encoding of the current shrunk prefix
  std::size_t memory_mask_rows_ = 0;
  StreamResult result_;
};

StreamResult run_session(const FastModel& model, const Utterance& u, const StreamPolicy& policy);

struct SweepRow {
  std::size_t k = 0;
  MetricReport report;
};

struct TraceRecord {
  std::size_t id = 0;
  std::string mode;
  StreamPolicy policy;
  std::vector<int> ref;
  StreamResult result;
};

/// Runs every utterance at every k (sorted ascending). Traces are appended
/// to `traces` when it is given.
std::vector<SweepRow> sweep(const FastModel& model, const std::vector<Utterance>& corpus, std::vector<std::size_t> ks,
                            const StreamPolicy& base, const std::string& mode = "",
                            std::vector<TraceRecord>* traces = nullptr);

/// One JSON object per line: id, src_ms, delays_ms, hyp, ref, k, m, p, mode.
void write_traces_jsonl(const std::filesystem::path& path, const std::vector<TraceRecord>& traces);

struct LoadedTrace {
  std::size_t id = 0;
  std::string mode;
  std::size_t k = 0;
  std::size_t m = 0;
  double p = 1.0;
  std::vector<int> hyp;
  std::vector<int> ref;
  DelayTrace trace;
};
/// Throws DataError with the line number on malformed input.
std::vector<LoadedTrace> read_traces_jsonl(const std::filesystem::path& path);

}  // namespace fast
