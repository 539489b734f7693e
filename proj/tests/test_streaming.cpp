#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fast/io.hpp"
#include "fast/streaming.hpp"

using namespace fast;

namespace {

ModelConfig tiny() {
  ModelConfig cfg;
  cfg.frame_dim = 4;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.ff_hidden = 16;
  cfg.acoustic_layers = 1;
  cfg.semantic_layers = 1;
  cfg.decoder_layers = 1;
  cfg.src_vocab = 6;
  cfg.tgt_vocab = 6;
  return cfg;
}

std::vector<Utterance> tiny_corpus(std::size_t n, std::uint64_t seed) {
  CorpusConfig cc;
  cc.src_vocab = 6;
  cc.tgt_vocab = 6;
  cc.frame_dim = 4;
  cc.utterances = n;
  cc.min_tokens = 3;
  cc.max_tokens = 7;
  cc.seed = seed;
  return generate_corpus(cc);
}

void check_contract(const Utterance& u, const StreamPolicy& policy, const StreamResult& r) {
  REQUIRE(r.writes.size() == r.ids.size());
  REQUIRE(r.trace.delays.size() == r.ids.size());
  CHECK_NOTHROW(r.trace.validate());
  CHECK(r.trace.source_ms == doctest::Approx(u.n_frames * kFrameMs));
  for (std::size_t j = 0; j < r.writes.size(); ++j) {
    const WriteEvent& w = r.writes[j];
    CHECK(w.emitted == j);
    if (!w.source_done) {
      CHECK(w.units >= w.emitted + policy.k);
      CHECK(r.trace.delays[j] < u.n_frames * kFrameMs);
    } else {
      CHECK(r.trace.delays[j] == doctest::Approx(u.n_frames * kFrameMs));
    }
    if (policy.fai && policy.discard_rate == 1.0) CHECK(w.mask_rows == 0);
  }
  CHECK(r.ids.size() <= 2 * u.src.size() + 5);
}

}  // namespace

TEST_CASE("policy validation") {
  StreamPolicy p;
  CHECK_NOTHROW(p.validate());
  p.k = 0;
  CHECK_THROWS_AS(p.validate(), ContractError);
  p = {};
  p.chunk_frames = 0;
  CHECK_THROWS_AS(p.validate(), ContractError);
  p = {};
  p.discard_rate = 1.5;
  CHECK_THROWS_AS(p.validate(), ContractError);
}

TEST_CASE("wait-k contract holds for every mode") {
  const FastModel model(tiny(), 11);
  const auto corpus = tiny_corpus(8, 3);
  for (bool fai : {false, true}) {
    for (std::size_t k : {1, 2, 3, 5}) {
      StreamPolicy p;
      p.k = k;
      p.fai = fai;
      p.m = 6;
      for (const auto& u : corpus) check_contract(u, p, run_session(model, u, p));
    }
  }
}

TEST_CASE("reads advance by one chunk and tokens are never retracted") {
  const FastModel model(tiny(), 12);
  const auto corpus = tiny_corpus(5, 4);
  StreamPolicy p;
  p.k = 2;
  p.fai = true;
  p.m = 4;
  p.chunk_frames = 3;
  for (const auto& u : corpus) {
    StreamingSession s(model, u, p);
    std::vector<std::size_t> prev;
    std::size_t consumed = 0;
    while (!s.finished()) {
      const Action a = s.step();
      const auto& ids = s.result().ids;
      REQUIRE(ids.size() >= prev.size());
      CHECK(std::equal(prev.begin(), prev.end(), ids.begin()));
      if (a == Action::Read) {
        CHECK(s.consumed_frames() == std::min(u.n_frames, consumed + 3));
        CHECK(ids.size() == prev.size());
      } else if (a == Action::Write) {
        CHECK(ids.size() == prev.size() + 1);
        CHECK(s.consumed_frames() == consumed);
      }
      consumed = s.consumed_frames();
      prev = ids;
    }
    CHECK_THROWS_AS(s.step(), ContractError);
  }
}

TEST_CASE("an unbounded wait reproduces offline greedy decoding") {
  const FastModel model(tiny(), 13);
  for (const auto& u : tiny_corpus(6, 5)) {
    for (bool fai : {false, true}) {
      StreamPolicy p;
      p.k = 1000;
      p.fai = fai;
      p.m = 5;
      const StreamResult r = run_session(model, u, p);
      CHECK(r.words == translate_offline(model, u));
      for (const auto& w : r.writes) CHECK(w.source_done);
    }
  }
}

TEST_CASE("sweep is deterministic and ordered by k") {
  const FastModel model(tiny(), 14);
  const auto corpus = tiny_corpus(4, 6);
  StreamPolicy p;
  std::vector<TraceRecord> t1, t2;
  const auto a = sweep(model, corpus, {3, 1}, p, "B", &t1);
  const auto b = sweep(model, corpus, {1, 3}, p, "B", &t2);
  REQUIRE(a.size() == 2);
  CHECK(a[0].k == 1);
  CHECK(a[1].k == 3);
  CHECK(t1.size() == 8);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].report.bleu == b[i].report.bleu);
    CHECK(a[i].report.al_ms == b[i].report.al_ms);
  }
  for (std::size_t i = 0; i < t1.size(); ++i) CHECK(t1[i].result.ids == t2[i].result.ids);
}

TEST_CASE("trace files round-trip and reject malformed lines") {
  const FastModel model(tiny(), 15);
  const auto corpus = tiny_corpus(3, 7);
  StreamPolicy p;
  p.fai = true;
  p.m = 7;
  std::vector<TraceRecord> traces;
  sweep(model, corpus, {2}, p, "B+FAI", &traces);
  const auto dir = std::filesystem::temp_directory_path() / "fast_trace_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "traces.jsonl";
  write_traces_jsonl(path, traces);
  const auto loaded = read_traces_jsonl(path);
  REQUIRE(loaded.size() == traces.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].id == traces[i].id);
    CHECK(loaded[i].mode == "B+FAI");
    CHECK(loaded[i].k == 2);
    CHECK(loaded[i].m == 7);
    CHECK(loaded[i].hyp == traces[i].result.words);
    CHECK(loaded[i].ref == traces[i].ref);
    CHECK(loaded[i].trace.delays == traces[i].result.trace.delays);
  }

  {
    std::ofstream out(path, std::ios::app);
    out << "{\"id\": 1, \"hyp\": [1, 2]}\n";
  }
  try {
    read_traces_jsonl(path);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":" + std::to_string(traces.size() + 1) + ":") != std::string::npos);
  }
  CHECK_THROWS_AS(read_traces_jsonl(dir / "missing.jsonl"), DataError);
  std::filesystem::remove_all(dir);
}
