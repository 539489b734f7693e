#include "fast/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <tuple>
#include <ostream>

#include "fast/io.hpp"
#include "json.hpp"

namespace fast {

Profile toy_profile() {
  Profile p;
  p.name = "toy";
  p.corpus.swap_prob = 0.8;
  p.corpus.noise_std = 0.5;
  p.dev_utterances = 100;
  p.test_utterances = 200;
  p.model.stride = 2;

  p.pretrain.epochs = 3;

  p.offline.stage1_epochs = 14;
  p.offline.stage2_epochs = 8;
  p.offline.batch = 8;
  p.offline.adam.lr = 1e-2;
  p.offline.adam.warmup = 1000;

  p.fad.m = 20;
  p.fad.epochs = 3;
  p.m = 20;
  return p;
}

Profile paper_profile() {
  Profile p;
  p.name = "paper";
  p.model.dim = 768;
  p.model.heads = 4;
  p.model.ff_hidden = 3072;
  p.model.acoustic_layers = 12;
  p.model.semantic_layers = 8;
  p.model.decoder_layers = 6;
  p.model.stride = 2;
  p.pretrain.coverage = 0.49;
  p.pretrain.min_span = 5;
  p.pretrain.max_span = 10;
  p.offline.adam.lr = 1e-4;
  p.offline.adam.warmup = 10000;
  p.offline.average_top = 10;
  p.fad.m = 50;
  p.fad.adam.lr = 1e-4;
  p.fad.adam.warmup = 10000;
  p.m = 50;
  return p;
}

Profile profile_by_name(const std::string& name) {
  if (name == "toy") return toy_profile();
  if (name == "paper") return paper_profile();
  throw ContractError("unknown profile '" + name + "' (expected toy or paper)");
}

StageSeeds stage_seeds(std::uint64_t seed) {
  return {Rng::mix(seed, 11), Rng::mix(seed, 12), Rng::mix(seed, 13), Rng::mix(seed, 14),
          Rng::mix(seed, 15), Rng::mix(seed, 16), Rng::mix(seed, 17), Rng::mix(seed, 18)};
}

DataSplits generate_splits(const Profile& profile, std::uint64_t seed) {
  const StageSeeds s = stage_seeds(seed);
  CorpusConfig cc = profile.corpus;
  cc.language_seed = s.language;
  DataSplits d;
  cc.seed = s.train;
  d.train = generate_corpus(cc);
  cc.seed = s.dev;
  cc.utterances = profile.dev_utterances;
  d.dev = generate_corpus(cc);
  cc.seed = s.test;
  cc.utterances = profile.test_utterances;
  d.test = generate_corpus(cc);
  return d;
}

FastModel train_teacher(const Profile& profile, const DataSplits& data, std::uint64_t seed, const LogSink& log) {
  const StageSeeds s = stage_seeds(seed);
  ModelConfig mc = profile.model;
  mc.frame_dim = profile.corpus.frame_dim;
  mc.src_vocab = profile.corpus.src_vocab;
  mc.tgt_vocab = profile.corpus.tgt_vocab;
  FastModel model(mc, s.init);
  pretrain_acoustic(model, data.train, profile.pretrain, s.pretrain, log);
  train_offline(model, data.train, data.dev, profile.offline, s.offline, log);
  return model;
}

std::vector<MetricRow> evaluate_modes(const std::vector<ModeSpec>& modes, const std::vector<Utterance>& test,
                                      const std::vector<std::size_t>& ks, std::size_t m, double p,
                                      std::size_t chunk_frames, std::vector<TraceRecord>* traces) {
  std::vector<MetricRow> rows;
  for (const auto& spec : modes) {
    if (!spec.model) throw ContractError("evaluate_modes: mode '" + spec.mode + "' has no model");
    StreamPolicy policy;
    policy.fai = spec.fai;
    policy.m = m;
    policy.discard_rate = p;
    policy.chunk_frames = chunk_frames;
    for (const auto& r : sweep(*spec.model, test, ks, policy, spec.mode, traces))
      rows.push_back({r.k, spec.fai ? m : 0, p, spec.mode, r.report});
  }
  return rows;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  write_file_atomic(path, [&](std::ostream& out) {
    out << "k,m,p,mode,BLEU,AL,AP,DAL\n";
    char buf[256];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.2f,%s,%.6f,%.6f,%.6f,%.6f\n", r.k, r.m, r.p, r.mode.c_str(),
                    r.report.bleu, r.report.al_ms, r.report.ap, r.report.dal_ms);
      out << buf;
    }
  });
}

std::vector<MetricRow> metrics_from_traces(const std::vector<LoadedTrace>& traces) {
  if (traces.empty()) throw DataError("no data: the trace file holds no records");
  struct Group {
    MetricRow row;
    std::vector<std::vector<int>> hyps, refs;
    std::vector<DelayTrace> delays;
  };
  std::vector<Group> groups;
  std::map<std::tuple<std::string, std::size_t, std::size_t, double>, std::size_t> index;
  for (const auto& t : traces) {
    const auto key = std::make_tuple(t.mode, t.k, t.m, t.p);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, groups.size()).first;
      groups.push_back({{t.k, t.m, t.p, t.mode, {}}, {}, {}, {}});
    }
    Group& g = groups[it->second];
    g.hyps.push_back(t.hyp);
    g.refs.push_back(t.ref);
    g.delays.push_back(t.trace);
  }
  std::vector<MetricRow> rows;
  for (auto& g : groups) {
    g.row.report = evaluate(g.hyps, g.refs, g.delays);
    rows.push_back(g.row);
  }
  return rows;
}

JsonlLog::JsonlLog(std::filesystem::path path) : path_(std::move(path)) {}

void JsonlLog::operator()(const LogRecord& r) const {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["stage"] = r.stage;
  for (const auto& [name, value] : r.terms) j[name] = value;
  std::ofstream out(path_, std::ios::app);
  if (!out) throw DataError("cannot append to log " + path_.string());
  out << j.dump() << '\n';
}

LogSink JsonlLog::sink() const {
  return [self = *this](const LogRecord& r) { self(r); };
}

}  // namespace fast
