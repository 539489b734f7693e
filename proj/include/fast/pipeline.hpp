#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fast/fad.hpp"
#include "fast/gap.hpp"
#include "fast/streaming.hpp"

namespace fast {

/// Default hyperparameters for every stage. "toy" runs on a laptop CPU;
/// "paper" records the published setting and is not meant to be trained
/// at desk scale.
struct Profile {
  std::string name;
  CorpusConfig corpus;
  std::size_t dev_utterances = 200;
  std::size_t test_utterances = 200;
  ModelConfig model;
  PretrainConfig pretrain;
  OfflineTrainConfig offline;
  FadConfig fad;
  std::vector<std::size_t> ks{1, 3, 5, 7, 9, 12, 15, 20, 30};
  std::size_t m = 20;
  double discard_rate = 1.0;
  std::size_t chunk_frames = 2;
};

Profile toy_profile();
Profile paper_profile();
/// Throws ContractError for unknown names.
Profile profile_by_name(const std::string& name);

/// Seeds for every stochastic stage, derived from one global seed.
struct StageSeeds {
  std::uint64_t language, train, dev, test, init, pretrain, offline, fad;
};
StageSeeds stage_seeds(std::uint64_t seed);

struct DataSplits {
  std::vector<Utterance> train, dev, test;
};
DataSplits generate_splits(const Profile& profile, std::uint64_t seed);

/// Fresh model, masked-reconstruction pretraining, then the offline schedule.
FastModel train_teacher(const Profile& profile, const DataSplits& data, std::uint64_t seed, const LogSink& log = {});

struct ModeSpec {
  std::string mode;     // baseline | fai | fast
  const FastModel* model = nullptr;
  bool fai = false;
};

struct MetricRow {
  std::size_t k = 0;
  std::size_t m = 0;
  double p = 1.0;
  std::string mode;
  MetricReport report;
};

/// Streams the test set at every k for every mode.
std::vector<MetricRow> evaluate_modes(const std::vector<ModeSpec>& modes, const std::vector<Utterance>& test,
                                      const std::vector<std::size_t>& ks, std::size_t m, double p,
                                      std::size_t chunk_frames, std::vector<TraceRecord>* traces = nullptr);

/// Header `k,m,p,mode,BLEU,AL,AP,DAL`, fixed decimal formatting.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> metrics_from_traces(const std::vector<LoadedTrace>& traces);

/// Appends one JSON object per record to a log file.
class JsonlLog {
 public:
  explicit JsonlLog(std::filesystem::path path);
  void operator()(const LogRecord& r) const;
  LogSink sink() const;

 private:
  std::filesystem::path path_;
};

}  // namespace fast
