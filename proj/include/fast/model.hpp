#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fast/acoustic_encoder.hpp"
#include "fast/cif.hpp"
#include "fast/corpus.hpp"
#include "fast/optim.hpp"

namespace fast {

// Output vocabulary: special ids first, then target words, then source words
// (the latter only for the ASR task).
inline constexpr std::size_t kEos = 0;
inline constexpr std::size_t kStTag = 1;
inline constexpr std::size_t kAsrTag = 2;
inline constexpr std::size_t kFirstWord = 3;

/// Transformer stack over shrunk (or, in stage 1, unshrunk) states.
class SemanticEncoder {
 public:
  SemanticEncoder() = default;
  SemanticEncoder(const ModelConfig& cfg, Rng& rng);
  Tensor operator()(const Tensor& h) const;
  void collect(ParamList& out) const;

  std::vector<nn::EncoderLayer> layers;
  nn::LayerNorm final_norm;
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(const ModelConfig& cfg, std::size_t vocab, Rng& rng);

  /// Logits (|inputs| x vocab) for teacher-forced inputs over `memory`.
  Tensor operator()(const Tensor& memory, const std::vector<std::size_t>& inputs) const;
  void collect(ParamList& out) const;

  Tensor embedding;  // vocab x dim
  std::vector<nn::DecoderLayer> layers;
  nn::LayerNorm final_norm;
  nn::Linear output;
};

/// Whole system: acoustic encoder, CIF, semantic encoder and decoder.
/// Copies share parameters; use clone() for an independent model.
class FastModel {
 public:
  FastModel() = default;
  FastModel(const ModelConfig& cfg, std::uint64_t seed);

  FastModel clone() const;

  std::size_t vocab() const { return kFirstWord + cfg.tgt_vocab + cfg.src_vocab; }
  std::size_t target_id(int word) const { return kFirstWord + static_cast<std::size_t>(word); }
  std::size_t source_id(int word) const { return kFirstWord + cfg.tgt_vocab + static_cast<std::size_t>(word); }
  /// Target word for an output id, or -1 for anything else.
  int target_word(std::size_t id) const;

  Tensor frames_tensor(const Utterance& u) const;
  Tensor speech_tokens(const Utterance& u) const { return acoustic.conv_subsample(frames_tensor(u)); }

  ParamList params() const;

  ModelConfig cfg;
  AcousticEncoder acoustic;
  CifDetector cif;
  SemanticEncoder semantic;
  Decoder decoder;
};

/// Teacher-forced sum of -log p(y_j | y_<j, h). `y` holds output ids; the
/// decoder input is the task tag followed by y without its last element.
Tensor st_loss(const FastModel& model, const Tensor& h, const std::vector<std::size_t>& y,
               std::size_t tag = kStTag, double smoothing = 0.0);

/// Target output ids for an utterance, with the end-of-sequence appended.
std::vector<std::size_t> target_ids(const FastModel& model, const Utterance& u);
std::vector<std::size_t> source_ids(const FastModel& model, const Utterance& u);

struct OfflineTerms {
  Tensor total;
  Tensor st;
  Tensor cif;
  double alpha_sum = 0.0;
};

/// L_ST on CIF-shrunk, length-scaled states plus lambda * |J - sum alpha|.
OfflineTerms offline_objective(const FastModel& model, const Tensor& c, const Utterance& u, double lambda,
                               double smoothing = 0.0);

/// Next-token scores after `prefix` (output ids, without the task tag).
Tensor next_token_logits(const FastModel& model, const Tensor& memory, const std::vector<std::size_t>& prefix,
                         std::size_t tag = kStTag);

/// Greedy decoding of the semantic memory for `h` until end-of-sequence or
/// max_len tokens. Returns output ids without the end-of-sequence.
std::vector<std::size_t> greedy_decode(const FastModel& model, const Tensor& h, std::size_t max_len,
                                       bool* truncated = nullptr);

/// Offline inference: encode the full utterance, fire with offline tail
/// handling, decode greedily with max length 2J' + 5. Returns target words.
std::vector<int> translate_offline(const FastModel& model, const Utterance& u);

struct OfflineTrainConfig {
  std::size_t stage1_epochs = 10;
  std::size_t stage2_epochs = 10;
  std::size_t batch = 16;
  double lambda = 1.0;
  /// Share of stage-1 batches that train the ASR task instead of ST.
  double asr_fraction = 0.2;
  double smoothing = 0.1;
  /// Span masking of speech tokens during training (coverage; 0 disables).
  double mask_coverage = 0.0;
  std::size_t average_top = 3;
  /// Learning-rate factor for the pretrained contextual acoustic layers.
  double acoustic_lr_scale = 1.0;
  /// Keeps the convolutional front end fixed.
  bool freeze_conv = false;
  AdamConfig adam{.lr = 1e-3, .warmup = 200, .clip_norm = 5.0};
};

struct PretrainConfig {
  std::size_t epochs = 5;
  std::size_t batch = 16;
  double coverage = 0.5;
  std::size_t min_span = 2;
  std::size_t max_span = 5;
  AdamConfig adam{.lr = 1e-3, .warmup = 100, .clip_norm = 5.0};
};

/// Thrown when a loss goes non-finite.
class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(const std::string& what, std::size_t step) : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct LogRecord {
  std::size_t step = 0;
  std::string stage;
  std::vector<std::pair<std::string, double>> terms;
};
using LogSink = std::function<void(const LogRecord&)>;

/// Masked-reconstruction pretraining of the acoustic encoder. Returns the
/// mean loss per epoch.
std::vector<double> pretrain_acoustic(FastModel& model, const std::vector<Utterance>& train, const PretrainConfig& cfg,
                                      std::uint64_t seed, const LogSink& log = {});

/// Per-epoch record of the offline schedule.
struct OfflineHistory {
  std::vector<double> stage1_dev;   // dev ST loss after each stage-1 epoch
  std::vector<double> stage2_dev;   // dev ST loss after each stage-2 epoch
  std::vector<std::size_t> averaged;  // stage-2 epochs (0-based) that were averaged
};

/// Resumable progress of a training run, taken at epoch boundaries.
struct TrainState {
  std::size_t epochs_done = 0;
  ParamList optimizer;
  OfflineHistory history;
  struct Kept {
    std::size_t epoch = 0;
    double dev = 0.0;
    std::vector<std::vector<double>> values;
  };
  std::vector<Kept> best;  // best stage-2 epochs so far, by dev loss
  std::vector<double> epoch_loss;  // distillation runs: mean loss per epoch

  /// Flattened into named tensors (prefixes "adam.", "state.", "best.").
  ParamList to_tensors(const ParamList& model_params) const;
  static TrainState from_tensors(const ParamList& tensors, const ParamList& model_params);
};

struct TrainControl {
  /// Continue from this state instead of starting fresh.
  const TrainState* resume = nullptr;
  /// Stop (without finalising) once this many epochs are done; 0 = run all.
  std::size_t stop_after = 0;
  /// Called after every completed epoch.
  std::function<void(const TrainState&)> on_epoch;
  /// Same, with the model being trained (for checkpointing).
  std::function<void(const TrainState&, const FastModel&)> checkpoint;
};

/// Two-stage offline schedule; leaves `model` holding the checkpoint average
/// of the best stage-2 epochs by dev loss.
OfflineHistory train_offline(FastModel& model, const std::vector<Utterance>& train, const std::vector<Utterance>& dev,
                             const OfflineTrainConfig& cfg, std::uint64_t seed, const LogSink& log = {},
                             const TrainControl& control = {});

/// Mean per-utterance ST loss on CIF-shrunk states (no smoothing, no grads).
double dev_st_loss(const FastModel& model, const std::vector<Utterance>& dev);
/// Mean per-utterance ST loss with the decoder over unshrunk states.
double dev_st_loss_unshrunk(const FastModel& model, const std::vector<Utterance>& dev);

/// Model checkpoint: parameters, the configuration ("meta.config") and any
/// extra named tensors.
void save_model(const std::filesystem::path& path, const FastModel& model, const ParamList& extra = {});

struct LoadedModel {
  FastModel model;
  ParamList extra;  // entries that are neither parameters nor meta.config
};
LoadedModel load_model(const std::filesystem::path& path);

Tensor encode_config(const ModelConfig& cfg);
ModelConfig decode_config(const Tensor& t);

}  // namespace fast
