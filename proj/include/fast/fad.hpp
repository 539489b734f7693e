#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fast/model.hpp"

namespace fast {

struct FadConfig {
  std::size_t m = 20;
  std::size_t epochs = 5;
  std::size_t batch = 16;
  AdamConfig adam{.lr = 1e-3, .warmup = 100, .clip_norm = 5.0};
  /// Permits m <= 10.
  bool allow_small_m = false;

  void validate() const;
};

/// Uniform cut t in [1, T].
std::size_t sample_cut(std::size_t T, Rng& rng);

struct FadLosses {
  Tensor w2v;    // mean over the first t rows of 1 - cos(student, teacher)
  Tensor cif;    // sum over the first t rows of KL(alpha_T || alpha_S)
  Tensor total;  // w2v + cif
  bool clamped = false;  // teacher input ran into the end of c
};

/// Teacher encodes c[0, min(t + m, T)) without gradients; the student
/// encodes c[0, t) followed by m mask embeddings. Only the first t rows of
/// both enter the losses.
FadLosses fad_losses(const FastModel& teacher, const FastModel& student, const Tensor& c, std::size_t t,
                     std::size_t m);

/// Parameters updated by distillation: student contextual acoustic layers,
/// mask embedding and CIF. The conv front end, semantic encoder and decoder
/// stay frozen.
ParamList fad_trainable(const FastModel& student);

/// Distills a student initialised from `teacher`. Teacher speech tokens are
/// shared by both sides. Returns the student; `state` (if given) receives
/// the mean loss per epoch.
FastModel train_fad(const FastModel& teacher, const std::vector<Utterance>& corpus, const FadConfig& cfg,
                    std::uint64_t seed, const LogSink& log = {}, const TrainControl& control = {},
                    const FastModel* resume_student = nullptr);

/// Mean w2v loss over one fixed cut per utterance (drawn from `seed`).
double mean_fad_w2v(const FastModel& teacher, const FastModel& student, const std::vector<Utterance>& corpus,
                    std::size_t m, std::uint64_t seed);

}  // namespace fast
