#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fast/nn.hpp"
#include "fast/rng.hpp"

namespace fast {

struct ModelConfig {
  std::size_t frame_dim = 16;
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t ff_hidden = 64;
  std::size_t acoustic_layers = 2;
  std::size_t semantic_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t stride = 4;  // power of two; one kernel-2/stride-2 stage per factor
  std::size_t src_vocab = 64;
  std::size_t tgt_vocab = 64;
  double cif_beta = 1.0;
  double cif_tail_threshold = 0.5;

  void validate() const;
};

/// Toy bidirectional acoustic encoder: a stack of non-overlapping stride-2
/// convolutions (so every speech token sees exactly `stride` frames and
/// prefixes reuse full-input tokens), then pre-norm transformer layers over
/// sinusoidal positions, plus one trainable mask embedding.
class AcousticEncoder {
 public:
  AcousticEncoder() = default;
  AcousticEncoder(const ModelConfig& cfg, Rng& rng);

  /// frames: n x frame_dim -> speech tokens c: ceil(n / stride) x dim.
  /// The trailing partial window is zero-padded.
  Tensor conv_subsample(const Tensor& frames) const;
  Tensor conv_subsample(std::span<const double> frames, std::size_t n_frames) const;

  /// Bidirectional self-attention over every row of c.
  Tensor encode_full(const Tensor& c) const;

  /// Appends m copies of the mask embedding, encodes tau + m rows, and keeps
  /// the first tau + round((1 - p) * m).
  Tensor encode_streaming_fai(const Tensor& c, std::size_t m, double discard_rate = 1.0) const;

  /// Replaces rows flagged in `masked` by the mask embedding before encoding.
  Tensor encode_masked(const Tensor& c, const std::vector<bool>& masked) const;

  std::size_t stride() const { return stride_; }
  std::size_t dim() const { return dim_; }

  /// All parameters ("acoustic." prefix).
  void collect(ParamList& out) const;
  /// Convolutional front end only.
  void collect_conv(ParamList& out) const;
  /// Transformer stack, final norm and mask embedding.
  void collect_contextual(ParamList& out) const;

  std::vector<nn::Linear> conv;
  nn::LayerNorm feature_norm;
  std::vector<nn::EncoderLayer> layers;
  nn::LayerNorm final_norm;
  Tensor mask_embedding;  // 1 x dim

 private:
  std::size_t stride_ = 4;
  std::size_t dim_ = 32;
  std::size_t frame_dim_ = 16;
};

/// Rows kept by FAI for a prefix of tau tokens: tau + round((1 - p) * m).
std::size_t fai_output_length(std::size_t tau, std::size_t m, double discard_rate);

/// Span-mask draw for reconstruction pretraining: spans of uniform length in
/// [min_span, max_span] at uniform starts until `coverage` of positions are
/// masked.
std::vector<bool> draw_span_mask(std::size_t length, Rng& rng, double coverage = 0.5, std::size_t min_span = 2,
                                 std::size_t max_span = 5);

/// MSE between encoder outputs and the clean tokens at masked positions.
/// Returns an off-graph zero when nothing is masked.
Tensor masked_reconstruction_loss(const AcousticEncoder& encoder, const Tensor& clean_tokens,
                                  const std::vector<bool>& masked);

}  // namespace fast
