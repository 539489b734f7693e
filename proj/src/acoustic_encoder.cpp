#include "fast/acoustic_encoder.hpp"

#include <cmath>

namespace fast {

using namespace fast::ops;

void ModelConfig::validate() const {
  if (dim == 0 || heads == 0 || dim % heads != 0) throw ContractError("model: dim must be a positive multiple of heads");
  if (stride < 2 || (stride & (stride - 1)) != 0) throw ContractError("model: stride must be a power of two >= 2");
  if (!(cif_beta > 0.0)) throw ContractError("model: CIF threshold must be positive");
  if (src_vocab == 0 || tgt_vocab == 0) throw ContractError("model: empty vocabulary");
}

AcousticEncoder::AcousticEncoder(const ModelConfig& cfg, Rng& rng)
    : feature_norm(cfg.dim), final_norm(cfg.dim), stride_(cfg.stride), dim_(cfg.dim), frame_dim_(cfg.frame_dim) {
  cfg.validate();
  std::size_t in = cfg.frame_dim;
  for (std::size_t s = cfg.stride; s > 1; s /= 2) {
    conv.emplace_back(2 * in, cfg.dim, rng);
    in = cfg.dim;
  }
  for (std::size_t l = 0; l < cfg.acoustic_layers; ++l) layers.emplace_back(cfg.dim, cfg.heads, cfg.ff_hidden, rng);
  std::vector<double> e(cfg.dim);
  for (auto& x : e) x = rng.normal(0.0, 1.0);
  mask_embedding = Tensor::from(1, cfg.dim, std::move(e), true);
}

Tensor AcousticEncoder::conv_subsample(const Tensor& frames) const {
  if (frames.cols() != frame_dim_) throw DimensionError("conv_subsample: frame width mismatch");
  const std::size_t n = frames.rows();
  if (n < stride_) {
    throw ContractError("conv_subsample: " + std::to_string(n) + " frames is shorter than the stride " + std::to_string(stride_));
  }
  const std::size_t tau = (n + stride_ - 1) / stride_;
  Tensor x = frames;
  if (tau * stride_ != n) {
    Tensor pad = Tensor::zeros(tau * stride_ - n, frame_dim_);
    std::vector<Tensor> parts{frames, pad};
    x = concat_rows(parts);
  }
  for (const auto& stage : conv) {
    x = reshape(x, x.rows() / 2, x.cols() * 2);
    x = gelu(stage(x));
  }
  return feature_norm(x);
}

Tensor AcousticEncoder::conv_subsample(std::span<const double> frames, std::size_t n_frames) const {
  return conv_subsample(Tensor::from(n_frames, frame_dim_, std::vector<double>(frames.begin(), frames.begin() + static_cast<std::ptrdiff_t>(n_frames * frame_dim_))));
}

Tensor AcousticEncoder::encode_full(const Tensor& c) const {
  if (c.rows() == 0) throw ContractError("encode_full: empty token sequence");
  Tensor x = add(c, nn::sinusoidal_positions(c.rows(), dim_));
  for (const auto& layer : layers) x = layer(x);
  return final_norm(x);
}

std::size_t fai_output_length(std::size_t tau, std::size_t m, double discard_rate) {
  if (discard_rate < 0.0 || discard_rate > 1.0) throw ContractError("discard rate outside [0, 1]");
  return tau + static_cast<std::size_t>(std::llround((1.0 - discard_rate) * static_cast<double>(m)));
}

Tensor AcousticEncoder::encode_streaming_fai(const Tensor& c, std::size_t m, double discard_rate) const {
  const std::size_t keep = fai_output_length(c.rows(), m, discard_rate);
  if (m == 0) return encode_full(c);
  std::vector<std::size_t> zeros(m, 0);
  std::vector<Tensor> parts{c, gather_rows(mask_embedding, zeros)};
  Tensor a = encode_full(concat_rows(parts));
  return slice_rows(a, 0, keep);
}

Tensor AcousticEncoder::encode_masked(const Tensor& c, const std::vector<bool>& masked) const {
  if (masked.size() != c.rows()) throw DimensionError("encode_masked: mask length mismatch");
  const std::size_t tau = c.rows();
  std::vector<std::size_t> idx(tau);
  for (std::size_t i = 0; i < tau; ++i) idx[i] = masked[i] ? tau : i;
  std::vector<Tensor> parts{c, mask_embedding};
  return encode_full(gather_rows(concat_rows(parts), idx));
}

void AcousticEncoder::collect_conv(ParamList& out) const {
  for (std::size_t i = 0; i < conv.size(); ++i) conv[i].collect("acoustic.conv" + std::to_string(i), out);
  feature_norm.collect("acoustic.feature_norm", out);
}

void AcousticEncoder::collect_contextual(ParamList& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect("acoustic.layer" + std::to_string(i), out);
  final_norm.collect("acoustic.final_norm", out);
  out.push_back({"acoustic.mask_embedding", mask_embedding});
}

void AcousticEncoder::collect(ParamList& out) const {
  collect_conv(out);
  collect_contextual(out);
}

std::vector<bool> draw_span_mask(std::size_t length, Rng& rng, double coverage, std::size_t min_span, std::size_t max_span) {
  std::vector<bool> mask(length, false);
  if (length == 0) return mask;
  const auto target = static_cast<std::size_t>(std::llround(coverage * static_cast<double>(length)));
  std::size_t masked = 0;
  while (masked < target) {
    const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(length) - 1));
    const auto span = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(min_span), static_cast<std::int64_t>(max_span)));
    for (std::size_t i = start; i < std::min(length, start + span); ++i) {
      if (!mask[i]) {
        mask[i] = true;
        ++masked;
      }
    }
  }
  return mask;
}

Tensor masked_reconstruction_loss(const AcousticEncoder& encoder, const Tensor& clean_tokens, const std::vector<bool>& masked) {
  std::vector<std::size_t> positions;
  for (std::size_t i = 0; i < masked.size(); ++i)
    if (masked[i]) positions.push_back(i);
  if (positions.empty()) return Tensor::scalar(0.0);
  Tensor a = encoder.encode_masked(clean_tokens, masked);
  Tensor target = clean_tokens.detach();
  return mse(gather_rows(a, positions), gather_rows(target, positions));
}

}  // namespace fast
