#include "fast/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fast/checkpoint.hpp"

namespace fast {

using namespace fast::ops;

SemanticEncoder::SemanticEncoder(const ModelConfig& cfg, Rng& rng) : final_norm(cfg.dim) {
  for (std::size_t l = 0; l < cfg.semantic_layers; ++l) layers.emplace_back(cfg.dim, cfg.heads, cfg.ff_hidden, rng);
}

Tensor SemanticEncoder::operator()(const Tensor& h) const {
  if (h.rows() == 0) throw ContractError("semantic encoder: empty input");
  Tensor x = add(h, nn::sinusoidal_positions(h.rows(), h.cols()));
  for (const auto& layer : layers) x = layer(x);
  return final_norm(x);
}

void SemanticEncoder::collect(ParamList& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect("semantic.layer" + std::to_string(i), out);
  final_norm.collect("semantic.final_norm", out);
}

Decoder::Decoder(const ModelConfig& cfg, std::size_t vocab, Rng& rng) : final_norm(cfg.dim) {
  std::vector<double> e(vocab * cfg.dim);
  for (auto& x : e) x = rng.normal(0.0, 1.0);
  embedding = Tensor::from(vocab, cfg.dim, std::move(e), true);
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) layers.emplace_back(cfg.dim, cfg.heads, cfg.ff_hidden, rng);
  output = nn::Linear(cfg.dim, vocab, rng);
}

Tensor Decoder::operator()(const Tensor& memory, const std::vector<std::size_t>& inputs) const {
  if (inputs.empty()) throw ContractError("decoder: empty input");
  if (memory.rows() == 0) throw ContractError("decoder: empty memory");
  for (auto id : inputs)
    if (id >= embedding.rows()) throw IndexError("decoder: token id " + std::to_string(id) + " out of range");
  Tensor x = add(gather_rows(embedding, inputs), nn::sinusoidal_positions(inputs.size(), embedding.cols()));
  const Tensor mask = nn::causal_mask(inputs.size());
  for (const auto& layer : layers) x = layer(x, memory, mask);
  return output(final_norm(x));
}

void Decoder::collect(ParamList& out) const {
  out.push_back({"decoder.embedding", embedding});
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect("decoder.layer" + std::to_string(i), out);
  final_norm.collect("decoder.final_norm", out);
  output.collect("decoder.output", out);
}

FastModel::FastModel(const ModelConfig& config, std::uint64_t seed) : cfg(config) {
  cfg.validate();
  Rng rng(seed);
  acoustic = AcousticEncoder(cfg, rng);
  cif = CifDetector(cfg.dim, cfg.cif_beta, cfg.cif_tail_threshold, rng);
  semantic = SemanticEncoder(cfg, rng);
  decoder = Decoder(cfg, vocab(), rng);
}

FastModel FastModel::clone() const {
  FastModel copy(cfg, 0);
  copy_values(params(), copy.params());
  return copy;
}

int FastModel::target_word(std::size_t id) const {
  if (id < kFirstWord || id >= kFirstWord + cfg.tgt_vocab) return -1;
  return static_cast<int>(id - kFirstWord);
}

Tensor FastModel::frames_tensor(const Utterance& u) const {
  if (u.frame_dim != cfg.frame_dim) throw DimensionError("utterance frame width does not match the model");
  return Tensor::from(u.n_frames, u.frame_dim, u.frames);
}

ParamList FastModel::params() const {
  ParamList out;
  acoustic.collect(out);
  cif.collect(out);
  semantic.collect(out);
  decoder.collect(out);
  return out;
}

Tensor st_loss(const FastModel& model, const Tensor& h, const std::vector<std::size_t>& y, std::size_t tag,
               double smoothing) {
  if (y.empty()) throw ContractError("st_loss: empty target");
  std::vector<std::size_t> inputs{tag};
  inputs.insert(inputs.end(), y.begin(), y.end() - 1);
  Tensor logits = model.decoder(model.semantic(h), inputs);
  return scale(cross_entropy(logits, y, smoothing), static_cast<double>(y.size()));
}

std::vector<std::size_t> target_ids(const FastModel& model, const Utterance& u) {
  std::vector<std::size_t> y;
  for (int w : u.tgt) y.push_back(model.target_id(w));
  y.push_back(kEos);
  return y;
}

std::vector<std::size_t> source_ids(const FastModel& model, const Utterance& u) {
  std::vector<std::size_t> z;
  for (int w : u.src) z.push_back(model.source_id(w));
  z.push_back(kEos);
  return z;
}

OfflineTerms offline_objective(const FastModel& model, const Tensor& c, const Utterance& u, double lambda,
                               double smoothing) {
  if (lambda < 0.0) throw ContractError("offline_objective: lambda must be >= 0");
  Tensor a = model.acoustic.encode_full(c);
  Tensor alpha = model.cif.compute_weights(a);
  CifResult fired = model.cif.integrate_fire(a, alpha, u.src.size(), TailMode::Offline);
  OfflineTerms t;
  t.st = st_loss(model, fired.h, target_ids(model, u), kStTag, smoothing);
  t.cif = cif_length_loss(alpha, u.src.size());
  t.total = add(t.st, scale(t.cif, lambda));
  for (double v : alpha.data()) t.alpha_sum += v;
  return t;
}

Tensor next_token_logits(const FastModel& model, const Tensor& memory, const std::vector<std::size_t>& prefix,
                         std::size_t tag) {
  std::vector<std::size_t> inputs{tag};
  inputs.insert(inputs.end(), prefix.begin(), prefix.end());
  Tensor logits = model.decoder(memory, inputs);
  return slice_rows(logits, logits.rows() - 1, logits.rows());
}

static std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<std::size_t> greedy_decode(const FastModel& model, const Tensor& h, std::size_t max_len, bool* truncated) {
  NoGradGuard ng;
  std::vector<std::size_t> out;
  if (truncated) *truncated = false;
  if (h.rows() == 0) return out;
  const Tensor memory = model.semantic(h);
  while (out.size() < max_len) {
    const std::size_t next = argmax(next_token_logits(model, memory, out).data());
    if (next == kEos) return out;
    out.push_back(next);
  }
  if (truncated) *truncated = true;
  return out;
}

std::vector<int> translate_offline(const FastModel& model, const Utterance& u) {
  NoGradGuard ng;
  const Tensor c = model.speech_tokens(u);
  const Tensor a = model.acoustic.encode_full(c);
  const CifResult fired = model.cif.integrate_fire(a, model.cif.compute_weights(a), std::nullopt, TailMode::Offline);
  std::vector<int> words;
  for (auto id : greedy_decode(model, fired.h, 2 * u.src.size() + 5)) words.push_back(model.target_word(id));
  return words;
}

// ---- training -------------------------------------------------------------

namespace {

void check_finite(double v, const std::string& what, std::size_t step) {
  if (!std::isfinite(v)) throw TrainingDivergence(what + " became non-finite at step " + std::to_string(step), step);
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

Tensor maybe_masked_encode(const FastModel& model, const Tensor& c, double coverage, Rng& rng) {
  if (coverage <= 0.0) return model.acoustic.encode_full(c);
  return model.acoustic.encode_masked(c, draw_span_mask(c.rows(), rng, coverage));
}

}  // namespace

std::vector<double> pretrain_acoustic(FastModel& model, const std::vector<Utterance>& train, const PretrainConfig& cfg,
                                      std::uint64_t seed, const LogSink& log) {
  if (train.empty()) throw ContractError("pretrain: empty corpus");
  ParamList trainable;
  model.acoustic.collect_contextual(trainable);
  Adam opt(trainable, cfg.adam);

  std::vector<Tensor> tokens;
  {
    NoGradGuard ng;
    for (const auto& u : train) tokens.push_back(model.speech_tokens(u).detach());
  }
  std::vector<double> epoch_loss;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(Rng::mix(seed, 1000 + epoch));
    const auto order = shuffled(train.size(), rng.bits());
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      Tensor batch_loss = Tensor::scalar(0.0);
      for (std::size_t b = start; b < end; ++b) {
        const Tensor& c = tokens[order[b]];
        batch_loss = add(batch_loss, masked_reconstruction_loss(model.acoustic, c, draw_span_mask(c.rows(), rng, cfg.coverage, cfg.min_span, cfg.max_span)));
      }
      batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - start));
      check_finite(batch_loss.item(), "pretraining loss", opt.step_count() + 1);
      total += batch_loss.item() * static_cast<double>(end - start);
      if (batch_loss.requires_grad()) backward(batch_loss);
      opt.step();
      if (log) log({opt.step_count(), "pretrain", {{"loss", batch_loss.item()}}});
    }
    epoch_loss.push_back(total / static_cast<double>(train.size()));
  }
  return epoch_loss;
}

double dev_st_loss(const FastModel& model, const std::vector<Utterance>& dev) {
  NoGradGuard ng;
  double total = 0.0;
  for (const auto& u : dev) {
    const Tensor a = model.acoustic.encode_full(model.speech_tokens(u));
    const CifResult fired = model.cif.integrate_fire(a, model.cif.compute_weights(a), u.src.size(), TailMode::Offline);
    total += st_loss(model, fired.h, target_ids(model, u)).item();
  }
  return dev.empty() ? 0.0 : total / static_cast<double>(dev.size());
}

double dev_st_loss_unshrunk(const FastModel& model, const std::vector<Utterance>& dev) {
  NoGradGuard ng;
  double total = 0.0;
  for (const auto& u : dev) {
    const Tensor a = model.acoustic.encode_full(model.speech_tokens(u));
    total += st_loss(model, a, target_ids(model, u)).item();
  }
  return dev.empty() ? 0.0 : total / static_cast<double>(dev.size());
}

OfflineHistory train_offline(FastModel& model, const std::vector<Utterance>& train, const std::vector<Utterance>& dev,
                             const OfflineTrainConfig& cfg, std::uint64_t seed, const LogSink& log,
                             const TrainControl& control) {
  if (train.empty()) throw ContractError("train_offline: empty corpus");
  if (cfg.lambda < 0.0) throw ContractError("train_offline: lambda must be >= 0");
  const ParamList params = model.params();
  ParamList trainable;
  for (const auto& p : params) {
    const bool conv = p.name.rfind("acoustic.conv", 0) == 0 || p.name.rfind("acoustic.feature_norm", 0) == 0;
    if (!(cfg.freeze_conv && conv)) trainable.push_back(p);
  }
  Adam opt(trainable, cfg.adam);
  for (const char* prefix : {"acoustic.layer", "acoustic.final_norm", "acoustic.mask_embedding"})
    opt.scale_lr(prefix, cfg.acoustic_lr_scale);
  TrainState state;
  if (control.resume) {
    state = *control.resume;
    opt.load_state(state.optimizer);
  }
  const std::size_t total_epochs = cfg.stage1_epochs + cfg.stage2_epochs;

  for (std::size_t epoch = state.epochs_done; epoch < total_epochs; ++epoch) {
    if (control.stop_after && epoch >= control.stop_after) return state.history;
    const bool stage2 = epoch >= cfg.stage1_epochs;
    Rng rng(Rng::mix(seed, 2000 + epoch));
    const auto order = shuffled(train.size(), rng.bits());
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      Tensor batch_loss = Tensor::scalar(0.0);
      double st_sum = 0.0, aux_sum = 0.0;
      const bool asr_batch = !stage2 && rng.bernoulli(cfg.asr_fraction);
      for (std::size_t b = start; b < end; ++b) {
        const Utterance& u = train[order[b]];
        const Tensor c = cfg.freeze_conv ? model.speech_tokens(u).detach() : model.speech_tokens(u);
        const Tensor a = maybe_masked_encode(model, c, cfg.mask_coverage, rng);
        Tensor loss;
        if (!stage2) {
          if (asr_batch) {
            loss = st_loss(model, a, source_ids(model, u), kAsrTag, cfg.smoothing);
            aux_sum += loss.item();
          } else {
            loss = st_loss(model, a, target_ids(model, u), kStTag, cfg.smoothing);
            st_sum += loss.item();
          }
        } else {
          Tensor alpha = model.cif.compute_weights(a);
          CifResult fired = model.cif.integrate_fire(a, alpha, u.src.size(), TailMode::Offline);
          Tensor st = st_loss(model, fired.h, target_ids(model, u), kStTag, cfg.smoothing);
          Tensor len = cif_length_loss(alpha, u.src.size());
          st_sum += st.item();
          aux_sum += len.item();
          loss = add(st, scale(len, cfg.lambda));
        }
        batch_loss = add(batch_loss, loss);
      }
      const double n = static_cast<double>(end - start);
      batch_loss = scale(batch_loss, 1.0 / n);
      check_finite(batch_loss.item(), "offline loss", opt.step_count() + 1);
      backward(batch_loss);
      opt.step();
      if (log) {
        log({opt.step_count(), stage2 ? "offline-stage2" : "offline-stage1",
             {{"loss", batch_loss.item()}, {"st", st_sum / n}, {stage2 ? "cif" : "asr", aux_sum / n}}});
      }
    }

    if (!stage2) {
      state.history.stage1_dev.push_back(dev_st_loss_unshrunk(model, dev));
    } else {
      const double d = dev_st_loss(model, dev);
      state.history.stage2_dev.push_back(d);
      state.best.push_back({epoch - cfg.stage1_epochs, d, snapshot(params)});
      std::stable_sort(state.best.begin(), state.best.end(), [](const auto& x, const auto& y) { return x.dev < y.dev; });
      if (state.best.size() > std::max<std::size_t>(cfg.average_top, 1)) state.best.resize(std::max<std::size_t>(cfg.average_top, 1));
    }
    if (log) {
      log({opt.step_count(), stage2 ? "dev-stage2" : "dev-stage1",
           {{"epoch", static_cast<double>(epoch)},
            {"dev_st", stage2 ? state.history.stage2_dev.back() : state.history.stage1_dev.back()}}});
    }
    state.epochs_done = epoch + 1;
    state.optimizer = opt.state();
    if (control.on_epoch) control.on_epoch(state);
    if (control.checkpoint) control.checkpoint(state, model);
  }

  if (!state.best.empty()) {
    std::vector<std::vector<std::vector<double>>> snaps;
    for (const auto& k : state.best) {
      snaps.push_back(k.values);
      state.history.averaged.push_back(k.epoch);
    }
    restore(params, average_snapshots(snaps));
  }
  return state.history;
}

// ---- persistence ----------------------------------------------------------

ParamList TrainState::to_tensors(const ParamList& model_params) const {
  ParamList out = optimizer;
  out.push_back({"state.epochs_done", Tensor::scalar(static_cast<double>(epochs_done))});
  auto vec = [](const std::vector<double>& v) {
    return v.empty() ? Tensor::zeros(1, 0) : Tensor::from(1, v.size(), v);
  };
  out.push_back({"state.stage1_dev", vec(history.stage1_dev)});
  out.push_back({"state.stage2_dev", vec(history.stage2_dev)});
  out.push_back({"state.epoch_loss", vec(epoch_loss)});
  for (std::size_t k = 0; k < best.size(); ++k) {
    const std::string p = "best." + std::to_string(k) + ".";
    out.push_back({p + "epoch", Tensor::scalar(static_cast<double>(best[k].epoch))});
    out.push_back({p + "dev", Tensor::scalar(best[k].dev)});
    for (std::size_t i = 0; i < model_params.size(); ++i) {
      const Tensor& t = model_params[i].tensor;
      out.push_back({p + model_params[i].name, Tensor::from(t.rows(), t.cols(), best[k].values[i])});
    }
  }
  return out;
}

TrainState TrainState::from_tensors(const ParamList& tensors, const ParamList& model_params) {
  TrainState s;
  auto find = [&](const std::string& name) -> const Tensor* {
    for (const auto& nt : tensors)
      if (nt.name == name) return &nt.tensor;
    return nullptr;
  };
  for (const auto& nt : tensors)
    if (nt.name.rfind("adam.", 0) == 0) s.optimizer.push_back(nt);
  if (const Tensor* t = find("state.epochs_done")) s.epochs_done = static_cast<std::size_t>(t->item());
  if (const Tensor* t = find("state.stage1_dev")) s.history.stage1_dev.assign(t->data().begin(), t->data().end());
  if (const Tensor* t = find("state.stage2_dev")) s.history.stage2_dev.assign(t->data().begin(), t->data().end());
  if (const Tensor* t = find("state.epoch_loss")) s.epoch_loss.assign(t->data().begin(), t->data().end());
  for (std::size_t k = 0;; ++k) {
    const std::string p = "best." + std::to_string(k) + ".";
    const Tensor* e = find(p + "epoch");
    if (!e) break;
    Kept kept;
    kept.epoch = static_cast<std::size_t>(e->item());
    kept.dev = find(p + "dev")->item();
    for (const auto& mp : model_params) {
      const Tensor* t = find(p + mp.name);
      if (!t || t->size() != mp.tensor.size()) throw CheckpointError("training state is missing " + p + mp.name);
      kept.values.emplace_back(t->data().begin(), t->data().end());
    }
    s.best.push_back(std::move(kept));
  }
  return s;
}

Tensor encode_config(const ModelConfig& c) {
  return Tensor::from(1, 12,
                      {static_cast<double>(c.frame_dim), static_cast<double>(c.dim), static_cast<double>(c.heads),
                       static_cast<double>(c.ff_hidden), static_cast<double>(c.acoustic_layers),
                       static_cast<double>(c.semantic_layers), static_cast<double>(c.decoder_layers),
                       static_cast<double>(c.stride), static_cast<double>(c.src_vocab),
                       static_cast<double>(c.tgt_vocab), c.cif_beta, c.cif_tail_threshold});
}

ModelConfig decode_config(const Tensor& t) {
  if (t.size() != 12) throw CheckpointError("meta.config has the wrong length");
  auto d = t.data();
  auto z = [&](std::size_t i) { return static_cast<std::size_t>(d[i]); };
  ModelConfig c;
  c.frame_dim = z(0);
  c.dim = z(1);
  c.heads = z(2);
  c.ff_hidden = z(3);
  c.acoustic_layers = z(4);
  c.semantic_layers = z(5);
  c.decoder_layers = z(6);
  c.stride = z(7);
  c.src_vocab = z(8);
  c.tgt_vocab = z(9);
  c.cif_beta = d[10];
  c.cif_tail_threshold = d[11];
  return c;
}

void save_model(const std::filesystem::path& path, const FastModel& model, const ParamList& extra) {
  ParamList all = model.params();
  all.push_back({"meta.config", encode_config(model.cfg)});
  all.insert(all.end(), extra.begin(), extra.end());
  save_checkpoint(path, all);
}

LoadedModel load_model(const std::filesystem::path& path) {
  ParamList all = load_checkpoint(path);
  const NamedTensor* meta = nullptr;
  for (const auto& nt : all)
    if (nt.name == "meta.config") meta = &nt;
  if (!meta) throw CheckpointError(path.string() + ": not a model checkpoint (no meta.config)");
  LoadedModel out{FastModel(decode_config(meta->tensor), 0), {}};
  const ParamList params = out.model.params();
  copy_values(all, params);
  for (const auto& nt : all) {
    if (nt.name == "meta.config") continue;
    const bool is_param = std::any_of(params.begin(), params.end(), [&](const auto& p) { return p.name == nt.name; });
    if (!is_param) out.extra.push_back(nt);
  }
  return out;
}

}  // namespace fast
