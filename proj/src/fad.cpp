#include "fast/fad.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fast {

using namespace fast::ops;

void FadConfig::validate() const {
  if (m <= 10 && !allow_small_m) throw ContractError("FAD needs m > 10 (got " + std::to_string(m) + ")");
  if (batch == 0) throw ContractError("FAD batch must be >= 1");
}

std::size_t sample_cut(std::size_t T, Rng& rng) {
  if (T == 0) throw ContractError("sample_cut: T must be >= 1");
  return static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(T)));
}

FadLosses fad_losses(const FastModel& teacher, const FastModel& student, const Tensor& c, std::size_t t,
                     std::size_t m) {
  const std::size_t T = c.rows();
  if (t == 0 || t > T) throw ContractError("fad_losses: cut " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
  FadLosses out;
  Tensor a_t, alpha_t;
  {
    NoGradGuard ng;
    const std::size_t end = std::min(t + m, T);
    out.clamped = t + m > T;
    const Tensor full = teacher.acoustic.encode_full(slice_rows(c, 0, end));
    a_t = slice_rows(full, 0, t);
    alpha_t = teacher.cif.compute_weights(a_t);
  }
  const Tensor a_s = student.acoustic.encode_streaming_fai(slice_rows(c, 0, t), m, 1.0);
  const Tensor alpha_s = student.cif.compute_weights(a_s);
  out.w2v = mean(add_scalar(scale(cosine_rows(a_s, a_t), -1.0), 1.0));
  out.cif = sum(bernoulli_kl(alpha_t, alpha_s));
  out.total = add(out.w2v, out.cif);
  return out;
}

ParamList fad_trainable(const FastModel& student) {
  ParamList out;
  student.acoustic.collect_contextual(out);
  student.cif.collect(out);
  return out;
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace

FastModel train_fad(const FastModel& teacher, const std::vector<Utterance>& corpus, const FadConfig& cfg,
                    std::uint64_t seed, const LogSink& log, const TrainControl& control,
                    const FastModel* resume_student) {
  cfg.validate();
  if (corpus.empty()) throw ContractError("train_fad: empty corpus");
  FastModel student = resume_student ? resume_student->clone() : teacher.clone();
  const ParamList trainable = fad_trainable(student);
  Adam opt(trainable, cfg.adam);
  TrainState state;
  if (control.resume) {
    state = *control.resume;
    opt.load_state(state.optimizer);
  }

  std::vector<Tensor> tokens;
  {
    NoGradGuard ng;
    for (const auto& u : corpus) tokens.push_back(teacher.speech_tokens(u));
  }

  for (std::size_t epoch = state.epochs_done; epoch < cfg.epochs; ++epoch) {
    if (control.stop_after && epoch >= control.stop_after) break;
    Rng rng(Rng::mix(seed, 3000 + epoch));
    const auto order = shuffled(corpus.size(), rng);
    double epoch_total = 0.0;
    std::size_t clamped = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      Tensor batch_loss = Tensor::scalar(0.0);
      double w2v = 0.0, kl = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const Tensor& c = tokens[order[b]];
        const std::size_t t = sample_cut(c.rows(), rng);
        FadLosses l = fad_losses(teacher, student, c, t, cfg.m);
        clamped += l.clamped;
        w2v += l.w2v.item();
        kl += l.cif.item();
        batch_loss = add(batch_loss, l.total);
      }
      const double n = static_cast<double>(end - start);
      batch_loss = scale(batch_loss, 1.0 / n);
      if (!std::isfinite(batch_loss.item()))
        throw TrainingDivergence("FAD loss became non-finite at step " + std::to_string(opt.step_count() + 1),
                                 opt.step_count() + 1);
      epoch_total += batch_loss.item() * n;
      backward(batch_loss);
      opt.step();
      if (log) log({opt.step_count(), "fad", {{"loss", batch_loss.item()}, {"w2v", w2v / n}, {"cif", kl / n}}});
    }
    state.epoch_loss.push_back(epoch_total / static_cast<double>(corpus.size()));
    if (log) {
      log({opt.step_count(), "fad-epoch",
           {{"epoch", static_cast<double>(epoch)},
            {"loss", state.epoch_loss.back()},
            {"clamped", static_cast<double>(clamped)}}});
    }
    state.epochs_done = epoch + 1;
    state.optimizer = opt.state();
    if (control.on_epoch) control.on_epoch(state);
    if (control.checkpoint) control.checkpoint(state, student);
  }
  return student;
}

double mean_fad_w2v(const FastModel& teacher, const FastModel& student, const std::vector<Utterance>& corpus,
                    std::size_t m, std::uint64_t seed) {
  NoGradGuard ng;
  Rng rng(seed);
  double total = 0.0;
  for (const auto& u : corpus) {
    const Tensor c = teacher.speech_tokens(u);
    total += fad_losses(teacher, student, c, sample_cut(c.rows(), rng), m).w2v.item();
  }
  return corpus.empty() ? 0.0 : total / static_cast<double>(corpus.size());
}

}  // namespace fast
