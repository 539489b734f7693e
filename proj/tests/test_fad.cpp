#include <algorithm>
#include <set>

#include "doctest.h"
#include "fast/fad.hpp"
#include "fast/ops.hpp"

using namespace fast;
using namespace fast::ops;

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
  cc.min_tokens = 2;
  cc.max_tokens = 5;
  cc.seed = seed;
  return generate_corpus(cc);
}

bool same_tensor(const Tensor& a, const Tensor& b) {
  auto x = a.data();
  auto y = b.data();
  return std::equal(x.begin(), x.end(), y.begin(), y.end());
}

FadConfig small_fad(std::size_t epochs) {
  FadConfig fc;
  fc.m = 12;
  fc.epochs = epochs;
  fc.batch = 4;
  fc.adam.lr = 1e-2;
  fc.adam.warmup = 2;
  return fc;
}

}  // namespace

TEST_CASE("sample_cut is uniform on [1, T]") {
  Rng rng(5);
  const std::size_t T = 10, draws = 20000;
  std::vector<double> counts(T, 0.0);
  for (std::size_t i = 0; i < draws; ++i) {
    const std::size_t t = sample_cut(T, rng);
    REQUIRE(t >= 1);
    REQUIRE(t <= T);
    counts[t - 1] += 1.0;
  }
  const double expected = static_cast<double>(draws) / T;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 27.88);  // 9 dof, p = 0.001

  for (int i = 0; i < 20; ++i) CHECK(sample_cut(1, rng) == 1);
  CHECK_THROWS_AS(sample_cut(0, rng), ContractError);
}

TEST_CASE("config guards small m") {
  FadConfig fc;
  fc.m = 10;
  CHECK_THROWS_AS(fc.validate(), ContractError);
  fc.allow_small_m = true;
  CHECK_NOTHROW(fc.validate());
  fc.m = 11;
  fc.allow_small_m = false;
  CHECK_NOTHROW(fc.validate());
}

TEST_CASE("identical models with no masks give zero loss") {
  FastModel teacher(tiny(), 3);
  const auto corpus = tiny_corpus(3, 1);
  NoGradGuard ng;
  for (const auto& u : corpus) {
    const Tensor c = teacher.speech_tokens(u);
    for (std::size_t t = 1; t <= c.rows(); ++t) {
      const FadLosses l = fad_losses(teacher, teacher, c, t, 0);
      CHECK(std::abs(l.w2v.item()) < 1e-12);
      CHECK(std::abs(l.cif.item()) < 1e-12);
    }
  }
}

TEST_CASE("loss ranges and decomposition") {
  FastModel teacher(tiny(), 3);
  FastModel student(tiny(), 4);
  const auto corpus = tiny_corpus(4, 2);
  NoGradGuard ng;
  for (const auto& u : corpus) {
    const Tensor c = teacher.speech_tokens(u);
    for (std::size_t t : {std::size_t{1}, c.rows() / 2 + 1, c.rows()}) {
      const FadLosses l = fad_losses(teacher, student, c, t, 12);
      CHECK(l.w2v.item() >= 0.0);
      CHECK(l.w2v.item() <= 2.0);
      CHECK(l.cif.item() >= 0.0);
      CHECK(l.total.item() == doctest::Approx(l.w2v.item() + l.cif.item()).epsilon(1e-12));
      CHECK(l.clamped == (t + 12 > c.rows()));
    }
    CHECK_THROWS_AS(fad_losses(teacher, student, c, 0, 12), ContractError);
    CHECK_THROWS_AS(fad_losses(teacher, student, c, c.rows() + 1, 12), ContractError);
  }
}

TEST_CASE("teacher receives no gradients") {
  FastModel teacher(tiny(), 3);
  FastModel student = teacher.clone();
  const auto corpus = tiny_corpus(1, 4);
  const Tensor c = [&] {
    NoGradGuard ng;
    return teacher.speech_tokens(corpus[0]);
  }();
  const FadLosses l = fad_losses(teacher, student, c, std::max<std::size_t>(1, c.rows() / 2), 12);
  backward(l.total);
  for (const auto& p : teacher.params()) CHECK_MESSAGE(!p.tensor.has_grad(), p.name);
  std::set<std::string> trainable;
  for (const auto& p : fad_trainable(student)) trainable.insert(p.name);
  bool any = false;
  for (const auto& p : student.params()) {
    if (p.tensor.has_grad()) {
      CHECK_MESSAGE(trainable.count(p.name) == 1, p.name);
      any = true;
    }
  }
  CHECK(any);
}

TEST_CASE("trainable set excludes conv, semantic and decoder") {
  FastModel m(tiny(), 1);
  const ParamList tr = fad_trainable(m);
  CHECK_FALSE(tr.empty());
  bool has_mask = false, has_cif = false;
  for (const auto& p : tr) {
    CHECK(p.name.find("semantic") == std::string::npos);
    CHECK(p.name.find("decoder") == std::string::npos);
    CHECK(p.name.find("conv") == std::string::npos);
    has_mask |= p.name.find("mask_embedding") != std::string::npos;
    has_cif |= p.name.rfind("cif", 0) == 0;
  }
  CHECK(has_mask);
  CHECK(has_cif);
}

TEST_CASE("zero distillation steps leave the student bit-identical") {
  FastModel teacher(tiny(), 3);
  const auto corpus = tiny_corpus(6, 5);
  const FastModel student = train_fad(teacher, corpus, small_fad(0), 1);
  const ParamList a = teacher.params(), b = student.params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK_MESSAGE(same_tensor(a[i].tensor, b[i].tensor), a[i].name);
}

TEST_CASE("distillation trains only the contextual encoder and CIF") {
  FastModel teacher(tiny(), 3);
  const auto corpus = tiny_corpus(12, 6);
  const ParamList before = teacher.clone().params();
  const FastModel student = train_fad(teacher, corpus, small_fad(2), 1);
  std::set<std::string> trainable;
  for (const auto& p : fad_trainable(student)) trainable.insert(p.name);
  const ParamList t = teacher.params(), s = student.params();
  bool moved = false;
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK_MESSAGE(same_tensor(t[i].tensor, before[i].tensor), "teacher changed: " << t[i].name);
    if (trainable.count(s[i].name))
      moved |= !same_tensor(s[i].tensor, t[i].tensor);
    else
      CHECK_MESSAGE(same_tensor(s[i].tensor, t[i].tensor), "frozen tensor changed: " << s[i].name);
  }
  CHECK(moved);
}

TEST_CASE("distillation lowers the representation loss and is reproducible") {
  FastModel teacher(tiny(), 3);
  const auto corpus = tiny_corpus(24, 7);
  const double before = mean_fad_w2v(teacher, teacher, corpus, 12, 99);
  std::vector<double> losses;
  const FastModel s1 = train_fad(teacher, corpus, small_fad(4), 1, [&](const LogRecord& r) {
    if (r.stage == "fad-epoch") losses.push_back(r.terms[1].second);
  });
  CHECK(mean_fad_w2v(teacher, s1, corpus, 12, 99) < before);
  REQUIRE(losses.size() == 4);
  CHECK(losses.back() < losses.front());

  const FastModel s2 = train_fad(teacher, corpus, small_fad(4), 1);
  const ParamList a = s1.params(), b = s2.params();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_tensor(a[i].tensor, b[i].tensor));
}

TEST_CASE("interrupted distillation resumes to the same student") {
  FastModel teacher(tiny(), 3);
  const auto corpus = tiny_corpus(12, 8);
  const FastModel full = train_fad(teacher, corpus, small_fad(3), 2);

  TrainState saved;
  TrainControl stop;
  stop.stop_after = 1;
  stop.on_epoch = [&](const TrainState& s) { saved = s; };
  const FastModel partial = train_fad(teacher, corpus, small_fad(3), 2, {}, stop);
  REQUIRE(saved.epochs_done == 1);

  const TrainState restored = TrainState::from_tensors(saved.to_tensors(fad_trainable(partial)), fad_trainable(partial));
  TrainControl resume;
  resume.resume = &restored;
  const FastModel resumed = train_fad(teacher, corpus, small_fad(3), 2, {}, resume, &partial);
  const ParamList a = full.params(), b = resumed.params();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK_MESSAGE(same_tensor(a[i].tensor, b[i].tensor), a[i].name);
}
