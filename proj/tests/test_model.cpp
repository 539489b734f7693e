#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "fast/model.hpp"
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
  cc.max_tokens = 4;
  cc.seed = seed;
  return generate_corpus(cc);
}

bool same_values(const ParamList& a, const ParamList& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto x = a[i].tensor.data();
    auto y = b[i].tensor.data();
    if (a[i].name != b[i].name || !std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

OfflineTrainConfig quick() {
  OfflineTrainConfig oc;
  oc.stage1_epochs = 1;
  oc.stage2_epochs = 2;
  oc.batch = 4;
  oc.average_top = 2;
  return oc;
}

}  // namespace

TEST_CASE("vocabulary layout") {
  FastModel m(tiny(), 1);
  CHECK(m.vocab() == 3 + 6 + 6);
  CHECK(m.target_id(0) == kFirstWord);
  CHECK(m.source_id(0) == kFirstWord + 6);
  CHECK(m.target_word(m.target_id(5)) == 5);
  CHECK(m.target_word(kEos) == -1);
  CHECK(m.target_word(m.source_id(0)) == -1);
}

TEST_CASE("st loss is |y| ln V with a zeroed output layer") {
  FastModel m(tiny(), 2);
  std::fill(m.decoder.output.weight.mutable_data().begin(), m.decoder.output.weight.mutable_data().end(), 0.0);
  std::fill(m.decoder.output.bias.mutable_data().begin(), m.decoder.output.bias.mutable_data().end(), 0.0);
  Rng rng(3);
  std::vector<double> hv(5 * 8);
  for (auto& v : hv) v = rng.normal(0.0, 1.0);
  Tensor h = Tensor::from(5, 8, hv);
  const std::vector<std::size_t> y{4, 7, kEos};
  CHECK(st_loss(m, h, y).item() == doctest::Approx(3.0 * std::log(15.0)).epsilon(1e-12));
  // smoothing against a uniform distribution changes nothing
  CHECK(st_loss(m, h, y, kStTag, 0.1).item() == doctest::Approx(3.0 * std::log(15.0)).epsilon(1e-12));
  CHECK_THROWS_AS(st_loss(m, h, {}), ContractError);
  CHECK_THROWS_AS(st_loss(m, h, {99}), IndexError);
}

TEST_CASE("decoder is causal over its inputs") {
  FastModel m(tiny(), 4);
  Rng rng(5);
  std::vector<double> hv(3 * 8);
  for (auto& v : hv) v = rng.normal(0.0, 1.0);
  Tensor mem = Tensor::from(3, 8, hv);
  Tensor a = m.decoder(mem, {kStTag, 4, 5, 6});
  Tensor b = m.decoder(mem, {kStTag, 4, 9, 10});
  for (std::size_t c = 0; c < a.cols(); ++c) {
    CHECK(a.at(0, c) == b.at(0, c));
    CHECK(a.at(1, c) == b.at(1, c));
  }
  CHECK(a.at(2, 0) != b.at(2, 0));
}

TEST_CASE("offline objective decomposes") {
  FastModel m(tiny(), 6);
  auto corpus = tiny_corpus(3, 7);
  for (const auto& u : corpus) {
    const Tensor c = m.speech_tokens(u);
    OfflineTerms t = offline_objective(m, c, u, 2.5);
    CHECK(t.total.item() == doctest::Approx(t.st.item() + 2.5 * t.cif.item()).epsilon(1e-12));
    CHECK(t.cif.item() == doctest::Approx(std::fabs(static_cast<double>(u.src.size()) - t.alpha_sum)).epsilon(1e-12));
    OfflineTerms z = offline_objective(m, c, u, 0.0);
    CHECK(z.total.item() == doctest::Approx(z.st.item()).epsilon(1e-12));
  }
  CHECK_THROWS_AS(offline_objective(m, m.speech_tokens(corpus[0]), corpus[0], -1.0), ContractError);
}

TEST_CASE("greedy decoding") {
  FastModel m(tiny(), 8);
  auto corpus = tiny_corpus(2, 9);
  CHECK(translate_offline(m, corpus[0]) == translate_offline(m, corpus[0]));
  bool truncated = false;
  CHECK(greedy_decode(m, Tensor::zeros(0, 8), 5, &truncated).empty());
  CHECK_FALSE(truncated);
  Tensor h = Tensor::full(2, 8, 0.3);
  auto out = greedy_decode(m, h, 3, &truncated);
  CHECK(out.size() <= 3);
  CHECK(truncated == (out.size() == 3));
  CHECK(std::find(out.begin(), out.end(), kEos) == out.end());
}

TEST_CASE("clone is independent") {
  FastModel m(tiny(), 10);
  FastModel c = m.clone();
  CHECK(same_values(m.params(), c.params()));
  c.decoder.output.bias.mutable_data()[0] += 1.0;
  CHECK_FALSE(same_values(m.params(), c.params()));
  FastModel shared = m;
  shared.decoder.output.bias.mutable_data()[0] += 1.0;
  CHECK(same_values(m.params(), shared.params()));
}

TEST_CASE("averaging identical snapshots is the identity") {
  FastModel m(tiny(), 11);
  auto s = snapshot(m.params());
  auto avg = average_snapshots({s, s});
  CHECK(avg == s);
}

TEST_CASE("model save and load round trip") {
  FastModel m(tiny(), 12);
  const auto path = std::filesystem::temp_directory_path() / "fast_model_roundtrip.ckpt";
  save_model(path, m, {{"extra.note", Tensor::scalar(4.0)}});
  LoadedModel back = load_model(path);
  CHECK(same_values(m.params(), back.model.params()));
  CHECK(back.model.cfg.dim == 8);
  REQUIRE(back.extra.size() == 1);
  CHECK(back.extra[0].name == "extra.note");
  auto corpus = tiny_corpus(1, 13);
  CHECK(translate_offline(m, corpus[0]) == translate_offline(back.model, corpus[0]));
  std::filesystem::remove(path);
}

TEST_CASE("training reduces the loss on a fixed batch") {
  FastModel m(tiny(), 14);
  auto corpus = tiny_corpus(4, 15);
  OfflineTrainConfig oc;
  oc.stage1_epochs = 0;
  oc.stage2_epochs = 1;
  oc.batch = 4;
  oc.adam = {.lr = 1e-2, .warmup = 1, .clip_norm = 5.0};
  auto objective = [&] {
    NoGradGuard ng;
    double s = 0.0;
    for (const auto& u : corpus) s += offline_objective(m, m.speech_tokens(u), u, 1.0).total.item();
    return s;
  };
  const double before = objective();
  for (int i = 0; i < 30; ++i) train_offline(m, corpus, corpus, oc, static_cast<std::uint64_t>(i));
  CHECK(objective() < 0.5 * before);
}

TEST_CASE("training is seeded and resumable") {
  auto train = tiny_corpus(12, 16);
  auto dev = tiny_corpus(3, 17);
  FastModel a(tiny(), 18);
  auto ha = train_offline(a, train, dev, quick(), 5);
  CHECK(ha.stage1_dev.size() == 1);
  CHECK(ha.stage2_dev.size() == 2);
  CHECK(ha.averaged.size() == 2);

  FastModel b(tiny(), 18);
  train_offline(b, train, dev, quick(), 5);
  CHECK(same_values(a.params(), b.params()));

  // stop after two epochs, round-trip the state through tensors, finish
  FastModel c(tiny(), 18);
  TrainState saved;
  TrainControl stop;
  stop.stop_after = 2;
  stop.on_epoch = [&](const TrainState& s) { saved = s; };
  train_offline(c, train, dev, quick(), 5, {}, stop);
  CHECK(saved.epochs_done == 2);
  const TrainState restored = TrainState::from_tensors(saved.to_tensors(c.params()), c.params());
  TrainControl resume;
  resume.resume = &restored;
  auto hc = train_offline(c, train, dev, quick(), 5, {}, resume);
  CHECK(same_values(a.params(), c.params()));
  CHECK(hc.stage2_dev == ha.stage2_dev);
}
