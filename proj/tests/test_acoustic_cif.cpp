#include <cmath>
#include <numeric>

#include "doctest.h"
#include "fast/acoustic_encoder.hpp"
#include "fast/cif.hpp"
#include "fast/optim.hpp"
#include "gradcheck.hpp"
#include "op_catalog.hpp"

using namespace fast;
using namespace fast::ops;
using fast::testing::gradcheck;
using fast::testing::random_tensor;

namespace {

ModelConfig tiny() {
  ModelConfig cfg;
  cfg.frame_dim = 4;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.ff_hidden = 16;
  return cfg;
}

bool same(const Tensor& a, const Tensor& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST_CASE("conv subsampler shapes and prefix causality") {
  Rng rng(1);
  AcousticEncoder enc(tiny(), rng);
  Tensor frames = random_tensor(rng, 8, 4);
  Tensor c = enc.conv_subsample(frames);
  CHECK(c.rows() == 2);
  CHECK(c.cols() == 8);

  Tensor prefix = enc.conv_subsample(slice_rows(frames, 0, 4));
  REQUIRE(prefix.rows() == 1);
  CHECK(same(prefix, slice_rows(c, 0, 1)));

  // ceil for a partial window, and full-window tokens still match
  Tensor odd = random_tensor(rng, 11, 4);
  Tensor c_odd = enc.conv_subsample(odd);
  CHECK(c_odd.rows() == 3);
  Tensor c_pre = enc.conv_subsample(slice_rows(odd, 0, 9));
  CHECK(same(slice_rows(c_pre, 0, 2), slice_rows(c_odd, 0, 2)));

  CHECK_THROWS_AS(enc.conv_subsample(random_tensor(rng, 3, 4)), ContractError);

  // zero input still yields finite tokens driven by the biases
  Tensor z = enc.conv_subsample(Tensor::zeros(8, 4));
  for (double v : z.data()) CHECK(std::isfinite(v));
  CHECK(same(slice_rows(z, 0, 1), slice_rows(z, 1, 2)));
}

TEST_CASE("encode_full") {
  Rng rng(2);
  AcousticEncoder enc(tiny(), rng);
  Tensor c = random_tensor(rng, 5, 8);
  CHECK(same(enc.encode_full(c), enc.encode_full(c)));

  // tau = 1: only that token matters
  Tensor one = random_tensor(rng, 1, 8);
  CHECK(enc.encode_full(one).rows() == 1);

  // positions matter: swapping two rows does not just swap the outputs
  Tensor a = enc.encode_full(c);
  std::vector<std::size_t> perm{1, 0, 2, 3, 4};
  Tensor b = enc.encode_full(gather_rows(c, perm));
  double diff = 0.0;
  for (std::size_t j = 0; j < 8; ++j) diff += std::fabs(a.at(0, j) - b.at(1, j));
  CHECK(diff > 1e-6);

  CHECK_THROWS_AS(enc.encode_full(Tensor::zeros(0, 8)), ContractError);
}

TEST_CASE("FAI forward pass") {
  Rng rng(3);
  AcousticEncoder enc(tiny(), rng);
  Tensor c = random_tensor(rng, 6, 8);
  CHECK(same(enc.encode_streaming_fai(c, 0), enc.encode_full(c)));
  CHECK(enc.encode_streaming_fai(c, 50, 1.0).rows() == 6);
  CHECK(enc.encode_streaming_fai(c, 50, 0.8).rows() == 16);
  CHECK(enc.encode_streaming_fai(c, 50, 0.0).rows() == 56);
  for (std::size_t tau : {1, 7, 30})
    for (std::size_t m : {0, 3, 20, 50})
      for (double p : {0.0, 0.25, 0.5, 0.8, 1.0})
        CHECK(fai_output_length(tau, m, p) == tau + static_cast<std::size_t>(std::llround((1.0 - p) * m)));

  // kept rows equal the leading rows of the explicit concatenation
  std::vector<std::size_t> zeros(4, 0);
  std::vector<Tensor> parts{c, gather_rows(enc.mask_embedding, zeros)};
  Tensor explicit_full = enc.encode_full(concat_rows(parts));
  CHECK(same(enc.encode_streaming_fai(c, 4, 1.0), slice_rows(explicit_full, 0, 6)));
  CHECK_THROWS_AS(enc.encode_streaming_fai(c, 4, 1.5), ContractError);
}

TEST_CASE("span masks cover about half the positions") {
  Rng rng(4);
  std::size_t masked = 0, total = 0;
  for (int i = 0; i < 200; ++i) {
    auto m = draw_span_mask(40, rng);
    masked += static_cast<std::size_t>(std::count(m.begin(), m.end(), true));
    total += m.size();
  }
  const double frac = static_cast<double>(masked) / static_cast<double>(total);
  CHECK(frac >= 0.5);
  CHECK(frac < 0.6);
}

TEST_CASE("masked reconstruction pretraining") {
  Rng rng(5);
  AcousticEncoder enc(tiny(), rng);
  std::vector<Tensor> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_tensor(rng, 10, 8));

  SUBCASE("nothing masked is a no-op") {
    std::vector<bool> none(10, false);
    Tensor l = masked_reconstruction_loss(enc, batch[0], none);
    CHECK(l.item() == 0.0);
    CHECK_FALSE(l.requires_grad());
  }

  SUBCASE("loss decreases on a fixed batch and predictions move toward the clean tokens") {
    ParamList params;
    enc.collect_contextual(params);
    Adam opt(params, AdamConfig{.lr = 3e-3, .warmup = 50});
    std::vector<std::vector<bool>> masks;
    for (int i = 0; i < 4; ++i) masks.push_back(draw_span_mask(10, rng));
    auto batch_loss = [&] {
      Tensor total = Tensor::scalar(0.0);
      for (int i = 0; i < 4; ++i) total = add(total, masked_reconstruction_loss(enc, batch[i], masks[i]));
      return total;
    };
    auto masked_cosine = [&] {
      NoGradGuard ng;
      double s = 0.0;
      std::size_t n = 0;
      for (int i = 0; i < 4; ++i) {
        Tensor cos = cosine_rows(enc.encode_masked(batch[i], masks[i]), batch[i]);
        for (std::size_t r = 0; r < 10; ++r)
          if (masks[i][r]) {
            s += cos.at(r, 0);
            ++n;
          }
      }
      return s / static_cast<double>(n);
    };
    const double before = batch_loss().item();
    const double cos_before = masked_cosine();
    for (int step = 0; step < 500; ++step) {
      backward(batch_loss());
      opt.step();
    }
    CHECK(batch_loss().item() < before);
    CHECK(masked_cosine() > cos_before);
  }
}

TEST_CASE("CIF weights") {
  Rng rng(6);
  CifDetector cif(8, 1.0, 0.5, rng);
  Tensor a = random_tensor(rng, 5, 8, -3, 3);
  Tensor alpha = cif.compute_weights(a);
  for (double v : alpha.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  std::fill(cif.proj.weight.mutable_data().begin(), cif.proj.weight.mutable_data().end(), 0.0);
  std::fill(cif.proj.bias.mutable_data().begin(), cif.proj.bias.mutable_data().end(), 0.0);
  Tensor flat = cif.compute_weights(a);
  for (double v : flat.data()) CHECK(v == 0.5);

  CifDetector fresh(8, 1.0, 0.5, rng);
  auto f = [&](const std::vector<Tensor>& x) { return sum(fresh.compute_weights(x[0])); };
  CHECK(gradcheck(f, {random_tensor(rng, 5, 8)}) < 1e-4);
}

TEST_CASE("integrate and fire hand trace") {
  Rng rng(7);
  CifDetector cif(2, 1.0, 0.5, rng);
  Tensor a = Tensor::from(4, 2, {1, 0, 0, 1, 1, 1, 2, 0});
  Tensor alpha = Tensor::from(4, 1, {0.6, 0.6, 0.6, 0.6});
  CifResult r = cif.integrate_fire(a, alpha, std::nullopt, TailMode::Offline);
  CHECK(r.boundaries == std::vector<std::size_t>{1, 3});
  CHECK(r.residual == doctest::Approx(0.4));
  CHECK_FALSE(r.tail_fired);
  REQUIRE(r.h.rows() == 2);
  // unit 1: 0.6 * a1 + 0.4 * a2
  CHECK(r.h.at(0, 0) == doctest::Approx(0.6));
  CHECK(r.h.at(0, 1) == doctest::Approx(0.4));
  // unit 2: 0.2 * a2 + 0.6 * a3 + 0.2 * a4
  CHECK(r.h.at(1, 0) == doctest::Approx(0.6 + 0.4));
  CHECK(r.h.at(1, 1) == doctest::Approx(0.2 + 0.6));

  CHECK(streaming_boundary_count({0.5, 0.5, 0.5}, 1.0) == 1);
  CHECK(streaming_boundary_count({1e-3, 1e-3, 1e-3}, 1.0) == 0);
  CHECK(streaming_boundary_count({1.0 - 1e-12, 1.0 - 1e-12, 1.0 - 1e-12}, 1.0) == 2);
  CHECK(streaming_boundary_count({1.0, 1.0, 1.0}, 1.0) == 3);

  // offline tail fire only at >= 0.5 leftover
  Tensor tail_alpha = Tensor::from(4, 1, {0.6, 0.6, 0.6, 0.75});
  CifResult t = cif.integrate_fire(a, tail_alpha, std::nullopt, TailMode::Offline);
  CHECK(t.tail_fired);
  CHECK(t.boundaries.size() == 3);
  CifResult s = cif.integrate_fire(a, tail_alpha, std::nullopt, TailMode::Streaming);
  CHECK(s.boundaries.size() == 2);
}

TEST_CASE("CIF weight conservation and scaling") {
  Rng rng(8);
  CifDetector cif(3, 1.0, 0.5, rng);
  for (int trial = 0; trial < 200; ++trial) {
    const auto t = static_cast<std::size_t>(rng.uniform_int(1, 30));
    std::vector<double> av(t);
    for (auto& v : av) v = rng.uniform(1e-3, 1.0 - 1e-3);
    Tensor a = random_tensor(rng, t, 3);
    Tensor alpha = Tensor::from(t, 1, av);
    CifResult r = cif.integrate_fire(a, alpha, std::nullopt, TailMode::Streaming);
    const double total = std::accumulate(av.begin(), av.end(), 0.0);
    const double fired = std::accumulate(r.unit_weight.begin(), r.unit_weight.end(), 0.0);
    CHECK(std::fabs(fired + r.residual - total) < 1e-12);
    CHECK(static_cast<double>(r.boundaries.size()) <= total + 1e-12);
    CHECK(total < static_cast<double>(r.boundaries.size()) + 1.0);
    CHECK(std::is_sorted(r.boundaries.begin(), r.boundaries.end()));

    const auto J = static_cast<std::size_t>(rng.uniform_int(1, 12));
    CifResult scaled = cif.integrate_fire(a, alpha, J, TailMode::Offline);
    CHECK(scaled.boundaries.size() == J);
    CHECK(scaled.h.rows() == J);

    // monotone N for growing prefixes under fixed weights
    std::size_t prev = 0;
    for (std::size_t k = 1; k <= t; ++k) {
      const std::size_t n = streaming_boundary_count(std::vector<double>(av.begin(), av.begin() + static_cast<std::ptrdiff_t>(k)), 1.0);
      CHECK(n >= prev);
      prev = n;
    }
  }
  Tensor zero_alpha = Tensor::zeros(3, 1);
  CHECK_THROWS_AS(cif.integrate_fire(Tensor::zeros(3, 3), zero_alpha, 2, TailMode::Offline), ContractError);
}

TEST_CASE("CIF length loss") {
  CHECK(cif_length_loss(Tensor::from(3, 1, {0.5, 0.5, 1.0}), 2).item() == 0.0);
  CHECK(cif_length_loss(Tensor::from(4, 1, {0.75, 0.75, 0.75, 0.75}), 4).item() == doctest::Approx(1.0));
  // gradient pushes the sum toward J
  Tensor alpha = Tensor::from(2, 1, {0.4, 0.4}, true);
  backward(cif_length_loss(alpha, 2));
  CHECK(alpha.grad()[0] < 0.0);
  Tensor over = Tensor::from(2, 1, {0.9, 0.9}, true);
  backward(cif_length_loss(over, 1));
  CHECK(over.grad()[0] > 0.0);
  CHECK_THROWS_AS(cif_length_loss(alpha, 0), ContractError);
}

TEST_CASE("CIF gradient through the shrunk states") {
  Rng rng(9);
  CifDetector cif(4, 1.0, 0.5, rng);
  Tensor w = random_tensor(rng, 3, 4);
  auto f = [&](const std::vector<Tensor>& x) {
    Tensor alpha = cif.compute_weights(x[0]);
    CifResult r = cif.integrate_fire(x[0], alpha, 3, TailMode::Offline);
    return fast::testing::weighted_sum(r.h, w);
  };
  CHECK(gradcheck(f, {random_tensor(rng, 7, 4)}) < 1e-4);
}
