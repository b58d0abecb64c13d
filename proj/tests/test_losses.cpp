#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pasr/losses.hpp"

using namespace pasr;

namespace {

Tensor random_logits(std::mt19937_64& rng, std::size_t m, const Extent& e, double scale = 2.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(m, e);
  for (auto& v : t.data) v = n(rng);
  return t;
}

LabelMap random_labels(std::mt19937_64& rng, const Extent& e, int m) {
  std::uniform_int_distribution<int> u(0, m - 1);
  std::vector<std::uint8_t> d(e.count());
  for (auto& v : d) v = static_cast<std::uint8_t>(u(rng));
  return LabelMap(e, std::move(d), m);
}

Mask random_region(std::mt19937_64& rng, const Extent& e) {
  std::bernoulli_distribution b(0.5);
  std::vector<std::uint8_t> d(e.count());
  for (auto& v : d) v = b(rng) ? 1 : 0;
  return Mask(e, std::move(d));
}

struct Parts {
  double ce_sum = 0.0;  // un-normalized
  double dice_loss = 0.0;
  std::size_t count = 0;
};

// Direct per-voxel evaluation with naive softmax.
Parts oracle_parts(const Tensor& logits, const LabelMap& y, const Mask& region) {
  const std::size_t m = logits.channels, n = logits.plane();
  Parts r;
  std::vector<double> inter(m, 0.0), ps(m, 0.0), gs(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!region[i]) continue;
    ++r.count;
    double z = 0.0;
    for (std::size_t c = 0; c < m; ++c) z += std::exp(logits.at(c, i));
    r.ce_sum += -std::log(std::exp(logits.at(y[i], i)) / z);
    for (std::size_t c = 1; c < m; ++c) {
      const double p = std::exp(logits.at(c, i)) / z;
      const double g = y[i] == c ? 1.0 : 0.0;
      inter[c] += p * g;
      ps[c] += p;
      gs[c] += g;
    }
  }
  double dice = 0.0;
  for (std::size_t c = 1; c < m; ++c) dice += (2 * inter[c] + 1e-5) / (ps[c] + gs[c] + 1e-5);
  r.dice_loss = 1.0 - dice / double(m - 1);
  return r;
}

double oracle_loss(const Tensor& logits, const LabelMap& y, const Mask& region, RegionNorm norm) {
  const Parts p = oracle_parts(logits, y, region);
  if (p.count == 0) return 0.0;
  const double den = norm == RegionNorm::Region ? double(p.count) : double(logits.plane());
  return 0.5 * p.ce_sum / den + 0.5 * p.dice_loss;
}

}  // namespace

TEST_CASE("region loss matches the direct formula") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 2 + trial % 3;
    const Extent e = Extent::plane(5, 6);
    const Tensor logits = random_logits(rng, m, e);
    const LabelMap y = random_labels(rng, e, m);
    const Mask r = random_region(rng, e);
    for (auto norm : {RegionNorm::Region, RegionNorm::Total}) {
      CHECK(combined_region_loss(logits, y, r, norm) == doctest::Approx(oracle_loss(logits, y, r, norm)).epsilon(1e-10));
    }
  }
}

TEST_CASE("uniform logits give ln 2 cross-entropy") {
  const Extent e = Extent::plane(4, 4);
  Tensor logits(2, e);
  std::vector<std::uint8_t> d(16, 0);
  for (std::size_t i = 0; i < 8; ++i) d[i] = 1;
  const LabelMap y(e, d, 2);
  // Soft Dice with p = 0.5 everywhere: (2 * 4 + eps) / (8 + 8 + eps).
  const double dice = (8.0 + 1e-5) / (16.0 + 1e-5);
  const double expected = 0.5 * std::log(2.0) + 0.5 * (1.0 - dice);
  CHECK(combined_loss(logits, y) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("perfect prediction gives near-zero loss") {
  std::mt19937_64 rng(2);
  const Extent e = Extent::plane(4, 4);
  const LabelMap y = random_labels(rng, e, 3);
  Tensor logits(3, e);
  for (std::size_t i = 0; i < 16; ++i) logits.at(y[i], i) = 20.0;
  CHECK(combined_loss(logits, y) <= 1e-5);
}

TEST_CASE("empty region contributes nothing") {
  std::mt19937_64 rng(3);
  const Extent e = Extent::plane(3, 3);
  const Tensor logits = random_logits(rng, 2, e);
  Tensor grad(2, e);
  CHECK(combined_region_loss(logits, random_labels(rng, e, 2), Mask::filled(e, 0), RegionNorm::Region, &grad) == 0.0);
  for (double v : grad.data) CHECK(v == 0.0);
}

TEST_CASE("shape mismatches are rejected") {
  std::mt19937_64 rng(4);
  const Tensor logits = random_logits(rng, 2, Extent::plane(3, 3));
  CHECK_THROWS_AS(combined_loss(logits, random_labels(rng, Extent::plane(3, 4), 2)), std::invalid_argument);
  CHECK_THROWS_AS(combined_loss(logits, random_labels(rng, Extent::plane(3, 3), 3)), std::invalid_argument);
}

TEST_CASE("region loss gradient matches finite differences") {
  std::mt19937_64 rng(5);
  for (int m : {2, 4}) {
    for (auto norm : {RegionNorm::Region, RegionNorm::Total}) {
      const Extent e = Extent::plane(4, 4);
      Tensor logits = random_logits(rng, m, e);
      const LabelMap y = random_labels(rng, e, m);
      const Mask r = random_region(rng, e);
      Tensor grad(m, e);
      combined_region_loss(logits, y, r, norm, &grad, 1.0);
      auto f = [&] { return combined_region_loss(logits, y, r, norm); };
      for (std::size_t i = 0; i < logits.data.size(); ++i) {
        const double num = oracle::central_difference(f, &logits.data[i], 1e-5);
        CHECK(oracle::relative_error(grad.data[i], num, 1e-6) < 1e-4);
      }
    }
  }
}

TEST_CASE("prediction loss matches region-masked recomputation") {
  std::mt19937_64 rng(6);
  const Extent e = Extent::plane(6, 6);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor lp = random_logits(rng, 2, e), lq = random_logits(rng, 2, e);
    const LabelMap yp = random_labels(rng, e, 2), yq = random_labels(rng, e, 2);
    const Mask s = random_region(rng, e);
    const Mask inv = s.inverted();
    for (double gamma : {0.0, 0.5, 1.0}) {
      const double expected = oracle_loss(lp, yp, s, RegionNorm::Region) + gamma * oracle_loss(lp, yp, inv, RegionNorm::Region) +
                              oracle_loss(lq, yq, inv, RegionNorm::Region) + gamma * oracle_loss(lq, yq, s, RegionNorm::Region);
      CHECK(prediction_loss(lp, yp, lq, yq, s, gamma) == doctest::Approx(expected).epsilon(1e-6));
    }
  }
}

TEST_CASE("prediction loss is affine and non-decreasing in gamma") {
  std::mt19937_64 rng(7);
  const Extent e = Extent::plane(6, 6);
  const Tensor lp = random_logits(rng, 3, e), lq = random_logits(rng, 3, e);
  const LabelMap yp = random_labels(rng, e, 3), yq = random_labels(rng, e, 3);
  const Mask s = random_region(rng, e);
  const double l0 = prediction_loss(lp, yp, lq, yq, s, 0.0);
  const double l1 = prediction_loss(lp, yp, lq, yq, s, 1.0);
  double prev = l0;
  for (double g = 0.1; g <= 1.0; g += 0.1) {
    const double l = prediction_loss(lp, yp, lq, yq, s, g);
    CHECK(l >= prev - 1e-12);
    CHECK(l == doctest::Approx(l0 + g * (l1 - l0)).epsilon(1e-10));
    prev = l;
  }
  CHECK_THROWS_AS(prediction_loss(lp, yp, lq, yq, s, 1.5), std::invalid_argument);
}

TEST_CASE("with gamma one the cross-entropy part is additive over regions") {
  // Dice is region-dependent, so the oracle's Dice parts are removed and the
  // remaining CE must equal the full-image CE under total normalization.
  std::mt19937_64 rng(8);
  const Extent e = Extent::plane(6, 6);
  const Tensor logits = random_logits(rng, 2, e);
  const LabelMap y = random_labels(rng, e, 2);
  const Mask s = random_region(rng, e);
  const double masked = combined_region_loss(logits, y, s, RegionNorm::Total) +
                        combined_region_loss(logits, y, s.inverted(), RegionNorm::Total) -
                        0.5 * oracle_parts(logits, y, s).dice_loss - 0.5 * oracle_parts(logits, y, s.inverted()).dice_loss;
  const Mask all = Mask::filled(e, 1);
  const double full = combined_region_loss(logits, y, all, RegionNorm::Total) - 0.5 * oracle_parts(logits, y, all).dice_loss;
  CHECK(masked == doctest::Approx(full).epsilon(1e-6));
}

TEST_CASE("prediction loss gradient matches finite differences") {
  std::mt19937_64 rng(9);
  const Extent e = Extent::plane(4, 4);
  Tensor lp = random_logits(rng, 2, e), lq = random_logits(rng, 2, e);
  const LabelMap yp = random_labels(rng, e, 2), yq = random_labels(rng, e, 2);
  const Mask s = random_region(rng, e);
  Tensor gp(2, e), gq(2, e);
  prediction_loss(lp, yp, lq, yq, s, 0.5, RegionNorm::Region, PredictionGrads{&gp, &gq, 1.0});
  auto f = [&] { return prediction_loss(lp, yp, lq, yq, s, 0.5); };
  for (std::size_t i = 0; i < lp.data.size(); ++i) {
    CHECK(oracle::relative_error(gp.data[i], oracle::central_difference(f, &lp.data[i], 1e-5), 1e-6) < 1e-4);
    CHECK(oracle::relative_error(gq.data[i], oracle::central_difference(f, &lq.data[i], 1e-5), 1e-6) < 1e-4);
  }
}

TEST_CASE("total loss") {
  const LossBreakdown b = total_loss(1.0, 2.0, 3.0, 0.05, 0.01);
  CHECK(b.total == doctest::Approx(1.13).epsilon(1e-15));
  CHECK(total_loss(1.5, 2.0, -3.0, 0.0, 0.0).total == 1.5);
  CHECK(total_loss(1.0, 2.0, 3.0, 1.0, 1.0).total == 6.0);
  CHECK_THROWS_AS(total_loss(NAN, 0, 0, 0.05, 0.01), NonFiniteLoss);
  CHECK_THROWS_AS(total_loss(1, INFINITY, 0, 0.05, 0.01), NonFiniteLoss);
  CHECK_THROWS_AS(total_loss(1, 0, 0, -0.05, 0.01), std::invalid_argument);
}
