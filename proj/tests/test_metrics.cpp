#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pasr/metrics.hpp"

using namespace pasr;

namespace {

BinaryImage from_points(std::size_t h, std::size_t w, std::initializer_list<std::pair<int, int>> pts) {
  BinaryImage m{Extent::plane(h, w), std::vector<std::uint8_t>(h * w, 0)};
  for (auto [y, x] : pts) m.data[std::size_t(y) * w + std::size_t(x)] = 1;
  return m;
}

BinaryImage square(std::size_t n, std::size_t y0, std::size_t x0, std::size_t side) {
  BinaryImage m{Extent::plane(n, n), std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t y = y0; y < y0 + side; ++y)
    for (std::size_t x = x0; x < x0 + side; ++x) m.data[y * n + x] = 1;
  return m;
}

BinaryImage shifted(const BinaryImage& m, int dy, int dx) {
  const auto& e = m.extent;
  BinaryImage out{e, std::vector<std::uint8_t>(m.data.size(), 0)};
  for (std::size_t y = 0; y < e.h; ++y)
    for (std::size_t x = 0; x < e.w; ++x)
      if (m.data[y * e.w + x]) out.data[(y + dy) * e.w + (x + dx)] = 1;
  return out;
}

}  // namespace

TEST_CASE("hand-computed values") {
  const auto p = from_points(4, 4, {{0, 0}});
  const auto g = from_points(4, 4, {{0, 0}, {0, 1}});
  CHECK(dice(p, g) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(jaccard(p, g) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(dice(g, g) == 1.0);
  CHECK(jaccard(g, g) == 1.0);

  const auto a = from_points(8, 8, {{0, 0}});
  const auto b = from_points(8, 8, {{3, 4}});
  CHECK(hd95(a, b) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(asd(a, b) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(hd95(g, g) == 0.0);
  CHECK(asd(g, g) == 0.0);
}

TEST_CASE("empty masks") {
  const BinaryImage e{Extent::plane(3, 3), std::vector<std::uint8_t>(9, 0)};
  const auto p = from_points(3, 3, {{1, 1}});
  CHECK(dice(e, e) == 1.0);
  CHECK(jaccard(e, e) == 1.0);
  CHECK(dice(p, e) == 0.0);
  CHECK_THROWS_AS(hd95(p, e), EmptyMaskError);
  CHECK_THROWS_AS(asd(e, p), EmptyMaskError);
  const BinaryImage other{Extent::plane(3, 4), std::vector<std::uint8_t>(12, 0)};
  CHECK_THROWS_AS(dice(p, other), std::invalid_argument);
}

TEST_CASE("percentile uses linear interpolation") {
  CHECK(percentile({1, 2, 3, 4, 5}, 50) == 3.0);
  CHECK(percentile({1, 2, 3, 4}, 50) == 2.5);
  CHECK(percentile({0, 10}, 95) == doctest::Approx(9.5).epsilon(1e-15));
  CHECK(percentile({7}, 95) == 7.0);
  CHECK(percentile({3, 1, 2}, 100) == 3.0);
  CHECK(percentile({3, 1, 2}, 0) == 1.0);
}

TEST_CASE("boundary keeps raster-border voxels") {
  const auto full = square(4, 0, 0, 4);
  CHECK(boundary_voxels(full).size() == 12);
  CHECK(boundary_voxels(square(6, 1, 1, 4)).size() == 12);
  CHECK(boundary_voxels(square(6, 1, 1, 1)).size() == 1);
}

TEST_CASE("offset squares match the all-pairs oracle") {
  const auto a = square(16, 3, 3, 3);
  const auto b = square(16, 3, 5, 3);
  CHECK(std::abs(hd95(a, b) - oracle::hd95(a, b)) < 1e-9);
  CHECK(std::abs(asd(a, b) - oracle::asd(a, b)) < 1e-9);
}

TEST_CASE("randomized oracle equivalence") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> side(2, 16);
  std::uniform_real_distribution<float> sp(0.5f, 2.0f);
  int surface_cases = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t h = side(rng), w = side(rng);
    const auto p = trial % 2 ? oracle::random_blobs(rng, h, w) : oracle::random_mask(rng, h, w, 0.3);
    const auto g = trial % 3 ? oracle::random_blobs(rng, h, w) : oracle::random_mask(rng, h, w, 0.4);
    CHECK(dice(p, g) == oracle::dice(p, g));
    CHECK(jaccard(p, g) == oracle::jaccard(p, g));
    if (p.count() == 0 || g.count() == 0) continue;
    ++surface_cases;
    const Spacing s{1.0f, sp(rng), sp(rng)};
    CHECK(std::abs(hd95(p, g, s) - oracle::hd95(p, g, s)) < 1e-9);
    CHECK(std::abs(asd(p, g, s) - oracle::asd(p, g, s)) < 1e-9);
  }
  CHECK(surface_cases >= 200);
}

TEST_CASE("3d surface distances match the oracle") {
  std::mt19937_64 rng(13);
  std::bernoulli_distribution b(0.3);
  for (int trial = 0; trial < 30; ++trial) {
    const Extent e = Extent::volume(5, 6, 4);
    BinaryImage p{e, std::vector<std::uint8_t>(e.count())}, g{e, std::vector<std::uint8_t>(e.count())};
    for (auto& v : p.data) v = b(rng);
    for (auto& v : g.data) v = b(rng);
    if (p.count() == 0 || g.count() == 0) continue;
    const Spacing s{2.5f, 1.0f, 0.75f};
    CHECK(std::abs(hd95(p, g, s) - oracle::hd95(p, g, s)) < 1e-9);
    CHECK(std::abs(asd(p, g, s) - oracle::asd(p, g, s)) < 1e-9);
  }
}

TEST_CASE("exact distance transform against brute force") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const auto sites = oracle::random_mask(rng, 9, 11, 0.1);
    if (sites.count() == 0) continue;
    const Spacing s{1.0f, 1.5f, 0.5f};
    const auto d = distance_to_sites(sites, s);
    for (std::size_t y = 0; y < 9; ++y)
      for (std::size_t x = 0; x < 11; ++x) {
        double best = INFINITY;
        for (std::size_t v = 0; v < 9; ++v)
          for (std::size_t u = 0; u < 11; ++u)
            if (sites.data[v * 11 + u]) best = std::min(best, std::hypot((double(y) - v) * 1.5, (double(x) - u) * 0.5));
        CHECK(std::abs(d[y * 11 + x] - best) < 1e-9);
      }
  }
}

TEST_CASE("metric properties") {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 200; ++trial) {
    // Blobs inside a margin so a shift keeps them on the raster.
    auto inner_p = oracle::random_blobs(rng, 10, 10), inner_g = oracle::random_blobs(rng, 10, 10);
    BinaryImage p{Extent::plane(16, 16), std::vector<std::uint8_t>(256, 0)}, g = p;
    for (std::size_t y = 0; y < 10; ++y)
      for (std::size_t x = 0; x < 10; ++x) {
        p.data[(y + 2) * 16 + x + 2] = inner_p.data[y * 10 + x];
        g.data[(y + 2) * 16 + x + 2] = inner_g.data[y * 10 + x];
      }
    const double d = dice(p, g), j = jaccard(p, g);
    CHECK(std::abs(d - 2 * j / (1 + j)) < 1e-12);
    CHECK(d >= j);
    CHECK(hd95(p, g) == doctest::Approx(hd95(g, p)).epsilon(1e-12));
    CHECK(asd(p, g) == doctest::Approx(asd(g, p)).epsilon(1e-12));

    // Translating both masks is free as long as neither gains a border contact.
    const auto ps = shifted(p, 1, -2), gs = shifted(g, 1, -2);
    CHECK(dice(ps, gs) == d);
    CHECK(jaccard(ps, gs) == j);
    CHECK(hd95(ps, gs) == doctest::Approx(hd95(p, g)).epsilon(1e-12));
    CHECK(asd(ps, gs) == doctest::Approx(asd(p, g)).epsilon(1e-12));

    const float c = 2.5f;
    const Spacing unit{}, scaled{c, c, c};
    CHECK(hd95(p, g, scaled) == doctest::Approx(c * hd95(p, g, unit)).epsilon(1e-12));
    CHECK(asd(p, g, scaled) == doctest::Approx(c * asd(p, g, unit)).epsilon(1e-12));
  }
}

TEST_CASE("binary image of a class") {
  const LabelMap l(Extent::plane(1, 4), {0, 2, 1, 2}, 3);
  const auto b = BinaryImage::of_class(l, 2);
  CHECK(b.data == std::vector<std::uint8_t>{0, 1, 0, 1});
  CHECK(b.count() == 2);
}
