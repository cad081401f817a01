#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "pagen/fda.hpp"
#include "pagen/spectral.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace pagen;
using pagen::testing::max_abs_diff;
using pagen::testing::random_tensor;

TEST_CASE("beta zero is the identity") {
  const Tensor src = random_tensor({3, 16, 16}, 1, 0.0, 1.0);
  const Tensor tgt = random_tensor({3, 16, 16}, 2, 0.0, 1.0);
  CHECK(fda::band_side(16, 16, 0.0) == 0);
  CHECK(max_abs_diff(fda::fda_swap(src, tgt, {0.0}).data(), src.data()) < 1e-9);
}

TEST_CASE("self pair is a fixed point for any beta") {
  const Tensor img = random_tensor({3, 12, 10}, 3, 0.0, 1.0);
  for (double beta : {0.0, 0.01, 0.05, 0.3, 0.5, 1.0}) {
    CHECK(max_abs_diff(fda::fda_swap(img, img, {beta}).data(), img.data()) < 1e-9);
  }
}

TEST_CASE("beta one matches per-bin polar recombination") {
  const Tensor src = random_tensor({3, 8, 8}, 4, 0.0, 1.0);
  const Tensor tgt = random_tensor({3, 8, 8}, 5, 0.0, 1.0);
  const auto s = testing::direct_dft(src);
  const auto t = testing::direct_dft(tgt);
  std::vector<double> ph(s.size()), am(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    ph[i] = std::arg(s[i]);
    am[i] = std::abs(t[i]);
  }
  auto expected = testing::direct_polar_inverse(Tensor(src.shape(), ph), Tensor(src.shape(), am));
  for (double& v : expected) v = std::clamp(v, 0.0, 1.0);
  CHECK(max_abs_diff(fda::fda_swap(src, tgt, {1.0}).data(), expected) < 1e-9);
}

TEST_CASE("band geometry") {
  // 5x5, beta 0.6: side 3 around the shifted DC at (2,2), i.e. unshifted
  // offsets -1..1 on both axes.
  const auto m = fda::band_mask(5, 5, 0.6);
  std::size_t count = 0;
  for (std::size_t u = 0; u < 5; ++u)
    for (std::size_t v = 0; v < 5; ++v) {
      const bool near = (u == 0 || u == 1 || u == 4) && (v == 0 || v == 1 || v == 4);
      CHECK(static_cast<bool>(m[u * 5 + v]) == near);
      count += m[u * 5 + v];
    }
  CHECK(count == 9);

  // Every mask is closed under the conjugate mirror.
  for (double beta : {0.1, 0.25, 0.5, 0.8}) {
    const auto e = fda::band_mask(8, 12, beta);
    for (std::size_t u = 0; u < 8; ++u)
      for (std::size_t v = 0; v < 12; ++v)
        CHECK(e[u * 12 + v] ==
              e[spectral::mirror_index(u, 8) * 12 + spectral::mirror_index(v, 12)]);
  }
}

TEST_CASE("swapped bands nest as beta grows") {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{16, 16}, {9, 14}, {64, 64}}) {
    std::vector<unsigned char> prev(h * w, 0);
    for (int k = 0; k <= 40; ++k) {
      const auto cur = fda::band_mask(h, w, k / 40.0);
      for (std::size_t i = 0; i < cur.size(); ++i) CHECK((!prev[i] || cur[i]));
      prev = cur;
    }
  }
}

TEST_CASE("swap output is real and keeps source phase outside the band") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Tensor src = random_tensor({3, 16, 12}, 10 + seed, 0.0, 1.0);
    const Tensor tgt = random_tensor({3, 16, 12}, 20 + seed, 0.0, 1.0);
    const double beta = 0.2 + 0.15 * static_cast<double>(seed);
    const auto mask = fda::band_mask(16, 12, beta);

    const auto ss = spectral::dft2(src);
    const Tensor src_phase = spectral::phase(ss);
    const Tensor src_amp = spectral::amplitude(ss);
    const Tensor tgt_amp = spectral::amplitude(spectral::dft2(tgt));
    std::vector<double> mixed(src_amp.data().begin(), src_amp.data().end());
    for (std::size_t i = 0; i < mixed.size(); ++i)
      if (mask[i % (16 * 12)]) mixed[i] = tgt_amp[i];
    const auto spatial =
        spectral::idft2(spectral::recompose(src_phase, Tensor(src.shape(), mixed)));
    double residue = 0.0;
    for (double v : spatial.imag.data()) residue = std::max(residue, std::abs(v));
    CHECK(residue < 1e-9);

    const Tensor out = fda::fda_swap_unclipped(src, tgt, {beta});
    CHECK(max_abs_diff(out.data(), spatial.real.data()) < 1e-9);
    const auto os = spectral::dft2(out);
    const Tensor out_phase = spectral::phase(os);
    const Tensor out_amp = spectral::amplitude(os);
    for (std::size_t i = 0; i < out.numel(); ++i) {
      if (mask[i % (16 * 12)] || out_amp[i] < 1e-6) continue;
      double d = std::abs(out_phase[i] - src_phase[i]);
      d = std::min(d, 2.0 * std::numbers::pi - d);
      CHECK(d < 1e-6);
    }

    const Tensor clipped = fda::fda_swap(src, tgt, {beta});
    for (double v : clipped.data()) CHECK((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("fda errors") {
  const Tensor a = random_tensor({3, 8, 8}, 30, 0.0, 1.0);
  const Tensor b = random_tensor({3, 8, 6}, 31, 0.0, 1.0);
  CHECK_THROWS_AS(fda::fda_swap(a, b, {0.1}), DimensionError);
  CHECK_THROWS_AS(fda::fda_swap(a, a, {-0.01}), ConfigError);
  CHECK_THROWS_AS(fda::fda_swap(a, a, {1.5}), ConfigError);
  CHECK_THROWS_AS(fda::fda_swap(a, a, {std::nan("")}), ConfigError);
}
