#include <cmath>
#include <complex>
#include <numbers>

#include "doctest.h"
#include "pagen/gradcheck.hpp"
#include "pagen/ops.hpp"
#include "pagen/spectral.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace pagen;
using pagen::testing::bitwise_equal;
using pagen::testing::max_abs_diff;
using pagen::testing::random_tensor;
using cplx = std::complex<double>;
using pagen::testing::direct_dft;
using pagen::testing::direct_polar_inverse;


TEST_CASE("dft2 of the 2x2 example") {
  const auto s = spectral::dft2(Tensor({1, 2, 2}, {1, 2, 3, 4}));
  CHECK(s.real[0] == 10.0);
  CHECK(s.real[1] == -2.0);
  CHECK(s.real[2] == -4.0);
  CHECK(s.real[3] == 0.0);
  for (double v : s.imag.data()) CHECK(v == 0.0);
  const Tensor amp = spectral::amplitude(s);
  const double expected[] = {10, 2, 4, 0};
  for (std::size_t i = 0; i < 4; ++i) CHECK(amp[i] == expected[i]);
}

TEST_CASE("dft2 of a constant image is DC only") {
  const auto s = spectral::dft2(Tensor::full({2, 6, 5}, 0.3));
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < 30; ++i) {
      const double expected = i == 0 ? 30 * 0.3 : 0.0;
      CHECK(std::abs(s.real[c * 30 + i] - expected) < 1e-12);
      CHECK(std::abs(s.imag[c * 30 + i]) < 1e-12);
    }
  }
}

TEST_CASE("dft2 matches the direct double sum on every size up to 8x8") {
  double worst = 0.0;
  for (std::size_t h = 1; h <= 8; ++h) {
    for (std::size_t w = 1; w <= 8; ++w) {
      const Tensor img = random_tensor({2, h, w}, h * 16 + w, 0.0, 1.0);
      const auto s = spectral::dft2(img);
      const auto ref = direct_dft(img);
      for (std::size_t i = 0; i < ref.size(); ++i) {
        worst = std::max(worst, std::abs(s.real[i] - ref[i].real()));
        worst = std::max(worst, std::abs(s.imag[i] - ref[i].imag()));
      }
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("dft2 is linear") {
  const Tensor x = random_tensor({3, 8, 6}, 1);
  const Tensor y = random_tensor({3, 8, 6}, 2);
  const double a = 0.7, b = -1.3;
  const auto combo = spectral::dft2(ops::add(ops::scale(x, a), ops::scale(y, b)));
  const auto sx = spectral::dft2(x);
  const auto sy = spectral::dft2(y);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(std::abs(combo.real[i] - (a * sx.real[i] + b * sy.real[i])) < 1e-12);
    CHECK(std::abs(combo.imag[i] - (a * sx.imag[i] + b * sy.imag[i])) < 1e-12);
  }
}

TEST_CASE("phase conventions") {
  const spectral::Spectrum s{Tensor({1, 1, 4}, {3.0, -2.0, 0.0, -2.0}),
                             Tensor({1, 1, 4}, {0.0, 0.0, 0.0, -0.0})};
  const Tensor p = spectral::phase(s);
  CHECK(p[0] == 0.0);
  CHECK(p[1] == std::numbers::pi);
  CHECK(p[2] == 0.0);
  CHECK(p[3] == std::numbers::pi);

  const auto spec = spectral::dft2(random_tensor({3, 7, 8}, 3));
  const Tensor spec_phase = spectral::phase(spec);
  for (double v : spec_phase.data()) {
    CHECK(v > -std::numbers::pi);
    CHECK(v <= std::numbers::pi);
  }
}

TEST_CASE("amplitude cases") {
  const spectral::Spectrum zero{Tensor::zeros({1, 3, 3}), Tensor::zeros({1, 3, 3})};
  const Tensor zero_amp = spectral::amplitude(zero);
  for (double v : zero_amp.data()) CHECK(v == 0.0);

  const auto s = spectral::dft2(random_tensor({2, 5, 6}, 4));
  const Tensor amp = spectral::amplitude(s);
  const cplx rot = std::polar(1.0, 0.83);
  std::vector<double> re(s.real.numel()), im(s.real.numel());
  for (std::size_t i = 0; i < re.size(); ++i) {
    const cplx z = cplx(s.real[i], s.imag[i]) * rot;
    re[i] = z.real();
    im[i] = z.imag();
  }
  const spectral::Spectrum rotated{Tensor(s.real.shape(), re), Tensor(s.real.shape(), im)};
  CHECK(max_abs_diff(spectral::amplitude(rotated).data(), amp.data()) < 1e-12);
  for (double v : amp.data()) CHECK(v >= 0.0);
}

TEST_CASE("idft2_from_polar round trip and recombination") {
  const Tensor img = random_tensor({3, 16, 16}, 5, 0.0, 1.0);
  const auto s = spectral::dft2(img);
  const Tensor back = spectral::idft2_from_polar(spectral::phase(s), spectral::amplitude(s));
  CHECK(max_abs_diff(back.data(), img.data()) < 1e-9);

  std::vector<double> amp(2 * 4 * 6, 0.0);
  amp[0] = 24 * 0.4;
  amp[24] = 24 * 0.9;
  const Tensor dc = spectral::idft2_from_polar(Tensor::zeros({2, 4, 6}), Tensor({2, 4, 6}, amp));
  for (std::size_t i = 0; i < 48; ++i) CHECK(std::abs(dc[i] - (i < 24 ? 0.4 : 0.9)) < 1e-12);

  const Tensor x = random_tensor({2, 6, 5}, 6, 0.0, 1.0);
  const Tensor y = random_tensor({2, 6, 5}, 7, 0.0, 1.0);
  const Tensor ph = spectral::phase(spectral::dft2(x));
  const Tensor am = spectral::amplitude(spectral::dft2(y));
  CHECK(max_abs_diff(spectral::idft2_from_polar(ph, am).data(), direct_polar_inverse(ph, am)) <
        1e-9);
}

TEST_CASE("spectral invariants on random images") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor img = random_tensor({3, 12, 10}, 100 + seed, 0.0, 1.0);
    const auto s = spectral::dft2(img);
    // Parseval per channel.
    for (std::size_t c = 0; c < 3; ++c) {
      double pixel = 0.0, spec = 0.0;
      for (std::size_t i = 0; i < 120; ++i) {
        pixel += img[c * 120 + i] * img[c * 120 + i];
        spec += s.real[c * 120 + i] * s.real[c * 120 + i] + s.imag[c * 120 + i] * s.imag[c * 120 + i];
      }
      CHECK(std::abs(pixel - spec / 120.0) <= 1e-9 * pixel);
    }
    // Conjugate symmetry of a real image's spectrum.
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t u = 0; u < 12; ++u)
        for (std::size_t v = 0; v < 10; ++v) {
          const std::size_t i = (c * 12 + u) * 10 + v;
          const std::size_t m = (c * 12 + spectral::mirror_index(u, 12)) * 10 +
                                spectral::mirror_index(v, 10);
          CHECK(std::abs(s.real[i] - s.real[m]) < 1e-9);
          CHECK(std::abs(s.imag[i] + s.imag[m]) < 1e-9);
        }
    const auto inv = spectral::idft2(s);
    for (double v : inv.imag.data()) CHECK(std::abs(v) < 1e-9);
    CHECK(max_abs_diff(inv.real.data(), img.data()) < 1e-9);

    const auto closed = spectral::recompose(spectral::phase(s), spectral::amplitude(s));
    CHECK(max_abs_diff(closed.real.data(), s.real.data()) < 1e-9);
    CHECK(max_abs_diff(closed.imag.data(), s.imag.data()) < 1e-9);
  }
}

TEST_CASE("center_shift") {
  const Tensor row({1, 1, 4}, {1, 2, 3, 4});
  const Tensor shifted = spectral::center_shift(row);
  const double expected[] = {3, 4, 1, 2};
  for (std::size_t i = 0; i < 4; ++i) CHECK(shifted[i] == expected[i]);

  const Tensor x = random_tensor({2, 6, 8}, 8);
  CHECK(bitwise_equal(spectral::center_shift(spectral::center_shift(x)).data(), x.data()));
  const Tensor odd = random_tensor({1, 5, 7}, 9);
  CHECK(bitwise_equal(spectral::center_unshift(spectral::center_shift(odd)).data(), odd.data()));

  std::vector<double> dc(35, 0.0);
  dc[0] = 1.0;
  const Tensor moved = spectral::center_shift(Tensor({1, 5, 7}, dc));
  CHECK(moved[2 * 7 + 3] == 1.0);
}

TEST_CASE("symmetrize_amplitude") {
  const Tensor small({1, 2, 2}, {0, 2, 4, 6});
  CHECK(bitwise_equal(spectral::symmetrize_amplitude(small).data(), small.data()));

  const Tensor amp = spectral::amplitude(spectral::dft2(random_tensor({3, 6, 7}, 10)));
  CHECK(max_abs_diff(spectral::symmetrize_amplitude(amp).data(), amp.data()) < 1e-12);

  const Tensor a = random_tensor({2, 6, 5}, 11);
  const Tensor once = spectral::symmetrize_amplitude(a);
  CHECK(bitwise_equal(spectral::symmetrize_amplitude(once).data(), once.data()));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t u = 0; u < 6; ++u)
      for (std::size_t v = 0; v < 5; ++v) {
        CHECK(once[(c * 6 + u) * 5 + v] ==
              once[(c * 6 + spectral::mirror_index(u, 6)) * 5 + spectral::mirror_index(v, 5)]);
      }
}

TEST_CASE("spectral ops pass grad_check") {
  const Tensor target = random_tensor({2, 6, 4}, 12);
  SUBCASE("idft2_from_polar w.r.t. phase and amplitude") {
    Tensor ph = random_tensor({2, 6, 4}, 13, -3.0, 3.0);
    Tensor am = random_tensor({2, 6, 4}, 14, 0.0, 5.0);
    Tensor inputs[] = {ph, am};
    const auto f = [&] {
      return ops::mse(spectral::idft2_from_polar(ph, spectral::symmetrize_amplitude(am)), target);
    };
    CHECK(grad_check(f, inputs, 1e-5).max_rel_error < 1e-4);
  }
  SUBCASE("image phase and amplitude w.r.t. the image") {
    // Odd extents: only the DC bin is self-conjugate, so no phase sits on the
    // +-pi branch cut.
    Tensor img = random_tensor({2, 5, 3}, 15, 0.0, 1.0);
    Tensor inputs[] = {img};
    const auto f = [&] {
      const Tensor p = spectral::image_phase(img);
      const Tensor a = spectral::image_amplitude(img);
      return ops::add(ops::sum(ops::mul(p, p)), ops::mean(ops::mul(a, a)));
    };
    CHECK(grad_check(f, inputs, 1e-5).max_rel_error < 1e-4);
  }
}
