#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "pagen/tensor.hpp"

// Channel-wise 2D discrete Fourier analysis and synthesis of [C,H,W] images.
// The forward transform is unnormalized,
//   F(u,v) = sum_{h,w} I(h,w) exp(-j 2 pi (h u / H + w v / W)),
// and the inverse carries the 1/(H W) factor. Spectral math runs in f64.
namespace pagen::spectral {

struct Spectrum {
  Tensor real;  // [C,H,W]
  Tensor imag;  // [C,H,W]

  std::size_t channels() const { return real.dim(0); }
  std::size_t height() const { return real.dim(1); }
  std::size_t width() const { return real.dim(2); }
};

Spectrum dft2(const Tensor& image);

// Inverse transform of a complex spectrum; both parts of the result are
// returned so callers can inspect the imaginary residue.
Spectrum idft2(const Spectrum& spectrum);

// Four-quadrant argument in (-pi, pi]; a bin with zero real and imaginary
// parts has phase 0.
Tensor phase(const Spectrum& s);
// sqrt(real^2 + imag^2), >= 0.
Tensor amplitude(const Spectrum& s);
// amplitude * exp(j phase) per bin.
Spectrum recompose(const Tensor& phase, const Tensor& amplitude);

// Real part of the inverse transform of amplitude * exp(j phase).
// Differentiable with respect to both arguments.
Tensor idft2_from_polar(const Tensor& phase, const Tensor& amplitude);

// Differentiable phase / amplitude of dft2(image) (gradients flow to the image;
// bins with zero modulus contribute no gradient).
Tensor image_phase(const Tensor& image);
Tensor image_amplitude(const Tensor& image);

// Cyclic shift by (floor(H/2), floor(W/2)) moving the DC bin to the center,
// and its exact inverse.
Tensor center_shift(const Tensor& x);
Tensor center_unshift(const Tensor& x);

// out(u,v) = (a(u,v) + a((H-u) mod H, (W-v) mod W)) / 2. Differentiable.
Tensor symmetrize_amplitude(const Tensor& a);

// Index of the conjugate partner of bin (u,v).
inline std::size_t mirror_index(std::size_t i, std::size_t n) { return (n - i) % n; }

// In-place 2D transform of a row-major H x W complex plane (no normalization).
void fft2_plane(std::complex<double>* plane, std::size_t height, std::size_t width, bool inverse);

}  // namespace pagen::spectral
