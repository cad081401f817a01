#pragma once

#include <cstddef>
#include <vector>

#include "pagen/tensor.hpp"

// Fourier domain adaptation baseline: a fixed low-frequency amplitude swap.
namespace pagen::fda {

struct FdaConfig {
  double beta = 0.01;  // side of the swapped square as a fraction of min(H,W)
};

void validate(const FdaConfig& cfg);

// Side of the swapped square, floor(beta * min(H,W)).
std::size_t band_side(std::size_t height, std::size_t width, double beta);

// Per-bin swap mask in the unshifted [H,W] frequency layout (row-major, 1 =
// swapped). The square of side s is anchored in the center-shifted plane at
// (floor(H/2) - floor(s/2), floor(W/2) - floor(s/2)); a bin is swapped when it
// or its conjugate partner falls inside the square.
std::vector<unsigned char> band_mask(std::size_t height, std::size_t width, double beta);

// Replaces the source amplitude inside the band with the target amplitude,
// keeps the source phase, and returns the real image before clipping.
Tensor fda_swap_unclipped(const Tensor& src, const Tensor& tgt, const FdaConfig& cfg);

// fda_swap_unclipped clipped to [0,1].
Tensor fda_swap(const Tensor& src, const Tensor& tgt, const FdaConfig& cfg);

}  // namespace pagen::fda
