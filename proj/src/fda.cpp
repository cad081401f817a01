#include "pagen/fda.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pagen/spectral.hpp"

namespace pagen::fda {

void validate(const FdaConfig& cfg) {
  if (!(cfg.beta >= 0.0 && cfg.beta <= 1.0)) {
    throw ConfigError("fda beta must lie in [0,1], got " + std::to_string(cfg.beta));
  }
}

std::size_t band_side(std::size_t height, std::size_t width, double beta) {
  return static_cast<std::size_t>(std::floor(beta * static_cast<double>(std::min(height, width))));
}

std::vector<unsigned char> band_mask(std::size_t height, std::size_t width, double beta) {
  validate({beta});
  const std::size_t side = band_side(height, width, beta);
  std::vector<unsigned char> mask(height * width, 0);
  if (side == 0) return mask;
  const std::size_t top = height / 2 - side / 2;
  const std::size_t left = width / 2 - side / 2;
  const auto inside = [&](std::size_t u, std::size_t v) {
    // Position of unshifted bin (u,v) in the center-shifted plane.
    const std::size_t su = (u + height / 2) % height;
    const std::size_t sv = (v + width / 2) % width;
    return su >= top && su < top + side && sv >= left && sv < left + side;
  };
  for (std::size_t u = 0; u < height; ++u) {
    for (std::size_t v = 0; v < width; ++v) {
      if (inside(u, v) ||
          inside(spectral::mirror_index(u, height), spectral::mirror_index(v, width))) {
        mask[u * width + v] = 1;
      }
    }
  }
  return mask;
}

Tensor fda_swap_unclipped(const Tensor& src, const Tensor& tgt, const FdaConfig& cfg) {
  validate(cfg);
  if (src.rank() != 3 || src.shape() != tgt.shape()) {
    throw DimensionError("fda_swap: source " + shape_to_string(src.shape()) + " and target " +
                         shape_to_string(tgt.shape()) + " must be identical [C,H,W] shapes");
  }
  const std::size_t c = src.dim(0), h = src.dim(1), w = src.dim(2);
  const auto src_spec = spectral::dft2(src);
  const Tensor src_phase = spectral::phase(src_spec);
  const Tensor src_amp = spectral::amplitude(src_spec);
  const Tensor tgt_amp = spectral::amplitude(spectral::dft2(tgt));
  const auto mask = band_mask(h, w, cfg.beta);
  std::vector<double> mixed(src_amp.data().begin(), src_amp.data().end());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) {
      if (mask[i]) mixed[ch * h * w + i] = tgt_amp[ch * h * w + i];
    }
  }
  autograd::NoGradGuard no_grad;
  return spectral::idft2_from_polar(src_phase, Tensor(src.shape(), std::move(mixed)));
}

Tensor fda_swap(const Tensor& src, const Tensor& tgt, const FdaConfig& cfg) {
  Tensor raw = fda_swap_unclipped(src, tgt, cfg);
  std::vector<double> out(raw.data().begin(), raw.data().end());
  for (double& v : out) v = std::clamp(v, 0.0, 1.0);
  return Tensor(raw.shape(), std::move(out), src.dtype());
}

}  // namespace pagen::fda
