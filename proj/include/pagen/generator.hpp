#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pagen/tensor.hpp"

// Phase-guided amplitude generator: patch tokens of the source phase attend
// over patch tokens of both amplitude spectra, and the attended features are
// decoded into a new amplitude that is recombined with the source phase.
namespace pagen::generator {

struct PAGenConfig {
  std::size_t patch = 16;
  std::size_t hidden = 32;
  std::size_t heads = 4;
  std::size_t channels = 3;
  bool symmetrize = true;
  bool amp_log_scale = false;

  std::size_t head_dim() const { return hidden / heads; }
  bool operator==(const PAGenConfig&) const = default;
};

void validate(const PAGenConfig& cfg);
// Throws ConfigError unless both extents are positive multiples of the patch.
void validate_extents(const PAGenConfig& cfg, std::size_t height, std::size_t width);

// Patchify conv (C -> d_h, kernel = stride = p) followed by a depthwise 3x3.
struct BranchParams {
  Tensor patch_weight;  // [d_h, C, p, p]
  Tensor patch_bias;    // [d_h]
  Tensor dw_weight;     // [d_h, 1, 3, 3]
  Tensor dw_bias;       // [d_h]
};

struct PAGenParams {
  PAGenConfig config;
  BranchParams q, k_s, k_t, v_s, v_t;
  Tensor out_weight;       // [C, d_h, 1, 1]
  Tensor out_bias;         // [C]
  Tensor log_temperature;  // [heads]; temperature = exp(log_temperature)

  // Every trainable tensor with its checkpoint name, in declaration order.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> tensors() const;
  // Rebinds the tensor called `name`; throws FormatError for unknown names.
  void assign(const std::string& name, Tensor value);
};

PAGenParams init_params(const PAGenConfig& cfg, std::uint64_t seed);

std::size_t param_count(const PAGenConfig& cfg);
// Scalars actually stored across all tensors of `params`.
std::size_t stored_scalar_count(const PAGenParams& params);

std::vector<double> temperatures(const PAGenParams& params);

struct PAGenActivations {
  Tensor q;           // [heads, N_p, d_head]
  Tensor k;           // [heads, 2 N_p, d_head], source tokens first
  Tensor v;           // [heads, 2 N_p, d_head]
  Tensor attn;        // [heads, N_p, 2 N_p]
  Tensor a;           // [N_p, d_h]
  Tensor a_star;      // [C, H, W] decoded amplitude
  Tensor amplitude;   // [C, H, W] amplitude used for recombination
  Tensor pre_clip;    // [C, H, W]
};

struct PAGenOutput {
  Tensor adapted;  // [C, H, W] in [0,1]
  PAGenActivations acts;
};

PAGenOutput forward(const PAGenParams& params, const Tensor& src, const Tensor& tgt);

std::vector<Tensor> adapt_batch(const PAGenParams& params,
                                std::span<const std::pair<Tensor, Tensor>> pairs);

}  // namespace pagen::generator
