#include "pagen/generator.hpp"

#include <cmath>
#include <random>

#include "pagen/ops.hpp"
#include "pagen/spectral.hpp"

namespace pagen::generator {

void validate(const PAGenConfig& cfg) {
  if (cfg.patch == 0 || cfg.hidden == 0 || cfg.heads == 0 || cfg.channels == 0) {
    throw ConfigError("pagen: patch, hidden, heads and channels must be positive");
  }
  if (cfg.hidden % cfg.heads != 0) {
    throw ConfigError("pagen: heads (" + std::to_string(cfg.heads) + ") must divide hidden (" +
                      std::to_string(cfg.hidden) + ")");
  }
}

void validate_extents(const PAGenConfig& cfg, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0 || height % cfg.patch != 0 || width % cfg.patch != 0) {
    throw ConfigError("pagen: image extents " + std::to_string(height) + "x" +
                      std::to_string(width) + " are not divisible by patch " +
                      std::to_string(cfg.patch));
  }
}

namespace {

const char* const kBranchNames[] = {"q", "k_s", "k_t", "v_s", "v_t"};

std::vector<BranchParams*> branches(PAGenParams& p) {
  return {&p.q, &p.k_s, &p.k_t, &p.v_s, &p.v_t};
}

std::vector<const BranchParams*> branches(const PAGenParams& p) {
  return {&p.q, &p.k_s, &p.k_t, &p.v_s, &p.v_t};
}

Tensor uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), DType::f64, true);
}

Tensor run_branch(const BranchParams& b, const Tensor& spectrum, std::size_t patch,
                  std::size_t hidden) {
  const Shape& s = spectrum.shape();
  const Tensor x = ops::reshape(spectrum, {1, s[0], s[1], s[2]});
  const Tensor tokens = ops::conv2d(x, b.patch_weight, b.patch_bias, {patch, 0, 1});
  return ops::conv2d(tokens, b.dw_weight, b.dw_bias, {1, 1, hidden});
}

// [1, d_h, h, w] -> [heads, h*w, d_head]
Tensor to_heads(const Tensor& grid, std::size_t heads) {
  const std::size_t d = grid.dim(1), n = grid.dim(2) * grid.dim(3);
  return ops::permute(ops::reshape(grid, {heads, d / heads, n}), {0, 2, 1});
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> PAGenParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  const auto bs = branches(*this);
  for (std::size_t i = 0; i < bs.size(); ++i) {
    const std::string prefix = kBranchNames[i];
    out.emplace_back(prefix + ".patch.weight", bs[i]->patch_weight);
    out.emplace_back(prefix + ".patch.bias", bs[i]->patch_bias);
    out.emplace_back(prefix + ".dw.weight", bs[i]->dw_weight);
    out.emplace_back(prefix + ".dw.bias", bs[i]->dw_bias);
  }
  out.emplace_back("out.weight", out_weight);
  out.emplace_back("out.bias", out_bias);
  out.emplace_back("log_temperature", log_temperature);
  return out;
}

std::vector<Tensor> PAGenParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

void PAGenParams::assign(const std::string& name, Tensor value) {
  const auto bs = branches(*this);
  for (std::size_t i = 0; i < bs.size(); ++i) {
    const std::string prefix = std::string(kBranchNames[i]) + ".";
    if (name == prefix + "patch.weight") { bs[i]->patch_weight = std::move(value); return; }
    if (name == prefix + "patch.bias") { bs[i]->patch_bias = std::move(value); return; }
    if (name == prefix + "dw.weight") { bs[i]->dw_weight = std::move(value); return; }
    if (name == prefix + "dw.bias") { bs[i]->dw_bias = std::move(value); return; }
  }
  if (name == "out.weight") { out_weight = std::move(value); return; }
  if (name == "out.bias") { out_bias = std::move(value); return; }
  if (name == "log_temperature") { log_temperature = std::move(value); return; }
  throw FormatError("pagen: unknown parameter tensor \"" + name + "\"");
}

PAGenParams init_params(const PAGenConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  std::mt19937_64 rng(seed);
  PAGenParams p;
  p.config = cfg;
  const std::size_t c = cfg.channels, d = cfg.hidden, k = cfg.patch;
  for (BranchParams* b : branches(p)) {
    b->patch_weight = uniform({d, c, k, k}, c * k * k, rng);
    b->patch_bias = uniform({d}, c * k * k, rng);
    b->dw_weight = uniform({d, 1, 3, 3}, 9, rng);
    b->dw_bias = uniform({d}, 9, rng);
  }
  p.out_weight = uniform({c, d, 1, 1}, d, rng);
  p.out_bias = uniform({c}, d, rng);
  const double log_t = 0.5 * std::log(static_cast<double>(cfg.head_dim()));
  p.log_temperature = Tensor({cfg.heads}, std::vector<double>(cfg.heads, log_t), DType::f64, true);
  return p;
}

std::size_t param_count(const PAGenConfig& cfg) {
  validate(cfg);
  const std::size_t c = cfg.channels, d = cfg.hidden, p = cfg.patch;
  return 5 * (c * d * p * p + d + 9 * d + d) + (d * c + c) + cfg.heads;
}

std::size_t stored_scalar_count(const PAGenParams& params) {
  std::size_t n = 0;
  for (const Tensor& t : params.tensors()) n += t.numel();
  return n;
}

std::vector<double> temperatures(const PAGenParams& params) {
  std::vector<double> out;
  for (double v : params.log_temperature.data()) out.push_back(std::exp(v));
  return out;
}

PAGenOutput forward(const PAGenParams& params, const Tensor& src, const Tensor& tgt) {
  const PAGenConfig& cfg = params.config;
  if (src.rank() != 3 || src.shape() != tgt.shape() || src.dim(0) != cfg.channels) {
    throw DimensionError("pagen: source " + shape_to_string(src.shape()) + " and target " +
                         shape_to_string(tgt.shape()) + " must both be [" +
                         std::to_string(cfg.channels) + ",H,W]");
  }
  const std::size_t h = src.dim(1), w = src.dim(2);
  validate_extents(cfg, h, w);

  const Tensor src_phase = spectral::image_phase(src);
  Tensor src_amp = spectral::image_amplitude(src);
  Tensor tgt_amp = spectral::image_amplitude(tgt);
  if (cfg.amp_log_scale) {
    src_amp = ops::log1p(src_amp);
    tgt_amp = ops::log1p(tgt_amp);
  }

  const std::size_t d = cfg.hidden, heads = cfg.heads;
  const std::size_t gh = h / cfg.patch, gw = w / cfg.patch, np = gh * gw;
  PAGenActivations acts;
  acts.q = to_heads(run_branch(params.q, src_phase, cfg.patch, d), heads);
  const Tensor ks = to_heads(run_branch(params.k_s, src_amp, cfg.patch, d), heads);
  const Tensor kt = to_heads(run_branch(params.k_t, tgt_amp, cfg.patch, d), heads);
  const Tensor vs = to_heads(run_branch(params.v_s, src_amp, cfg.patch, d), heads);
  const Tensor vt = to_heads(run_branch(params.v_t, tgt_amp, cfg.patch, d), heads);
  acts.k = ops::concat({ks, kt}, 1);
  acts.v = ops::concat({vs, vt}, 1);

  const Tensor logits = ops::matmul(acts.q, ops::transpose_last2(acts.k));
  acts.attn = ops::softmax_lastdim(ops::divide_slices(logits, ops::exp(params.log_temperature)));
  const Tensor attended = ops::matmul(acts.attn, acts.v);  // [heads, N_p, d_head]
  acts.a = ops::reshape(ops::permute(attended, {1, 0, 2}), {np, d});

  const Tensor grid = ops::reshape(ops::permute(attended, {0, 2, 1}), {1, d, gh, gw});
  const Tensor up = ops::upsample_bilinear(grid, h, w);
  Tensor decoded = ops::reshape(ops::conv2d(up, params.out_weight, params.out_bias), {cfg.channels, h, w});
  if (cfg.amp_log_scale) decoded = ops::expm1(decoded);
  acts.a_star = decoded;
  acts.amplitude = cfg.symmetrize ? spectral::symmetrize_amplitude(decoded) : decoded;

  acts.pre_clip = spectral::idft2_from_polar(src_phase, acts.amplitude);
  PAGenOutput out;
  out.adapted = ops::clip(acts.pre_clip, 0.0, 1.0);
  out.acts = std::move(acts);
  return out;
}

std::vector<Tensor> adapt_batch(const PAGenParams& params,
                                std::span<const std::pair<Tensor, Tensor>> pairs) {
  for (const auto& [s, t] : pairs) {
    if (s.shape() != pairs.front().first.shape() || t.shape() != pairs.front().first.shape()) {
      throw DimensionError("adapt_batch: all images must share one shape, got " +
                           shape_to_string(s.shape()) + " / " + shape_to_string(t.shape()) +
                           " vs " + shape_to_string(pairs.front().first.shape()));
    }
  }
  std::vector<Tensor> out;
  out.reserve(pairs.size());
  for (const auto& [s, t] : pairs) out.push_back(forward(params, s, t).adapted);
  return out;
}

}  // namespace pagen::generator
