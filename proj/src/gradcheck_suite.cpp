#include "pagen/gradcheck_suite.hpp"

#include <functional>
#include <random>

#include "pagen/detect.hpp"
#include "pagen/generator.hpp"
#include "pagen/gradcheck.hpp"
#include "pagen/ops.hpp"
#include "pagen/spectral.hpp"

namespace pagen {

namespace {

Tensor uniform(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), DType::f64, true);
}

// Reduces an op output to a scalar through a fixed random projection, so
// that no output coordinate gets a symmetric weight.
Tensor project(const Tensor& y, std::uint64_t seed) {
  const Tensor w = uniform(y.shape(), seed).detach();
  return ops::sum(ops::mul(y, w));
}

struct Check {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<Tensor()> f;
  std::size_t max_coords = 0;
};

std::vector<Check> build_checks() {
  std::vector<Check> c;
  const auto unary = [&](const std::string& name, Shape s, double lo, double hi,
                         std::function<Tensor(const Tensor&)> op) {
    Tensor x = uniform(s, c.size() + 100, lo, hi);
    c.push_back({name, {x}, [x, op, seed = c.size()] { return project(op(x), seed); }});
  };
  const auto binary = [&](const std::string& name, Shape sa, Shape sb,
                          std::function<Tensor(const Tensor&, const Tensor&)> op) {
    Tensor a = uniform(sa, c.size() + 200), b = uniform(sb, c.size() + 300);
    c.push_back({name, {a, b}, [a, b, op, seed = c.size()] { return project(op(a, b), seed); }});
  };

  {
    Tensor x = uniform({2, 3, 7, 6}, 1), w = uniform({4, 3, 3, 3}, 2), b = uniform({4}, 3);
    c.push_back({"conv2d", {x, w, b}, [=] {
                   return project(ops::conv2d(x, w, b, {.stride = 2, .padding = 1}), 4);
                 }});
    Tensor xd = uniform({1, 4, 5, 5}, 5), wd = uniform({4, 1, 3, 3}, 6), bd = uniform({4}, 7);
    c.push_back({"conv2d depthwise", {xd, wd, bd}, [=] {
                   return project(ops::conv2d(xd, wd, bd, {.padding = 1, .groups = 4}), 8);
                 }});
    Tensor xp = uniform({1, 3, 8, 8}, 9), wp = uniform({2, 3, 4, 4}, 10), bp = uniform({2}, 11);
    c.push_back({"conv2d patchify", {xp, wp, bp}, [=] {
                   return project(ops::conv2d(xp, wp, bp, {.stride = 4}), 12);
                 }});
  }
  binary("matmul", {2, 3, 4}, {2, 4, 5}, ops::matmul);
  binary("matmul shared", {2, 3, 4}, {4, 2}, ops::matmul);
  unary("transpose_last2", {2, 3, 4}, -1, 1, ops::transpose_last2);
  unary("softmax_lastdim", {3, 5}, -2, 2, ops::softmax_lastdim);
  unary("upsample_bilinear", {1, 2, 3, 4}, -1, 1,
        [](const Tensor& x) { return ops::upsample_bilinear(x, 7, 5); });
  binary("concat", {2, 3}, {2, 4},
         [](const Tensor& a, const Tensor& b) { return ops::concat({a, b}, 1); });
  unary("split", {5, 3}, -1, 1, [](const Tensor& x) {
    const std::size_t ext[] = {2, 3};
    const auto parts = ops::split(x, ext, 0);
    return ops::concat({ops::scale(parts[0], 2.0), parts[1]}, 0);
  });
  unary("reshape", {2, 6}, -1, 1, [](const Tensor& x) { return ops::reshape(x, {3, 4}); });
  unary("permute", {2, 3, 4}, -1, 1, [](const Tensor& x) { return ops::permute(x, {2, 0, 1}); });
  binary("add", {3, 4}, {3, 4}, ops::add);
  binary("sub", {3, 4}, {3, 4}, ops::sub);
  binary("mul", {3, 4}, {3, 4}, ops::mul);
  unary("scale", {3, 4}, -1, 1, [](const Tensor& x) { return ops::scale(x, -1.7); });
  unary("add_scalar", {3, 4}, -1, 1, [](const Tensor& x) { return ops::add_scalar(x, 0.3); });
  {
    Tensor x = uniform({3, 2, 2}, 20), d = uniform({3}, 21, 0.5, 2.0);
    c.push_back({"divide_slices", {x, d}, [=] { return project(ops::divide_slices(x, d), 22); }});
  }
  unary("exp", {3, 4}, -2, 2, ops::exp);
  unary("log1p", {3, 4}, 0, 3, ops::log1p);
  unary("expm1", {3, 4}, -2, 2, ops::expm1);
  unary("silu", {3, 4}, -3, 3, ops::silu);
  // Values keep a margin from the clip bounds where the derivative jumps.
  unary("clip", {4, 4}, -0.4, 1.4, [](const Tensor& x) { return ops::clip(x, -0.5, 1.5); });
  unary("sum", {3, 4}, -1, 1, [](const Tensor& x) { return ops::scale(ops::sum(x), 1.3); });
  unary("mean", {3, 4}, -1, 1, [](const Tensor& x) { return ops::scale(ops::mean(x), 1.3); });
  binary("mse", {3, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) { return ops::mse(a, b); });
  {
    Tensor z = uniform({2, 5}, 30, -3, 3);
    const Tensor t = uniform({2, 5}, 31, 0, 1).detach();
    c.push_back({"bce_with_logits", {z}, [=] { return ops::bce_with_logits(z, t); }});
    Tensor p = uniform({4, 3}, 32);
    const Tensor y = uniform({4, 3}, 33).detach();
    const std::vector<unsigned char> mask{1, 0, 1, 1, 1, 0, 0, 1, 1, 0, 1, 1};
    c.push_back({"masked_l1", {p}, [=] { return ops::masked_l1(p, y, mask); }});
    Tensor l = uniform({3, 5}, 34, -2, 2);
    const std::vector<int> labels{0, 2, -1, 1, 2};
    c.push_back({"cross_entropy", {l}, [=] { return ops::cross_entropy(l, labels); }});
  }
  {
    Tensor ph = uniform({2, 6, 4}, 40, -3, 3), am = uniform({2, 6, 4}, 41, 0, 5);
    c.push_back({"idft2_from_polar", {ph, am},
                 [=] { return project(spectral::idft2_from_polar(ph, am), 42); }});
    Tensor a = uniform({2, 5, 4}, 43, 0, 3);
    c.push_back({"symmetrize_amplitude", {a},
                 [=] { return project(spectral::symmetrize_amplitude(a), 44); }});
    // Odd extents keep every phase off the +-pi branch cut except at DC.
    Tensor img = uniform({2, 5, 3}, 45, 0, 1);
    c.push_back({"image_phase", {img}, [=] { return project(spectral::image_phase(img), 46); }});
    c.push_back({"image_amplitude", {img},
                 [=] { return project(spectral::image_amplitude(img), 47); }});
  }
  {
    generator::PAGenConfig g;
    g.patch = 4;
    g.hidden = 8;
    g.heads = 2;
    const auto params = generator::init_params(g, 50);
    const Tensor src = uniform({3, 8, 8}, 51, 0, 1).detach();
    const Tensor tgt = uniform({3, 8, 8}, 52, 0, 1).detach();
    c.push_back({"pagen forward", params.tensors(), [=] {
                   return project(generator::forward(params, src, tgt).acts.pre_clip, 53);
                 }});
    const auto full = generator::init_params({}, 54);
    const Tensor s32 = uniform({3, 32, 32}, 55, 0, 1).detach();
    const Tensor t32 = uniform({3, 32, 32}, 56, 0, 1).detach();
    c.push_back({"pagen forward default config", full.tensors(),
                 [=] { return project(generator::forward(full, s32, t32).acts.pre_clip, 57); },
                 48});
  }
  {
    generator::PAGenConfig g;
    g.patch = 4;
    g.hidden = 4;
    g.heads = 2;
    const auto gen = generator::init_params(g, 60);
    detect::DetectorConfig dc;
    dc.stage_channels = {4, 6};
    dc.head_hidden = 4;
    dc.n_classes = 2;
    const auto det = detect::init_detector(dc, 61);
    const Tensor src = uniform({3, 8, 8}, 62, 0.2, 0.8).detach();
    const Tensor tgt = uniform({3, 8, 8}, 63, 0.2, 0.8).detach();
    const std::vector<Box> boxes{{1, 1, 6, 6}, {4, 0, 8, 3}};
    const std::vector<int> classes{1, 0};
    const detect::CellTargets targets = detect::encode_targets(boxes, classes, 8, 8, 2, 2);
    std::vector<Tensor> inputs = gen.tensors();
    for (const Tensor& t : det.tensors()) inputs.push_back(t);
    c.push_back({"pagen + detector + total loss", inputs, [=] {
                   const Tensor adapted = generator::forward(gen, src, tgt).acts.pre_clip;
                   const auto ps = detect::backbone_forward(det, src);
                   const auto pa = detect::backbone_forward(det, adapted);
                   const Tensor l_det = ops::add(
                       detect::detection_loss(detect::head_forward(det, ps), targets).total(),
                       detect::detection_loss(detect::head_forward(det, pa), targets).total());
                   return detect::total_loss(l_det, detect::feature_alignment_loss(ps, pa), 1.0);
                 }});
  }
  return c;
}

}  // namespace

std::vector<OpCheckResult> run_gradcheck_suite(double tolerance, double eps) {
  std::vector<OpCheckResult> out;
  for (Check& check : build_checks()) {
    const GradCheckResult r = grad_check(check.f, check.inputs, eps, check.max_coords, 7);
    out.push_back({check.name, r.max_rel_error, r.coordinates_checked,
                   r.max_rel_error < tolerance});
  }
  return out;
}

}  // namespace pagen
