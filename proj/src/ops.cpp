#include "pagen/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/Core>

namespace pagen::ops {

using autograd::record;

namespace {

DType result_dtype(std::initializer_list<Tensor> inputs) {
  for (const Tensor& t : inputs) {
    if (t.dtype() == DType::f64) return DType::f64;
  }
  return DType::f32;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

// Output positions o along one axis whose input tap o*stride - pad + tap lies
// inside [0, n_in).
void valid_range(std::size_t tap, std::size_t pad, std::size_t stride, std::size_t n_in,
                 std::size_t n_out, std::size_t& lo, std::size_t& hi) {
  const long long first = static_cast<long long>(pad) - static_cast<long long>(tap);
  lo = first > 0 ? static_cast<std::size_t>((first + static_cast<long long>(stride) - 1) /
                                            static_cast<long long>(stride))
                 : 0;
  const long long last = static_cast<long long>(n_in + pad) - static_cast<long long>(tap) - 1;
  hi = last < 0 ? 0
                : std::min<std::size_t>(n_out, static_cast<std::size_t>(last) / stride + 1);
  if (hi < lo) hi = lo;
}

struct ConvGeometry {
  std::size_t batch, in_ch, height, width;
  std::size_t out_ch, kernel, stride, pad, groups;
  std::size_t out_h, out_w, in_per_group, out_per_group;
};

using MatrixMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatrixMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Calls fn(col_offset, in_offset, count) for every contiguous run of output
// positions touched by one (channel, ky, kx) row of the column matrix. The
// input offset advances by `stride` per output position.
template <typename Fn>
void for_each_run(const ConvGeometry& g, Fn&& fn) {
  const std::size_t k = g.kernel;
  std::vector<std::size_t> ylo(k), yhi(k), xlo(k), xhi(k);
  for (std::size_t t = 0; t < k; ++t) {
    valid_range(t, g.pad, g.stride, g.height, g.out_h, ylo[t], yhi[t]);
    valid_range(t, g.pad, g.stride, g.width, g.out_w, xlo[t], xhi[t]);
  }
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t ic = 0; ic < g.in_per_group; ++ic) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const std::size_t row = (ic * k + ky) * k + kx;
        const std::size_t n = xhi[kx] - xlo[kx];
        if (n == 0) continue;
        for (std::size_t oy = ylo[ky]; oy < yhi[ky]; ++oy) {
          const std::size_t iy = oy * g.stride + ky - g.pad;
          const std::size_t ix = xlo[kx] * g.stride + kx - g.pad;
          fn(row * plane + oy * g.out_w + xlo[kx], (ic * g.height + iy) * g.width + ix, n);
        }
      }
    }
  }
}

// Column matrix [Cin_g*k*k, out_h*out_w] of one group of one image; padded
// taps are zero.
void im2col(const ConvGeometry& g, const double* in, double* cols) {
  std::fill_n(cols, g.in_per_group * g.kernel * g.kernel * g.out_h * g.out_w, 0.0);
  const std::size_t s = g.stride;
  for_each_run(g, [&](std::size_t co, std::size_t io, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) cols[co + i] = in[io + i * s];
  });
}

// Scatter-adds a column-matrix gradient back onto the input gradient.
void col2im(const ConvGeometry& g, const double* cols, double* gin) {
  const std::size_t s = g.stride;
  for_each_run(g, [&](std::size_t co, std::size_t io, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) gin[io + i * s] += cols[co + i];
  });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              Conv2dOptions options) {
  if (input.rank() != 4) {
    throw DimensionError("conv2d: input must be [B,C,H,W], got " + shape_to_string(input.shape()));
  }
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3)) {
    throw DimensionError("conv2d: weight must be [Cout,Cin/groups,k,k], got " +
                         shape_to_string(weight.shape()));
  }
  if (options.stride == 0 || options.groups == 0) {
    throw ConfigError("conv2d: stride and groups must be positive");
  }
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.in_ch = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.out_ch = weight.dim(0);
  g.kernel = weight.dim(2);
  g.stride = options.stride;
  g.pad = options.padding;
  g.groups = options.groups;
  if (g.in_ch % g.groups != 0 || g.out_ch % g.groups != 0) {
    throw ConfigError("conv2d: groups=" + std::to_string(g.groups) + " does not divide channels " +
                      std::to_string(g.in_ch) + "->" + std::to_string(g.out_ch));
  }
  g.in_per_group = g.in_ch / g.groups;
  g.out_per_group = g.out_ch / g.groups;
  if (weight.dim(1) != g.in_per_group) {
    throw DimensionError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                         " input channels per group, input provides " +
                         std::to_string(g.in_per_group));
  }
  if (bias.rank() != 1 || bias.dim(0) != g.out_ch) {
    throw DimensionError("conv2d: bias must be [" + std::to_string(g.out_ch) + "], got " +
                         shape_to_string(bias.shape()));
  }
  if (g.kernel == g.stride && g.pad == 0 &&
      (g.height % g.stride != 0 || g.width % g.stride != 0)) {
    throw ConfigError("conv2d: patchify stride " + std::to_string(g.stride) +
                      " does not divide input extent " + std::to_string(g.height) + "x" +
                      std::to_string(g.width));
  }
  if (g.height + 2 * g.pad < g.kernel || g.width + 2 * g.pad < g.kernel) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  g.out_h = (g.height + 2 * g.pad - g.kernel) / g.stride + 1;
  g.out_w = (g.width + 2 * g.pad - g.kernel) / g.stride + 1;

  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t rows = g.in_per_group * g.kernel * g.kernel;
  std::vector<double> out(g.batch * g.out_ch * plane);
  const std::span<const double> bv = bias.data();
  // One column matrix [rows, plane] per (batch, group), kept for backward.
  auto cols = std::make_shared<std::vector<double>>(g.batch * g.groups * rows * plane);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      double* c = cols->data() + (b * g.groups + grp) * rows * plane;
      im2col(g, input.data().data() + (b * g.in_ch + grp * g.in_per_group) * g.height * g.width, c);
      double* o = out.data() + (b * g.out_ch + grp * g.out_per_group) * plane;
      for (std::size_t oc = 0; oc < g.out_per_group; ++oc) {
        std::fill_n(o + oc * plane, plane, bv[grp * g.out_per_group + oc]);
      }
      ConstMatrixMap wm(weight.data().data() + grp * g.out_per_group * rows,
                        static_cast<Eigen::Index>(g.out_per_group), static_cast<Eigen::Index>(rows));
      ConstMatrixMap cm(c, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(plane));
      MatrixMap om(o, static_cast<Eigen::Index>(g.out_per_group), static_cast<Eigen::Index>(plane));
      om.noalias() += wm * cm;
    }
  }

  auto in_impl = input.impl();
  auto w_impl = weight.impl();
  auto b_impl = bias.impl();
  return record(
      "conv2d", {g.batch, g.out_ch, g.out_h, g.out_w}, std::move(out), {input, weight, bias},
      [g, rows, cols, in_impl, w_impl, b_impl](std::span<const double> gout) {
        const std::size_t plane = g.out_h * g.out_w;
        const auto er = static_cast<Eigen::Index>(rows);
        const auto ep = static_cast<Eigen::Index>(plane);
        const auto eo = static_cast<Eigen::Index>(g.out_per_group);
        if (b_impl->requires_grad) {
          std::span<double> gb = grad_buffer(*b_impl);
          for (std::size_t b = 0; b < g.batch; ++b) {
            for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
              const double* p = gout.data() + (b * g.out_ch + oc) * plane;
              gb[oc] += std::accumulate(p, p + plane, 0.0);
            }
          }
        }
        std::vector<double> gcols(in_impl->requires_grad ? rows * plane : 0);
        for (std::size_t b = 0; b < g.batch; ++b) {
          for (std::size_t grp = 0; grp < g.groups; ++grp) {
            const double* c = cols->data() + (b * g.groups + grp) * rows * plane;
            ConstMatrixMap gm(gout.data() + (b * g.out_ch + grp * g.out_per_group) * plane, eo, ep);
            if (w_impl->requires_grad) {
              MatrixMap gw(grad_buffer(*w_impl).data() + grp * g.out_per_group * rows, eo, er);
              gw.noalias() += gm * ConstMatrixMap(c, er, ep).transpose();
            }
            if (in_impl->requires_grad) {
              MatrixMap gc(gcols.data(), er, ep);
              gc.noalias() = ConstMatrixMap(w_impl->data.data() + grp * g.out_per_group * rows, eo, er)
                                 .transpose() * gm;
              col2im(g, gcols.data(),
                     grad_buffer(*in_impl).data() +
                         (b * g.in_ch + grp * g.in_per_group) * g.height * g.width);
            }
          }
        }
      },
      result_dtype({input, weight, bias}));
}

namespace {

// c[m,n] += a[m,k] * b[k,n] with optional transposes of the stored operands.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n, bool trans_a, bool trans_b) {
  const auto em = static_cast<Eigen::Index>(m);
  const auto ek = static_cast<Eigen::Index>(k);
  const auto en = static_cast<Eigen::Index>(n);
  MatrixMap cm(c, em, en);
  if (!trans_a && !trans_b) {
    cm.noalias() += ConstMatrixMap(a, em, ek) * ConstMatrixMap(b, ek, en);
  } else if (trans_a && !trans_b) {
    cm.noalias() += ConstMatrixMap(a, ek, em).transpose() * ConstMatrixMap(b, ek, en);
  } else if (!trans_a) {
    cm.noalias() += ConstMatrixMap(a, em, ek) * ConstMatrixMap(b, en, ek).transpose();
  } else {
    cm.noalias() += ConstMatrixMap(a, ek, em).transpose() * ConstMatrixMap(b, en, ek).transpose();
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul: operands must have rank >= 2");
  }
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as[as.size() - 1];
  const std::size_t n = bs[bs.size() - 1];
  if (bs[bs.size() - 2] != k) {
    throw DimensionError("matmul: inner extents differ " + shape_to_string(as) + " x " +
                         shape_to_string(bs));
  }
  const bool shared_b = bs.size() == 2;
  if (!shared_b && !std::equal(as.begin(), as.end() - 2, bs.begin(), bs.end() - 2)) {
    throw DimensionError("matmul: batch extents differ " + shape_to_string(as) + " x " +
                         shape_to_string(bs));
  }
  const std::size_t batch = a.numel() / (m * k);
  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    gemm_acc(a.data().data() + i * m * k, b.data().data() + (shared_b ? 0 : i * k * n),
             out.data() + i * m * n, m, k, n, false, false);
  }
  auto a_impl = a.impl();
  auto b_impl = b.impl();
  return record(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [=](std::span<const double> g) {
        if (a_impl->requires_grad) {
          double* ga = grad_buffer(*a_impl).data();
          for (std::size_t i = 0; i < batch; ++i) {
            // ga = g * b^T
            gemm_acc(g.data() + i * m * n, b_impl->data.data() + (shared_b ? 0 : i * k * n),
                     ga + i * m * k, m, n, k, false, true);
          }
        }
        if (b_impl->requires_grad) {
          double* gb = grad_buffer(*b_impl).data();
          for (std::size_t i = 0; i < batch; ++i) {
            // gb = a^T * g
            gemm_acc(a_impl->data.data() + i * m * k, g.data() + i * m * n,
                     gb + (shared_b ? 0 : i * k * n), k, m, n, true, false);
          }
        }
      },
      result_dtype({a, b}));
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last2: rank must be >= 2");
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, std::span<const std::size_t>(axes));
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw DimensionError("softmax_lastdim: empty last dimension");
  }
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<double> y(x.numel());
  const double* xv = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv + r * n;
    double* out = y.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = std::exp(in[i] - mx);
      total += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= total;
  }
  auto x_impl = x.impl();
  std::vector<double> saved = y;
  return record(
      "softmax_lastdim", x.shape(), std::move(y), {x},
      [x_impl, saved = std::move(saved), n, rows](std::span<const double> g) {
        double* gx = grad_buffer(*x_impl).data();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* yr = saved.data() + r * n;
          const double* gr = g.data() + r * n;
          double dot = 0.0;
          for (std::size_t i = 0; i < n; ++i) dot += gr[i] * yr[i];
          for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += yr[i] * (gr[i] - dot);
        }
      },
      result_dtype({x}));
}

namespace {

struct LerpTap {
  std::size_t lo, hi;
  double frac;
};

std::vector<LerpTap> corner_aligned_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  for (std::size_t o = 0; o < out; ++o) {
    if (in == 1 || out == 1) {
      taps[o] = {0, 0, 0.0};
      continue;
    }
    const double pos = static_cast<double>(o) * static_cast<double>(in - 1) /
                       static_cast<double>(out - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    if (lo >= in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[o] = {lo, hi, pos - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 4) {
    throw DimensionError("upsample_bilinear: input must be [B,C,h,w], got " +
                         shape_to_string(x.shape()));
  }
  if (out_h == 0 || out_w == 0) throw DimensionError("upsample_bilinear: empty output size");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t h = x.dim(2);
  const std::size_t w = x.dim(3);
  const auto ty = corner_aligned_taps(h, out_h);
  const auto tx = corner_aligned_taps(w, out_w);
  std::vector<double> out(planes * out_h * out_w);
  const double* xv = x.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* in = xv + p * h * w;
    double* o = out.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const LerpTap& yt = ty[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const LerpTap& xt = tx[ox];
        const double top = in[yt.lo * w + xt.lo] * (1.0 - xt.frac) + in[yt.lo * w + xt.hi] * xt.frac;
        const double bot = in[yt.hi * w + xt.lo] * (1.0 - xt.frac) + in[yt.hi * w + xt.hi] * xt.frac;
        o[oy * out_w + ox] = top * (1.0 - yt.frac) + bot * yt.frac;
      }
    }
  }
  auto x_impl = x.impl();
  return record(
      "upsample_bilinear", {x.dim(0), x.dim(1), out_h, out_w}, std::move(out), {x},
      [=](std::span<const double> g) {
        double* gx = grad_buffer(*x_impl).data();
        for (std::size_t p = 0; p < planes; ++p) {
          double* gi = gx + p * h * w;
          const double* go = g.data() + p * out_h * out_w;
          for (std::size_t oy = 0; oy < out_h; ++oy) {
            const LerpTap& yt = ty[oy];
            for (std::size_t ox = 0; ox < out_w; ++ox) {
              const LerpTap& xt = tx[ox];
              const double v = go[oy * out_w + ox];
              const double top = v * (1.0 - yt.frac);
              const double bot = v * yt.frac;
              gi[yt.lo * w + xt.lo] += top * (1.0 - xt.frac);
              gi[yt.lo * w + xt.hi] += top * xt.frac;
              gi[yt.hi * w + xt.lo] += bot * (1.0 - xt.frac);
              gi[yt.hi * w + xt.hi] += bot * xt.frac;
            }
          }
        }
      },
      result_dtype({x}));
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no parts");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  bool any_f64 = false;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) {
        throw DimensionError("concat: extent mismatch on axis " + std::to_string(d) + ": " +
                             shape_to_string(s) + " vs " + shape_to_string(first));
      }
    }
    out_shape[axis] += s[axis];
    any_f64 = any_f64 || p.dtype() == DType::f64;
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> widths;
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const Tensor& p : parts) {
    widths.push_back(p.dim(axis) * inner);
    impls.push_back(p.impl());
  }
  const std::size_t row = out_shape[axis] * inner;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const double* src = parts[i].data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * widths[i], widths[i], out.data() + o * row + offset);
    }
    offset += widths[i];
  }

  auto backward = [impls, widths, outer, row](std::span<const double> g) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < impls.size(); ++i) {
      if (impls[i]->requires_grad) {
        double* gi = grad_buffer(*impls[i]).data();
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = g.data() + o * row + off;
          for (std::size_t j = 0; j < widths[i]; ++j) gi[o * widths[i] + j] += src[j];
        }
      }
      off += widths[i];
    }
  };
  return record("concat", std::move(out_shape), std::move(out), parts, std::move(backward),
                any_f64 ? DType::f64 : DType::f32);
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

std::vector<Tensor> split(const Tensor& x, std::span<const std::size_t> extents,
                          std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("split: axis out of range");
  if (std::accumulate(extents.begin(), extents.end(), std::size_t{0}) != s[axis]) {
    throw DimensionError("split: extents do not sum to axis extent " + std::to_string(s[axis]));
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t row = s[axis] * inner;
  std::vector<Tensor> pieces;
  std::size_t offset = 0;
  auto x_impl = x.impl();
  for (std::size_t e : extents) {
    Shape ps = s;
    ps[axis] = e;
    const std::size_t width = e * inner;
    std::vector<double> out(outer * width);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(x.data().data() + o * row + offset, width, out.data() + o * width);
    }
    pieces.push_back(record(
        "split", std::move(ps), std::move(out), {x},
        [x_impl, outer, row, offset, width](std::span<const double> g) {
          double* gx = grad_buffer(*x_impl).data();
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t j = 0; j < width; ++j) gx[o * row + offset + j] += g[o * width + j];
          }
        },
        x.dtype()));
    offset += width;
  }
  return pieces;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                         shape_to_string(shape));
  }
  auto x_impl = x.impl();
  std::vector<double> values(x.data().begin(), x.data().end());
  return record(
      "reshape", std::move(shape), std::move(values), {x},
      [x_impl](std::span<const double> g) {
        std::span<double> gx = grad_buffer(*x_impl);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      },
      x.dtype());
}

namespace {

// For each output flat index, the input flat index it reads.
std::vector<std::size_t> permutation_gather(const Shape& in_shape,
                                            std::span<const std::size_t> axes) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t d = rank; d-- > 1;) in_strides[d - 1] = in_strides[d] * in_shape[d];
  Shape out_shape(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out_shape[d] = in_shape[axes[d]];
    strides[d] = in_strides[axes[d]];
  }
  const std::size_t n = shape_numel(in_shape);
  std::vector<std::size_t> gather(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < n; ++i) {
    gather[i] = src;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      src += strides[d];
      if (idx[d] < out_shape[d]) break;
      src -= strides[d] * idx[d];
      idx[d] = 0;
    }
  }
  return gather;
}

}  // namespace

Tensor permute(const Tensor& x, std::span<const std::size_t> axes) {
  const Shape& s = x.shape();
  if (axes.size() != s.size()) throw DimensionError("permute: axes/rank mismatch");
  std::vector<bool> seen(s.size(), false);
  Shape out_shape(s.size());
  for (std::size_t d = 0; d < axes.size(); ++d) {
    if (axes[d] >= s.size() || seen[axes[d]]) throw DimensionError("permute: invalid axes");
    seen[axes[d]] = true;
    out_shape[d] = s[axes[d]];
  }
  auto gather = permutation_gather(s, axes);
  std::vector<double> out(gather.size());
  const double* xv = x.data().data();
  for (std::size_t i = 0; i < gather.size(); ++i) out[i] = xv[gather[i]];
  auto x_impl = x.impl();
  return record(
      "permute", std::move(out_shape), std::move(out), {x},
      [x_impl, gather = std::move(gather)](std::span<const double> g) {
        double* gx = grad_buffer(*x_impl).data();
        for (std::size_t i = 0; i < gather.size(); ++i) gx[gather[i]] += g[i];
      },
      x.dtype());
}

Tensor permute(const Tensor& x, std::initializer_list<std::size_t> axes) {
  return permute(x, std::span<const std::size_t>(axes.begin(), axes.size()));
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return record(
      "add", a.shape(), std::move(out), {a, b},
      [ai, bi](std::span<const double> g) {
        for (auto* impl : {ai.get(), bi.get()}) {
          if (!impl->requires_grad) continue;
          std::span<double> gx = grad_buffer(*impl);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
      },
      result_dtype({a, b}));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return record(
      "sub", a.shape(), std::move(out), {a, b},
      [ai, bi](std::span<const double> g) {
        if (ai->requires_grad) {
          std::span<double> ga = grad_buffer(*ai);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (bi->requires_grad) {
          std::span<double> gb = grad_buffer(*bi);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      },
      result_dtype({a, b}));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return record(
      "mul", a.shape(), std::move(out), {a, b},
      [ai, bi](std::span<const double> g) {
        if (ai->requires_grad) {
          std::span<double> ga = grad_buffer(*ai);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
        }
        if (bi->requires_grad) {
          std::span<double> gb = grad_buffer(*bi);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
        }
      },
      result_dtype({a, b}));
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  auto xi = x.impl();
  return record(
      "scale", x.shape(), std::move(out), {x},
      [xi, factor](std::span<const double> g) {
        std::span<double> gx = grad_buffer(*xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
      },
      x.dtype());
}

Tensor add_scalar(const Tensor& x, double value) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + value;
  auto xi = x.impl();
  return record(
      "add_scalar", x.shape(), std::move(out), {x},
      [xi](std::span<const double> g) {
        std::span<double> gx = grad_buffer(*xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      },
      x.dtype());
}

Tensor divide_slices(const Tensor& x, const Tensor& divisors) {
  if (x.rank() == 0 || divisors.rank() != 1 || divisors.dim(0) != x.dim(0)) {
    throw DimensionError("divide_slices: divisors " + shape_to_string(divisors.shape()) +
                         " do not match leading axis of " + shape_to_string(x.shape()));
  }
  const std::size_t slices = x.dim(0);
  const std::size_t width = x.numel() / slices;
  std::vector<double> out(x.numel());
  for (std::size_t s = 0; s < slices; ++s) {
    const double d = divisors[s];
    if (d == 0.0) throw NumericError("divide_slices: zero divisor");
    for (std::size_t j = 0; j < width; ++j) out[s * width + j] = x[s * width + j] / d;
  }
  auto xi = x.impl();
  auto di = divisors.impl();
  return record(
      "divide_slices", x.shape(), std::move(out), {x, divisors},
      [xi, di, slices, width](std::span<const double> g) {
        for (std::size_t s = 0; s < slices; ++s) {
          const double d = di->data[s];
          if (xi->requires_grad) {
            double* gx = grad_buffer(*xi).data();
            for (std::size_t j = 0; j < width; ++j) gx[s * width + j] += g[s * width + j] / d;
          }
          if (di->requires_grad) {
            double acc = 0.0;
            for (std::size_t j = 0; j < width; ++j) acc += g[s * width + j] * xi->data[s * width + j];
            grad_buffer(*di)[s] -= acc / (d * d);
          }
        }
      },
      result_dtype({x, divisors}));
}

namespace {

// Elementwise op whose derivative is expressed through input and output values.
template <typename F, typename D>
Tensor unary(const char* name, const Tensor& x, F f, D dfdx) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  auto xi = x.impl();
  std::vector<double> saved = out;
  return record(
      name, x.shape(), std::move(out), {x},
      [xi, saved = std::move(saved), dfdx](std::span<const double> g) {
        std::span<double> gx = grad_buffer(*xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xi->data[i], saved[i]);
      },
      x.dtype());
}

}  // namespace

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); },
               [](double, double y) { return y; });
}

Tensor log1p(const Tensor& x) {
  return unary("log1p", x, [](double v) { return std::log1p(v); },
               [](double v, double) { return 1.0 / (1.0 + v); });
}

Tensor expm1(const Tensor& x) {
  return unary("expm1", x, [](double v) { return std::expm1(v); },
               [](double, double y) { return y + 1.0; });
}

Tensor silu(const Tensor& x) {
  return unary(
      "silu", x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor clip(const Tensor& x, double lo, double hi) {
  return unary(
      "clip", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  auto xi = x.impl();
  return record(
      "sum", {}, {total}, {x},
      [xi](std::span<const double> g) {
        for (double& v : grad_buffer(*xi)) v += g[0];
      },
      x.dtype());
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  const double n = static_cast<double>(x.numel());
  double total = 0.0;
  for (double v : x.data()) total += v;
  auto xi = x.impl();
  return record(
      "mean", {}, {total / n}, {x},
      [xi, n](std::span<const double> g) {
        for (double& v : grad_buffer(*xi)) v += g[0] / n;
      },
      x.dtype());
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  if (a.numel() == 0) throw DimensionError("mse: empty tensors");
  const double n = static_cast<double>(a.numel());
  double total = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    total += d * d;
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return record(
      "mse", {}, {total / n}, {a, b},
      [ai, bi, n](std::span<const double> g) {
        const double c = 2.0 * g[0] / n;
        double* ga = ai->requires_grad ? grad_buffer(*ai).data() : nullptr;
        double* gb = bi->requires_grad ? grad_buffer(*bi).data() : nullptr;
        for (std::size_t i = 0; i < ai->data.size(); ++i) {
          const double d = c * (ai->data[i] - bi->data[i]);
          if (ga) ga[i] += d;
          if (gb) gb[i] -= d;
        }
      },
      result_dtype({a, b}));
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  require_same_shape(logits, targets, "bce_with_logits");
  if (logits.numel() == 0) throw DimensionError("bce_with_logits: empty tensors");
  const double n = static_cast<double>(logits.numel());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    const double x = logits[i], y = targets[i];
    // max(x,0) - x*y + log(1 + exp(-|x|))
    total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  auto li = logits.impl();
  auto ti = targets.impl();
  return record(
      "bce_with_logits", {}, {total / n}, {logits},
      [li, ti, n](std::span<const double> g) {
        std::span<double> gl = grad_buffer(*li);
        for (std::size_t i = 0; i < gl.size(); ++i) {
          const double s = 1.0 / (1.0 + std::exp(-li->data[i]));
          gl[i] += g[0] * (s - ti->data[i]) / n;
        }
      },
      logits.dtype());
}

Tensor masked_l1(const Tensor& pred, const Tensor& target, std::span<const unsigned char> mask) {
  require_same_shape(pred, target, "masked_l1");
  if (mask.size() != pred.numel()) {
    throw DimensionError("masked_l1: mask has " + std::to_string(mask.size()) +
                         " entries for " + std::to_string(pred.numel()) + " elements");
  }
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    total += std::abs(pred[i] - target[i]);
    ++count;
  }
  const double n = count ? static_cast<double>(count) : 1.0;
  auto pi = pred.impl();
  auto ti = target.impl();
  std::vector<unsigned char> m(mask.begin(), mask.end());
  return record(
      "masked_l1", {}, {total / n}, {pred},
      [pi, ti, n, m = std::move(m)](std::span<const double> g) {
        std::span<double> gp = grad_buffer(*pi);
        for (std::size_t i = 0; i < m.size(); ++i) {
          if (!m[i]) continue;
          const double d = pi->data[i] - ti->data[i];
          gp[i] += g[0] * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n;
        }
      },
      pred.dtype());
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(1) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_to_string(logits.shape()) +
                         " do not match " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t k = logits.dim(0), cols = logits.dim(1);
  std::vector<double> probs(k * cols, 0.0);
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t n = 0; n < cols; ++n) {
    if (labels[n] < 0) continue;
    if (static_cast<std::size_t>(labels[n]) >= k) {
      throw DimensionError("cross_entropy: label " + std::to_string(labels[n]) + " out of range");
    }
    double mx = logits[n];
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, logits[c * cols + n]);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(logits[c * cols + n] - mx);
    for (std::size_t c = 0; c < k; ++c) probs[c * cols + n] = std::exp(logits[c * cols + n] - mx) / z;
    total += mx + std::log(z) - logits[static_cast<std::size_t>(labels[n]) * cols + n];
    ++count;
  }
  const double denom = count ? static_cast<double>(count) : 1.0;
  auto li = logits.impl();
  std::vector<int> lab(labels.begin(), labels.end());
  return record(
      "cross_entropy", {}, {total / denom}, {logits},
      [li, denom, k, cols, lab = std::move(lab), probs = std::move(probs)](std::span<const double> g) {
        std::span<double> gl = grad_buffer(*li);
        for (std::size_t n = 0; n < cols; ++n) {
          if (lab[n] < 0) continue;
          for (std::size_t c = 0; c < k; ++c) {
            const double onehot = static_cast<int>(c) == lab[n] ? 1.0 : 0.0;
            gl[c * cols + n] += g[0] * (probs[c * cols + n] - onehot) / denom;
          }
        }
      },
      logits.dtype());
}

}  // namespace pagen::ops
