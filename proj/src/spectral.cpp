#include "pagen/spectral.hpp"

#include <cmath>
#include <map>
#include <numbers>

namespace pagen::spectral {

using cplx = std::complex<double>;

namespace {

// 1D transform of a fixed length: iterative radix-2 for powers of two, a
// table-driven direct sum otherwise.
class Fft1d {
 public:
  explicit Fft1d(std::size_t n) : n_(n), pow2_(n > 0 && (n & (n - 1)) == 0), twiddle_(n) {
    for (std::size_t k = 0; k < n; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddle_[k] = cplx(std::cos(angle), std::sin(angle));
    }
    if (pow2_) {
      bitrev_.resize(n);
      std::size_t bits = 0;
      while ((std::size_t{1} << bits) < n) ++bits;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = 0;
        for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
        bitrev_[i] = r;
      }
    }
  }

  // Transforms data[0..n) in place; scratch must hold n values.
  void run(cplx* data, bool inverse, cplx* scratch) const {
    if (n_ <= 1) return;
    if (pow2_) {
      for (std::size_t i = 0; i < n_; ++i) {
        if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
      }
      for (std::size_t len = 2; len <= n_; len <<= 1) {
        const std::size_t half = len / 2;
        const std::size_t step = n_ / len;
        for (std::size_t start = 0; start < n_; start += len) {
          for (std::size_t j = 0; j < half; ++j) {
            const cplx w = inverse ? std::conj(twiddle_[j * step]) : twiddle_[j * step];
            const cplx u = data[start + j];
            const cplx v = data[start + j + half] * w;
            data[start + j] = u + v;
            data[start + j + half] = u - v;
          }
        }
      }
      return;
    }
    for (std::size_t k = 0; k < n_; ++k) {
      cplx acc = 0.0;
      std::size_t idx = 0;
      for (std::size_t j = 0; j < n_; ++j) {
        const cplx w = inverse ? std::conj(twiddle_[idx]) : twiddle_[idx];
        acc += data[j] * w;
        idx += k;
        if (idx >= n_) idx -= n_;
      }
      scratch[k] = acc;
    }
    std::copy(scratch, scratch + n_, data);
  }

 private:
  std::size_t n_;
  bool pow2_;
  std::vector<cplx> twiddle_;
  std::vector<std::size_t> bitrev_;
};

const Fft1d& plan(std::size_t n) {
  thread_local std::map<std::size_t, Fft1d> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, Fft1d(n)).first;
  return it->second;
}

void require_chw(const Tensor& t, const char* op) {
  if (t.rank() != 3 || t.numel() == 0) {
    throw DimensionError(std::string(op) + ": expected a non-empty [C,H,W] tensor, got " +
                         shape_to_string(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

// Forward transform of a real [C,H,W] array into C complex planes.
std::vector<cplx> forward_planes(std::span<const double> values, std::size_t c, std::size_t h,
                                 std::size_t w) {
  std::vector<cplx> planes(values.begin(), values.end());
  for (std::size_t ch = 0; ch < c; ++ch) fft2_plane(planes.data() + ch * h * w, h, w, false);
  return planes;
}

double principal_phase(double re, double im) {
  if (re == 0.0 && im == 0.0) return 0.0;
  const double p = std::atan2(im, re);
  return p == -std::numbers::pi ? std::numbers::pi : p;
}

}  // namespace

void fft2_plane(cplx* plane, std::size_t height, std::size_t width, bool inverse) {
  const Fft1d& rows = plan(width);
  const Fft1d& cols = plan(height);
  std::vector<cplx> scratch(std::max(height, width));
  std::vector<cplx> column(height);
  for (std::size_t r = 0; r < height; ++r) rows.run(plane + r * width, inverse, scratch.data());
  for (std::size_t c = 0; c < width; ++c) {
    for (std::size_t r = 0; r < height; ++r) column[r] = plane[r * width + c];
    cols.run(column.data(), inverse, scratch.data());
    for (std::size_t r = 0; r < height; ++r) plane[r * width + c] = column[r];
  }
}

Spectrum dft2(const Tensor& image) {
  require_chw(image, "dft2");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const auto planes = forward_planes(image.data(), c, h, w);
  std::vector<double> re(planes.size()), im(planes.size());
  for (std::size_t i = 0; i < planes.size(); ++i) {
    re[i] = planes[i].real();
    im[i] = planes[i].imag();
  }
  return {Tensor(image.shape(), std::move(re)), Tensor(image.shape(), std::move(im))};
}

Spectrum idft2(const Spectrum& s) {
  require_chw(s.real, "idft2");
  require_same(s.real, s.imag, "idft2");
  const std::size_t c = s.channels(), h = s.height(), w = s.width();
  std::vector<cplx> planes(s.real.numel());
  for (std::size_t i = 0; i < planes.size(); ++i) planes[i] = cplx(s.real[i], s.imag[i]);
  for (std::size_t ch = 0; ch < c; ++ch) fft2_plane(planes.data() + ch * h * w, h, w, true);
  const double norm = 1.0 / static_cast<double>(h * w);
  std::vector<double> re(planes.size()), im(planes.size());
  for (std::size_t i = 0; i < planes.size(); ++i) {
    re[i] = planes[i].real() * norm;
    im[i] = planes[i].imag() * norm;
  }
  return {Tensor(s.real.shape(), std::move(re)), Tensor(s.real.shape(), std::move(im))};
}

Tensor phase(const Spectrum& s) {
  require_same(s.real, s.imag, "phase");
  std::vector<double> out(s.real.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = principal_phase(s.real[i], s.imag[i]);
  return Tensor(s.real.shape(), std::move(out));
}

Tensor amplitude(const Spectrum& s) {
  require_same(s.real, s.imag, "amplitude");
  std::vector<double> out(s.real.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::sqrt(s.real[i] * s.real[i] + s.imag[i] * s.imag[i]);
  }
  return Tensor(s.real.shape(), std::move(out));
}

Spectrum recompose(const Tensor& phase, const Tensor& amplitude) {
  require_same(phase, amplitude, "recompose");
  std::vector<double> re(phase.numel()), im(phase.numel());
  for (std::size_t i = 0; i < re.size(); ++i) {
    re[i] = amplitude[i] * std::cos(phase[i]);
    im[i] = amplitude[i] * std::sin(phase[i]);
  }
  return {Tensor(phase.shape(), std::move(re)), Tensor(phase.shape(), std::move(im))};
}

Tensor idft2_from_polar(const Tensor& phase, const Tensor& amplitude) {
  require_chw(phase, "idft2_from_polar");
  require_same(phase, amplitude, "idft2_from_polar");
  const std::size_t c = phase.dim(0), h = phase.dim(1), w = phase.dim(2);
  const double norm = 1.0 / static_cast<double>(h * w);
  std::vector<cplx> planes(phase.numel());
  for (std::size_t i = 0; i < planes.size(); ++i) planes[i] = std::polar(1.0, phase[i]) * amplitude[i];
  for (std::size_t ch = 0; ch < c; ++ch) fft2_plane(planes.data() + ch * h * w, h, w, true);
  std::vector<double> out(planes.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = planes[i].real() * norm;

  auto p_impl = phase.impl();
  auto a_impl = amplitude.impl();
  return autograd::record(
      "idft2_from_polar", phase.shape(), std::move(out), {phase, amplitude},
      [p_impl, a_impl, c, h, w, norm](std::span<const double> g) {
        const auto spec = forward_planes(g, c, h, w);
        const std::vector<double>& ph = p_impl->data;
        const std::vector<double>& amp = a_impl->data;
        double* ga = a_impl->requires_grad ? grad_buffer(*a_impl).data() : nullptr;
        double* gp = p_impl->requires_grad ? grad_buffer(*p_impl).data() : nullptr;
        for (std::size_t i = 0; i < spec.size(); ++i) {
          const double cs = std::cos(ph[i]);
          const double sn = std::sin(ph[i]);
          const double gr = spec[i].real();
          const double gi = spec[i].imag();
          if (ga) ga[i] += norm * (cs * gr + sn * gi);
          if (gp) gp[i] -= norm * amp[i] * (sn * gr - cs * gi);
        }
      });
}

Tensor image_amplitude(const Tensor& image) {
  require_chw(image, "image_amplitude");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  auto planes = forward_planes(image.data(), c, h, w);
  std::vector<double> out(planes.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(planes[i]);
  auto x_impl = image.impl();
  return autograd::record(
      "image_amplitude", image.shape(), std::move(out), {image},
      [x_impl, planes = std::move(planes), c, h, w](std::span<const double> g) {
        std::vector<cplx> z(planes.size());
        for (std::size_t i = 0; i < z.size(); ++i) {
          const double m = std::abs(planes[i]);
          z[i] = m > 0.0 ? g[i] * std::conj(planes[i]) / m : cplx(0.0);
        }
        for (std::size_t ch = 0; ch < c; ++ch) fft2_plane(z.data() + ch * h * w, h, w, false);
        std::span<double> gx = grad_buffer(*x_impl);
        for (std::size_t i = 0; i < z.size(); ++i) gx[i] += z[i].real();
      });
}

Tensor image_phase(const Tensor& image) {
  require_chw(image, "image_phase");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  auto planes = forward_planes(image.data(), c, h, w);
  std::vector<double> out(planes.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = principal_phase(planes[i].real(), planes[i].imag());
  }
  auto x_impl = image.impl();
  return autograd::record(
      "image_phase", image.shape(), std::move(out), {image},
      [x_impl, planes = std::move(planes), c, h, w](std::span<const double> g) {
        std::vector<cplx> z(planes.size());
        for (std::size_t i = 0; i < z.size(); ++i) {
          const double m2 = std::norm(planes[i]);
          z[i] = m2 > 0.0 ? g[i] * std::conj(planes[i]) / m2 : cplx(0.0);
        }
        for (std::size_t ch = 0; ch < c; ++ch) fft2_plane(z.data() + ch * h * w, h, w, false);
        std::span<double> gx = grad_buffer(*x_impl);
        for (std::size_t i = 0; i < z.size(); ++i) gx[i] += z[i].imag();
      });
}

namespace {

Tensor cyclic_shift(const Tensor& x, bool forward) {
  require_chw(x, "center_shift");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t dy = forward ? h / 2 : h - h / 2;
  const std::size_t dx = forward ? w / 2 : w - w / 2;
  std::vector<double> out(x.numel());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t u = 0; u < h; ++u) {
      for (std::size_t v = 0; v < w; ++v) {
        out[(ch * h + (u + dy) % h) * w + (v + dx) % w] = x[(ch * h + u) * w + v];
      }
    }
  }
  return Tensor(x.shape(), std::move(out), x.dtype());
}

}  // namespace

Tensor center_shift(const Tensor& x) { return cyclic_shift(x, true); }
Tensor center_unshift(const Tensor& x) { return cyclic_shift(x, false); }

namespace {

void symmetrize_into(const double* a, double* out, std::size_t c, std::size_t h, std::size_t w,
                     bool accumulate) {
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* p = a + ch * h * w;
    double* o = out + ch * h * w;
    for (std::size_t u = 0; u < h; ++u) {
      const std::size_t mu = mirror_index(u, h);
      for (std::size_t v = 0; v < w; ++v) {
        const double s = 0.5 * (p[u * w + v] + p[mu * w + mirror_index(v, w)]);
        o[u * w + v] = accumulate ? o[u * w + v] + s : s;
      }
    }
  }
}

}  // namespace

Tensor symmetrize_amplitude(const Tensor& a) {
  require_chw(a, "symmetrize_amplitude");
  const std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  std::vector<double> out(a.numel());
  symmetrize_into(a.data().data(), out.data(), c, h, w, false);
  auto a_impl = a.impl();
  // The averaging map is self-adjoint, so its backward is the same map.
  return autograd::record(
      "symmetrize_amplitude", a.shape(), std::move(out), {a},
      [a_impl, c, h, w](std::span<const double> g) {
        symmetrize_into(g.data(), grad_buffer(*a_impl).data(), c, h, w, true);
      },
      a.dtype());
}

}  // namespace pagen::spectral
