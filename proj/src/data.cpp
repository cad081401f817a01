#include "pagen/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "pagen/spectral.hpp"

namespace pagen::data {

void validate(const TargetStyle& style) {
  if (!(style.lowpass_strength >= 0.0) || !(style.gamma > 0.0) || !(style.noise_sigma >= 0.0)) {
    throw ConfigError("target style: need lowpass_strength >= 0, gamma > 0, noise_sigma >= 0");
  }
  for (double g : style.color_cast) {
    if (!(g >= 0.0)) throw ConfigError("target style: color cast gains must be >= 0");
  }
}

void validate(const DatasetSpec& spec, std::size_t multiple) {
  if (spec.n_source == 0 || spec.n_target == 0) {
    throw ConfigError("dataset: n_source and n_target must be >= 1");
  }
  if (spec.height < 16 || spec.width < 16 || spec.height % multiple != 0 ||
      spec.width % multiple != 0) {
    throw ConfigError("dataset: image size " + std::to_string(spec.height) + "x" +
                      std::to_string(spec.width) + " must be >= 16 and divisible by " +
                      std::to_string(multiple));
  }
  if (spec.n_classes < 3) throw ConfigError("dataset: n_classes must be >= 3");
  validate(spec.style);
}

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(purpose)};
  return std::mt19937_64(seq);
}

std::uint64_t noise_seed(std::uint64_t seed, std::uint64_t index) {
  return stream(seed, index, 1)();
}

bool covers(int shape, const Box& b, double px, double py) {
  switch (shape) {
    case kRectangle:
      return px >= b.x1 && px < b.x2 && py >= b.y1 && py < b.y2;
    case kEllipse: {
      const double cx = 0.5 * (b.x1 + b.x2), cy = 0.5 * (b.y1 + b.y2);
      const double rx = 0.5 * (b.x2 - b.x1), ry = 0.5 * (b.y2 - b.y1);
      const double dx = (px - cx) / rx, dy = (py - cy) / ry;
      return dx * dx + dy * dy <= 1.0;
    }
    default: {
      // Apex at the top center, base along the bottom edge.
      if (py < b.y1 || py >= b.y2) return false;
      const double t = (py - b.y1) / (b.y2 - b.y1);
      const double half = 0.5 * (b.x2 - b.x1) * t;
      const double cx = 0.5 * (b.x1 + b.x2);
      return px >= cx - half && px <= cx + half;
    }
  }
}

}  // namespace

SceneSample generate_content(const DatasetSpec& spec, std::size_t index) {
  if (index >= spec.size()) {
    throw UsageError("generate_scene: index " + std::to_string(index) + " out of range [0, " +
                     std::to_string(spec.size()) + ")");
  }
  auto rng = stream(spec.seed, index, 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t h = spec.height, w = spec.width, plane = h * w;
  std::vector<double> img(3 * plane);

  // Background: base color plus two oriented gratings and a soft gradient.
  double base[3];
  for (double& b : base) b = 0.3 + 0.4 * unit(rng);
  const double f1 = 0.05 + 0.2 * unit(rng), a1 = 2.0 * std::numbers::pi * unit(rng);
  const double f2 = 0.05 + 0.2 * unit(rng), a2 = 2.0 * std::numbers::pi * unit(rng);
  const double p1 = 2.0 * std::numbers::pi * unit(rng), p2 = 2.0 * std::numbers::pi * unit(rng);
  const double gx = 0.15 * (unit(rng) - 0.5), gy = 0.15 * (unit(rng) - 0.5);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double u1 = std::cos(a1) * static_cast<double>(x) + std::sin(a1) * static_cast<double>(y);
      const double u2 = std::cos(a2) * static_cast<double>(x) + std::sin(a2) * static_cast<double>(y);
      const double tex = 0.06 * std::sin(f1 * u1 + p1) + 0.04 * std::sin(f2 * u2 + p2) +
                         gx * (static_cast<double>(x) / static_cast<double>(w) - 0.5) +
                         gy * (static_cast<double>(y) / static_cast<double>(h) - 0.5);
      for (std::size_t c = 0; c < 3; ++c) img[c * plane + y * w + x] = base[c] + tex;
    }
  }

  std::uniform_int_distribution<int> count_dist(1, 4);
  std::uniform_int_distribution<int> class_dist(0, 2);
  const int n_shapes = count_dist(rng);
  const double min_side = std::max(10.0, 0.18 * static_cast<double>(std::min(h, w)));
  const double max_side = 0.45 * static_cast<double>(std::min(h, w));
  std::vector<Box> boxes;
  std::vector<int> classes;
  for (int s = 0; s < n_shapes; ++s) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double bw = std::floor(min_side + (max_side - min_side) * unit(rng));
      const double bh = std::floor(min_side + (max_side - min_side) * unit(rng));
      const double x1 = std::floor((static_cast<double>(w) - bw) * unit(rng));
      const double y1 = std::floor((static_cast<double>(h) - bh) * unit(rng));
      const Box box{x1, y1, x1 + bw, y1 + bh};
      const bool overlaps = std::any_of(boxes.begin(), boxes.end(), [&](const Box& o) {
        return box.x1 < o.x2 && o.x1 < box.x2 && box.y1 < o.y2 && o.y1 < box.y2;
      });
      if (overlaps) continue;
      const int cls = class_dist(rng);
      // Shape color clearly separated from the background brightness.
      const double bg = (base[0] + base[1] + base[2]) / 3.0;
      const double shift = (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.25 + 0.15 * unit(rng));
      double color[3];
      for (std::size_t c = 0; c < 3; ++c) {
        color[c] = std::clamp(bg + shift + 0.2 * (unit(rng) - 0.5), 0.0, 1.0);
      }
      for (std::size_t y = static_cast<std::size_t>(box.y1); y < static_cast<std::size_t>(box.y2); ++y) {
        for (std::size_t x = static_cast<std::size_t>(box.x1); x < static_cast<std::size_t>(box.x2); ++x) {
          if (!covers(cls, box, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) continue;
          for (std::size_t c = 0; c < 3; ++c) img[c * plane + y * w + x] = color[c];
        }
      }
      boxes.push_back(box);
      classes.push_back(cls);
      break;
    }
  }
  for (double& v : img) v = std::clamp(v, 0.0, 1.0);
  const Domain domain = index < spec.n_source ? Domain::source : Domain::target;
  return SceneSample(Tensor({3, h, w}, std::move(img)), std::move(boxes), std::move(classes),
                     domain);
}

SceneSample generate_scene(const DatasetSpec& spec, std::size_t index) {
  SceneSample s = generate_content(spec, index);
  if (s.domain == Domain::target) {
    s.image = apply_target_style(s.image, spec.style, noise_seed(spec.seed, index));
  }
  return s;
}

Tensor apply_target_style(const Tensor& image, const TargetStyle& style,
                          std::uint64_t noise_seed) {
  validate(style);
  if (image.rank() != 3) {
    throw DimensionError("apply_target_style: expected [C,H,W], got " +
                         shape_to_string(image.shape()));
  }
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2), plane = h * w;
  std::vector<double> out(image.data().begin(), image.data().end());

  if (style.lowpass_strength > 0.0) {
    const auto spec = spectral::dft2(image);
    const Tensor phase = spectral::phase(spec);
    const Tensor amplitude = spectral::amplitude(spec);
    std::vector<double> amp(amplitude.data().begin(), amplitude.data().end());
    for (std::size_t u = 0; u < h; ++u) {
      // Signed frequency index, normalized so the axis Nyquist bin sits at 1.
      const double fu = (u <= h / 2 ? static_cast<double>(u) : static_cast<double>(u) - static_cast<double>(h)) /
                        (0.5 * static_cast<double>(h));
      for (std::size_t v = 0; v < w; ++v) {
        const double fv = (v <= w / 2 ? static_cast<double>(v) : static_cast<double>(v) - static_cast<double>(w)) /
                          (0.5 * static_cast<double>(w));
        const double gain = std::exp(-style.lowpass_strength * (fu * fu + fv * fv));
        for (std::size_t c = 0; c < ch; ++c) amp[c * plane + u * w + v] *= gain;
      }
    }
    autograd::NoGradGuard no_grad;
    const Tensor back = spectral::idft2_from_polar(phase, Tensor(image.shape(), std::move(amp)));
    out.assign(back.data().begin(), back.data().end());
    for (double& v : out) v = std::clamp(v, 0.0, 1.0);
  }
  if (style.gamma != 1.0) {
    for (double& v : out) v = std::pow(v, style.gamma);
  }
  for (std::size_t c = 0; c < ch; ++c) {
    const double g = style.color_cast[c % 3];
    if (g == 1.0) continue;
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] *= g;
  }
  if (style.noise_sigma > 0.0) {
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> noise(0.0, style.noise_sigma);
    for (double& v : out) v += noise(rng);
  }
  for (double& v : out) v = std::clamp(v, 0.0, 1.0);
  return Tensor(image.shape(), std::move(out), image.dtype());
}

Dataset generate_dataset(const DatasetSpec& spec) {
  validate(spec);
  Dataset d;
  d.spec = spec;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    SceneSample s = generate_scene(spec, i);
    (s.domain == Domain::source ? d.source : d.target).push_back(std::move(s));
  }
  return d;
}

// Same content rendered in both domains. Per bin, the squared change of the
// complex spectrum splits exactly into an amplitude term (A_t - A_s)^2 and a
// phase term 2 A_s A_t (1 - cos(phi_t - phi_s)); both sums are reported
// relative to the source spectral energy.
DomainGap measure_domain_gap(const DatasetSpec& spec, std::size_t n_images) {
  double amp = 0.0, phase = 0.0, energy = 0.0;
  for (std::size_t i = 0; i < n_images; ++i) {
    const SceneSample content = generate_content(spec, i);
    const Tensor styled = apply_target_style(content.image, spec.style, noise_seed(spec.seed, i));
    const auto s = spectral::dft2(content.image);
    const auto t = spectral::dft2(styled);
    const Tensor as = spectral::amplitude(s), at = spectral::amplitude(t);
    const Tensor ps = spectral::phase(s), pt = spectral::phase(t);
    for (std::size_t k = 0; k < as.numel(); ++k) {
      amp += (at[k] - as[k]) * (at[k] - as[k]);
      phase += 2.0 * as[k] * at[k] * (1.0 - std::cos(pt[k] - ps[k]));
      energy += as[k] * as[k];
    }
  }
  if (energy == 0.0) return {};
  return {amp / energy, phase / energy};
}

std::string write_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("write_ppm: expected [3,H,W], got " + shape_to_string(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + 3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double q = std::floor(std::clamp(image[c * plane + i], 0.0, 1.0) * 255.0 + 0.5);
      out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
    }
  }
  return out;
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(const std::string& bytes, std::size_t& pos, const char* field) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw FormatError(std::string("ppm: missing ") + field);
  return bytes.substr(start, pos - start);
}

std::size_t header_number(const std::string& bytes, std::size_t& pos, const char* field) {
  const std::string tok = header_token(bytes, pos, field);
  if (tok.size() > 9 || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw FormatError(std::string("ppm: bad ") + field + " \"" + tok + "\"");
  }
  return std::stoul(tok);
}

}  // namespace

Tensor read_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  if (header_token(bytes, pos, "magic") != "P6") throw FormatError("ppm: magic is not P6");
  const std::size_t w = header_number(bytes, pos, "width");
  const std::size_t h = header_number(bytes, pos, "height");
  const std::size_t maxval = header_number(bytes, pos, "maxval");
  if (w == 0 || h == 0) throw FormatError("ppm: zero width or height");
  if (maxval != 255) throw FormatError("ppm: maxval " + std::to_string(maxval) + " is not 255");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("ppm: missing separator after maxval");
  }
  ++pos;
  const std::size_t plane = h * w;
  if (bytes.size() - pos < 3 * plane) {
    throw FormatError("ppm: truncated payload, expected " + std::to_string(3 * plane) +
                      " bytes, found " + std::to_string(bytes.size() - pos));
  }
  std::vector<double> img(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      img[c * plane + i] = static_cast<unsigned char>(bytes[pos + 3 * i + c]) / 255.0;
    }
  }
  return Tensor({3, h, w}, std::move(img));
}

void save_ppm(const std::string& path, const Tensor& image) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  const std::string bytes = write_ppm(image);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write failed for " + path);
}

Tensor load_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return read_ppm(ss.str());
}

Tensor quantize(const Tensor& image) { return read_ppm(write_ppm(image)); }

void write_dataset(const DatasetSpec& spec, const std::string& dir) {
  validate(spec);
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "source");
  fs::create_directories(fs::path(dir) / "target");
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw FormatError("cannot write manifest in " + dir);
  manifest << "# index, domain, path, boxes (x1 y1 x2 y2 class; ...)\n";
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const SceneSample s = generate_scene(spec, i);
    const bool src = s.domain == Domain::source;
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.ppm", i);
    const std::string rel = std::string(src ? "source/" : "target/") + name;
    save_ppm((fs::path(dir) / rel).string(), s.image);
    manifest << i << ", " << (src ? "source" : "target") << ", " << rel << ",";
    for (std::size_t b = 0; b < s.boxes().size(); ++b) {
      const Box& box = s.boxes()[b];
      manifest << (b ? "; " : " ") << box.x1 << ' ' << box.y1 << ' ' << box.x2 << ' ' << box.y2
               << ' ' << s.classes()[b];
    }
    manifest << '\n';
  }
}

}  // namespace pagen::data
