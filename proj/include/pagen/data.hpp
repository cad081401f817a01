#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pagen/scene.hpp"
#include "pagen/tensor.hpp"

// Procedural two-domain scenes, the target style transform, PPM images and
// dataset manifests.
namespace pagen::data {

inline constexpr int kRectangle = 0;
inline constexpr int kEllipse = 1;
inline constexpr int kTriangle = 2;

struct TargetStyle {
  double lowpass_strength = 4.0;
  double gamma = 1.4;
  std::array<double, 3> color_cast{0.9, 0.95, 1.1};
  double noise_sigma = 0.02;

  static TargetStyle neutral() { return {0.0, 1.0, {1.0, 1.0, 1.0}, 0.0}; }
  bool operator==(const TargetStyle&) const = default;
};

void validate(const TargetStyle& style);

struct DatasetSpec {
  std::size_t n_source = 500;
  std::size_t n_target = 500;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t n_classes = 3;
  TargetStyle style;
  std::uint64_t seed = 0;

  std::size_t size() const { return n_source + n_target; }
};

// Throws ConfigError unless both splits are non-empty, extents divide by
// `multiple`, and the class count covers the generated shape types.
void validate(const DatasetSpec& spec, std::size_t multiple = 1);

// Scene `index`: indices below n_source are source samples, the rest target
// samples with the style applied.
SceneSample generate_scene(const DatasetSpec& spec, std::size_t index);

// Unstyled scene content for `index` (what generate_scene returns before the
// style transform).
SceneSample generate_content(const DatasetSpec& spec, std::size_t index);

// Radial amplitude attenuation, gamma, per-channel gain and Gaussian noise
// (drawn from `noise_seed`), clipped to [0,1].
Tensor apply_target_style(const Tensor& image, const TargetStyle& style,
                          std::uint64_t noise_seed = 0);

struct Dataset {
  DatasetSpec spec;
  std::vector<SceneSample> source;
  std::vector<SceneSample> target;
};

Dataset generate_dataset(const DatasetSpec& spec);

// Amplitude-over-phase domain gap on matched content (see data.cpp).
struct DomainGap {
  double amplitude = 0.0;
  double phase = 0.0;
};
DomainGap measure_domain_gap(const DatasetSpec& spec, std::size_t n_images);

// Binary PPM with maxval 255; values are rounded half up.
std::string write_ppm(const Tensor& image);
Tensor read_ppm(const std::string& bytes);
void save_ppm(const std::string& path, const Tensor& image);
Tensor load_ppm(const std::string& path);
// The image read_ppm(write_ppm(x)) returns.
Tensor quantize(const Tensor& image);

// Writes source/ and target/ PPM files plus manifest.txt under `dir`.
void write_dataset(const DatasetSpec& spec, const std::string& dir);

}  // namespace pagen::data
