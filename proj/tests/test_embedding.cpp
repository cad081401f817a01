#include <cmath>
#include <random>

#include "doctest.h"
#include "pagen/detect.hpp"
#include "pagen/embedding.hpp"
#include "pagen/errors.hpp"
#include "pagen/gradcheck_suite.hpp"
#include "test_util.hpp"

using namespace pagen;
using embedding::Rows;

TEST_CASE("pca of a symmetric pair") {
  const Rows rows = {{3.0, -4.0, 1.0}, {1.0, 4.0, 1.0}};
  const auto p = embedding::pca(rows, 1);
  CHECK(p.mean == std::vector<double>{2.0, 0.0, 1.0});
  // The difference (2,-8,0)/2 has norm sqrt(17); the sign puts +8 first.
  const double n = std::sqrt(17.0);
  CHECK(p.components[0][0] == doctest::Approx(-1.0 / n));
  CHECK(p.components[0][1] == doctest::Approx(4.0 / n));
  CHECK(p.components[0][2] == doctest::Approx(0.0));
  CHECK(p.projected[0][0] == doctest::Approx(-n));
  CHECK(p.projected[1][0] == doctest::Approx(n));
}

TEST_CASE("pca matches the closed-form 2x2 eigenbasis") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  Rows rows;
  for (int i = 0; i < 200; ++i) {
    const double a = 3.0 * g(rng), b = 0.5 * g(rng);
    rows.push_back({a + b + 10.0, 0.6 * a - b - 2.0});
  }
  const auto p = embedding::pca(rows, 2);
  double sxx = 0, syy = 0, sxy = 0;
  for (const auto& r : rows) {
    const double x = r[0] - p.mean[0], y = r[1] - p.mean[1];
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
  }
  const double theta = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
  double ux = std::cos(theta), uy = std::sin(theta);
  if (std::abs(uy) > std::abs(ux) ? uy < 0 : ux < 0) {
    ux = -ux;
    uy = -uy;
  }
  CHECK(p.components[0][0] == doctest::Approx(ux).epsilon(1e-10));
  CHECK(p.components[0][1] == doctest::Approx(uy).epsilon(1e-10));
  CHECK(p.components[0][0] * p.components[1][0] + p.components[0][1] * p.components[1][1] ==
        doctest::Approx(0.0).scale(1.0));
  double v0 = 0, v1 = 0;
  for (const auto& q : p.projected) {
    v0 += q[0] * q[0];
    v1 += q[1] * q[1];
  }
  CHECK(v0 >= v1);
  CHECK_THROWS_AS(embedding::pca(rows, 3), DimensionError);
}

TEST_CASE("centroid distance") {
  const Rows a = {{0.0, 0.0}, {2.0, 0.0}};
  const Rows b = {{1.0, 3.0}, {1.0, 5.0}};
  CHECK(embedding::centroid_distance(a, b) == doctest::Approx(4.0));
  CHECK(embedding::centroid_distance(a, a) == 0.0);
  CHECK_THROWS_AS(embedding::centroid({}), DimensionError);
  CHECK_THROWS_AS(embedding::centroid({{1.0}, {1.0, 2.0}}), DimensionError);
}

TEST_CASE("detector embeddings are deterministic per image") {
  const detect::DetectorParams det = detect::init_detector({}, 2);
  const Tensor img = testing::random_tensor({3, 32, 32}, 9, 0.0, 1.0);
  const Tensor other = testing::random_tensor({3, 32, 32}, 10, 0.0, 1.0);
  const std::vector<Tensor> images = {img, other, img};
  const auto rows = detect::embed(det, images);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].size() == det.config.stage_channels.back());
  CHECK(testing::bitwise_equal(rows[0], rows[2]));
  CHECK_FALSE(testing::bitwise_equal(rows[0], rows[1]));
}

TEST_CASE("gradcheck suite passes and localizes an injected fault") {
  const auto clean = run_gradcheck_suite();
  for (const auto& r : clean) {
    INFO(r.name);
    CHECK(r.passed);
    CHECK(r.coordinates > 0);
  }
  autograd::inject_backward_fault("exp");
  const auto faulty = run_gradcheck_suite();
  autograd::inject_backward_fault("");
  for (const auto& r : faulty) {
    INFO(r.name);
    if (r.name == "exp") CHECK_FALSE(r.passed);
    if (r.name == "silu" || r.name == "conv2d" || r.name == "matmul") CHECK(r.passed);
  }
}
