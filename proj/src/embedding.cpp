#include "pagen/embedding.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "pagen/errors.hpp"

namespace pagen::embedding {

std::vector<double> centroid(const Rows& rows) {
  if (rows.empty()) throw DimensionError("centroid: no rows");
  std::vector<double> c(rows.front().size(), 0.0);
  for (const auto& r : rows) {
    if (r.size() != c.size()) throw DimensionError("centroid: ragged rows");
    for (std::size_t j = 0; j < c.size(); ++j) c[j] += r[j];
  }
  for (double& v : c) v /= static_cast<double>(rows.size());
  return c;
}

double centroid_distance(const Rows& a, const Rows& b) {
  const auto ca = centroid(a), cb = centroid(b);
  if (ca.size() != cb.size()) throw DimensionError("centroid_distance: width mismatch");
  double sq = 0.0;
  for (std::size_t j = 0; j < ca.size(); ++j) sq += (ca[j] - cb[j]) * (ca[j] - cb[j]);
  return std::sqrt(sq);
}

Projection pca(const Rows& rows, std::size_t k) {
  Projection p;
  p.mean = centroid(rows);
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(p.mean.size());
  if (k > p.mean.size()) throw DimensionError("pca: k exceeds the row width");
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rows[i][j] - p.mean[j];
  }
  const Eigen::MatrixXd cov = x.transpose() * x;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // Eigenvalues come back ascending.
  for (std::size_t c = 0; c < k; ++c) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - static_cast<Eigen::Index>(c));
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    p.components.emplace_back(v.data(), v.data() + d);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> row(k);
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < d; ++j) s += x(i, j) * p.components[c][j];
      row[c] = s;
    }
    p.projected.push_back(std::move(row));
  }
  return p;
}

}  // namespace pagen::embedding
