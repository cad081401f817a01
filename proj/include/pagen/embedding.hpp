#pragma once

#include <cstddef>
#include <vector>

// Principal-component projection and centroid distances of embedding rows.
namespace pagen::embedding {

using Rows = std::vector<std::vector<double>>;

struct Projection {
  std::vector<double> mean;
  Rows components;  // k unit vectors, largest variance first
  Rows projected;   // one k-vector per input row
};

// Exact PCA of the row set. Each component's sign is fixed so that its
// largest-magnitude entry is positive.
Projection pca(const Rows& rows, std::size_t k);

std::vector<double> centroid(const Rows& rows);
double centroid_distance(const Rows& a, const Rows& b);

}  // namespace pagen::embedding
