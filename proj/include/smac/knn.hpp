#pragma once

#include "smac/point_cloud.hpp"

#include <Eigen/Dense>

namespace smac {

// Exact k-nearest-neighbor structure. Rows are sorted by ascending distance,
// ties broken by lower point index; no self-index appears in a row.
struct KnnGraph {
  Eigen::MatrixXi neighbor_indices;   // n x K
  Eigen::MatrixXd neighbor_distances; // n x K
  int K = 0;

  Eigen::Index size() const { return neighbor_indices.rows(); }
};

// OpenMP kernel (default entry point).
KnnGraph build_knn(const PointCloud4D& cloud, int K);

// Serial reference implementation; must agree exactly with build_knn.
KnnGraph build_knn_serial(const PointCloud4D& cloud, int K);

// kNN over arbitrary row-point matrices (used by the GL baseline, which
// measures distances in 4D).
KnnGraph build_knn_points(const Eigen::MatrixXd& points, int K);

} // namespace smac
