#pragma once

#include "smac/knn.hpp"
#include "smac/point_cloud.hpp"

#include <Eigen/Sparse>

#include <filesystem>
#include <vector>

namespace smac {

// One triangle of the assembled local-triangulation soup: global corner
// indices, unmollified 3D edge lengths (l0 opposite v0, etc.) and the
// patch-agreement weight in (0, 1]. Kept so mollify() can re-assemble.
struct SoupTriangle {
  int v0, v1, v2;
  double l0, l1, l2;
  double weight;
};

// Discrete Laplace-Beltrami pair: sparse symmetric PSD stiffness L and
// diagonal mass M (per-point local surface area).
struct LaplacianPair {
  Eigen::SparseMatrix<double> stiffness;
  Eigen::VectorXd mass;
  Eigen::Index n = 0;
  std::vector<SoupTriangle> soup;
  double epsilon_fraction = 1e-4;
};

// Builds (L, M) from a point cloud: per point, project the K-neighborhood
// onto a PCA tangent plane, Delaunay-triangulate it, keep the triangles
// incident to the point, then assemble cotangent stiffness and one-third
// triangle-area mass from the deduplicated triangle soup. Lengths shorter
// than epsilon_fraction times the mean edge length are inflated before the
// cotangent weights are formed.
LaplacianPair build_laplacian(const PointCloud4D& cloud, const KnnGraph& graph,
                              double epsilon_fraction = 1e-4);

// Serial reference; agrees exactly with build_laplacian.
LaplacianPair build_laplacian_serial(const PointCloud4D& cloud, const KnnGraph& graph,
                                     double epsilon_fraction = 1e-4);

// Re-assembles the pair with a different mollification threshold.
LaplacianPair mollify(const LaplacianPair& pair, double epsilon_fraction);

// Throws unless the pair satisfies its invariants (symmetry, zero row sums,
// positive finite mass).
void check_laplacian(const LaplacianPair& pair);

// Debug dump as 0-based `row col value` triplet text files.
void dump_laplacian(const LaplacianPair& pair, const std::filesystem::path& stiffness_path,
                    const std::filesystem::path& mass_path);

} // namespace smac
