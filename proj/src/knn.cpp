#include "smac/knn.hpp"

#include "smac/error.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

namespace smac {

namespace {

// Fills row i of the graph with the K nearest points to row i of `pts`.
// Exact brute-force scan; ties broken by lower index so the result does not
// depend on evaluation order.
void knn_row(const Eigen::MatrixXd& pts, int K, Eigen::Index i, KnnGraph& graph,
             std::vector<std::pair<double, int>>& scratch) {
  const Eigen::Index n = pts.rows();
  scratch.clear();
  scratch.reserve(static_cast<size_t>(n - 1));
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j == i) continue;
    const double d2 = (pts.row(j) - pts.row(i)).squaredNorm();
    scratch.emplace_back(d2, static_cast<int>(j));
  }
  std::partial_sort(scratch.begin(), scratch.begin() + K, scratch.end());
  for (int k = 0; k < K; ++k) {
    graph.neighbor_indices(i, k) = scratch[static_cast<size_t>(k)].second;
    graph.neighbor_distances(i, k) = std::sqrt(scratch[static_cast<size_t>(k)].first);
  }
}

KnnGraph build_knn_impl(const Eigen::MatrixXd& pts, int K, bool parallel) {
  const Eigen::Index n = pts.rows();
  if (K < 1) throw ParamError("K must be >= 1");
  if (K >= n)
    throw ParamError("K = " + std::to_string(K) + " must be < n = " + std::to_string(n));

  KnnGraph graph;
  graph.K = K;
  graph.neighbor_indices.resize(n, K);
  graph.neighbor_distances.resize(n, K);

  if (parallel) {
#pragma omp parallel
    {
      std::vector<std::pair<double, int>> scratch;
#pragma omp for schedule(dynamic, 64)
      for (Eigen::Index i = 0; i < n; ++i) knn_row(pts, K, i, graph, scratch);
    }
  } else {
    std::vector<std::pair<double, int>> scratch;
    for (Eigen::Index i = 0; i < n; ++i) knn_row(pts, K, i, graph, scratch);
  }
  return graph;
}

} // namespace

KnnGraph build_knn(const PointCloud4D& cloud, int K) {
  return build_knn_impl(cloud.positions, K, true);
}

KnnGraph build_knn_serial(const PointCloud4D& cloud, int K) {
  return build_knn_impl(cloud.positions, K, false);
}

KnnGraph build_knn_points(const Eigen::MatrixXd& points, int K) {
  return build_knn_impl(points, K, true);
}

} // namespace smac
