#pragma once

#include <Eigen/Dense>

#include <array>
#include <vector>

namespace smac::detail {

struct Tri2d {
  int a, b, c;
};

// Bowyer-Watson Delaunay triangulation of a small 2D point set. Points are
// inserted in index order; cocircular ties resolve to "outside", so the
// result is deterministic. Points closer than `merge_tol` to an already
// inserted point are skipped. Returns triangles over the input indices;
// empty when the input is (near-)collinear.
std::vector<Tri2d> delaunay2d(const std::vector<Eigen::Vector2d>& pts,
                              double merge_tol);

} // namespace smac::detail
