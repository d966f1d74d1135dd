#pragma once

#include "smac/knn.hpp"
#include "smac/laplacian.hpp"
#include "smac/point_cloud.hpp"
#include "smac/rng.hpp"
#include "smac/simulation.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>

namespace smac::test {

// Planar grid in the z = 0 plane.
inline PointCloud4D grid_cloud(int nx, int ny, double spacing = 1.0) {
  PointCloud4D cloud;
  cloud.positions.resize(nx * ny, 3);
  cloud.color.resize(nx * ny);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      const int id = i * ny + j;
      cloud.positions.row(id) = Eigen::RowVector3d(i * spacing, j * spacing, 0.0);
      cloud.color(id) = 0.1 * i + 0.05 * j;
    }
  cloud.id = "grid";
  return cloud;
}

inline PointCloud4D sphere_cloud(int n, std::uint64_t seed = 7) {
  return make_nominal(NominalShape::sphere, n, seed).base_cloud;
}

// Randomly modulated sphere with a smooth color field plus noise; a generic
// closed-surface fixture in general position.
inline PointCloud4D bumpy_sphere(int n, std::uint64_t seed) {
  PointCloud4D cloud = sphere_cloud(n, seed);
  auto rng = make_engine(derive_seed(seed, 99));
  std::uniform_real_distribution<double> amp(0.12, 0.25);
  std::uniform_int_distribution<int> freq(2, 5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double a = amp(rng);
  const int f1 = freq(rng), f2 = freq(rng);
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    Eigen::RowVector3d p = cloud.positions.row(i);
    const double theta = std::atan2(p.y(), p.x());
    const double phi = std::acos(std::clamp(p.z(), -1.0, 1.0));
    const double r = 1.0 + a * std::sin(f1 * theta) * std::sin(f2 * phi);
    cloud.positions.row(i) = r * p;
    cloud.color(i) = 2.0 + std::sin(2 * theta) + p.z() + 0.05 * gauss(rng);
  }
  cloud.id = "bumpy_" + std::to_string(seed);
  return cloud;
}

inline PointCloud4D random_cloud_box(int n, std::uint64_t seed) {
  auto rng = make_engine(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointCloud4D cloud;
  cloud.positions.resize(n, 3);
  cloud.color.resize(n);
  for (int i = 0; i < n; ++i) {
    cloud.positions.row(i) = Eigen::RowVector3d(u(rng), u(rng), u(rng));
    cloud.color(i) = u(rng);
  }
  cloud.id = "box_" + std::to_string(seed);
  return cloud;
}

inline Eigen::Matrix3d random_rotation(std::uint64_t seed) {
  auto rng = make_engine(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Vector3d axis(gauss(rng), gauss(rng), gauss(rng));
  axis.normalize();
  std::uniform_real_distribution<double> ang(0.0, 2.0 * std::numbers::pi);
  return Eigen::AngleAxisd(ang(rng), axis).toRotationMatrix();
}

inline PointCloud4D transformed(const PointCloud4D& cloud, const Eigen::Matrix3d& R,
                                const Eigen::Vector3d& t) {
  PointCloud4D out = cloud;
  out.positions = (cloud.positions * R.transpose()).rowwise() + t.transpose();
  return out;
}

} // namespace smac::test
