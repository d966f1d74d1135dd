#include "smac/laplacian.hpp"

#include "helpers.hpp"
#include "smac/error.hpp"
#include "smac/spectral.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace smac;

namespace {

LaplacianPair build_fixture(const PointCloud4D& cloud, int K = 12) {
  return build_laplacian(cloud, build_knn(cloud, K));
}

double max_entry_diff(const Eigen::SparseMatrix<double>& a,
                      const Eigen::SparseMatrix<double>& b) {
  Eigen::SparseMatrix<double> d = a - b;
  double m = 0;
  for (int k = 0; k < d.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(d, k); it; ++it)
      m = std::max(m, std::abs(it.value()));
  return m;
}

} // namespace

TEST_SUITE("laplacian") {

TEST_CASE("constant function lies in the kernel on a grid") {
  const PointCloud4D cloud = test::grid_cloud(12, 12, 0.5);
  const LaplacianPair pair = build_fixture(cloud);
  check_laplacian(pair);
  const Eigen::VectorXd lf = pair.stiffness * Eigen::VectorXd::Ones(pair.n);
  double max_w = 0;
  for (int k = 0; k < pair.stiffness.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(pair.stiffness, k); it; ++it)
      max_w = std::max(max_w, std::abs(it.value()));
  CHECK(lf.cwiseAbs().maxCoeff() <= 1e-8 * max_w);
}

TEST_CASE("mass approximates the sphere area") {
  const PointCloud4D cloud = test::sphere_cloud(1000);
  const LaplacianPair pair = build_fixture(cloud, 14);
  check_laplacian(pair);
  const double area = pair.mass.sum();
  CHECK(area == doctest::Approx(4.0 * std::numbers::pi).epsilon(0.05));
}

TEST_CASE("rigid motion leaves the pair unchanged") {
  const PointCloud4D cloud = test::bumpy_sphere(500, 101);
  const LaplacianPair pair = build_fixture(cloud);
  const PointCloud4D moved =
      test::transformed(cloud, test::random_rotation(5), Eigen::Vector3d(0.3, -1.2, 2.0));
  const LaplacianPair pair2 = build_fixture(moved);
  CHECK(max_entry_diff(pair.stiffness, pair2.stiffness) <= 1e-8);
  CHECK((pair.mass - pair2.mass).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("scaling positions scales mass by a^2 and keeps stiffness") {
  const PointCloud4D cloud = test::bumpy_sphere(400, 102);
  const LaplacianPair pair = build_fixture(cloud);
  const double a = 2.5;
  PointCloud4D scaled = cloud;
  scaled.positions *= a;
  const LaplacianPair pair2 = build_fixture(scaled);
  CHECK(max_entry_diff(pair.stiffness, pair2.stiffness) <= 1e-8 * 1.0);
  CHECK(((pair2.mass - a * a * pair.mass).cwiseAbs().array() /
         (a * a * pair.mass.array()))
            .maxCoeff() <= 1e-8);
}

TEST_CASE("kernel eigenvalue is tiny relative to the second") {
  for (std::uint64_t seed : {11, 12}) {
    const PointCloud4D cloud = test::bumpy_sphere(300, seed);
    const LaplacianPair pair = build_fixture(cloud);
    const Spectrum spec = solve_eigs(pair, 5);
    CHECK(spec.eigenvalues(0) <= 1e-8 * spec.eigenvalues(1));
  }
}

TEST_CASE("stiffness is positive semidefinite") {
  const PointCloud4D cloud = test::bumpy_sphere(250, 103);
  const LaplacianPair pair = build_fixture(cloud);
  Eigen::MatrixXd dense(pair.stiffness);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense);
  CHECK(es.eigenvalues()(0) >= -1e-10 * es.eigenvalues().cwiseAbs().maxCoeff());
}

TEST_CASE("mollify with no degenerate triangles is the identity") {
  const PointCloud4D cloud = test::bumpy_sphere(300, 104);
  const LaplacianPair pair = build_fixture(cloud);
  const LaplacianPair again = mollify(pair, pair.epsilon_fraction);
  CHECK(max_entry_diff(pair.stiffness, again.stiffness) <= 1e-12);
  CHECK((pair.mass - again.mass).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("sliver triangles produce finite weights after mollification") {
  // A planar patch with one point nearly collinear with two others.
  PointCloud4D cloud = test::grid_cloud(6, 6, 1.0);
  cloud.positions(14, 0) += 0.499999999; // squeezed toward the next column
  cloud.positions(14, 1) += 1e-10;
  const LaplacianPair pair = build_laplacian(cloud, build_knn(cloud, 8), 1e-3);
  for (int k = 0; k < pair.stiffness.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(pair.stiffness, k); it; ++it)
      CHECK(std::isfinite(it.value()));
  const LaplacianPair remollified = mollify(pair, 0.05);
  check_laplacian(remollified);
}

TEST_CASE("epsilon_fraction outside (0, 0.1] is rejected") {
  const PointCloud4D cloud = test::bumpy_sphere(250, 105);
  const LaplacianPair pair = build_fixture(cloud);
  CHECK_THROWS_AS(mollify(pair, 0.2), ParamError);
  CHECK_THROWS_AS(mollify(pair, 0.0), ParamError);
}

TEST_CASE("K below 6 is rejected") {
  const PointCloud4D cloud = test::bumpy_sphere(220, 106);
  const KnnGraph graph = build_knn(cloud, 5);
  CHECK_THROWS_AS(build_laplacian(cloud, graph), ParamError);
}

TEST_CASE("collinear neighborhood raises a construction error naming the point") {
  PointCloud4D cloud;
  const int n = 40;
  cloud.positions.resize(n, 3);
  cloud.color = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) cloud.positions.row(i) = Eigen::RowVector3d(i, 0, 0);
  const KnnGraph graph = build_knn(cloud, 6);
  CHECK_THROWS_WITH_AS(build_laplacian(cloud, graph), doctest::Contains("collinear"),
                       ConstructionError);
}

TEST_CASE("serial assembly matches the parallel kernel bit for bit") {
  const PointCloud4D cloud = test::bumpy_sphere(350, 107);
  const KnnGraph graph = build_knn(cloud, 12);
  const LaplacianPair a = build_laplacian(cloud, graph);
  const LaplacianPair b = build_laplacian_serial(cloud, graph);
  CHECK(max_entry_diff(a.stiffness, b.stiffness) == 0.0);
  CHECK((a.mass - b.mass).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("debug dump writes triplet files") {
  const PointCloud4D cloud = test::bumpy_sphere(200, 108);
  const LaplacianPair pair = build_fixture(cloud);
  const auto dir = std::filesystem::temp_directory_path() / "smac_lap_dump";
  std::filesystem::create_directories(dir);
  dump_laplacian(pair, dir / "L.txt", dir / "M.txt");
  CHECK(std::filesystem::file_size(dir / "L.txt") > 0);
  CHECK(std::filesystem::file_size(dir / "M.txt") > 0);
}

} // TEST_SUITE
