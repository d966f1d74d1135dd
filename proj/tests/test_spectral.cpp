#include "smac/spectral.hpp"

#include "helpers.hpp"
#include "smac/error.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

using namespace smac;

namespace {

struct Fixture {
  PointCloud4D cloud;
  LaplacianPair pair;
};

Fixture make_fixture(int n, std::uint64_t seed, int K = 12) {
  Fixture f;
  f.cloud = test::bumpy_sphere(n, seed);
  f.pair = build_laplacian(f.cloud, build_knn(f.cloud, K));
  return f;
}

// Independent dense oracle: Eigen's generalized solver on (L, diag(M)).
Eigen::VectorXd dense_generalized_eigenvalues(const LaplacianPair& pair, int k) {
  Eigen::MatrixXd L(pair.stiffness);
  Eigen::MatrixXd M = pair.mass.asDiagonal();
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(L, M);
  return es.eigenvalues().head(k);
}

// Connected components of one strict sign of a function over the kNN graph.
int count_nodal_domains(const Eigen::VectorXd& u, const KnnGraph& graph) {
  const Eigen::Index n = u.size();
  std::vector<int> parent(static_cast<size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int a) {
    while (parent[static_cast<size_t>(a)] != a) {
      parent[static_cast<size_t>(a)] = parent[static_cast<size_t>(parent[static_cast<size_t>(a)])];
      a = parent[static_cast<size_t>(a)];
    }
    return a;
  };
  auto merge = [&](int a, int b) { parent[static_cast<size_t>(find(a))] = find(b); };
  auto sign = [&](Eigen::Index i) { return u(i) > 0 ? 1 : (u(i) < 0 ? -1 : 0); };

  for (Eigen::Index i = 0; i < n; ++i)
    for (int k = 0; k < graph.K; ++k) {
      const int j = graph.neighbor_indices(i, k);
      if (sign(i) != 0 && sign(i) == sign(j)) merge(static_cast<int>(i), j);
    }
  std::vector<bool> seen(static_cast<size_t>(n), false);
  int count = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (sign(i) == 0) continue;
    const int r = find(static_cast<int>(i));
    if (!seen[static_cast<size_t>(r)]) {
      seen[static_cast<size_t>(r)] = true;
      ++count;
    }
  }
  return count;
}

} // namespace

TEST_SUITE("spectral") {

TEST_CASE("grid kernel mode is constant with tiny eigenvalue") {
  const PointCloud4D cloud = test::grid_cloud(12, 12, 0.25);
  const LaplacianPair pair = build_laplacian(cloud, build_knn(cloud, 8));
  const Spectrum spec = solve_eigs(pair, 4);
  CHECK(spec.eigenvalues(0) <= 1e-10);
  const Eigen::VectorXd u1 = spec.eigenfunctions.col(0);
  const double mean = u1.mean();
  CHECK((u1.array() - mean).abs().maxCoeff() <= 1e-6 * std::abs(mean));
}

TEST_CASE("eigenvalues match the dense generalized oracle") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const Fixture f = make_fixture(260, seed);
    const int k = 12;
    const Spectrum spec = solve_eigs(f.pair, k);
    const Eigen::VectorXd oracle = dense_generalized_eigenvalues(f.pair, k);
    for (int j = 1; j < k; ++j)
      CHECK(spec.eigenvalues(j) ==
            doctest::Approx(oracle(j)).epsilon(1e-8));
  }
}

TEST_CASE("iterative path agrees with the dense oracle") {
  const Fixture f = make_fixture(300, 5);
  const int k = 10;
  SolveOptions opts;
  opts.eig.force_iterative = true;
  const Spectrum spec = solve_eigs(f.pair, k, opts);
  const Eigen::VectorXd oracle = dense_generalized_eigenvalues(f.pair, k);
  for (int j = 1; j < k; ++j)
    CHECK(spec.eigenvalues(j) == doctest::Approx(oracle(j)).epsilon(1e-7));
}

TEST_CASE("spectrum invariants hold") {
  const Fixture f = make_fixture(300, 6);
  const Spectrum spec = solve_eigs(f.pair, 15);
  CHECK(spec.eigenvalues(0) <= 1e-8 * spec.eigenvalues(1));
  for (int j = 1; j < spec.k; ++j)
    CHECK(spec.eigenvalues(j) >= spec.eigenvalues(j - 1));
  const Eigen::MatrixXd gram = spec.eigenfunctions.transpose() *
                               f.pair.mass.asDiagonal() * spec.eigenfunctions;
  CHECK((gram - Eigen::MatrixXd::Identity(15, 15)).cwiseAbs().maxCoeff() <= 1e-6);
  for (int j = 0; j < spec.k; ++j) {
    const Eigen::VectorXd r = f.pair.stiffness * spec.eigenfunctions.col(j) -
                              spec.eigenvalues(j) * (f.pair.mass.asDiagonal() *
                                                     spec.eigenfunctions.col(j));
    const double denom = (f.pair.mass.asDiagonal() * spec.eigenfunctions.col(j)).norm();
    CHECK(r.norm() / denom <= 1e-6);
  }
}

TEST_CASE("unit sphere reproduces the analytic spectrum") {
  const PointCloud4D cloud = test::sphere_cloud(2000);
  const LaplacianPair pair = build_laplacian(cloud, build_knn(cloud, 14));
  const Spectrum spec = solve_eigs(pair, 10); // n > dense threshold: Lanczos path
  const double expected[] = {2, 2, 2, 6, 6, 6, 6, 6};
  for (int j = 1; j <= 8; ++j)
    CHECK(spec.eigenvalues(j) == doctest::Approx(expected[j - 1]).epsilon(0.10));
}

TEST_CASE("drop_zero_eigenvalue") {
  Spectrum spec;
  spec.k = 3;
  spec.eigenvalues.resize(3);
  spec.eigenvalues << 0, 2, 5;
  const Eigen::VectorXd v = drop_zero_eigenvalue(spec);
  REQUIRE(v.size() == 2);
  CHECK(v(0) == 2.0);
  CHECK(v(1) == 5.0);

  Spectrum two;
  two.k = 2;
  two.eigenvalues.resize(2);
  two.eigenvalues << 0, 1.5;
  CHECK(drop_zero_eigenvalue(two).size() == 1);
}

TEST_CASE("regression recovers a scaled eigenfunction exactly") {
  const Fixture f = make_fixture(250, 7);
  const Spectrum spec = solve_eigs(f.pair, 8);
  const double c = 3.25;
  const Eigen::VectorXd color = c * spec.eigenfunctions.col(0);
  const ColorRegression reg = regress_color(spec, f.pair, color);
  CHECK(reg.coefficients(0) == doctest::Approx(c).epsilon(1e-10));
  for (int j = 1; j < 8; ++j) CHECK(std::abs(reg.coefficients(j)) <= 1e-10);
  CHECK(reg.residual_norm <= 1e-10);
}

TEST_CASE("regression matches dense weighted least squares") {
  for (std::uint64_t seed : {8, 9}) {
    const Fixture f = make_fixture(280, seed);
    const Spectrum spec = solve_eigs(f.pair, 10);
    const ColorRegression reg = regress_color(spec, f.pair, f.cloud.color);
    // Normal equations with an explicit inverse, no orthogonality shortcut.
    const Eigen::MatrixXd U = spec.eigenfunctions;
    const Eigen::MatrixXd M = f.pair.mass.asDiagonal();
    const Eigen::VectorXd oracle =
        (U.transpose() * M * U).inverse() * (U.transpose() * M * f.cloud.color);
    CHECK((reg.coefficients - oracle).cwiseAbs().maxCoeff() <=
          1e-8 * std::max(1.0, oracle.cwiseAbs().maxCoeff()));

    // Pythagoras in the M-inner product.
    const double y2 = f.cloud.color.dot(M * f.cloud.color);
    const double lhs = reg.residual_norm * reg.residual_norm + reg.coefficients.squaredNorm();
    CHECK(lhs == doctest::Approx(y2).epsilon(1e-8));
  }
}

TEST_CASE("absolute coefficients ignore eigenbasis sign flips") {
  const Fixture f = make_fixture(250, 10);
  Spectrum spec = solve_eigs(f.pair, 8);
  const ColorRegression reg = regress_color(spec, f.pair, f.cloud.color);
  Spectrum flipped = spec;
  for (int j = 0; j < spec.k; j += 2) flipped.eigenfunctions.col(j) *= -1.0;
  const ColorRegression reg2 = regress_color(flipped, f.pair, f.cloud.color);
  CHECK((reg.abs_coefficients - reg2.abs_coefficients).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("length mismatch is a parameter error") {
  const Fixture f = make_fixture(220, 11);
  const Spectrum spec = solve_eigs(f.pair, 5);
  CHECK_THROWS_AS(regress_color(spec, f.pair, Eigen::VectorXd::Zero(10)), ParamError);
}

TEST_CASE("hks matches direct summation") {
  const Fixture f = make_fixture(240, 12);
  const Spectrum spec = solve_eigs(f.pair, 9);
  const DescriptorMatrix hks = compute_hks(spec, 5);
  REQUIRE(hks.values.cols() == 5);
  for (Eigen::Index q = 0; q < f.cloud.size(); q += 37)
    for (int i = 0; i < 5; ++i) {
      double direct = 0;
      for (int j = 1; j < spec.k; ++j)
        direct += std::exp(-spec.eigenvalues(j) * hks.scales(i)) *
                  spec.eigenfunctions(q, j) * spec.eigenfunctions(q, j);
      CHECK(hks.values(q, i) == doctest::Approx(direct).epsilon(1e-10));
    }
  CHECK((hks.values.array() > 0).all());
}

TEST_CASE("hks decays to zero at huge times") {
  const Fixture f = make_fixture(240, 13);
  const Spectrum spec = solve_eigs(f.pair, 9);
  const double t = 1e6 / spec.eigenvalues(1);
  const DescriptorMatrix hks = compute_hks(spec, 1, t, t);
  CHECK(hks.values.cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("hks and wks are sign-flip invariant") {
  const Fixture f = make_fixture(240, 14);
  Spectrum spec = solve_eigs(f.pair, 9);
  const DescriptorMatrix hks = compute_hks(spec, 6);
  const DescriptorMatrix wks = compute_wks(spec, 6);
  Spectrum flipped = spec;
  flipped.eigenfunctions.col(1) *= -1.0;
  flipped.eigenfunctions.col(4) *= -1.0;
  CHECK((compute_hks(flipped, 6).values - hks.values).cwiseAbs().maxCoeff() == 0.0);
  CHECK((compute_wks(flipped, 6).values - wks.values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("wks matches direct summation with per-energy normalization") {
  const Fixture f = make_fixture(240, 15);
  const Spectrum spec = solve_eigs(f.pair, 9);
  const int count = 7;
  const DescriptorMatrix wks = compute_wks(spec, count);
  const double a = std::log(spec.eigenvalues(1));
  const double b = std::log(spec.eigenvalues(spec.k - 1));
  const double delta = (b - a) / (count + 27);
  const double sigma = 7.0 * delta;
  for (Eigen::Index q = 0; q < f.cloud.size(); q += 41)
    for (int i = 0; i < count; ++i) {
      const double e = a + 2 * sigma + delta * i;
      CHECK(wks.scales(i) == doctest::Approx(e).epsilon(1e-12));
      double num = 0, den = 0;
      for (int j = 1; j < spec.k; ++j) {
        const double z = (e - std::log(spec.eigenvalues(j))) / sigma;
        const double w = std::exp(-0.5 * z * z);
        num += w * spec.eigenfunctions(q, j) * spec.eigenfunctions(q, j);
        den += w;
      }
      CHECK(wks.values(q, i) == doctest::Approx(num / den).epsilon(1e-10));
    }
}

TEST_CASE("identical eigenfunction rows give identical wks rows") {
  Spectrum spec;
  spec.k = 4;
  spec.eigenvalues.resize(4);
  spec.eigenvalues << 0, 1.0, 2.5, 4.0;
  spec.eigenfunctions.resize(5, 4);
  spec.eigenfunctions << 1, 0.2, -0.3, 0.4, 1, 0.2, -0.3, 0.4, 1, -0.5, 0.1, 0.9, 1, 0.0,
      0.7, -0.2, 1, 0.3, 0.3, 0.3;
  const DescriptorMatrix wks = compute_wks(spec, 4);
  CHECK((wks.values.row(0) - wks.values.row(1)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("stacking concatenates hks then wks") {
  const Fixture f = make_fixture(220, 16);
  const Spectrum spec = solve_eigs(f.pair, 9);
  const DescriptorMatrix hks = compute_hks(spec, 100);
  const DescriptorMatrix wks = compute_wks(spec, 100);
  const DescriptorMatrix stacked = stack_descriptors(hks, wks);
  CHECK(stacked.values.cols() == 200);
  CHECK(stacked.kind == DescriptorKind::stacked);
  CHECK((stacked.values.leftCols(100) - hks.values).cwiseAbs().maxCoeff() == 0.0);
  CHECK((stacked.values.rightCols(100) - wks.values).cwiseAbs().maxCoeff() == 0.0);

  DescriptorMatrix empty;
  empty.kind = DescriptorKind::wks;
  empty.values.resize(f.cloud.size(), 0);
  empty.scales.resize(0);
  const DescriptorMatrix only_hks = stack_descriptors(hks, empty);
  CHECK((only_hks.values - hks.values).cwiseAbs().maxCoeff() == 0.0);

  DescriptorMatrix mismatched = wks;
  mismatched.values.conservativeResize(10, Eigen::NoChange);
  CHECK_THROWS_AS(stack_descriptors(hks, mismatched), ParamError);
}

TEST_CASE("rigid motions preserve the spectrum") {
  const PointCloud4D cloud = test::bumpy_sphere(400, 17);
  const LaplacianPair pair = build_laplacian(cloud, build_knn(cloud, 12));
  const Spectrum spec = solve_eigs(pair, 10);
  const PointCloud4D moved =
      test::transformed(cloud, test::random_rotation(18), Eigen::Vector3d(1, 2, -3));
  const LaplacianPair pair2 = build_laplacian(moved, build_knn(moved, 12));
  const Spectrum spec2 = solve_eigs(pair2, 10);
  for (int j = 1; j < 10; ++j)
    CHECK(spec2.eigenvalues(j) == doctest::Approx(spec.eigenvalues(j)).epsilon(1e-6));
}

TEST_CASE("M-Parseval projection bound") {
  const Fixture f = make_fixture(260, 19);
  const Spectrum spec = solve_eigs(f.pair, 12);
  auto rng = make_engine(20);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd y(f.cloud.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = gauss(rng);
  const Eigen::VectorXd beta =
      spec.eigenfunctions.transpose() * (f.pair.mass.asDiagonal() * y);
  const double norm_m = std::sqrt(y.dot(f.pair.mass.asDiagonal() * y));
  CHECK(beta.norm() <= norm_m * (1 + 1e-12));
}

TEST_CASE("nodal domain counts respect the Courant bound") {
  const PointCloud4D cloud = test::sphere_cloud(900);
  const KnnGraph graph = build_knn(cloud, 12);
  const LaplacianPair pair = build_laplacian(cloud, graph);
  const Spectrum spec = solve_eigs(pair, 21);
  for (int j = 1; j <= 20; ++j) {
    const int domains = count_nodal_domains(spec.eigenfunctions.col(j), graph);
    CHECK(domains <= j + 1); // eigenfunction j+1 in 1-based counting
  }
}

TEST_CASE("elbow helper finds a synthetic knee") {
  // Log-eigenvalues rising steeply then flattening: the knee sits at the bend.
  std::vector<Eigen::VectorXd> spectra;
  Eigen::VectorXd lam(31);
  lam(0) = 0;
  for (int j = 1; j <= 30; ++j)
    lam(j) = j <= 10 ? std::pow(10.0, j / 2.0 - 4.0) : std::pow(10.0, 1.0 + 0.01 * (j - 10));
  spectra.push_back(lam);
  const ElbowCurve curve = suggest_k(spectra);
  CHECK(curve.mean_log_eigenvalues.size() == 30);
  CHECK(curve.suggested_k >= 8);
  CHECK(curve.suggested_k <= 14);
}

TEST_CASE("k out of range is rejected") {
  const Fixture f = make_fixture(220, 21);
  CHECK_THROWS_AS(solve_eigs(f.pair, 0), ParamError);
  CHECK_THROWS_AS(solve_eigs(f.pair, static_cast<int>(f.pair.n)), ParamError);
}

} // TEST_SUITE
