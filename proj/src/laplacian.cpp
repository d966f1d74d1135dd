#include "smac/laplacian.hpp"

#include "delaunay2d.hpp"
#include "smac/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <vector>

namespace smac {

namespace {

struct PatchTris {
  // Sorted global corner triples of the center-incident local triangles.
  std::vector<std::array<int, 3>> tris;
};

// Projects the neighborhood of point i onto its PCA tangent plane and
// returns the center-incident triangles of the local Delaunay triangulation.
PatchTris triangulate_patch(const PointCloud4D& cloud, const KnnGraph& graph,
                            Eigen::Index i) {
  const int K = graph.K;
  std::vector<int> ids(static_cast<size_t>(K) + 1);
  ids[0] = static_cast<int>(i);
  for (int k = 0; k < K; ++k) ids[static_cast<size_t>(k) + 1] = graph.neighbor_indices(i, k);

  Eigen::Matrix<double, Eigen::Dynamic, 3> local(K + 1, 3);
  for (int k = 0; k <= K; ++k) local.row(k) = cloud.positions.row(ids[static_cast<size_t>(k)]);
  const Eigen::RowVector3d mean = local.colwise().mean();
  local.rowwise() -= mean;

  Eigen::Matrix3d cov = local.transpose() * local / static_cast<double>(K + 1);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  // Eigen returns ascending eigenvalues; columns 2 and 1 span the tangent plane.
  const double ev_major = es.eigenvalues()(2);
  const double ev_minor = es.eigenvalues()(1);
  if (!(ev_major > 0) || ev_minor <= 1e-12 * ev_major)
    throw ConstructionError("degenerate neighborhood at point " + std::to_string(i) +
                            ": neighbors collinear within tolerance");
  const Eigen::Vector3d e1 = es.eigenvectors().col(2);
  const Eigen::Vector3d e2 = es.eigenvectors().col(1);

  std::vector<Eigen::Vector2d> proj(static_cast<size_t>(K) + 1);
  double scale = 0;
  for (int k = 0; k <= K; ++k) {
    proj[static_cast<size_t>(k)] = Eigen::Vector2d(local.row(k).dot(e1), local.row(k).dot(e2));
    scale = std::max(scale, proj[static_cast<size_t>(k)].norm());
  }

  PatchTris out;
  for (const auto& t : detail::delaunay2d(proj, 1e-12 * scale)) {
    if (t.a != 0 && t.b != 0 && t.c != 0) continue; // keep center-incident only
    std::array<int, 3> g{ids[static_cast<size_t>(t.a)], ids[static_cast<size_t>(t.b)],
                         ids[static_cast<size_t>(t.c)]};
    std::sort(g.begin(), g.end());
    out.tris.push_back(g);
  }
  return out;
}

LaplacianPair assemble(std::vector<SoupTriangle> soup, Eigen::Index n,
                       double epsilon_fraction) {
  if (!(epsilon_fraction > 0.0) || epsilon_fraction > 0.1)
    throw ParamError("epsilon_fraction must be in (0, 0.1]");

  double mean_len = 0;
  for (const auto& t : soup) mean_len += t.l0 + t.l1 + t.l2;
  mean_len /= std::max<size_t>(1, 3 * soup.size());
  const double delta = epsilon_fraction * mean_len;

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(soup.size() * 9);
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(n);

  for (const auto& t : soup) {
    // Intrinsic mollification: inflate short edges, then enforce the
    // triangle inequality with slack delta.
    double l0 = std::max(t.l0, delta), l1 = std::max(t.l1, delta), l2 = std::max(t.l2, delta);
    const double viol = std::max({l0 - l1 - l2, l1 - l0 - l2, l2 - l0 - l1}) + delta;
    if (viol > 0) {
      l0 += viol;
      l1 += viol;
      l2 += viol;
    }
    const double s = 0.5 * (l0 + l1 + l2);
    const double area2 = s * (s - l0) * (s - l1) * (s - l2);
    const double area = std::sqrt(std::max(area2, 1e-300));

    const std::array<int, 3> v{t.v0, t.v1, t.v2};
    const std::array<double, 3> l{l0, l1, l2};
    for (int c = 0; c < 3; ++c) {
      const int p = v[static_cast<size_t>((c + 1) % 3)];
      const int q = v[static_cast<size_t>((c + 2) % 3)];
      const double la = l[static_cast<size_t>(c)];
      const double lb = l[static_cast<size_t>((c + 1) % 3)];
      const double lc = l[static_cast<size_t>((c + 2) % 3)];
      // cot of the angle at v[c] (opposite edge la), from lengths only
      const double cot = (lb * lb + lc * lc - la * la) / (4.0 * area);
      const double w = 0.5 * cot * t.weight;
      trip.emplace_back(p, q, -w);
      trip.emplace_back(q, p, -w);
      trip.emplace_back(p, p, w);
      trip.emplace_back(q, q, w);
      mass(v[static_cast<size_t>(c)]) += t.weight * area / 3.0;
    }
  }

  // Deterministic accumulation: sort contributions by (row, col) so the
  // summation order does not depend on soup construction scheduling.
  std::stable_sort(trip.begin(), trip.end(),
                   [](const Eigen::Triplet<double>& a, const Eigen::Triplet<double>& b) {
                     return a.row() != b.row() ? a.row() < b.row() : a.col() < b.col();
                   });

  LaplacianPair pair;
  pair.n = n;
  pair.epsilon_fraction = epsilon_fraction;
  pair.soup = std::move(soup);
  pair.stiffness.resize(n, n);
  pair.stiffness.setFromTriplets(trip.begin(), trip.end());
  Eigen::SparseMatrix<double> sym = Eigen::SparseMatrix<double>(pair.stiffness.transpose());
  pair.stiffness = 0.5 * (pair.stiffness + sym);
  pair.mass = std::move(mass);

  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(pair.mass(i) > 0) || !std::isfinite(pair.mass(i)))
      throw ConstructionError("point " + std::to_string(i) +
                              " received no valid triangle (zero local area)");
  }
  return pair;
}

LaplacianPair build_impl(const PointCloud4D& cloud, const KnnGraph& graph,
                         double epsilon_fraction, bool parallel) {
  const Eigen::Index n = cloud.size();
  if (graph.size() != n) throw ParamError("graph size does not match cloud");
  if (graph.K < 6) throw ParamError("Laplacian construction requires K >= 6");

  std::vector<PatchTris> patches(static_cast<size_t>(n));
  std::string error_msg;
  if (parallel) {
#pragma omp parallel for schedule(dynamic, 32)
    for (Eigen::Index i = 0; i < n; ++i) {
      try {
        patches[static_cast<size_t>(i)] = triangulate_patch(cloud, graph, i);
      } catch (const std::exception& e) {
#pragma omp critical
        if (error_msg.empty() || std::string(e.what()) < error_msg) error_msg = e.what();
      }
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      try {
        patches[static_cast<size_t>(i)] = triangulate_patch(cloud, graph, i);
      } catch (const std::exception& e) {
        if (error_msg.empty() || std::string(e.what()) < error_msg) error_msg = e.what();
      }
    }
  }
  if (!error_msg.empty()) throw ConstructionError(error_msg);

  // Deduplicate across patches; a triangle seen by c of its three corner
  // patches enters the soup with weight c/3.
  std::map<std::array<int, 3>, int> counts;
  for (const auto& p : patches)
    for (const auto& t : p.tris) counts[t] += 1;

  std::vector<SoupTriangle> soup;
  soup.reserve(counts.size());
  for (const auto& [g, c] : counts) {
    SoupTriangle t;
    t.v0 = g[0];
    t.v1 = g[1];
    t.v2 = g[2];
    t.l0 = (cloud.positions.row(g[1]) - cloud.positions.row(g[2])).norm();
    t.l1 = (cloud.positions.row(g[0]) - cloud.positions.row(g[2])).norm();
    t.l2 = (cloud.positions.row(g[0]) - cloud.positions.row(g[1])).norm();
    t.weight = std::min(c, 3) / 3.0;
    soup.push_back(t);
  }
  return assemble(std::move(soup), n, epsilon_fraction);
}

} // namespace

LaplacianPair build_laplacian(const PointCloud4D& cloud, const KnnGraph& graph,
                              double epsilon_fraction) {
  return build_impl(cloud, graph, epsilon_fraction, true);
}

LaplacianPair build_laplacian_serial(const PointCloud4D& cloud, const KnnGraph& graph,
                                     double epsilon_fraction) {
  return build_impl(cloud, graph, epsilon_fraction, false);
}

LaplacianPair mollify(const LaplacianPair& pair, double epsilon_fraction) {
  return assemble(pair.soup, pair.n, epsilon_fraction);
}

void check_laplacian(const LaplacianPair& pair) {
  const Eigen::Index n = pair.n;
  if (pair.stiffness.rows() != n || pair.stiffness.cols() != n || pair.mass.size() != n)
    throw ValidationError("inconsistent Laplacian dimensions");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(pair.mass(i) > 0) || !std::isfinite(pair.mass(i)))
      throw ValidationError("non-positive mass entry at " + std::to_string(i));

  Eigen::SparseMatrix<double> diff =
      Eigen::SparseMatrix<double>(pair.stiffness.transpose()) - pair.stiffness;
  double max_abs = 0, max_asym = 0;
  for (int k = 0; k < pair.stiffness.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(pair.stiffness, k); it; ++it)
      max_abs = std::max(max_abs, std::abs(it.value()));
  for (int k = 0; k < diff.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(diff, k); it; ++it)
      max_asym = std::max(max_asym, std::abs(it.value()));
  if (max_asym > 1e-10 * std::max(max_abs, 1e-300))
    throw ValidationError("stiffness matrix not symmetric");

  Eigen::VectorXd row_sums = pair.stiffness * Eigen::VectorXd::Ones(n);
  Eigen::VectorXd row_max = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < pair.stiffness.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(pair.stiffness, k); it; ++it)
      row_max(it.row()) = std::max(row_max(it.row()), std::abs(it.value()));
  for (Eigen::Index i = 0; i < n; ++i)
    if (std::abs(row_sums(i)) > 1e-8 * std::max(row_max(i), 1e-300))
      throw ValidationError("stiffness row " + std::to_string(i) + " does not sum to zero");
}

void dump_laplacian(const LaplacianPair& pair, const std::filesystem::path& stiffness_path,
                    const std::filesystem::path& mass_path) {
  std::ofstream ls(stiffness_path);
  if (!ls) throw IoError("cannot write " + stiffness_path.string());
  char buf[128];
  for (int k = 0; k < pair.stiffness.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(pair.stiffness, k); it; ++it) {
      std::snprintf(buf, sizeof(buf), "%ld %ld %.17g\n", static_cast<long>(it.row()),
                    static_cast<long>(it.col()), it.value());
      ls << buf;
    }
  std::ofstream ms(mass_path);
  if (!ms) throw IoError("cannot write " + mass_path.string());
  for (Eigen::Index i = 0; i < pair.n; ++i) {
    std::snprintf(buf, sizeof(buf), "%ld %ld %.17g\n", static_cast<long>(i),
                  static_cast<long>(i), pair.mass(i));
    ms << buf;
  }
}

} // namespace smac
