#include "smac/diagnostics.hpp"

#include "smac/error.hpp"
#include "smac/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace smac {

namespace {

Eigen::MatrixXd descriptor_projection(const Spectrum& spec, const LaplacianPair& pair,
                                      const DescriptorMatrix& desc) {
  return spec.eigenfunctions.transpose() * (pair.mass.asDiagonal() * desc.values);
}

} // namespace

double functional_map_objective(const Eigen::MatrixXd& C, const Eigen::MatrixXd& A0,
                                const Eigen::MatrixXd& A1, const Eigen::VectorXd& ref_evals,
                                const Eigen::VectorXd& smp_evals, double eta) {
  double obj = (C * A0 - A1).squaredNorm();
  for (Eigen::Index i = 0; i < C.rows(); ++i)
    for (Eigen::Index j = 0; j < C.cols(); ++j) {
      const double gap = smp_evals(i) - ref_evals(j);
      obj += eta * C(i, j) * C(i, j) * gap * gap;
    }
  return obj;
}

FunctionalMap estimate_functional_map(const Spectrum& ref_spec, const LaplacianPair& ref_pair,
                                      const DescriptorMatrix& ref_desc,
                                      const Spectrum& smp_spec, const LaplacianPair& smp_pair,
                                      const DescriptorMatrix& smp_desc, double eta) {
  const int k = ref_spec.k;
  if (smp_spec.k != k) throw ParamError("functional map requires equal k on both spectra");
  if (ref_desc.values.cols() != smp_desc.values.cols())
    throw ParamError("descriptor matrices must have the same number of columns");
  if (eta < 0) throw ParamError("eta must be nonnegative");

  const Eigen::MatrixXd A0 = descriptor_projection(ref_spec, ref_pair, ref_desc);
  const Eigen::MatrixXd A1 = descriptor_projection(smp_spec, smp_pair, smp_desc);
  const Eigen::MatrixXd G = A0 * A0.transpose();

  FunctionalMap map;
  map.matrix.resize(k, k);
  bool singular = false;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < k; ++i) {
    Eigen::MatrixXd B = G;
    for (int j = 0; j < k; ++j) {
      const double gap = smp_spec.eigenvalues(i) - ref_spec.eigenvalues(j);
      B(j, j) += eta * gap * gap;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(B);
    if (llt.info() != Eigen::Success) {
      singular = true;
      continue;
    }
    map.matrix.row(i) = llt.solve(A0 * A1.row(i).transpose()).transpose();
  }
  if (singular)
    throw SolverError(
        "functional map system is singular; use eta > 0 or richer descriptors");
  return map;
}

TransportedTexture transport_texture(const FunctionalMap& map, const ColorRegression& reg,
                                     const Spectrum& ref_spec) {
  if (map.matrix.rows() != reg.coefficients.size() ||
      map.matrix.cols() != ref_spec.k)
    throw ParamError("transport_texture: dimension mismatch");
  TransportedTexture out;
  out.source_id = map.target_id;
  const Eigen::VectorXd gamma = map.matrix.transpose() * reg.coefficients;
  out.values = ref_spec.eigenfunctions * gamma;
  return out;
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  std::vector<int> size;

  explicit UnionFind(int n) : parent(static_cast<size_t>(n), -1), size(static_cast<size_t>(n), 0) {}

  void activate(int i) {
    parent[static_cast<size_t>(i)] = i;
    size[static_cast<size_t>(i)] = 1;
  }
  bool active(int i) const { return parent[static_cast<size_t>(i)] >= 0; }
  int find(int i) {
    int r = i;
    while (parent[static_cast<size_t>(r)] != r) r = parent[static_cast<size_t>(r)];
    while (parent[static_cast<size_t>(i)] != r) {
      const int next = parent[static_cast<size_t>(i)];
      parent[static_cast<size_t>(i)] = r;
      i = next;
    }
    return r;
  }
  void merge(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (size[static_cast<size_t>(a)] < size[static_cast<size_t>(b)]) std::swap(a, b);
    parent[static_cast<size_t>(b)] = a;
    size[static_cast<size_t>(a)] += size[static_cast<size_t>(b)];
  }
};

// Symmetrized undirected edge list of a kNN graph.
std::vector<std::pair<int, int>> symmetric_edges(const KnnGraph& graph) {
  std::vector<std::pair<int, int>> edges;
  edges.reserve(static_cast<size_t>(graph.size()) * static_cast<size_t>(graph.K));
  for (Eigen::Index i = 0; i < graph.size(); ++i)
    for (int k = 0; k < graph.K; ++k) {
      const int j = graph.neighbor_indices(i, k);
      const int a = std::min<int>(static_cast<int>(i), j);
      const int b = std::max<int>(static_cast<int>(i), j);
      edges.emplace_back(a, b);
    }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

Eigen::VectorXd tfce_over_edges(const Eigen::VectorXd& stat,
                                const std::vector<std::pair<int, int>>& edges,
                                Eigen::Index n, double dh, double E, double H) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  const double max_stat = stat.size() > 0 ? stat.maxCoeff() : 0.0;
  if (max_stat <= 0) return out;
  if (dh <= 0) dh = max_stat / 100.0;

  const int levels = static_cast<int>(std::floor(max_stat / dh + 1e-9));
  if (levels < 1) return out;

  // Points in descending stat order; activate incrementally while sweeping
  // thresholds downward so each superlevel set is built once.
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return stat(a) != stat(b) ? stat(a) > stat(b) : a < b;
  });
  // Adjacency lists for activation-time merging.
  std::vector<std::vector<int>> adj(static_cast<size_t>(n));
  for (const auto& [a, b] : edges) {
    adj[static_cast<size_t>(a)].push_back(b);
    adj[static_cast<size_t>(b)].push_back(a);
  }

  UnionFind uf(static_cast<int>(n));
  size_t next_point = 0;
  std::vector<int> active;
  active.reserve(static_cast<size_t>(n));
  for (int level = levels; level >= 1; --level) {
    const double h = level * dh;
    while (next_point < order.size() && stat(order[next_point]) >= h) {
      const int p = order[next_point];
      uf.activate(p);
      for (int q : adj[static_cast<size_t>(p)])
        if (uf.active(q)) uf.merge(p, q);
      active.push_back(p);
      ++next_point;
    }
    const double hterm = std::pow(h, H) * dh;
    for (int p : active)
      out(p) += std::pow(static_cast<double>(uf.size[static_cast<size_t>(uf.find(p))]), E) * hterm;
  }
  return out;
}

} // namespace

Eigen::VectorXd tfce_enhance(const Eigen::VectorXd& stat, const KnnGraph& adjacency,
                             double dh, double E, double H) {
  if (stat.size() != adjacency.size())
    throw ParamError("tfce_enhance: statistic length does not match adjacency size");
  if ((stat.array() < 0).any())
    throw ParamError("tfce_enhance: statistics must be nonnegative");
  return tfce_over_edges(stat, symmetric_edges(adjacency), stat.size(), dh, E, H);
}

namespace {

// Point-wise one-way F-statistics for two groups given per-sample columns.
Eigen::VectorXd group_f_stats(const Eigen::MatrixXd& X, const std::vector<int>& labels,
                              int n_ic) {
  const Eigen::Index n = X.rows();
  const int N = static_cast<int>(labels.size());
  const int n_oc = N - n_ic;
  Eigen::VectorXd mean0 = Eigen::VectorXd::Zero(n), mean1 = Eigen::VectorXd::Zero(n);
  for (int s = 0; s < N; ++s) {
    if (labels[static_cast<size_t>(s)] == 0)
      mean0 += X.col(s);
    else
      mean1 += X.col(s);
  }
  mean0 /= n_ic;
  mean1 /= n_oc;
  const Eigen::VectorXd grand = (n_ic * mean0 + n_oc * mean1) / N;

  Eigen::VectorXd ssw = Eigen::VectorXd::Zero(n);
  for (int s = 0; s < N; ++s) {
    const Eigen::VectorXd& m = labels[static_cast<size_t>(s)] == 0 ? mean0 : mean1;
    ssw += (X.col(s) - m).cwiseAbs2();
  }
  Eigen::VectorXd ssb = n_ic * (mean0 - grand).cwiseAbs2() + n_oc * (mean1 - grand).cwiseAbs2();

  const double df2 = N - 2;
  Eigen::VectorXd f(n);
  for (Eigen::Index q = 0; q < n; ++q) {
    if (ssw(q) > 0)
      f(q) = ssb(q) / (ssw(q) / df2);
    else
      f(q) = ssb(q) > 0 ? 1e12 : 0.0; // degenerate within-group variance
  }
  return f;
}

} // namespace

DiagnosticReport pointwise_test(const std::vector<TransportedTexture>& ic_textures,
                                const std::vector<TransportedTexture>& oc_textures,
                                const PointCloud4D& reference, double alpha,
                                int n_permutations, std::uint64_t rng_seed,
                                const TestOptions& opts) {
  if (ic_textures.empty() || oc_textures.empty())
    throw ParamError("pointwise_test: both groups must be nonempty");
  const int n_ic = static_cast<int>(ic_textures.size());
  const int n_oc = static_cast<int>(oc_textures.size());
  const int N = n_ic + n_oc;
  if (N < 3)
    throw ParamError("pointwise_test: group sizes (1,1) leave zero within-group "
                     "degrees of freedom for the F-test");
  if (!(alpha > 0 && alpha < 1)) throw ParamError("alpha must be in (0,1)");
  if (n_permutations < 1) throw ParamError("n_permutations must be >= 1");

  const Eigen::Index n0 = reference.size();
  Eigen::MatrixXd X(n0, N);
  for (int s = 0; s < n_ic; ++s) {
    if (ic_textures[static_cast<size_t>(s)].values.size() != n0)
      throw ParamError("IC texture length does not match reference size");
    X.col(s) = ic_textures[static_cast<size_t>(s)].values;
  }
  for (int s = 0; s < n_oc; ++s) {
    if (oc_textures[static_cast<size_t>(s)].values.size() != n0)
      throw ParamError("OC texture length does not match reference size");
    X.col(n_ic + s) = oc_textures[static_cast<size_t>(s)].values;
  }

  const KnnGraph adjacency = build_knn(reference, opts.adjacency_k);
  const auto edges = symmetric_edges(adjacency);

  std::vector<int> labels(static_cast<size_t>(N), 1);
  std::fill(labels.begin(), labels.begin() + n_ic, 0);

  DiagnosticReport report;
  report.alpha = alpha;
  report.n_permutations = n_permutations;
  report.f_stats = group_f_stats(X, labels, n_ic);
  // The observed dh is reused for permutation TFCE so maxima are comparable.
  const double max_f = report.f_stats.maxCoeff();
  const double dh = opts.tfce_dh > 0 ? opts.tfce_dh : (max_f > 0 ? max_f / 100.0 : 1.0);
  report.tfce = tfce_over_edges(report.f_stats, edges, n0, dh, opts.tfce_E, opts.tfce_H);

  Eigen::VectorXd maxima(n_permutations);
#pragma omp parallel for schedule(dynamic, 8)
  for (int p = 0; p < n_permutations; ++p) {
    auto rng = make_engine(derive_seed(rng_seed, 0x7e57 + static_cast<std::uint64_t>(p)));
    std::vector<int> perm_labels(labels);
    std::shuffle(perm_labels.begin(), perm_labels.end(), rng);
    const Eigen::VectorXd f = group_f_stats(X, perm_labels, n_ic);
    const Eigen::VectorXd t = tfce_over_edges(f, edges, n0, dh, opts.tfce_E, opts.tfce_H);
    maxima(p) = t.size() > 0 ? t.maxCoeff() : 0.0;
  }

  report.p_values.resize(n0);
  report.significant_mask.assign(static_cast<size_t>(n0), false);
  bool any = false;
  for (Eigen::Index q = 0; q < n0; ++q) {
    const int count = static_cast<int>((maxima.array() >= report.tfce(q)).count());
    report.p_values(q) = (1.0 + count) / (n_permutations + 1.0);
    const bool sig = report.p_values(q) < alpha;
    report.significant_mask[static_cast<size_t>(q)] = sig;
    any = any || sig;
  }
  report.verdict = any ? Verdict::shape_and_color : Verdict::shape_only;
  return report;
}

std::vector<bool> threshold_localize(const std::vector<TransportedTexture>& ic_textures,
                                     const TransportedTexture& oc_texture,
                                     double quantile) {
  if (ic_textures.empty()) throw ParamError("threshold_localize: empty IC list");
  if (!(quantile > 0.5 && quantile < 1.0))
    throw ParamError("quantile must be in (0.5, 1)");

  const Eigen::Index n0 = oc_texture.values.size();
  Eigen::VectorXd mean_ic = Eigen::VectorXd::Zero(n0);
  for (const auto& t : ic_textures) {
    if (t.values.size() != n0) throw ParamError("texture length mismatch");
    mean_ic += t.values;
  }
  mean_ic /= static_cast<double>(ic_textures.size());

  const Eigen::VectorXd d = mean_ic - oc_texture.values;
  const double max_pos = d.maxCoeff();
  const double max_neg = -d.minCoeff();
  std::vector<bool> mask(static_cast<size_t>(n0), false);
  if (max_pos <= 0 && max_neg <= 0) return mask;
  const bool positive_side = max_pos >= max_neg;

  std::vector<double> side;
  side.reserve(static_cast<size_t>(n0));
  for (Eigen::Index q = 0; q < n0; ++q) {
    const double v = positive_side ? d(q) : -d(q);
    if (v > 0) side.push_back(v);
  }
  if (side.empty()) return mask;
  std::sort(side.begin(), side.end());
  const size_t rank = static_cast<size_t>(
      std::min<double>(std::ceil(quantile * static_cast<double>(side.size())),
                       static_cast<double>(side.size()))) - 1;
  const double threshold = side[rank];

  for (Eigen::Index q = 0; q < n0; ++q) {
    const double v = positive_side ? d(q) : -d(q);
    mask[static_cast<size_t>(q)] = v > threshold;
  }
  return mask;
}

} // namespace smac
