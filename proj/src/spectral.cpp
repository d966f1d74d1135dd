#include "smac/spectral.hpp"

#include "smac/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace smac {

namespace {

void fix_sign(Eigen::Ref<Eigen::VectorXd> u) {
  Eigen::Index arg = 0;
  double best = -1;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double a = std::abs(u(i));
    if (a > best) { // strict: ties keep the lowest index
      best = a;
      arg = i;
    }
  }
  if (u(arg) < 0) u = -u;
}

} // namespace

Spectrum solve_eigs(const LaplacianPair& pair, int k, const SolveOptions& opts) {
  const Eigen::Index n = pair.n;
  if (k < 1 || k >= n)
    throw ParamError("k = " + std::to_string(k) + " must satisfy 1 <= k < n = " +
                     std::to_string(n));

  // Standard symmetric form A = M^{-1/2} L M^{-1/2} (M diagonal).
  Eigen::VectorXd dinv = pair.mass.array().sqrt().inverse();
  Eigen::SparseMatrix<double> A =
      dinv.asDiagonal() * pair.stiffness * dinv.asDiagonal();

  EigPairs pairs = smallest_eigs_sym(A, k, opts.eig);

  Spectrum spec;
  spec.k = k;
  spec.eigenvalues = pairs.values.cwiseMax(0.0);
  spec.eigenfunctions = dinv.asDiagonal() * pairs.vectors;
  for (int j = 0; j < k; ++j) fix_sign(spec.eigenfunctions.col(j));

  if (!opts.quiet) {
    for (int j = 0; j + 1 < k; ++j) {
      const double gap = spec.eigenvalues(j + 1) - spec.eigenvalues(j);
      if (j > 0 && gap < opts.repeated_gap_warn * std::max(spec.eigenvalues(j + 1), 1e-300))
        std::fprintf(stderr,
                     "warning: near-repeated eigenvalue pair (%d, %d); "
                     "eigenbasis may be ambiguous\n",
                     j, j + 1);
    }
  }
  return spec;
}

Eigen::VectorXd drop_zero_eigenvalue(const Spectrum& spec) {
  return spec.eigenvalues.segment(1, spec.k - 1);
}

ColorRegression regress_color(const Spectrum& spec, const LaplacianPair& pair,
                              const Eigen::VectorXd& color) {
  if (color.size() != spec.eigenfunctions.rows())
    throw ParamError("color length " + std::to_string(color.size()) +
                     " does not match cloud size " +
                     std::to_string(spec.eigenfunctions.rows()));
  ColorRegression reg;
  // U^T M U = I, so the normal equations reduce to a projection.
  const Eigen::VectorXd my = pair.mass.asDiagonal() * color;
  reg.coefficients = spec.eigenfunctions.transpose() * my;
  reg.abs_coefficients = reg.coefficients.cwiseAbs();
  const Eigen::VectorXd resid = color - spec.eigenfunctions * reg.coefficients;
  reg.residual_norm = std::sqrt(resid.dot(pair.mass.asDiagonal() * resid));
  return reg;
}

namespace {

DescriptorMatrix hks_impl(const Spectrum& spec, int count, double t_min, double t_max,
                          bool parallel) {
  if (count < 1) throw ParamError("descriptor count must be >= 1");
  if (spec.k < 2 || spec.eigenvalues(1) <= 0)
    throw ParamError("HKS requires a nontrivial spectrum (lambda_2 > 0)");
  const double lam2 = spec.eigenvalues(1);
  const double lamk = spec.eigenvalues(spec.k - 1);
  if (t_min <= 0) t_min = 4.0 * std::log(10.0) / lamk;
  if (t_max <= 0) t_max = 4.0 * std::log(10.0) / lam2;
  if (!(t_min < t_max) && count > 1) throw ParamError("t_min must be < t_max");

  DescriptorMatrix d;
  d.kind = DescriptorKind::hks;
  d.scales.resize(count);
  const double lg0 = std::log(t_min);
  const double step = count > 1 ? (std::log(t_max) - lg0) / (count - 1) : 0.0;
  for (int i = 0; i < count; ++i) d.scales(i) = std::exp(lg0 + step * i);

  const Eigen::Index n = spec.eigenfunctions.rows();
  d.values.resize(n, count);
  // exp(-lambda_j t_i) weights; zero mode excluded
  Eigen::MatrixXd w(spec.k - 1, count);
  for (int j = 1; j < spec.k; ++j)
    for (int i = 0; i < count; ++i)
      w(j - 1, i) = std::exp(-spec.eigenvalues(j) * d.scales(i));

#pragma omp parallel for schedule(static) if (parallel)
  for (Eigen::Index q = 0; q < n; ++q) {
    Eigen::VectorXd u2 =
        spec.eigenfunctions.row(q).segment(1, spec.k - 1).transpose().array().square();
    d.values.row(q) = (w.transpose() * u2).transpose();
  }
  return d;
}

} // namespace

DescriptorMatrix compute_hks(const Spectrum& spec, int count, double t_min, double t_max) {
  return hks_impl(spec, count, t_min, t_max, true);
}

DescriptorMatrix compute_hks_serial(const Spectrum& spec, int count, double t_min,
                                    double t_max) {
  return hks_impl(spec, count, t_min, t_max, false);
}

DescriptorMatrix compute_wks(const Spectrum& spec, int count, double sigma) {
  if (count < 1) throw ParamError("descriptor count must be >= 1");
  if (spec.k < 3 || spec.eigenvalues(1) <= 0 || spec.eigenvalues(2) <= 0)
    throw ParamError("WKS requires at least two nonzero eigenvalues");

  const double a = std::log(spec.eigenvalues(1));
  const double b = std::log(spec.eigenvalues(spec.k - 1));
  // Inward shrink by 2 sigma with sigma = 7 * spacing closes to
  // spacing = (b - a) / (count + 27).
  double delta;
  if (sigma <= 0) {
    delta = (b - a) / (count + 27);
    sigma = 7.0 * delta;
  } else {
    delta = count > 1 ? (b - a - 4.0 * sigma) / (count - 1) : 0.0;
  }
  if (!(sigma > 0)) throw ParamError("WKS sigma must be positive");

  DescriptorMatrix d;
  d.kind = DescriptorKind::wks;
  d.scales.resize(count);
  for (int i = 0; i < count; ++i) d.scales(i) = a + 2.0 * sigma + delta * i;

  const Eigen::Index n = spec.eigenfunctions.rows();
  Eigen::MatrixXd w(spec.k - 1, count);
  for (int i = 0; i < count; ++i) {
    double norm = 0;
    for (int j = 1; j < spec.k; ++j) {
      const double z = (d.scales(i) - std::log(spec.eigenvalues(j))) / sigma;
      w(j - 1, i) = std::exp(-0.5 * z * z);
      norm += w(j - 1, i);
    }
    w.col(i) /= std::max(norm, 1e-300);
  }

  d.values.resize(n, count);
#pragma omp parallel for schedule(static)
  for (Eigen::Index q = 0; q < n; ++q) {
    Eigen::VectorXd u2 =
        spec.eigenfunctions.row(q).segment(1, spec.k - 1).transpose().array().square();
    d.values.row(q) = (w.transpose() * u2).transpose();
  }
  return d;
}

DescriptorMatrix stack_descriptors(const DescriptorMatrix& hks, const DescriptorMatrix& wks) {
  if (wks.values.cols() > 0 && hks.values.cols() > 0 &&
      hks.values.rows() != wks.values.rows())
    throw ParamError("descriptor row counts differ");
  DescriptorMatrix d;
  d.kind = DescriptorKind::stacked;
  const Eigen::Index n = hks.values.cols() > 0 ? hks.values.rows() : wks.values.rows();
  d.values.resize(n, hks.values.cols() + wks.values.cols());
  if (hks.values.cols() > 0) d.values.leftCols(hks.values.cols()) = hks.values;
  if (wks.values.cols() > 0) d.values.rightCols(wks.values.cols()) = wks.values;
  d.scales.resize(hks.scales.size() + wks.scales.size());
  if (hks.scales.size() > 0) d.scales.head(hks.scales.size()) = hks.scales;
  if (wks.scales.size() > 0) d.scales.tail(wks.scales.size()) = wks.scales;
  return d;
}

ElbowCurve suggest_k(const std::vector<Eigen::VectorXd>& spectra) {
  if (spectra.empty()) throw ParamError("suggest_k needs at least one spectrum");
  const Eigen::Index len = spectra.front().size() - 1;
  if (len < 3) throw ParamError("spectra too short for an elbow estimate");
  ElbowCurve out;
  out.mean_log_eigenvalues = Eigen::VectorXd::Zero(len);
  for (const auto& s : spectra) {
    if (s.size() != len + 1) throw ParamError("spectra have inconsistent lengths");
    for (Eigen::Index j = 1; j < s.size(); ++j)
      out.mean_log_eigenvalues(j - 1) += std::log(std::max(s(j), 1e-300));
  }
  out.mean_log_eigenvalues /= static_cast<double>(spectra.size());

  double best = -1;
  Eigen::Index best_j = 1;
  for (Eigen::Index j = 1; j + 1 < len; ++j) {
    const auto& y = out.mean_log_eigenvalues;
    const double d2 = y(j - 1) - 2.0 * y(j) + y(j + 1);
    const double d1 = 0.5 * (y(j + 1) - y(j - 1));
    const double kappa = std::abs(d2) / std::pow(1.0 + d1 * d1, 1.5);
    if (kappa > best) {
      best = kappa;
      best_j = j;
    }
  }
  // +1 for the dropped zero mode, +1 to convert index to count.
  out.suggested_k = static_cast<int>(best_j) + 2;
  return out;
}

void export_features(const std::filesystem::path& path,
                     const std::vector<std::string>& sample_ids,
                     const std::vector<Eigen::VectorXd>& lambdas,
                     const std::vector<Eigen::VectorXd>& beta_abs) {
  if (sample_ids.size() != lambdas.size() || sample_ids.size() != beta_abs.size())
    throw ParamError("feature export: input lists differ in length");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "sample_id,feature_kind,index,value\n";
  char buf[64];
  for (size_t s = 0; s < sample_ids.size(); ++s) {
    for (Eigen::Index i = 0; i < lambdas[s].size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%ld,%.17g\n", static_cast<long>(i), lambdas[s](i));
      out << sample_ids[s] << ",lambda," << buf;
    }
    for (Eigen::Index i = 0; i < beta_abs[s].size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%ld,%.17g\n", static_cast<long>(i), beta_abs[s](i));
      out << sample_ids[s] << ",beta_abs," << buf;
    }
  }
  if (!out) throw IoError("write failure on " + path.string());
}

} // namespace smac
