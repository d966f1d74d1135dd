#pragma once

#include "smac/eigs.hpp"
#include "smac/laplacian.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace smac {

// Lower spectrum of the generalized problem L u = lambda M u. Eigenvalues
// ascend from the (numerically) zero kernel mode; eigenfunction columns are
// M-orthonormal with a fixed sign convention (largest-magnitude entry
// positive, ties to the lowest index).
struct Spectrum {
  Eigen::VectorXd eigenvalues;  // k, ascending, nonnegative
  Eigen::MatrixXd eigenfunctions; // n x k
  int k = 0;
};

struct SolveOptions {
  EigOptions eig;
  // Warn (stderr) when consecutive eigenvalues are closer than this relative
  // gap; repeated eigenvalues make the basis ambiguous.
  double repeated_gap_warn = 1e-6;
  bool quiet = false;
};

Spectrum solve_eigs(const LaplacianPair& pair, int k, const SolveOptions& opts = {});

// Eigenvalues with the zero mode removed (indices 1..k-1).
Eigen::VectorXd drop_zero_eigenvalue(const Spectrum& spec);

// Mass-weighted least squares of a color vector on the eigenbasis.
struct ColorRegression {
  Eigen::VectorXd coefficients;     // beta-hat, length k
  Eigen::VectorXd abs_coefficients; // |beta-hat|
  double residual_norm = 0;         // M-weighted norm of y - U beta-hat
};

ColorRegression regress_color(const Spectrum& spec, const LaplacianPair& pair,
                              const Eigen::VectorXd& color);

enum class DescriptorKind { hks, wks, stacked };

struct DescriptorMatrix {
  Eigen::MatrixXd values; // n x p
  DescriptorKind kind = DescriptorKind::hks;
  Eigen::VectorXd scales; // HKS times / WKS energies
};

// Heat kernel signature at `count` log-spaced times; zero mode excluded.
// t_min/t_max <= 0 selects the 4 ln 10 / lambda defaults.
DescriptorMatrix compute_hks(const Spectrum& spec, int count, double t_min = 0,
                             double t_max = 0);
DescriptorMatrix compute_hks_serial(const Spectrum& spec, int count, double t_min = 0,
                                    double t_max = 0);

// Wave kernel signature at `count` energies uniform in log-eigenvalue space,
// shrunk inward by 2 sigma; sigma <= 0 selects 7x the energy spacing.
DescriptorMatrix compute_wks(const Spectrum& spec, int count, double sigma = 0);

DescriptorMatrix stack_descriptors(const DescriptorMatrix& hks, const DescriptorMatrix& wks);

// Elbow-rule helper: mean log-eigenvalue curve over reference samples and the
// maximum-curvature index as a suggested k. A stand-in heuristic; the curve
// is returned so the choice can be inspected.
struct ElbowCurve {
  Eigen::VectorXd mean_log_eigenvalues; // over nonzero modes
  int suggested_k = 0;
};

ElbowCurve suggest_k(const std::vector<Eigen::VectorXd>& spectra);

// Feature CSV rows: sample_id, feature_kind in {lambda, beta_abs}, index, value.
void export_features(const std::filesystem::path& path,
                     const std::vector<std::string>& sample_ids,
                     const std::vector<Eigen::VectorXd>& lambdas,
                     const std::vector<Eigen::VectorXd>& beta_abs);

} // namespace smac
