#pragma once

#include "smac/knn.hpp"
#include "smac/laplacian.hpp"
#include "smac/point_cloud.hpp"
#include "smac/spectral.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace smac {

// k x k functional map transporting coefficients from the reference eigenbasis
// to a sample's; its transpose pulls sample coefficients back.
struct FunctionalMap {
  Eigen::MatrixXd matrix;
  std::string source_id;
  std::string target_id;
};

// Closed-form row-decoupled solve of the descriptor-preservation objective
// with a Laplacian-commutativity ridge of strength eta.
FunctionalMap estimate_functional_map(const Spectrum& ref_spec, const LaplacianPair& ref_pair,
                                      const DescriptorMatrix& ref_desc,
                                      const Spectrum& smp_spec, const LaplacianPair& smp_pair,
                                      const DescriptorMatrix& smp_desc, double eta);

// Explicit objective value; used for optimality spot checks.
double functional_map_objective(const Eigen::MatrixXd& C, const Eigen::MatrixXd& A0,
                                const Eigen::MatrixXd& A1, const Eigen::VectorXd& ref_evals,
                                const Eigen::VectorXd& smp_evals, double eta);

struct TransportedTexture {
  Eigen::VectorXd values; // on the reference cloud
  std::string source_id;
};

TransportedTexture transport_texture(const FunctionalMap& map, const ColorRegression& reg,
                                     const Spectrum& ref_spec);

// Threshold-free cluster enhancement of a nonnegative statistic field over the
// symmetrized kNN adjacency. dh <= 0 selects max(stat)/100.
Eigen::VectorXd tfce_enhance(const Eigen::VectorXd& stat, const KnnGraph& adjacency,
                             double dh = 0, double E = 0.5, double H = 2.0);

enum class Verdict { shape_only, shape_and_color };

struct DiagnosticReport {
  Verdict verdict = Verdict::shape_only;
  Eigen::VectorXd p_values;
  std::vector<bool> significant_mask; // p < alpha
  double alpha = 0.01;
  int n_permutations = 999;
  Eigen::VectorXd f_stats;
  Eigen::VectorXd tfce;
};

struct TestOptions {
  int adjacency_k = 10;
  double tfce_dh = 0; // auto
  double tfce_E = 0.5;
  double tfce_H = 2.0;
};

// Two-sample point-wise F-test with TFCE and max-statistic permutation null;
// controls the family-wise error rate at alpha.
DiagnosticReport pointwise_test(const std::vector<TransportedTexture>& ic_textures,
                                const std::vector<TransportedTexture>& oc_textures,
                                const PointCloud4D& reference, double alpha,
                                int n_permutations, std::uint64_t rng_seed,
                                const TestOptions& opts = {});

// Single-sample fallback: one-sided thresholding of the texture difference
// map. No FWER control.
std::vector<bool> threshold_localize(const std::vector<TransportedTexture>& ic_textures,
                                     const TransportedTexture& oc_texture,
                                     double quantile = 0.99);

} // namespace smac
