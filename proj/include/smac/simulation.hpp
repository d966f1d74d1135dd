#pragma once

#include "smac/knn.hpp"
#include "smac/monitoring.hpp"
#include "smac/point_cloud.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace smac {

struct NominalDesign {
  PointCloud4D base_cloud;
  std::string name;
};

enum class NominalShape { sphere, torus, two_lobe };

NominalShape shape_from_string(const std::string& name);

// Quasi-uniform sampling of a built-in surface; nominal color is an affine
// map of the z-coordinate onto [0, 10].
NominalDesign make_nominal(NominalShape shape, int n, std::uint64_t rng_seed);
NominalDesign make_nominal_from_file(const std::filesystem::path& path);

struct NoiseSpec {
  double tau_s = 1e-3;
  double tau_c = 1e-2;
  int n_min = 0; // 0 = base size
  int n_max = 0;
};

PointCloud4D sample_ic(const NominalDesign& design, const NoiseSpec& noise,
                       std::uint64_t rng_seed);

enum class DefectKind { none, roughness, color_spots, combined };

DefectKind defect_from_string(const std::string& name);
const char* to_string(DefectKind kind);

struct DefectSpec {
  DefectKind kind = DefectKind::combined;
  double region_fraction = 0.05;
  double spot_fraction = 0.01;
  double snr = 1.25;       // roughness noise multiplier tau~_s / tau_s
  double color_shift = 0.1; // additive, signed
};

// Defect placement is a deterministic function of the design (the same region
// across a whole study); returns (region indices, spot indices) on the
// nominal cloud.
std::pair<std::vector<int>, std::vector<int>> defect_region(const NominalDesign& design,
                                                            const DefectSpec& defect);

struct OcSample {
  PointCloud4D cloud;
  std::vector<bool> true_mask; // on nominal cloud indices
};

// Identical draw path to sample_ic for equal seeds; the defect is applied on
// top from a separately derived stream.
OcSample sample_oc(const NominalDesign& design, const NoiseSpec& noise,
                   const DefectSpec& defect, std::uint64_t rng_seed);

// Graph-Laplacian baseline features: the k-1 nonzero smallest eigenvalues of
// D - W with Gaussian weights over 4D distances (color rescaled to the
// bounding-box diagonal).
Eigen::VectorXd gl_baseline_features(const PointCloud4D& cloud, const KnnGraph& graph,
                                     int k, const EigOptions& eig = {});

enum class Method { smac, gl };

Method method_from_string(const std::string& name);
const char* to_string(Method m);

struct StudyParams {
  int k_eig = 51;
  FeatureOptions features; // knn_k = 30 etc.
};

struct ArlSummary {
  std::vector<double> run_lengths;
  double aarl = 0;
  double sd = 0;
  int n_replications = 0;
  int censored = 0;
  int source_shape = 0;
  int source_color = 0;
  int source_both = 0;
  std::string method;
  std::string defect_kind = "none";
  double snr = 1.0;
  double color_shift = 0.0;
};

// Monte Carlo ARL study: per replication, a fresh reference sample is drawn
// and calibrated, then a stream (IC, or OC from step 1) runs until a signal
// or max_run_length.
ArlSummary run_arl_study(const NominalDesign& design, const NoiseSpec& noise,
                         const std::optional<DefectSpec>& defect,
                         const CalibrationConfig& cfg, Method method, int n_replications,
                         std::uint64_t rng_seed, const StudyParams& params);

void write_arl_summary_csv(const std::filesystem::path& path, const ArlSummary& summary);
void write_run_lengths_csv(const std::filesystem::path& path, const ArlSummary& summary);

} // namespace smac
