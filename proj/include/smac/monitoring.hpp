#pragma once

#include "smac/point_cloud.hpp"
#include "smac/spectral.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace smac {

// Affine whitening transform fit on a reference feature sample.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::MatrixXd whitening; // symmetric inverse square root of the covariance
  // || cov(whitened training data) - I ||_F, reported per the m1 sizing
  // guideline: it should shrink as the reference sample grows.
  double fro_discrepancy = 0;

  Eigen::Index dim() const { return mean.size(); }
};

Standardizer fit_standardizer(const Eigen::MatrixXd& features);

// Squared L2 norm of the whitened feature vector.
double statistic(const Standardizer& s, const Eigen::VectorXd& x);

// One-sided upper CUSUM.
struct CusumChart {
  double mu = 0;
  double sigma = 1;
  double k_ref = 0.05;
  double h = 1;
  double state = 0;
};

CusumChart cusum_update(const CusumChart& chart, double x);

enum class SignalSource { none, shape, color, both };

const char* to_string(SignalSource s);

struct CombinedChartState {
  CusumChart shape_chart;
  CusumChart color_chart;
  long time_index = 0;
  SignalSource last_signal = SignalSource::none;
};

// Updates both charts; charts are not reset on signal.
std::pair<CombinedChartState, SignalSource> combined_step(const CombinedChartState& state,
                                                          double s, double c);

struct CalibrationConfig {
  int m1 = 200;
  int m2 = 100;
  int m3 = 500;
  double arl0 = 100;
  double k_s = 0.05;
  double k_c = 0.05;
  int n_bootstrap = 1000;
  int max_run_length = 4000;
  std::uint64_t rng_seed = 1;
};

// Bootstrap-assisted bisection of a single chart's limit: resampled-with-
// replacement sequences from the standardized statistics z, ARL driven into
// target_arl * (1 +- 0.02). Used for each chart alone and by the GL baseline.
double calibrate_single_limit(const Eigen::VectorXd& z, double k_ref, double target_arl,
                              const CalibrationConfig& cfg, std::uint64_t stream_tag);

// Two-stage combined calibration: each chart is first tuned to an individual
// ARL of 2*arl0, then a joint multiplier on both limits drives the combined
// bootstrap ARL (paired resampling) into arl0 * (1 +- 0.02).
// s_cal and c_cal are the standardized calibration statistics (x - mu)/sigma.
std::pair<double, double> calibrate_limits(const Eigen::VectorXd& s_cal,
                                           const Eigen::VectorXd& c_cal,
                                           const CalibrationConfig& cfg);

// Feature extraction settings shared by monitoring, diagnostics and the CLI.
struct FeatureOptions {
  int knn_k = 30;
  double epsilon_fraction = 1e-4;
  SolveOptions solve;
};

struct FeaturePair {
  Eigen::VectorXd lambda;   // k-1 nonzero eigenvalues
  Eigen::VectorXd beta_abs; // k absolute regression coefficients
};

FeaturePair extract_features(const PointCloud4D& cloud, int k_eig,
                             const FeatureOptions& opts);

// Everything needed to monitor a stream: fit on a reference sample split into
// sequential blocks of m1 (standardizers), m2 (statistic moments) and m3
// (control limits).
struct CalibrationModel {
  int k_eig = 0;
  int knn_k = 30;
  std::uint64_t seed = 0;
  Standardizer lambda_std;
  Standardizer beta_std;
  CusumChart shape_chart; // state 0, parameters calibrated
  CusumChart color_chart;
};

CalibrationModel calibrate_model(const std::vector<FeaturePair>& reference,
                                 const CalibrationConfig& cfg, int k_eig, int knn_k);

void save_calibration(const CalibrationModel& model, const std::filesystem::path& path);
CalibrationModel load_calibration(const std::filesystem::path& path);

struct StepRecord {
  long t = 0; // 1-based
  double s = 0;
  double c = 0;
  double cusum_s = 0;
  double cusum_c = 0;
  SignalSource signal = SignalSource::none;
};

struct MonitoringReport {
  std::vector<StepRecord> steps;
  std::optional<long> run_length; // first signalling step
  SignalSource first_source = SignalSource::none;
};

// Statistics for one cloud under a fitted model.
std::pair<double, double> model_statistics(const CalibrationModel& model,
                                           const FeaturePair& features);

// Runs the charts over a pre-extracted feature stream.
MonitoringReport monitor_stream(const CalibrationModel& model,
                                const std::vector<FeaturePair>& stream,
                                bool stop_at_signal = false);

// End-to-end: extract reference features, calibrate, monitor the stream.
MonitoringReport run_monitoring(const std::vector<PointCloud4D>& reference,
                                const std::vector<PointCloud4D>& stream,
                                const CalibrationConfig& cfg, int k_eig,
                                const FeatureOptions& opts = {});

void write_step_csv(const std::filesystem::path& path, const MonitoringReport& report);

} // namespace smac
