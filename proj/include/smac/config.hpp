#pragma once

#include "smac/monitoring.hpp"
#include "smac/simulation.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace smac {

// Flat key = value study configuration shared by the CLI subcommands.
// Unknown keys are rejected; serialize() emits every key (the resolved echo),
// and parsing that echo reproduces the config exactly.
struct StudyConfig {
  std::string shape = "sphere";
  std::string input; // cloud path when shape = from_file
  int n = 1500;
  std::uint64_t design_seed = 7;

  double tau_s = 1e-3;
  double tau_c = 1e-2;
  int n_min = 0;
  int n_max = 0;

  std::string defect = "none";
  double region_fraction = 0.05;
  double spot_fraction = 0.01;
  double snr = 1.25;
  double color_shift = 0.1;

  int k_eig = 51;
  int knn_k = 30;
  double epsilon_fraction = 1e-4;
  int dense_threshold = 600;

  int m1 = 200;
  int m2 = 100;
  int m3 = 500;
  double arl0 = 100;
  double k_s = 0.05;
  double k_c = 0.05;
  int n_bootstrap = 1000;
  int max_run_length = 4000;

  std::string method = "smac";
  int n_replications = 10;
  std::uint64_t rng_seed = 1;

  std::string serialize() const;
  void validate() const;

  NoiseSpec noise_spec() const;
  CalibrationConfig calibration_config() const;
  StudyParams study_params() const;
  NominalDesign make_design() const;

  bool operator==(const StudyConfig&) const = default;
};

StudyConfig parse_config_text(const std::string& text, const std::string& origin = "<string>");
StudyConfig load_config(const std::filesystem::path& path);
void write_config(const StudyConfig& cfg, const std::filesystem::path& path);

} // namespace smac
