#include "smac/config.hpp"

#include "smac/error.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace smac {

namespace {

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

} // namespace

std::string StudyConfig::serialize() const {
  std::ostringstream out;
  out << "shape = " << shape << "\n";
  out << "input = " << input << "\n";
  out << "n = " << n << "\n";
  out << "design_seed = " << design_seed << "\n";
  out << "tau_s = " << fmt_double(tau_s) << "\n";
  out << "tau_c = " << fmt_double(tau_c) << "\n";
  out << "n_min = " << n_min << "\n";
  out << "n_max = " << n_max << "\n";
  out << "defect = " << defect << "\n";
  out << "region_fraction = " << fmt_double(region_fraction) << "\n";
  out << "spot_fraction = " << fmt_double(spot_fraction) << "\n";
  out << "snr = " << fmt_double(snr) << "\n";
  out << "color_shift = " << fmt_double(color_shift) << "\n";
  out << "k_eig = " << k_eig << "\n";
  out << "knn_k = " << knn_k << "\n";
  out << "epsilon_fraction = " << fmt_double(epsilon_fraction) << "\n";
  out << "dense_threshold = " << dense_threshold << "\n";
  out << "m1 = " << m1 << "\n";
  out << "m2 = " << m2 << "\n";
  out << "m3 = " << m3 << "\n";
  out << "arl0 = " << fmt_double(arl0) << "\n";
  out << "k_s = " << fmt_double(k_s) << "\n";
  out << "k_c = " << fmt_double(k_c) << "\n";
  out << "n_bootstrap = " << n_bootstrap << "\n";
  out << "max_run_length = " << max_run_length << "\n";
  out << "method = " << method << "\n";
  out << "n_replications = " << n_replications << "\n";
  out << "rng_seed = " << rng_seed << "\n";
  return out.str();
}

void StudyConfig::validate() const {
  if (shape != "sphere" && shape != "torus" && shape != "two_lobe" && shape != "from_file")
    throw ParamError("shape must be sphere, torus, two_lobe or from_file");
  if (shape == "from_file" && input.empty())
    throw ParamError("shape = from_file requires the input key");
  if (k_eig < 2) throw ParamError("k_eig must be >= 2");
  if (knn_k < 6) throw ParamError("knn_k must be >= 6");
  if (arl0 <= 1) throw ParamError("arl0 must be > 1");
  if (m1 < 2 || m2 < 2 || m3 < 2) throw ParamError("m1, m2, m3 must each be >= 2");
  if (n_bootstrap < 1) throw ParamError("n_bootstrap must be >= 1");
  if (max_run_length < 1) throw ParamError("max_run_length must be >= 1");
  if (method != "smac" && method != "gl") throw ParamError("method must be smac or gl");
  defect_from_string(defect); // throws on unknown
}

NoiseSpec StudyConfig::noise_spec() const { return {tau_s, tau_c, n_min, n_max}; }

CalibrationConfig StudyConfig::calibration_config() const {
  CalibrationConfig cfg;
  cfg.m1 = m1;
  cfg.m2 = m2;
  cfg.m3 = m3;
  cfg.arl0 = arl0;
  cfg.k_s = k_s;
  cfg.k_c = k_c;
  cfg.n_bootstrap = n_bootstrap;
  cfg.max_run_length = max_run_length;
  cfg.rng_seed = rng_seed;
  return cfg;
}

StudyParams StudyConfig::study_params() const {
  StudyParams params;
  params.k_eig = k_eig;
  params.features.knn_k = knn_k;
  params.features.epsilon_fraction = epsilon_fraction;
  params.features.solve.eig.dense_threshold = dense_threshold;
  return params;
}

NominalDesign StudyConfig::make_design() const {
  if (shape == "from_file") return make_nominal_from_file(input);
  return make_nominal(shape_from_string(shape), n, design_seed);
}

StudyConfig parse_config_text(const std::string& text, const std::string& origin) {
  StudyConfig cfg;
  std::istringstream in(text);
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(origin + ": line " + std::to_string(lineno) + ": expected key = value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
    };
    trim(key);
    trim(val);

    try {
      if (key == "shape") cfg.shape = val;
      else if (key == "input") cfg.input = val;
      else if (key == "n") cfg.n = std::stoi(val);
      else if (key == "design_seed") cfg.design_seed = std::stoull(val);
      else if (key == "tau_s") cfg.tau_s = std::stod(val);
      else if (key == "tau_c") cfg.tau_c = std::stod(val);
      else if (key == "n_min") cfg.n_min = std::stoi(val);
      else if (key == "n_max") cfg.n_max = std::stoi(val);
      else if (key == "defect") cfg.defect = val;
      else if (key == "region_fraction") cfg.region_fraction = std::stod(val);
      else if (key == "spot_fraction") cfg.spot_fraction = std::stod(val);
      else if (key == "snr") cfg.snr = std::stod(val);
      else if (key == "color_shift") cfg.color_shift = std::stod(val);
      else if (key == "k_eig") cfg.k_eig = std::stoi(val);
      else if (key == "knn_k") cfg.knn_k = std::stoi(val);
      else if (key == "epsilon_fraction") cfg.epsilon_fraction = std::stod(val);
      else if (key == "dense_threshold") cfg.dense_threshold = std::stoi(val);
      else if (key == "m1") cfg.m1 = std::stoi(val);
      else if (key == "m2") cfg.m2 = std::stoi(val);
      else if (key == "m3") cfg.m3 = std::stoi(val);
      else if (key == "arl0") cfg.arl0 = std::stod(val);
      else if (key == "k_s") cfg.k_s = std::stod(val);
      else if (key == "k_c") cfg.k_c = std::stod(val);
      else if (key == "n_bootstrap") cfg.n_bootstrap = std::stoi(val);
      else if (key == "max_run_length") cfg.max_run_length = std::stoi(val);
      else if (key == "method") cfg.method = val;
      else if (key == "n_replications") cfg.n_replications = std::stoi(val);
      else if (key == "rng_seed") cfg.rng_seed = std::stoull(val);
      else
        throw ParamError(origin + ": line " + std::to_string(lineno) + ": unknown key '" +
                         key + "'");
    } catch (const std::invalid_argument& e) {
      if (dynamic_cast<const ParamError*>(&e)) throw;
      throw ParseError(origin + ": line " + std::to_string(lineno) + ": bad value '" + val +
                       "' for key '" + key + "'");
    } catch (const std::out_of_range&) {
      throw ParseError(origin + ": line " + std::to_string(lineno) + ": value out of range");
    }
  }
  return cfg;
}

StudyConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

void write_config(const StudyConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << cfg.serialize();
  if (!out) throw IoError("write failure on " + path.string());
}

} // namespace smac
