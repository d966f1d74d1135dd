#include "smac/monitoring.hpp"

#include "smac/error.hpp"
#include "smac/knn.hpp"
#include "smac/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace smac {

Standardizer fit_standardizer(const Eigen::MatrixXd& features) {
  const Eigen::Index m = features.rows();
  const Eigen::Index d = features.cols();
  if (m <= d)
    throw ParamError("standardizer needs m > d (= " + std::to_string(d) +
                     "); increase the m1 reference block");
  if (!features.allFinite()) throw ValidationError("non-finite feature entries");

  Standardizer s;
  s.mean = features.colwise().mean();
  Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(m - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw SolverError("covariance eigendecomposition failed");
  const double floor = 1e-10 * cov.trace() / static_cast<double>(d);
  Eigen::VectorXd inv_sqrt =
      es.eigenvalues().cwiseMax(floor).array().sqrt().inverse();
  s.whitening =
      es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose();

  Eigen::MatrixXd cov_z = s.whitening * cov * s.whitening;
  s.fro_discrepancy =
      (cov_z - Eigen::MatrixXd::Identity(d, d)).norm();
  return s;
}

double statistic(const Standardizer& s, const Eigen::VectorXd& x) {
  if (x.size() != s.dim())
    throw ParamError("statistic: dimension mismatch (" + std::to_string(x.size()) +
                     " vs " + std::to_string(s.dim()) + ")");
  return (s.whitening * (x - s.mean)).squaredNorm();
}

CusumChart cusum_update(const CusumChart& chart, double x) {
  CusumChart out = chart;
  out.state = std::max(0.0, chart.state + (x - chart.mu) / chart.sigma - chart.k_ref);
  return out;
}

const char* to_string(SignalSource s) {
  switch (s) {
    case SignalSource::none: return "none";
    case SignalSource::shape: return "shape";
    case SignalSource::color: return "color";
    case SignalSource::both: return "both";
  }
  return "none";
}

std::pair<CombinedChartState, SignalSource> combined_step(const CombinedChartState& state,
                                                          double s, double c) {
  CombinedChartState out = state;
  out.shape_chart = cusum_update(state.shape_chart, s);
  out.color_chart = cusum_update(state.color_chart, c);
  out.time_index = state.time_index + 1;
  const bool sig_s = out.shape_chart.state > out.shape_chart.h;
  const bool sig_c = out.color_chart.state > out.color_chart.h;
  SignalSource sig = SignalSource::none;
  if (sig_s && sig_c)
    sig = SignalSource::both;
  else if (sig_s)
    sig = SignalSource::shape;
  else if (sig_c)
    sig = SignalSource::color;
  out.last_signal = sig;
  return {out, sig};
}

namespace {

// First-passage time of one bootstrap CUSUM run over resampled indices.
long bootstrap_run_length(const Eigen::VectorXd& z, double k_ref, double h,
                          int max_run_length, std::mt19937_64& rng) {
  std::uniform_int_distribution<Eigen::Index> pick(0, z.size() - 1);
  double state = 0;
  for (int t = 1; t <= max_run_length; ++t) {
    state = std::max(0.0, state + z(pick(rng)) - k_ref);
    if (state > h) return t;
  }
  return max_run_length;
}

// Mean bootstrap ARL at limit h; common random numbers across calls (the
// replication streams are derived from (seed, tag, replication)).
double bootstrap_arl(const Eigen::VectorXd& z, double k_ref, double h,
                     const CalibrationConfig& cfg, std::uint64_t tag) {
  std::vector<double> rl(static_cast<size_t>(cfg.n_bootstrap));
#pragma omp parallel for schedule(dynamic, 16)
  for (int b = 0; b < cfg.n_bootstrap; ++b) {
    auto rng = make_engine(derive_seed(cfg.rng_seed, tag + static_cast<std::uint64_t>(b)));
    rl[static_cast<size_t>(b)] = static_cast<double>(
        bootstrap_run_length(z, k_ref, h, cfg.max_run_length, rng));
  }
  double sum = 0;
  for (double v : rl) sum += v;
  return sum / static_cast<double>(cfg.n_bootstrap);
}

// Combined-scheme bootstrap ARL with jointly resampled (s, c) pairs.
double bootstrap_combined_arl(const Eigen::VectorXd& zs, const Eigen::VectorXd& zc,
                              double k_s, double k_c, double h_s, double h_c,
                              const CalibrationConfig& cfg, std::uint64_t tag) {
  std::vector<double> rl(static_cast<size_t>(cfg.n_bootstrap));
#pragma omp parallel for schedule(dynamic, 16)
  for (int b = 0; b < cfg.n_bootstrap; ++b) {
    auto rng = make_engine(derive_seed(cfg.rng_seed, tag + static_cast<std::uint64_t>(b)));
    std::uniform_int_distribution<Eigen::Index> pick(0, zs.size() - 1);
    double cs = 0, cc = 0;
    long passage = cfg.max_run_length;
    for (int t = 1; t <= cfg.max_run_length; ++t) {
      const Eigen::Index i = pick(rng); // joint index keeps cross-dependence
      cs = std::max(0.0, cs + zs(i) - k_s);
      cc = std::max(0.0, cc + zc(i) - k_c);
      if (cs > h_s || cc > h_c) {
        passage = t;
        break;
      }
    }
    rl[static_cast<size_t>(b)] = static_cast<double>(passage);
  }
  double sum = 0;
  for (double v : rl) sum += v;
  return sum / static_cast<double>(cfg.n_bootstrap);
}

constexpr double kBracketLo = 0.01;
constexpr double kBracketHi = 100.0;
constexpr double kArlBand = 0.02;

} // namespace

double calibrate_single_limit(const Eigen::VectorXd& z, double k_ref, double target_arl,
                              const CalibrationConfig& cfg, std::uint64_t stream_tag) {
  if (z.size() < 2) throw CalibrationError("calibration sample too small");
  if ((z.array() - z(0)).abs().maxCoeff() == 0.0)
    throw CalibrationError("degenerate calibration statistics (all equal); no alarms possible");

  auto arl_at = [&](double h) { return bootstrap_arl(z, k_ref, h, cfg, stream_tag); };

  double lo = kBracketLo, hi = kBracketHi;
  const double arl_lo = arl_at(lo);
  if (arl_lo > target_arl * (1 + kArlBand))
    throw CalibrationError(
        "no alarms even at the lower limit bracket; the calibration sample "
        "(m3) is too small or the statistics are degenerate");
  const double arl_hi = arl_at(hi);
  if (arl_hi < target_arl * (1 - kArlBand))
    throw CalibrationError("bisection bracket [0.01, 100] does not contain the target ARL");

  double best_h = hi;
  double best_gap = std::abs(arl_hi - target_arl);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double arl = arl_at(mid);
    if (arl >= target_arl * (1 - kArlBand) && arl <= target_arl * (1 + kArlBand)) return mid;
    if (std::abs(arl - target_arl) < best_gap) {
      best_gap = std::abs(arl - target_arl);
      best_h = mid;
    }
    if (arl < target_arl)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-9 * std::max(1.0, hi)) break;
  }
  // The bracket collapsed onto a step of the bootstrap ARL function that
  // straddles the band; the limit point is the calibrated limit as long as
  // the nearest attainable ARL is reasonable.
  if (best_gap <= 0.25 * target_arl) return best_h;
  throw CalibrationError("bisection failed to approach the target ARL (closest " +
                         std::to_string(target_arl + best_gap) + " vs target " +
                         std::to_string(target_arl) + "); increase m3 or n_bootstrap");
}

std::pair<double, double> calibrate_limits(const Eigen::VectorXd& s_cal,
                                           const Eigen::VectorXd& c_cal,
                                           const CalibrationConfig& cfg) {
  if (s_cal.size() != c_cal.size())
    throw ParamError("calibration statistic vectors differ in length");
  // Stage 1: each chart alone at twice the combined target.
  const double h_s = calibrate_single_limit(s_cal, cfg.k_s, 2.0 * cfg.arl0, cfg, 0x51000000ULL);
  const double h_c = calibrate_single_limit(c_cal, cfg.k_c, 2.0 * cfg.arl0, cfg, 0x52000000ULL);

  // Stage 2: joint multiplier on both limits.
  auto arl_at = [&](double rho) {
    return bootstrap_combined_arl(s_cal, c_cal, cfg.k_s, cfg.k_c, rho * h_s, rho * h_c, cfg,
                                  0x53000000ULL);
  };
  double lo = 0.25, hi = 4.0;
  if (arl_at(lo) > cfg.arl0 * (1 + kArlBand))
    throw CalibrationError("combined calibration: ARL above target at multiplier 0.25");
  if (arl_at(hi) < cfg.arl0 * (1 - kArlBand))
    throw CalibrationError("combined calibration: ARL below target at multiplier 4");
  double best_rho = 1.0;
  double best_gap = std::abs(arl_at(1.0) - cfg.arl0);
  for (int it = 0; it < 200; ++it) {
    const double rho = 0.5 * (lo + hi);
    const double arl = arl_at(rho);
    if (arl >= cfg.arl0 * (1 - kArlBand) && arl <= cfg.arl0 * (1 + kArlBand))
      return {rho * h_s, rho * h_c};
    if (std::abs(arl - cfg.arl0) < best_gap) {
      best_gap = std::abs(arl - cfg.arl0);
      best_rho = rho;
    }
    if (arl < cfg.arl0)
      lo = rho;
    else
      hi = rho;
    if (hi - lo < 1e-9) break;
  }
  if (best_gap <= 0.25 * cfg.arl0) return {best_rho * h_s, best_rho * h_c};
  throw CalibrationError("combined bisection failed to approach the target ARL; "
                         "increase m3 or n_bootstrap");
}

FeaturePair extract_features(const PointCloud4D& cloud, int k_eig,
                             const FeatureOptions& opts) {
  const KnnGraph graph = build_knn(cloud, opts.knn_k);
  const LaplacianPair pair = build_laplacian(cloud, graph, opts.epsilon_fraction);
  const Spectrum spec = solve_eigs(pair, k_eig, opts.solve);
  const ColorRegression reg = regress_color(spec, pair, cloud.color);
  return {drop_zero_eigenvalue(spec), reg.abs_coefficients};
}

CalibrationModel calibrate_model(const std::vector<FeaturePair>& reference,
                                 const CalibrationConfig& cfg, int k_eig, int knn_k) {
  const size_t need = static_cast<size_t>(cfg.m1) + static_cast<size_t>(cfg.m2) +
                      static_cast<size_t>(cfg.m3);
  if (reference.size() < need)
    throw ParamError("reference sample has " + std::to_string(reference.size()) +
                     " clouds; m1+m2+m3 = " + std::to_string(need) + " required");
  if (cfg.arl0 <= 1) throw ParamError("arl0 must be > 1");

  const Eigen::Index d_lambda = reference.front().lambda.size();
  const Eigen::Index d_beta = reference.front().beta_abs.size();

  // Subset 1 (sequential block): feature standardizers.
  Eigen::MatrixXd lam(cfg.m1, d_lambda), bet(cfg.m1, d_beta);
  for (int i = 0; i < cfg.m1; ++i) {
    lam.row(i) = reference[static_cast<size_t>(i)].lambda.transpose();
    bet.row(i) = reference[static_cast<size_t>(i)].beta_abs.transpose();
  }
  CalibrationModel model;
  model.k_eig = k_eig;
  model.knn_k = knn_k;
  model.seed = cfg.rng_seed;
  model.lambda_std = fit_standardizer(lam);
  model.beta_std = fit_standardizer(bet);

  // Subset 2: in-control moments of the two statistics.
  Eigen::VectorXd s2(cfg.m2), c2(cfg.m2);
  for (int i = 0; i < cfg.m2; ++i) {
    const auto& f = reference[static_cast<size_t>(cfg.m1 + i)];
    s2(i) = statistic(model.lambda_std, f.lambda);
    c2(i) = statistic(model.beta_std, f.beta_abs);
  }
  const double mu_s = s2.mean(), mu_c = c2.mean();
  const double sd_s = std::sqrt((s2.array() - mu_s).square().sum() / (cfg.m2 - 1));
  const double sd_c = std::sqrt((c2.array() - mu_c).square().sum() / (cfg.m2 - 1));
  if (!(sd_s > 0) || !(sd_c > 0))
    throw CalibrationError("zero variance of a monitoring statistic on subset 2");

  model.shape_chart = {mu_s, sd_s, cfg.k_s, 1.0, 0.0};
  model.color_chart = {mu_c, sd_c, cfg.k_c, 1.0, 0.0};

  // Subset 3: control limits from standardized statistics.
  Eigen::VectorXd zs(cfg.m3), zc(cfg.m3);
  for (int i = 0; i < cfg.m3; ++i) {
    const auto& f = reference[static_cast<size_t>(cfg.m1 + cfg.m2 + i)];
    zs(i) = (statistic(model.lambda_std, f.lambda) - mu_s) / sd_s;
    zc(i) = (statistic(model.beta_std, f.beta_abs) - mu_c) / sd_c;
  }
  const auto [h_s, h_c] = calibrate_limits(zs, zc, cfg);
  model.shape_chart.h = h_s;
  model.color_chart.h = h_c;
  return model;
}

std::pair<double, double> model_statistics(const CalibrationModel& model,
                                           const FeaturePair& features) {
  return {statistic(model.lambda_std, features.lambda),
          statistic(model.beta_std, features.beta_abs)};
}

MonitoringReport monitor_stream(const CalibrationModel& model,
                                const std::vector<FeaturePair>& stream,
                                bool stop_at_signal) {
  MonitoringReport report;
  CombinedChartState state;
  state.shape_chart = model.shape_chart;
  state.color_chart = model.color_chart;
  for (const auto& f : stream) {
    const auto [s, c] = model_statistics(model, f);
    auto [next, sig] = combined_step(state, s, c);
    state = next;
    report.steps.push_back({state.time_index, s, c, state.shape_chart.state,
                            state.color_chart.state, sig});
    if (sig != SignalSource::none && !report.run_length) {
      report.run_length = state.time_index;
      report.first_source = sig;
      if (stop_at_signal) break;
    }
  }
  return report;
}

MonitoringReport run_monitoring(const std::vector<PointCloud4D>& reference,
                                const std::vector<PointCloud4D>& stream,
                                const CalibrationConfig& cfg, int k_eig,
                                const FeatureOptions& opts) {
  auto extract_all = [&](const std::vector<PointCloud4D>& clouds) {
    std::vector<FeaturePair> features(clouds.size());
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(clouds.size()); ++i) {
      try {
        features[static_cast<size_t>(i)] =
            extract_features(clouds[static_cast<size_t>(i)], k_eig, opts);
      } catch (...) {
#pragma omp critical
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
    return features;
  };

  const CalibrationModel model =
      calibrate_model(extract_all(reference), cfg, k_eig, opts.knn_k);
  return monitor_stream(model, extract_all(stream));
}

namespace {

void write_matrix_block(std::ofstream& out, const std::string& key,
                        const Eigen::MatrixXd& m) {
  out << key << " = matrix " << m.rows() << " " << m.cols() << "\n";
  char buf[64];
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(r, c));
      out << buf << (c + 1 < m.cols() ? "," : "\n");
    }
  }
}

} // namespace

void save_calibration(const CalibrationModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[64];
  auto scalar = [&](const std::string& key, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << key << " = " << buf << "\n";
  };
  out << "k_eig = " << model.k_eig << "\n";
  out << "knn_k = " << model.knn_k << "\n";
  out << "seed = " << model.seed << "\n";
  scalar("shape_mu", model.shape_chart.mu);
  scalar("shape_sigma", model.shape_chart.sigma);
  scalar("shape_k", model.shape_chart.k_ref);
  scalar("shape_h", model.shape_chart.h);
  scalar("color_mu", model.color_chart.mu);
  scalar("color_sigma", model.color_chart.sigma);
  scalar("color_k", model.color_chart.k_ref);
  scalar("color_h", model.color_chart.h);
  write_matrix_block(out, "lambda_mean", model.lambda_std.mean.transpose());
  write_matrix_block(out, "lambda_whitening", model.lambda_std.whitening);
  write_matrix_block(out, "beta_mean", model.beta_std.mean.transpose());
  write_matrix_block(out, "beta_whitening", model.beta_std.whitening);
  if (!out) throw IoError("write failure on " + path.string());
}

namespace {

Eigen::MatrixXd read_matrix_block(std::ifstream& in, const std::string& header,
                                  const std::filesystem::path& path) {
  std::stringstream hs(header);
  std::string kw;
  Eigen::Index rows = 0, cols = 0;
  hs >> kw >> rows >> cols;
  if (kw != "matrix" || rows < 0 || cols < 0)
    throw ParseError(path.string() + ": malformed matrix header '" + header + "'");
  Eigen::MatrixXd m(rows, cols);
  std::string line;
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!std::getline(in, line))
      throw ParseError(path.string() + ": truncated matrix block");
    std::stringstream ls(line);
    std::string tok;
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!std::getline(ls, tok, ','))
        throw ParseError(path.string() + ": short matrix row");
      m(r, c) = std::stod(tok);
    }
  }
  return m;
}

} // namespace

CalibrationModel load_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CalibrationModel model;
  std::string line;
  bool have[12] = {};
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path.string() + ": malformed line '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
    };
    trim(key);
    trim(val);
    if (key == "k_eig") { model.k_eig = std::stoi(val); have[0] = true; }
    else if (key == "knn_k") { model.knn_k = std::stoi(val); have[1] = true; }
    else if (key == "seed") { model.seed = std::stoull(val); have[2] = true; }
    else if (key == "shape_mu") { model.shape_chart.mu = std::stod(val); have[3] = true; }
    else if (key == "shape_sigma") { model.shape_chart.sigma = std::stod(val); have[4] = true; }
    else if (key == "shape_k") { model.shape_chart.k_ref = std::stod(val); }
    else if (key == "shape_h") { model.shape_chart.h = std::stod(val); have[5] = true; }
    else if (key == "color_mu") { model.color_chart.mu = std::stod(val); have[6] = true; }
    else if (key == "color_sigma") { model.color_chart.sigma = std::stod(val); have[7] = true; }
    else if (key == "color_k") { model.color_chart.k_ref = std::stod(val); }
    else if (key == "color_h") { model.color_chart.h = std::stod(val); have[8] = true; }
    else if (key == "lambda_mean") { model.lambda_std.mean = read_matrix_block(in, val, path).transpose(); have[9] = true; }
    else if (key == "lambda_whitening") { model.lambda_std.whitening = read_matrix_block(in, val, path); have[10] = true; }
    else if (key == "beta_mean") { model.beta_std.mean = read_matrix_block(in, val, path).transpose(); }
    else if (key == "beta_whitening") { model.beta_std.whitening = read_matrix_block(in, val, path); have[11] = true; }
    else throw ParseError(path.string() + ": unknown key '" + key + "'");
  }
  for (bool h : have)
    if (!h) throw ParseError(path.string() + ": incomplete calibration file");
  return model;
}

void write_step_csv(const std::filesystem::path& path, const MonitoringReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "t,s,c,Cs,Cc,signal\n";
  char buf[160];
  for (const auto& r : report.steps) {
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%.17g,%s\n", r.t, r.s, r.c,
                  r.cusum_s, r.cusum_c, to_string(r.signal));
    out << buf;
  }
  if (!out) throw IoError("write failure on " + path.string());
}

} // namespace smac
