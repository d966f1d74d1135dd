#include "smac/monitoring.hpp"

#include "helpers.hpp"
#include "smac/error.hpp"
#include "smac/simulation.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace smac;

namespace {

Eigen::MatrixXd gaussian_matrix(int m, int d, std::uint64_t seed) {
  auto rng = make_engine(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd x(m, d);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = gauss(rng);
  return x;
}

Eigen::VectorXd gaussian_vector(int m, std::uint64_t seed, double mean = 0, double sd = 1) {
  auto rng = make_engine(seed);
  std::normal_distribution<double> gauss(mean, sd);
  Eigen::VectorXd x(m);
  for (int i = 0; i < m; ++i) x(i) = gauss(rng);
  return x;
}

// Independent first-passage evaluator for self-consistency checks.
double fresh_combined_arl(const Eigen::VectorXd& zs, const Eigen::VectorXd& zc, double k_s,
                          double k_c, double h_s, double h_c, int n_seq, int max_run,
                          std::uint64_t seed) {
  double total = 0;
  for (int b = 0; b < n_seq; ++b) {
    auto rng = make_engine(derive_seed(seed, 777000 + static_cast<std::uint64_t>(b)));
    std::uniform_int_distribution<Eigen::Index> pick(0, zs.size() - 1);
    double cs = 0, cc = 0;
    int passage = max_run;
    for (int t = 1; t <= max_run; ++t) {
      const Eigen::Index i = pick(rng);
      cs = std::max(0.0, cs + zs(i) - k_s);
      cc = std::max(0.0, cc + zc(i) - k_c);
      if (cs > h_s || cc > h_c) {
        passage = t;
        break;
      }
    }
    total += passage;
  }
  return total / n_seq;
}

} // namespace

TEST_SUITE("monitoring") {

TEST_CASE("two-point standardizer moments") {
  Eigen::MatrixXd x(2, 1);
  x << 0, 2;
  const Standardizer s = fit_standardizer(x);
  CHECK(s.mean(0) == doctest::Approx(1.0));
  // unbiased sd of {0,2} is sqrt(2); whitening is its inverse
  CHECK(s.whitening(0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)));
}

TEST_CASE("whitening is near identity on already standard data") {
  const Eigen::MatrixXd x = gaussian_matrix(4000, 4, 51);
  const Standardizer s = fit_standardizer(x);
  CHECK((s.whitening - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() <= 0.1);
  CHECK(s.fro_discrepancy <= 1e-10);
}

TEST_CASE("whitened training columns have zero mean") {
  const Eigen::MatrixXd x = gaussian_matrix(60, 5, 52) * 3.0;
  const Standardizer s = fit_standardizer(x);
  Eigen::MatrixXd z(60, 5);
  for (int i = 0; i < 60; ++i)
    z.row(i) = (s.whitening * (x.row(i).transpose() - s.mean)).transpose();
  CHECK(z.colwise().mean().cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("fro discrepancy shrinks with the training sample") {
  Eigen::MatrixXd small = gaussian_matrix(80, 10, 53);
  Eigen::MatrixXd large = gaussian_matrix(2000, 10, 54);
  // identical population, different m1
  CHECK(fit_standardizer(large).fro_discrepancy < fit_standardizer(small).fro_discrepancy);
}

TEST_CASE("m <= d is rejected with a sizing hint") {
  CHECK_THROWS_WITH_AS(fit_standardizer(gaussian_matrix(5, 5, 55)),
                       doctest::Contains("m1"), ParamError);
}

TEST_CASE("statistic basics") {
  Standardizer s;
  s.mean = Eigen::Vector2d(1.0, 2.0);
  s.whitening = Eigen::Matrix2d::Identity();
  CHECK(statistic(s, Eigen::Vector2d(1.0, 2.0)) == 0.0);
  CHECK(statistic(s, Eigen::Vector2d(4.0, 6.0)) == doctest::Approx(25.0));
  CHECK_THROWS_AS(statistic(s, Eigen::Vector3d::Zero()), ParamError);
}

TEST_CASE("statistic equals the Mahalanobis form") {
  for (int d : {3, 7, 10}) {
    const Eigen::MatrixXd x = gaussian_matrix(400, d, 60 + static_cast<std::uint64_t>(d));
    const Standardizer s = fit_standardizer(x);
    const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / (x.rows() - 1);
    const Eigen::VectorXd probe = gaussian_vector(d, 61).array() + 0.5;
    const Eigen::VectorXd diff = probe - s.mean;
    const double mahal = diff.dot(cov.inverse() * diff);
    CHECK(statistic(s, probe) == doctest::Approx(mahal).epsilon(1e-8));
  }
}

TEST_CASE("cusum update arithmetic") {
  CusumChart chart{0.0, 1.0, 0.05, 10.0, 0.0};
  CHECK(cusum_update(chart, 0.0).state == 0.0); // x = mu keeps the floor
  CusumChart up = cusum_update(chart, 1.05);
  CHECK(up.state == doctest::Approx(1.0));
  CusumChart at_mu = chart;
  for (int i = 0; i < 100; ++i) at_mu = cusum_update(at_mu, 0.0);
  CHECK(at_mu.state == 0.0);
}

TEST_CASE("cusum is invariant under consistent affine maps") {
  const Eigen::VectorXd xs = gaussian_vector(200, 62, 1.0, 2.0);
  // Pure power-of-two scaling is exact in floating point; a general affine
  // map agrees to rounding error.
  CusumChart base{1.0, 2.0, 0.125, 8.0, 0.0};
  CusumChart scaled{4.0, 8.0, 0.125, 8.0, 0.0};
  CusumChart affine{0.7 * 1.0 + 0.3, 0.7 * 2.0, 0.125, 8.0, 0.0};
  for (Eigen::Index i = 0; i < xs.size(); ++i) {
    base = cusum_update(base, xs(i));
    scaled = cusum_update(scaled, 4.0 * xs(i));
    affine = cusum_update(affine, 0.7 * xs(i) + 0.3);
    CHECK(scaled.state == base.state);
    CHECK(affine.state == doctest::Approx(base.state).epsilon(1e-12));
  }
}

TEST_CASE("pointwise larger streams give pointwise larger states") {
  const Eigen::VectorXd xs = gaussian_vector(300, 63);
  CusumChart a{0.0, 1.0, 0.05, 50.0, 0.0};
  CusumChart b = a;
  auto rng = make_engine(64);
  std::uniform_real_distribution<double> bump(0.0, 0.5);
  for (Eigen::Index i = 0; i < xs.size(); ++i) {
    a = cusum_update(a, xs(i));
    b = cusum_update(b, xs(i) + bump(rng));
    CHECK(b.state >= a.state);
  }
}

TEST_CASE("combined chart signals and sources") {
  CombinedChartState state;
  state.shape_chart = {0.0, 1.0, 0.05, 5.0, 0.0};
  state.color_chart = {0.0, 1.0, 0.05, 5.0, 0.0};

  SUBCASE("in-control forever never signals") {
    for (int t = 0; t < 500; ++t) {
      auto [next, sig] = combined_step(state, 0.0, 0.0);
      state = next;
      CHECK(sig == SignalSource::none);
    }
  }
  SUBCASE("a +10 sigma shape shift signals shape quickly") {
    SignalSource last = SignalSource::none;
    int steps = 0;
    while (last == SignalSource::none && steps < 10) {
      auto [next, sig] = combined_step(state, 10.0, 0.0);
      state = next;
      last = sig;
      ++steps;
    }
    CHECK(last == SignalSource::shape);
    CHECK(steps <= 3);
    CHECK(state.color_chart.state == 0.0);
  }
  SUBCASE("simultaneous crossings report both") {
    auto [next, sig] = combined_step(state, 100.0, 100.0);
    CHECK(sig == SignalSource::both);
    CHECK(next.last_signal == SignalSource::both);
  }
}

TEST_CASE("combined first passage is the min of the individual charts") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const Eigen::VectorXd s = gaussian_vector(400, 700 + seed, 0.05, 1.0);
    const Eigen::VectorXd c = gaussian_vector(400, 800 + seed, 0.05, 1.0);
    CusumChart shape{0.0, 1.0, 0.05, 4.0, 0.0};
    CusumChart color{0.0, 1.0, 0.05, 4.0, 0.0};
    CombinedChartState state;
    state.shape_chart = shape;
    state.color_chart = color;

    long fp_shape = -1, fp_color = -1, fp_combined = -1;
    CusumChart s_alone = shape, c_alone = color;
    for (Eigen::Index t = 0; t < s.size(); ++t) {
      s_alone = cusum_update(s_alone, s(t));
      if (fp_shape < 0 && s_alone.state > s_alone.h) fp_shape = t + 1;
      c_alone = cusum_update(c_alone, c(t));
      if (fp_color < 0 && c_alone.state > c_alone.h) fp_color = t + 1;
      auto [next, sig] = combined_step(state, s(t), c(t));
      state = next;
      if (fp_combined < 0 && sig != SignalSource::none) fp_combined = t + 1;
    }
    const long expectation =
        fp_shape < 0 ? fp_color : (fp_color < 0 ? fp_shape : std::min(fp_shape, fp_color));
    CHECK(fp_combined == expectation);
  }
}

TEST_CASE("calibration drives the combined bootstrap ARL to target") {
  CalibrationConfig cfg;
  cfg.arl0 = 100;
  cfg.n_bootstrap = 2000;
  cfg.max_run_length = 2500;
  cfg.rng_seed = 99;
  const Eigen::VectorXd zs = gaussian_vector(500, 90);
  const Eigen::VectorXd zc = gaussian_vector(500, 91);
  const auto [h_s, h_c] = calibrate_limits(zs, zc, cfg);
  CHECK(h_s > 0);
  CHECK(h_c > 0);
  // Fresh-seed re-estimate; 8000 sequences puts the MC standard error of the
  // mean near 1.1, so the 2% calibration band is widened accordingly.
  const double arl =
      fresh_combined_arl(zs, zc, cfg.k_s, cfg.k_c, h_s, h_c, 8000, cfg.max_run_length, 1234);
  CHECK(arl >= 96.0);
  CHECK(arl <= 104.0);
}

TEST_CASE("stage-1 limits run each chart near twice the combined target") {
  CalibrationConfig cfg;
  cfg.arl0 = 100;
  cfg.n_bootstrap = 2000;
  cfg.max_run_length = 2500;
  cfg.rng_seed = 101;
  const Eigen::VectorXd z = gaussian_vector(500, 92);
  const double h = calibrate_single_limit(z, cfg.k_s, 2.0 * cfg.arl0, cfg, 0xAB);
  const double arl =
      fresh_combined_arl(z, Eigen::VectorXd::Constant(z.size(), -10.0), cfg.k_s, 10.0, h,
                         1e9, 8000, cfg.max_run_length, 4321);
  CHECK(arl >= 190.0);
  CHECK(arl <= 210.0);
}

TEST_CASE("degenerate calibration statistics raise an error") {
  CalibrationConfig cfg;
  cfg.n_bootstrap = 50;
  const Eigen::VectorXd flat = Eigen::VectorXd::Constant(100, 0.3);
  CHECK_THROWS_AS(calibrate_single_limit(flat, 0.05, 100, cfg, 1), CalibrationError);
  CHECK_THROWS_AS(calibrate_limits(flat, flat, cfg), CalibrationError);
}

TEST_CASE("calibration model save and load round trip") {
  // Synthetic feature pairs with lambda dim 4, beta dim 5.
  std::vector<FeaturePair> ref;
  auto rng = make_engine(110);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < 90; ++i) {
    FeaturePair f;
    f.lambda = Eigen::VectorXd::NullaryExpr(4, [&](Eigen::Index) { return 2 + 0.1 * gauss(rng); });
    f.beta_abs =
        Eigen::VectorXd::NullaryExpr(5, [&](Eigen::Index) { return std::abs(gauss(rng)); });
    ref.push_back(f);
  }
  CalibrationConfig cfg;
  cfg.m1 = 30;
  cfg.m2 = 20;
  cfg.m3 = 40;
  cfg.arl0 = 10;
  cfg.n_bootstrap = 200;
  cfg.max_run_length = 300;
  cfg.rng_seed = 7;
  const CalibrationModel model = calibrate_model(ref, cfg, 6, 12);

  const auto path = std::filesystem::temp_directory_path() / "smac_calibration.txt";
  save_calibration(model, path);
  const CalibrationModel back = load_calibration(path);
  CHECK(back.k_eig == model.k_eig);
  CHECK(back.knn_k == model.knn_k);
  CHECK(back.seed == model.seed);
  CHECK(back.shape_chart.h == model.shape_chart.h);
  CHECK(back.color_chart.mu == model.color_chart.mu);
  CHECK((back.lambda_std.whitening - model.lambda_std.whitening).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.beta_std.mean - model.beta_std.mean).cwiseAbs().maxCoeff() == 0.0);

  const auto [s1, c1] = model_statistics(model, ref.front());
  const auto [s2, c2] = model_statistics(back, ref.front());
  CHECK(s1 == s2);
  CHECK(c1 == c2);
}

TEST_CASE("end-to-end monitoring on tiny clouds") {
  const NominalDesign design = make_nominal(NominalShape::sphere, 220, 5);
  NoiseSpec noise{5e-3, 2e-2, 210, 216};
  std::vector<PointCloud4D> reference;
  for (int i = 0; i < 95; ++i)
    reference.push_back(sample_ic(design, noise, derive_seed(33, static_cast<std::uint64_t>(i))));

  CalibrationConfig cfg;
  cfg.m1 = 20;
  cfg.m2 = 15;
  cfg.m3 = 60;
  cfg.arl0 = 10;
  cfg.n_bootstrap = 600;
  cfg.max_run_length = 200;
  cfg.rng_seed = 3;
  FeatureOptions opts;
  opts.knn_k = 10;

  SUBCASE("empty stream gives an empty report") {
    const MonitoringReport report = run_monitoring(reference, {}, cfg, 5, opts);
    CHECK(report.steps.empty());
    CHECK(!report.run_length.has_value());
  }

  SUBCASE("replaying reference clouds does not signal at step one") {
    std::vector<PointCloud4D> stream(reference.begin(), reference.begin() + 6);
    const MonitoringReport report = run_monitoring(reference, stream, cfg, 5, opts);
    REQUIRE(report.steps.size() == 6);
    CHECK(report.steps.front().signal == SignalSource::none);
  }
}

} // TEST_SUITE
