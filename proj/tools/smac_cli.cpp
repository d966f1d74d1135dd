#include "smac/config.hpp"
#include "smac/diagnostics.hpp"
#include "smac/error.hpp"
#include "smac/monitoring.hpp"
#include "smac/parallel.hpp"
#include "smac/point_cloud.hpp"
#include "smac/rng.hpp"
#include "smac/simulation.hpp"
#include "smac/svg.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace smac;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitMissingFile = 2;
constexpr int kExitSignal = 3;
constexpr int kExitUsage = 64;

std::vector<fs::path> read_manifest(const fs::path& manifest) {
  if (!fs::exists(manifest)) throw IoError("file not found: " + manifest.string());
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open " + manifest.string());
  std::vector<fs::path> paths;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    fs::path p = line;
    if (p.is_relative()) p = manifest.parent_path() / p;
    paths.push_back(p);
  }
  return paths;
}

std::vector<PointCloud4D> load_manifest_clouds(const fs::path& manifest) {
  const auto paths = read_manifest(manifest);
  std::vector<PointCloud4D> clouds;
  clouds.reserve(paths.size());
  for (const auto& p : paths) clouds.push_back(load_cloud(p));
  return clouds;
}

struct DiagnosticInputs {
  LaplacianPair pair;
  Spectrum spec;
  DescriptorMatrix desc;
};

DiagnosticInputs analyze_cloud(const PointCloud4D& cloud, int k_eig,
                               const FeatureOptions& opts, int p_half) {
  DiagnosticInputs d;
  d.pair = build_laplacian(cloud, build_knn(cloud, opts.knn_k), opts.epsilon_fraction);
  d.spec = solve_eigs(d.pair, k_eig, opts.solve);
  d.desc = stack_descriptors(compute_hks(d.spec, p_half), compute_wks(d.spec, p_half));
  return d;
}

struct GlobalArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
  std::string out_dir = ".";
};

StudyConfig resolve_config(const GlobalArgs& g) {
  StudyConfig cfg;
  if (!g.config_path.empty()) cfg = load_config(g.config_path);
  if (g.seed_set) cfg.rng_seed = g.seed;
  cfg.validate();
  return cfg;
}

fs::path ensure_out_dir(const GlobalArgs& g) {
  fs::path dir = g.out_dir;
  fs::create_directories(dir);
  return dir;
}

FeatureOptions feature_options(const StudyConfig& cfg) {
  return cfg.study_params().features;
}

int cmd_gen(const GlobalArgs& g, int count, const std::string& kind,
            const std::string& format) {
  const StudyConfig cfg = resolve_config(g);
  const fs::path out = ensure_out_dir(g);
  const NominalDesign design = cfg.make_design();
  const NoiseSpec noise = cfg.noise_spec();
  const std::string ext = format == "ply" ? ".ply" : ".csv";

  write_config(cfg, out / "resolved_config.txt");
  save_cloud(design.base_cloud, out / ("nominal" + ext));

  std::ofstream manifest(out / "manifest.txt");
  if (!manifest) throw IoError("cannot write " + (out / "manifest.txt").string());
  const bool oc = kind == "oc";
  DefectSpec defect;
  if (oc) {
    defect.kind = defect_from_string(cfg.defect);
    if (defect.kind == DefectKind::none)
      throw ParamError("gen --kind oc requires a defect in the config");
    defect.region_fraction = cfg.region_fraction;
    defect.spot_fraction = cfg.spot_fraction;
    defect.snr = cfg.snr;
    defect.color_shift = cfg.color_shift;
  }

  for (int i = 0; i < count; ++i) {
    const std::uint64_t seed = derive_seed(cfg.rng_seed, 3000000ULL + static_cast<std::uint64_t>(i));
    char name[64];
    std::snprintf(name, sizeof(name), "sample_%04d%s", i, ext.c_str());
    PointCloud4D cloud;
    if (oc) {
      OcSample s = sample_oc(design, noise, defect, seed);
      cloud = std::move(s.cloud);
      if (i == 0) {
        std::ofstream mask(out / "true_mask.csv");
        mask << "point_index,in_mask\n";
        for (size_t q = 0; q < s.true_mask.size(); ++q)
          mask << q << "," << (s.true_mask[q] ? 1 : 0) << "\n";
      }
    } else {
      cloud = sample_ic(design, noise, seed);
    }
    save_cloud(cloud, out / name);
    manifest << name << "\n";
  }
  std::cout << "wrote " << count << " " << kind << " sample(s) under " << out.string()
            << "\n";
  return kExitOk;
}

int cmd_extract(const GlobalArgs& g, const std::vector<std::string>& inputs, int k_eig,
                int knn_k, const std::string& out_file) {
  StudyConfig cfg = resolve_config(g);
  if (k_eig > 0) cfg.k_eig = k_eig;
  if (knn_k > 0) cfg.knn_k = knn_k;
  const FeatureOptions opts = feature_options(cfg);

  std::vector<std::string> ids;
  std::vector<Eigen::VectorXd> lambdas, betas;
  for (const auto& in : inputs) {
    const PointCloud4D cloud = load_cloud(in);
    const FeaturePair f = extract_features(cloud, cfg.k_eig, opts);
    ids.push_back(cloud.id);
    lambdas.push_back(f.lambda);
    betas.push_back(f.beta_abs);
  }
  const fs::path out = ensure_out_dir(g) / out_file;
  export_features(out, ids, lambdas, betas);
  std::cout << "wrote " << (lambdas.size() * (static_cast<size_t>(cfg.k_eig) - 1) +
                            betas.size() * static_cast<size_t>(cfg.k_eig))
            << " feature rows to " << out.string() << "\n";
  return kExitOk;
}

int cmd_calibrate(const GlobalArgs& g, const std::string& reference_manifest) {
  const StudyConfig cfg = resolve_config(g);
  const fs::path out = ensure_out_dir(g);
  const FeatureOptions opts = feature_options(cfg);
  const CalibrationConfig ccfg = cfg.calibration_config();

  const auto clouds = load_manifest_clouds(reference_manifest);
  std::vector<FeaturePair> features(clouds.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(clouds.size()); ++i) {
    try {
      features[static_cast<size_t>(i)] =
          extract_features(clouds[static_cast<size_t>(i)], cfg.k_eig, opts);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  const CalibrationModel model = calibrate_model(features, ccfg, cfg.k_eig, cfg.knn_k);
  save_calibration(model, out / "calibration.txt");
  write_config(cfg, out / "resolved_config.txt");
  std::cout << "calibrated limits: h_s = " << model.shape_chart.h
            << ", h_c = " << model.color_chart.h << "\n"
            << "lambda whitening discrepancy ||cov - I||_F = "
            << model.lambda_std.fro_discrepancy << "\n"
            << "beta whitening discrepancy ||cov - I||_F = "
            << model.beta_std.fro_discrepancy << "\n"
            << "wrote " << (out / "calibration.txt").string() << "\n";
  return kExitOk;
}

int cmd_monitor(const GlobalArgs& g, const std::string& calibration_path,
                const std::string& stream_manifest) {
  const fs::path out = ensure_out_dir(g);
  if (!fs::exists(calibration_path))
    throw IoError("file not found: " + calibration_path);
  const CalibrationModel model = load_calibration(calibration_path);
  StudyConfig cfg = resolve_config(g);
  cfg.k_eig = model.k_eig;
  cfg.knn_k = model.knn_k;
  const FeatureOptions opts = feature_options(cfg);

  const auto clouds = load_manifest_clouds(stream_manifest);
  std::vector<FeaturePair> features(clouds.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(clouds.size()); ++i) {
    try {
      features[static_cast<size_t>(i)] =
          extract_features(clouds[static_cast<size_t>(i)], cfg.k_eig, opts);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  const MonitoringReport report = monitor_stream(model, features);
  write_step_csv(out / "steps.csv", report);
  write_control_chart_svg(out / "chart.svg", report, model.shape_chart.h,
                          model.color_chart.h);

  if (report.run_length) {
    std::cout << "signal at t = " << *report.run_length
              << " source = " << to_string(report.first_source) << "\n";
    return kExitSignal;
  }
  std::cout << "no signal over " << report.steps.size() << " step(s)\n";
  return kExitOk;
}

int cmd_diagnose(const GlobalArgs& g, const std::string& calibration_path,
                 const std::string& reference_path, const std::string& ic_manifest,
                 const std::string& oc_manifest, double alpha, int n_permutations,
                 double eta, int p_half, double localize_quantile) {
  const fs::path out = ensure_out_dir(g);
  if (!fs::exists(calibration_path))
    throw IoError("file not found: " + calibration_path);
  const CalibrationModel model = load_calibration(calibration_path);
  StudyConfig cfg = resolve_config(g);
  cfg.k_eig = model.k_eig;
  cfg.knn_k = model.knn_k;
  const FeatureOptions opts = feature_options(cfg);

  const PointCloud4D reference = load_cloud(reference_path);
  const DiagnosticInputs ref = analyze_cloud(reference, cfg.k_eig, opts, p_half);

  auto transport_all = [&](const fs::path& manifest) {
    std::vector<TransportedTexture> textures;
    for (const auto& cloud : load_manifest_clouds(manifest)) {
      const DiagnosticInputs smp = analyze_cloud(cloud, cfg.k_eig, opts, p_half);
      FunctionalMap map = estimate_functional_map(ref.spec, ref.pair, ref.desc, smp.spec,
                                                  smp.pair, smp.desc, eta);
      map.source_id = reference.id;
      map.target_id = cloud.id;
      const ColorRegression reg = regress_color(smp.spec, smp.pair, cloud.color);
      textures.push_back(transport_texture(map, reg, ref.spec));
    }
    return textures;
  };

  const auto ic = transport_all(ic_manifest);
  const auto oc = transport_all(oc_manifest);

  std::vector<bool> mask;
  std::string verdict_line;
  DiagnosticReport report;
  const bool fallback = localize_quantile > 0;
  if (fallback) {
    if (oc.size() != 1)
      throw ParamError("thresholding fallback expects exactly one OC sample");
    mask = threshold_localize(ic, oc.front(), localize_quantile);
    int count = 0;
    for (bool b : mask) count += b ? 1 : 0;
    verdict_line = "thresholding localization: " + std::to_string(count) +
                   " point(s) above the " + std::to_string(localize_quantile) +
                   " quantile (no FWER control)";
    report.p_values = Eigen::VectorXd::Constant(reference.size(), 1.0);
    report.f_stats = Eigen::VectorXd::Zero(reference.size());
    report.tfce = Eigen::VectorXd::Zero(reference.size());
    report.significant_mask = mask;
  } else {
    report = pointwise_test(ic, oc, reference, alpha, n_permutations, cfg.rng_seed);
    mask = report.significant_mask;
    verdict_line =
        std::string("verdict: ") +
        (report.verdict == Verdict::shape_and_color ? "shape_and_color" : "shape_only");
  }

  std::cout << verdict_line << "\n";
  {
    std::ofstream vf(out / "verdict.txt");
    vf << verdict_line << "\n";
  }
  {
    std::ofstream pts(out / "points.csv");
    if (!pts) throw IoError("cannot write " + (out / "points.csv").string());
    pts << "point_index,f_stat,tfce,p_value,significant\n";
    char buf[160];
    for (Eigen::Index q = 0; q < reference.size(); ++q) {
      std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%d\n", static_cast<long>(q),
                    report.f_stats(q), report.tfce(q), report.p_values(q),
                    mask[static_cast<size_t>(q)] ? 1 : 0);
      pts << buf;
    }
  }
  {
    PointCloud4D masked = reference;
    for (Eigen::Index q = 0; q < masked.size(); ++q)
      masked.color(q) = mask[static_cast<size_t>(q)] ? 1.0 : 0.0;
    CloudIoOptions popts;
    popts.ply_color_property = "significant";
    save_cloud(masked, out / "mask.ply", CloudFormat::ply, popts);
  }
  return kExitOk;
}

int cmd_simulate(const GlobalArgs& g) {
  const StudyConfig cfg = resolve_config(g);
  const fs::path out = ensure_out_dir(g);
  const NominalDesign design = cfg.make_design();
  std::optional<DefectSpec> defect;
  if (defect_from_string(cfg.defect) != DefectKind::none) {
    DefectSpec d;
    d.kind = defect_from_string(cfg.defect);
    d.region_fraction = cfg.region_fraction;
    d.spot_fraction = cfg.spot_fraction;
    d.snr = cfg.snr;
    d.color_shift = cfg.color_shift;
    defect = d;
  }
  const ArlSummary summary =
      run_arl_study(design, cfg.noise_spec(), defect, cfg.calibration_config(),
                    method_from_string(cfg.method), cfg.n_replications, cfg.rng_seed,
                    cfg.study_params());
  write_arl_summary_csv(out / "arl_summary.csv", summary);
  write_run_lengths_csv(out / "run_lengths.csv", summary);
  write_config(cfg, out / "resolved_config.txt");
  std::cout << "method = " << summary.method << " defect = " << summary.defect_kind
            << " AARL = " << summary.aarl << " (sd " << summary.sd << ") over "
            << summary.n_replications << " replication(s)\n";
  if (summary.method == "smac")
    std::cout << "signal sources: shape = " << summary.source_shape
              << ", color = " << summary.source_color << ", both = " << summary.source_both
              << "\n";
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"registration-free shape and color monitoring for 4D point clouds"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "study configuration file (key = value)");
  auto* seed_opt = app.add_option("--seed", g.seed, "override the configured RNG seed");
  app.add_option("--threads", g.threads, "OpenMP thread count (0 = runtime default)");
  app.add_option("--out", g.out_dir, "output directory")->capture_default_str();

  auto* gen = app.add_subcommand("gen", "generate nominal designs and noisy samples");
  int gen_count = 10;
  std::string gen_kind = "ic";
  std::string gen_format = "csv";
  gen->add_option("--count", gen_count, "number of samples")->capture_default_str();
  gen->add_option("--kind", gen_kind, "ic or oc")
      ->check(CLI::IsMember({"ic", "oc"}))
      ->capture_default_str();
  gen->add_option("--format", gen_format, "csv or ply")
      ->check(CLI::IsMember({"csv", "ply"}))
      ->capture_default_str();

  auto* extract = app.add_subcommand("extract", "spectral features of point clouds");
  std::vector<std::string> extract_inputs;
  int extract_k = 0;
  int extract_knn = 0;
  std::string extract_out = "features.csv";
  extract->add_option("inputs", extract_inputs, "cloud files (csv or ply)")->required();
  extract->add_option("--k", extract_k, "number of eigenpairs");
  extract->add_option("--knn", extract_knn, "neighborhood size for the Laplacian");
  extract->add_option("--features-out", extract_out, "output CSV name")
      ->capture_default_str();

  auto* calibrate = app.add_subcommand("calibrate", "fit standardizers and control limits");
  std::string cal_reference;
  calibrate->add_option("--reference", cal_reference, "manifest of reference clouds")
      ->required();

  auto* monitor = app.add_subcommand("monitor", "run the combined charts over a stream");
  std::string mon_calibration, mon_stream;
  monitor->add_option("--calibration", mon_calibration, "calibration file")->required();
  monitor->add_option("--stream", mon_stream, "manifest of stream clouds")->required();

  auto* diagnose = app.add_subcommand("diagnose", "post-signal source test and localization");
  std::string dia_calibration, dia_reference, dia_ic, dia_oc;
  double dia_alpha = 0.01;
  int dia_perms = 999;
  double dia_eta = 1e-3;
  int dia_p_half = 100;
  double dia_quantile = 0;
  diagnose->add_option("--calibration", dia_calibration, "calibration file")->required();
  diagnose->add_option("--reference", dia_reference, "reference (CAD) cloud")->required();
  diagnose->add_option("--ic", dia_ic, "manifest of in-control clouds")->required();
  diagnose->add_option("--oc", dia_oc, "manifest of out-of-control clouds")->required();
  diagnose->add_option("--alpha", dia_alpha, "FWER level")->capture_default_str();
  diagnose->add_option("--permutations", dia_perms, "permutation count")
      ->capture_default_str();
  diagnose->add_option("--eta", dia_eta, "functional-map regularization")
      ->capture_default_str();
  diagnose->add_option("--descriptors", dia_p_half, "HKS/WKS columns each")
      ->capture_default_str();
  diagnose->add_option("--localize-quantile", dia_quantile,
                       "use single-sample thresholding at this quantile instead of the "
                       "permutation test");

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo ARL study");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return kExitUsage;
  }
  g.seed_set = seed_opt->count() > 0;
  set_num_threads(g.threads);

  try {
    if (*gen) return cmd_gen(g, gen_count, gen_kind, gen_format);
    if (*extract) {
      if (extract->count("--k") && extract_k < 1)
        throw ParamError("--k must be a positive eigenpair count");
      return cmd_extract(g, extract_inputs, extract_k, extract_knn, extract_out);
    }
    if (*calibrate) return cmd_calibrate(g, cal_reference);
    if (*monitor) return cmd_monitor(g, mon_calibration, mon_stream);
    if (*diagnose)
      return cmd_diagnose(g, dia_calibration, dia_reference, dia_ic, dia_oc, dia_alpha,
                          dia_perms, dia_eta, dia_p_half, dia_quantile);
    if (*simulate) return cmd_simulate(g);
  } catch (const ParamError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return std::string(e.what()).find("file not found") != std::string::npos
               ? kExitMissingFile
               : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
