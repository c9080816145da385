#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sevis/config.hpp"
#include "sevis/harness.hpp"

namespace {

using namespace sevis;

std::vector<EstimatorConfig> select_estimators(const HarnessConfig& cfg,
                                               const std::string& mode) {
  if (mode.empty()) return cfg.estimators;
  std::vector<EstimatorConfig> out;
  for (const EstimatorConfig& est : cfg.estimators)
    if (est.name() == mode) out.push_back(est);
  if (out.empty()) {
    if (mode == "vio") out.push_back(EstimatorConfig::preset(EstimatorMode::kVio));
    if (mode == "full_slam") out.push_back(EstimatorConfig::preset(EstimatorMode::kFullSlam));
    if (mode == "sevis") out.push_back(EstimatorConfig::preset(EstimatorMode::kSevis));
  }
  if (out.empty()) throw CLI::ValidationError("--mode must be vio, full_slam or sevis");
  return out;
}

int cmd_montecarlo(const HarnessConfig& cfg, const std::string& mode) {
  const std::vector<EstimatorConfig> ests = select_estimators(cfg, mode);
  const MonteCarloResult result =
      run_monte_carlo(cfg.sim, ests, cfg.runs, cfg.seed, cfg.workers, cfg.out_dir);
  for (size_t c = 0; c < ests.size(); ++c) {
    const RsseSeries& series = result.rsse[c];
    std::printf("%-10s runs=%d aborted=%d final rsse: pos=%.4f m ori=%.5f rad\n",
                ests[c].name().c_str(), cfg.runs, result.aborted_runs[c],
                series.rsse_pos.empty() ? 0.0 : series.rsse_pos.back(),
                series.rsse_ori.empty() ? 0.0 : series.rsse_ori.back());
  }
  std::printf("outputs written to %s\n", cfg.out_dir.c_str());
  return result.total_aborted() > 0 ? 1 : 0;
}

int cmd_single(const HarnessConfig& cfg, const std::string& mode) {
  const std::string m = mode.empty() ? "sevis" : mode;
  const EstimatorConfig est = select_estimators(cfg, m).front();
  const RunResult run = run_single(cfg.sim, est, 0);

  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream timing(cfg.out_dir + "/timing_" + est.name() + ".csv");
  timing << UpdateReport::csv_header() << "\n";
  for (const UpdateReport& r : run.reports) timing << r.csv_row() << "\n";

  std::ofstream traj(cfg.out_dir + "/single_" + est.name() + ".csv");
  traj << "t,est_px,est_py,est_pz,true_px,true_py,true_pz,err_pos_m,err_ori_rad\n";
  char buf[256];
  for (size_t k = 0; k < run.t.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%.9f,%.9e,%.9e,%.9e,%.9e,%.9e,%.9e,%.9e,%.9e\n", run.t[k],
                  run.est_pos[k].x(), run.est_pos[k].y(), run.est_pos[k].z(),
                  run.true_pos[k].x(), run.true_pos[k].y(), run.true_pos[k].z(),
                  run.pos_err[k].norm(), run.ori_err[k].norm());
    traj << buf;
  }

  const StartEndError se = start_end_error(run.est_pos, run.true_pos);
  double prop = 0, upd = 0, mgmt = 0;
  for (const UpdateReport& r : run.reports) {
    prop += r.prop_s;
    upd += r.update_s;
    mgmt += r.mgmt_s;
  }
  std::printf("%s: %zu images, final pos err %.4f m, start-end %.4f m (%.4f%%)\n",
              est.name().c_str(), run.t.size(), run.pos_err.back().norm(), se.meters,
              se.percent);
  std::printf("time totals: propagation %.3f s, update %.3f s, management %.3f s\n", prop, upd,
              mgmt);
  if (run.aborted) {
    std::printf("run ABORTED at t=%.2f (covariance lost positive semi-definiteness)\n",
                run.abort_time);
    return 1;
  }
  return 0;
}

int cmd_bench(const HarnessConfig& cfg, std::vector<int> sizes, int repeats) {
  if (sizes.empty()) sizes = {100, 200, 400, 800};
  const ScalingBenchResult bench = run_scaling_bench(sizes, repeats, cfg.seed);
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream raw(cfg.out_dir + "/bench_raw.csv");
  raw << bench.csv();
  std::ofstream summary(cfg.out_dir + "/bench_summary.txt");
  summary << bench.summary();
  std::printf("%s", bench.summary().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Schmidt-EKF visual-inertial SLAM simulation harness"};
  app.require_subcommand(1);

  std::string config_path, mode, out_dir;
  int runs = -1, workers = -1;
  std::int64_t seed = -1;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "base RNG seed");
  app.add_option("--runs", runs, "Monte-Carlo runs per configuration");
  app.add_option("--out-dir", out_dir, "output directory");
  app.add_option("--mode", mode, "estimator mode: vio | full_slam | sevis");
  app.add_option("--workers", workers, "parallel workers (default: hardware)");

  CLI::App* mc = app.add_subcommand("montecarlo", "Monte-Carlo study over the configured modes");
  CLI::App* single = app.add_subcommand("single", "one verbose run with timing output");
  CLI::App* bench = app.add_subcommand("bench", "map-size scaling benchmark");
  CLI::App* chk = app.add_subcommand("check", "estimator invariant self-checks");

  std::vector<int> bench_sizes;
  int bench_repeats = 7;
  bench->add_option("--sizes", bench_sizes, "map sizes to sweep");
  bench->add_option("--repeats", bench_repeats, "timed repetitions per size");

  CLI11_PARSE(app, argc, argv);

  try {
    HarnessConfig cfg =
        config_path.empty() ? HarnessConfig::defaults() : sevis::load_config(config_path);
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (runs > 0) cfg.runs = runs;
    if (workers > 0) cfg.workers = workers;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    cfg.sim.validate();

    if (mc->parsed()) return cmd_montecarlo(cfg, mode);
    if (single->parsed()) return cmd_single(cfg, mode);
    if (bench->parsed()) return cmd_bench(cfg, bench_sizes, bench_repeats);
    if (chk->parsed()) return sevis::run_invariant_checks(cfg.seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
