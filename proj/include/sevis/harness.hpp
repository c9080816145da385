#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sevis/estimator.hpp"
#include "sevis/simulator.hpp"

// Study orchestration: Monte-Carlo batches over the three estimator
// configurations (VIO, full-covariance SLAM, SEVIS), per-timestep RSSE
// aggregation, start-end error, and the map-size scaling benchmark. All
// Monte-Carlo outputs are deterministic functions of (config, seed); wall
// clock appears only in the timing/benchmark products.

namespace sevis {

struct EstimatorConfig {
  EstimatorMode mode = EstimatorMode::kSevis;
  int max_clones = 15;
  int max_slam_features = 6;
  int max_map_features = 90;
  int max_update_rows = 30;
  double recall = 1.0;
  double outlier_rate = 0.0;
  bool mahalanobis_gate = false;

  double init_att_sigma_deg = 3.0;
  double init_vel_sigma = 0.1;   // m/s
  double init_pos_sigma = 0.01;  // m
  int psd_check_period = 5;      // images between PSD checks

  std::string name() const;
  static EstimatorConfig preset(EstimatorMode mode);
  EstimatorOptions to_options(const SimConfig& sim) const;
  /// Initial IMU error covariance; bias blocks use the one-hour steady state
  /// of the walk densities.
  MatrixXd initial_covariance(const SimConfig& sim) const;
};

struct RunResult {
  bool aborted = false;
  double abort_time = -1.0;
  std::vector<double> t;
  std::vector<Vector3d> pos_err;   // estimate - truth
  std::vector<Vector3d> ori_err;   // minimal rotation vector of q_est^-1 (x) q_true
  std::vector<Vector3d> est_pos;
  std::vector<Quatd> est_quat;
  std::vector<Vector3d> true_pos;
  std::vector<Quatd> true_quat;
  std::vector<UpdateReport> reports;
  double path_length = 0.0;
};

/// One full trajectory through the estimator; world seeded with
/// sim.seed + run_index.
RunResult run_single(const SimConfig& sim, const EstimatorConfig& est, int run_index);

struct RsseSeries {
  std::vector<double> t;
  std::vector<double> rsse_pos;  // m
  std::vector<double> rsse_ori;  // rad
};

struct MonteCarloResult {
  std::vector<EstimatorConfig> configs;
  std::vector<RsseSeries> rsse;              // per config
  std::vector<std::vector<RunResult>> runs;  // [config][run]
  std::vector<int> aborted_runs;             // per config
  int total_aborted() const;
};

/// Runs `runs` Monte-Carlo trials per estimator configuration, optionally in
/// parallel (workers <= 0 picks hardware concurrency). When out_dir is
/// non-empty, writes rsse_<name>.csv, run_<name>_<i>.csv, truth_<i>.csv and
/// summary.txt; byte-identical across invocations for a fixed seed.
MonteCarloResult run_monte_carlo(const SimConfig& sim, const std::vector<EstimatorConfig>& ests,
                                 int runs, std::uint64_t seed, int workers = 0,
                                 const std::string& out_dir = "");

/// Mean-over-runs of the per-step error norms.
RsseSeries aggregate_rsse(const std::vector<RunResult>& runs);

struct StartEndError {
  double meters = 0.0;
  double percent = 0.0;  // of trajectory path length
};

/// Euclidean distance between the start-aligned end estimate and the true
/// end, as meters and as a percentage of the true path length.
StartEndError start_end_error(const std::vector<Vector3d>& est_positions,
                              const std::vector<Vector3d>& true_positions);

struct BenchRow {
  std::string mode;
  int map_size = 0;
  std::string stage;
  double median_s = 0.0;
  std::vector<double> raw_s;
};

struct ScalingBenchResult {
  std::vector<BenchRow> rows;
  double sevis_update_slope = 0.0;      // log-log slope of update time vs map size
  double full_slam_update_slope = 0.0;
  std::string csv() const;
  std::string summary() const;
};

/// Times schmidt_update (and covariance propagation) on synthetic random-PSD
/// covariances at each map size, isolating the linear-algebra cost paths.
ScalingBenchResult run_scaling_bench(const std::vector<int>& map_sizes, int repeats,
                                     std::uint64_t seed = 7);

/// Fast self-checks of the core estimator identities; returns the number of
/// failed checks and prints one line per check.
int run_invariant_checks(std::uint64_t seed);

/// Minimal rotation vector of q_est^-1 (x) q_true.
Vector3d orientation_error(const Quatd& q_est, const Quatd& q_true);

}  // namespace sevis
