#include "sevis/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <Eigen/Dense>

namespace sevis {

namespace {
using Clock = std::chrono::steady_clock;

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const int n = static_cast<int>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

Vector3d normal3(CounterRng& rng) {
  return Vector3d(rng.next_normal(), rng.next_normal(), rng.next_normal());
}
}  // namespace

Vector3d orientation_error(const Quatd& q_est, const Quatd& q_true) {
  return quat_to_rotvec(quat_multiply(quat_inverse(q_est), q_true));
}

std::string EstimatorConfig::name() const {
  switch (mode) {
    case EstimatorMode::kVio: return "vio";
    case EstimatorMode::kFullSlam: return "full_slam";
    case EstimatorMode::kSevis: return "sevis";
  }
  return "unknown";
}

EstimatorConfig EstimatorConfig::preset(EstimatorMode m) {
  EstimatorConfig cfg;
  cfg.mode = m;
  switch (m) {
    case EstimatorMode::kVio:
      cfg.max_slam_features = 6;
      cfg.max_map_features = 0;
      break;
    case EstimatorMode::kFullSlam:
      cfg.max_slam_features = 90;
      cfg.max_map_features = 0;
      break;
    case EstimatorMode::kSevis:
      cfg.max_slam_features = 6;
      cfg.max_map_features = 90;
      break;
  }
  return cfg;
}

EstimatorOptions EstimatorConfig::to_options(const SimConfig& sim) const {
  EstimatorOptions opts;
  opts.mode = mode;
  opts.max_clones = max_clones;
  opts.max_active_features = max_slam_features;
  opts.max_schmidt_features = max_map_features;
  opts.max_update_rows = max_update_rows;
  opts.sigma_uv = sim.sigma_uv();
  opts.mahalanobis_gate = mahalanobis_gate;
  opts.imu_noise = sim.noise_params();
  opts.extrinsics = default_extrinsics();
  opts.assoc.recall = recall;
  opts.assoc.outlier_rate = outlier_rate;
  return opts;
}

MatrixXd EstimatorConfig::initial_covariance(const SimConfig& sim) const {
  const NoiseParams n = sim.noise_params();
  const double att = init_att_sigma_deg * M_PI / 180.0;
  const double bg = n.sigma_wg * std::sqrt(3600.0);
  const double ba = n.sigma_wa * std::sqrt(3600.0);
  VectorXd diag(kImuErrDim);
  diag << Vector3d::Constant(att * att), Vector3d::Constant(bg * bg),
      Vector3d::Constant(init_vel_sigma * init_vel_sigma), Vector3d::Constant(ba * ba),
      Vector3d::Constant(init_pos_sigma * init_pos_sigma);
  return diag.asDiagonal();
}

RunResult run_single(const SimConfig& sim, const EstimatorConfig& est, int run_index) {
  SimConfig cfg = sim;
  cfg.seed = sim.seed + static_cast<std::uint64_t>(run_index);
  SimWorld world(cfg);

  const TruthSample truth0 = world.truth_at(0.0);
  const MatrixXd p0 = est.initial_covariance(cfg);
  CounterRng& init_rng = world.init_rng();
  ImuState init;
  init.orientation = small_angle_update(
      truth0.orientation, (std::sqrt(p0(0, 0)) * normal3(init_rng)).eval());
  init.gyro_bias = std::sqrt(p0(3, 3)) * normal3(init_rng);
  init.velocity = truth0.velocity + std::sqrt(p0(6, 6)) * normal3(init_rng);
  init.accel_bias = std::sqrt(p0(9, 9)) * normal3(init_rng);
  init.position = truth0.position + std::sqrt(p0(12, 12)) * normal3(init_rng);

  SevisEstimator estimator(est.to_options(cfg), init, p0);

  const double dt = cfg.imu_dt();
  const int n_steps = static_cast<int>(std::llround(cfg.duration_s * cfg.imu_rate_hz));
  const int cam_every = static_cast<int>(std::llround(cfg.imu_rate_hz / cfg.cam_rate_hz));

  RunResult res;
  int image_count = 0;
  for (int i = 0; i <= n_steps; ++i) {
    const double t = i * dt;
    estimator.feed_imu(world.gen_imu(t, dt));
    if (i % cam_every != 0) continue;

    const std::vector<Bearing> obs = world.gen_bearings(t);
    std::vector<std::int64_t> frame_ids;
    frame_ids.reserve(obs.size());
    for (const Bearing& b : obs) frame_ids.push_back(b.feature_id);
    const Keyframe* kf = query_keyframe(estimator.keyframes(), frame_ids,
                                        estimator.options().assoc.min_overlap);
    const AssocResult assoc =
        match_keyframe(obs, kf, estimator.options().assoc.recall,
                       estimator.options().assoc.outlier_rate, world.assoc_rng());
    res.reports.push_back(estimator.process_image(t, obs, assoc));

    const TruthSample truth = world.truth_at(t);
    res.t.push_back(t);
    res.est_pos.push_back(estimator.state().imu.position);
    res.est_quat.push_back(estimator.state().imu.orientation);
    res.true_pos.push_back(truth.position);
    res.true_quat.push_back(truth.orientation);
    res.pos_err.push_back(estimator.state().imu.position - truth.position);
    res.ori_err.push_back(orientation_error(estimator.state().imu.orientation,
                                            truth.orientation));
    ++image_count;
    const bool last = (i + cam_every > n_steps);
    if ((image_count % std::max(est.psd_check_period, 1) == 0 || last) &&
        !estimator.cov().is_psd(1e-6)) {
      res.aborted = true;
      res.abort_time = t;
      break;
    }
  }
  for (size_t i = 1; i < res.true_pos.size(); ++i)
    res.path_length += (res.true_pos[i] - res.true_pos[i - 1]).norm();
  return res;
}

RsseSeries aggregate_rsse(const std::vector<RunResult>& runs) {
  RsseSeries series;
  size_t steps = 0;
  for (const RunResult& r : runs)
    if (!r.aborted) steps = std::max(steps, r.t.size());
  if (steps == 0) return series;
  series.t.assign(steps, 0.0);
  series.rsse_pos.assign(steps, 0.0);
  series.rsse_ori.assign(steps, 0.0);
  int used = 0;
  for (const RunResult& r : runs) {
    if (r.aborted || r.t.size() != steps) continue;
    ++used;
    for (size_t k = 0; k < steps; ++k) {
      series.t[k] = r.t[k];
      series.rsse_pos[k] += r.pos_err[k].norm();
      series.rsse_ori[k] += r.ori_err[k].norm();
    }
  }
  if (used > 0)
    for (size_t k = 0; k < steps; ++k) {
      series.rsse_pos[k] /= used;
      series.rsse_ori[k] /= used;
    }
  return series;
}

StartEndError start_end_error(const std::vector<Vector3d>& est_positions,
                              const std::vector<Vector3d>& true_positions) {
  StartEndError out;
  if (est_positions.size() < 2 || est_positions.size() != true_positions.size()) return out;
  const Vector3d est_delta = est_positions.back() - est_positions.front();
  const Vector3d true_delta = true_positions.back() - true_positions.front();
  out.meters = (est_delta - true_delta).norm();
  double length = 0.0;
  for (size_t i = 1; i < true_positions.size(); ++i)
    length += (true_positions[i] - true_positions[i - 1]).norm();
  out.percent = length > 0 ? 100.0 * out.meters / length : 0.0;
  return out;
}

int MonteCarloResult::total_aborted() const {
  int n = 0;
  for (int a : aborted_runs) n += a;
  return n;
}

namespace {

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

std::string run_csv(const RunResult& r) {
  std::string s =
      "t,est_px,est_py,est_pz,est_qx,est_qy,est_qz,est_qw,"
      "true_px,true_py,true_pz,true_qx,true_qy,true_qz,true_qw,err_pos_m,err_ori_rad\n";
  char buf[512];
  for (size_t k = 0; k < r.t.size(); ++k) {
    std::snprintf(buf, sizeof(buf),
                  "%.9f,%.9e,%.9e,%.9e,%.9e,%.9e,%.9e,%.9e,"
                  "%.9e,%.9e,%.9e,%.9e,%.9e,%.9e,%.9e,%.9e,%.9e\n",
                  r.t[k], r.est_pos[k].x(), r.est_pos[k].y(), r.est_pos[k].z(), r.est_quat[k](0),
                  r.est_quat[k](1), r.est_quat[k](2), r.est_quat[k](3), r.true_pos[k].x(),
                  r.true_pos[k].y(), r.true_pos[k].z(), r.true_quat[k](0), r.true_quat[k](1),
                  r.true_quat[k](2), r.true_quat[k](3), r.pos_err[k].norm(), r.ori_err[k].norm());
    s += buf;
  }
  return s;
}

std::string rsse_csv(const RsseSeries& series) {
  std::string s = "t,rsse_pos_m,rsse_ori_rad\n";
  char buf[128];
  for (size_t k = 0; k < series.t.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%.9f,%.9e,%.9e\n", series.t[k], series.rsse_pos[k],
                  series.rsse_ori[k]);
    s += buf;
  }
  return s;
}

}  // namespace

MonteCarloResult run_monte_carlo(const SimConfig& sim, const std::vector<EstimatorConfig>& ests,
                                 int runs, std::uint64_t seed, int workers,
                                 const std::string& out_dir) {
  if (runs < 1) throw std::invalid_argument("run_monte_carlo: runs >= 1");
  SimConfig cfg = sim;
  cfg.seed = seed;

  MonteCarloResult out;
  out.configs = ests;
  out.runs.resize(ests.size());
  for (auto& v : out.runs) v.resize(runs);

  struct Job {
    int config;
    int run;
  };
  std::vector<Job> jobs;
  for (size_t c = 0; c < ests.size(); ++c)
    for (int r = 0; r < runs; ++r) jobs.push_back({static_cast<int>(c), r});

  int n_workers = workers > 0 ? workers : static_cast<int>(std::thread::hardware_concurrency());
  n_workers = std::max(1, std::min<int>(n_workers, static_cast<int>(jobs.size())));

  std::atomic<size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const size_t j = next.fetch_add(1);
      if (j >= jobs.size()) break;
      out.runs[jobs[j].config][jobs[j].run] = run_single(cfg, ests[jobs[j].config], jobs[j].run);
    }
  };
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int i = 0; i < n_workers; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  out.aborted_runs.assign(ests.size(), 0);
  for (size_t c = 0; c < ests.size(); ++c) {
    for (const RunResult& r : out.runs[c])
      if (r.aborted) ++out.aborted_runs[c];
    out.rsse.push_back(aggregate_rsse(out.runs[c]));
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    // Ground truth is config-independent (analytic circle); export once.
    {
      std::string s = "t,px,py,pz,qx,qy,qz,qw\n";
      SimWorld world(cfg);
      const int n_cam = static_cast<int>(std::llround(cfg.duration_s * cfg.cam_rate_hz));
      for (int k = 0; k <= n_cam; ++k) s += world.truth_csv_line(k * cfg.cam_dt()) + "\n";
      write_file(out_dir + "/truth.csv", s);
    }
    std::string summary;
    char buf[512];
    for (size_t c = 0; c < ests.size(); ++c) {
      const std::string name = ests[c].name();
      write_file(out_dir + "/rsse_" + name + ".csv", rsse_csv(out.rsse[c]));
      for (int r = 0; r < runs; ++r)
        write_file(out_dir + "/run_" + name + "_" + std::to_string(r) + ".csv",
                   run_csv(out.runs[c][r]));
      const RsseSeries& series = out.rsse[c];
      if (!series.t.empty()) {
        // Value at the end of loop 2 and at the end of the trajectory.
        size_t k2 = 0;
        for (size_t k = 0; k < series.t.size(); ++k)
          if (series.t[k] <= 2.0 * cfg.loop_period_s + 1e-9) k2 = k;
        std::vector<double> se;
        for (const RunResult& r : out.runs[c])
          if (!r.aborted) se.push_back(start_end_error(r.est_pos, r.true_pos).percent);
        std::snprintf(buf, sizeof(buf),
                      "%s: runs=%d aborted=%d rsse_pos(loop2)=%.6e rsse_pos(final)=%.6e "
                      "rsse_ori(final)=%.6e start_end_median_pct=%.6e\n",
                      name.c_str(), runs, out.aborted_runs[c], series.rsse_pos[k2],
                      series.rsse_pos.back(), series.rsse_ori.back(), median(se));
        summary += buf;
      }
    }
    write_file(out_dir + "/summary.txt", summary);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scaling benchmark
// ---------------------------------------------------------------------------

namespace {

// Random PSD partitioned covariance P = B B^T + tau I via a low-rank factor.
void fill_random_psd(PartitionedCovariance& cov, CounterRng& rng) {
  const int a = cov.active_dim();
  const int s = cov.schmidt_dim();
  const int k = 40;
  MatrixXd ba(a, k), bs(s, k);
  for (int i = 0; i < a; ++i)
    for (int j = 0; j < k; ++j) ba(i, j) = rng.next_normal();
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < k; ++j) bs(i, j) = rng.next_normal();
  const double tau = 0.1;
  cov.paa() = ba * ba.transpose() + tau * MatrixXd::Identity(a, a);
  if (s > 0) {
    cov.pas() = ba * bs.transpose();
    cov.pss() = bs * bs.transpose() + tau * MatrixXd::Identity(s, s);
  }
}

SevisState make_bench_state(int clones, int active, int schmidt) {
  SevisState st;
  for (int i = 0; i < clones; ++i) {
    ClonePose c;
    c.timestamp = clones - i;
    st.clones.push_back(c);
  }
  for (int i = 0; i < active; ++i) st.active_features.push_back({Vector3d(0, 0, 5), i});
  for (int i = 0; i < schmidt; ++i)
    st.schmidt_features.push_back({Vector3d(0, 0, 5), 1000 + i});
  return st;
}

}  // namespace

std::string ScalingBenchResult::csv() const {
  std::string s = "mode,map_size,stage,rep,seconds\n";
  char buf[128];
  for (const BenchRow& row : rows)
    for (size_t i = 0; i < row.raw_s.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s,%d,%s,%zu,%.9e\n", row.mode.c_str(), row.map_size,
                    row.stage.c_str(), i, row.raw_s[i]);
      s += buf;
    }
  return s;
}

std::string ScalingBenchResult::summary() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "update-time log-log slope vs map size: sevis=%.3f full_slam=%.3f\n",
                sevis_update_slope, full_slam_update_slope);
  std::string s(buf);
  for (const BenchRow& row : rows) {
    std::snprintf(buf, sizeof(buf), "  %s n=%d %s median=%.6e s\n", row.mode.c_str(),
                  row.map_size, row.stage.c_str(), row.median_s);
    s += buf;
  }
  return s;
}

ScalingBenchResult run_scaling_bench(const std::vector<int>& map_sizes, int repeats,
                                     std::uint64_t seed) {
  if (map_sizes.size() < 2) throw std::invalid_argument("run_scaling_bench: need >= 2 sizes");
  ScalingBenchResult out;
  const int n_clones = 15;
  const int meas_features = 15;  // 30 measurement rows per update
  CounterRng rng(seed, 99);

  for (const bool sevis_mode : {true, false}) {
    std::vector<double> sizes_d, medians;
    for (const int n : map_sizes) {
      const int n_active = sevis_mode ? 6 : n;
      const int n_schmidt = sevis_mode ? n : 0;
      SevisState state = make_bench_state(n_clones, n_active, n_schmidt);
      const int a = state.active_dim();
      PartitionedCovariance pristine(a, state.schmidt_dim());
      pristine.set_dims(a, state.schmidt_dim());
      fill_random_psd(pristine, rng);

      // One synthetic batch of bearing rows: a clone block per row pair plus
      // a feature block in the Schmidt (sevis) or active (full slam) part.
      LinearSystem sys;
      const int rows = 2 * meas_features;
      sys.h_active.setZero(rows, a);
      sys.residual.setZero(rows);  // zero residual: timing only, state untouched
      sys.noise = 1e-5 * MatrixXd::Identity(rows, rows);
      if (sevis_mode) sys.h_schmidt_blocks.setZero(rows, 3 * meas_features);
      for (int i = 0; i < meas_features; ++i) {
        for (int r = 0; r < 2; ++r)
          for (int c = 0; c < 6; ++c) sys.h_active(2 * i + r, kImuErrDim + c) = rng.next_normal();
        if (sevis_mode) {
          for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 3; ++c) sys.h_schmidt_blocks(2 * i + r, 3 * i + c) = rng.next_normal();
          sys.schmidt_offsets.push_back(3 * ((i * (n / meas_features)) % n));
        } else {
          const int off = state.active_feature_offset((i * (n / meas_features)) % n);
          for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 3; ++c) sys.h_active(2 * i + r, off + c) = rng.next_normal();
        }
      }

      CompoundedTransition ct = CompoundedTransition::identity(kImuErrDim);
      for (int i = 0; i < kImuErrDim; ++i)
        for (int j = 0; j < kImuErrDim; ++j) ct.Phi(i, j) += 0.01 * rng.next_normal();
      ct.Qd = 1e-8 * MatrixXd::Identity(kImuErrDim, kImuErrDim);

      BenchRow update_row{sevis_mode ? "sevis" : "full_slam", n, "update", 0.0, {}};
      BenchRow prop_row{sevis_mode ? "sevis" : "full_slam", n, "propagation", 0.0, {}};
      PartitionedCovariance work = pristine;
      for (int rep = 0; rep <= repeats; ++rep) {  // rep 0 is warm-up
        work = pristine;
        auto t0 = Clock::now();
        propagate_covariance_imu_block(work, ct.Phi, ct.Qd);
        const double prop_s = std::chrono::duration<double>(Clock::now() - t0).count();
        t0 = Clock::now();
        if (schmidt_update_covariance(work, sys, 1e12, nullptr) != UpdateStatus::kOk)
          throw std::runtime_error("run_scaling_bench: synthetic update rejected");
        const double upd_s = std::chrono::duration<double>(Clock::now() - t0).count();
        if (rep == 0) continue;
        prop_row.raw_s.push_back(prop_s);
        update_row.raw_s.push_back(upd_s);
      }
      update_row.median_s = median(update_row.raw_s);
      prop_row.median_s = median(prop_row.raw_s);
      sizes_d.push_back(n);
      medians.push_back(update_row.median_s);
      out.rows.push_back(std::move(prop_row));
      out.rows.push_back(std::move(update_row));
    }
    const double slope = loglog_slope(sizes_d, medians);
    (sevis_mode ? out.sevis_update_slope : out.full_slam_update_slope) = slope;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Invariant self-checks (compact versions of the test-suite oracles)
// ---------------------------------------------------------------------------

namespace {

bool check(bool ok, const char* name, int& failures) {
  std::printf("[%s] %s\n", ok ? "ok" : "FAIL", name);
  if (!ok) ++failures;
  return ok;
}

// Dense Schmidt construction: full gain, zero the Schmidt rows, literal
// partitioned covariance equations.
void dense_schmidt_reference(const MatrixXd& paa, const MatrixXd& pas, const MatrixXd& pss,
                             const MatrixXd& h_a, const MatrixXd& h_s, const VectorXd& r,
                             const MatrixXd& noise, VectorXd* dx, MatrixXd* paa_out,
                             MatrixXd* pas_out) {
  const int a = paa.rows();
  const int s = pss.rows();
  MatrixXd p(a + s, a + s);
  p << paa, pas, pas.transpose(), pss;
  MatrixXd h(h_a.rows(), a + s);
  h << h_a, h_s;
  const MatrixXd s_mat = h * p * h.transpose() + noise;
  const MatrixXd k = p * h.transpose() * s_mat.inverse();
  const MatrixXd k_a = k.topRows(a);
  *dx = k_a * r;
  *paa_out = paa - k_a * (h_a * paa + h_s * pas.transpose());
  *pas_out = pas - k_a * (h_a * pas + h_s * pss);
}

}  // namespace

int run_invariant_checks(std::uint64_t seed) {
  int failures = 0;
  CounterRng rng(seed, 1234);
  auto randn = [&rng](int r, int c) {
    MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = rng.next_normal();
    return m;
  };

  // Scalar Schmidt toy P=[[2,1],[1,3]], H_A=1, H_S=1, R=1, embedded in the
  // first coordinate of one 3-dof Schmidt block (the other coordinates are
  // uncoupled and do not enter the algebra).
  {
    PartitionedCovariance cov(1, 3);
    cov.set_dims(1, 3);
    cov.paa()(0, 0) = 2.0;
    cov.pas().setZero();
    cov.pss().setZero();
    cov.pas()(0, 0) = 1.0;
    cov.pss()(0, 0) = 3.0;
    LinearSystem sys;
    sys.h_active = MatrixXd::Ones(1, 1);
    sys.h_schmidt_blocks = MatrixXd::Zero(1, 3);
    sys.h_schmidt_blocks(0, 0) = 1.0;
    sys.schmidt_offsets = {0};
    sys.residual = VectorXd::Ones(1);
    sys.noise = MatrixXd::Ones(1, 1);
    VectorXd dx;
    const UpdateStatus st = schmidt_update_covariance(cov, sys, 1e12, &dx);
    const bool ok = st == UpdateStatus::kOk && std::abs(dx(0) - 3.0 / 8.0) < 1e-12 &&
                    std::abs(cov.paa()(0, 0) - 7.0 / 8.0) < 1e-12 &&
                    std::abs(cov.pas()(0, 0) + 0.5) < 1e-12 &&
                    std::abs(cov.pss()(0, 0) - 3.0) < 1e-12;
    check(ok, "schmidt toy (S=8, K_A=3/8, P_AA'=7/8, P_AS'=-1/2, P_SS'=3)", failures);
  }

  // Schmidt vs dense reference on random systems.
  {
    bool ok = true;
    for (int trial = 0; trial < 20 && ok; ++trial) {
      const int a = 6, f = 2, s = 3 * f, rows = 4;
      const MatrixXd ba = randn(a, a + s), bs = randn(s, a + s);
      PartitionedCovariance cov(a, s);
      cov.set_dims(a, s);
      cov.paa() = ba * ba.transpose() + 0.1 * MatrixXd::Identity(a, a);
      cov.pas() = ba * bs.transpose();
      cov.pss() = bs * bs.transpose() + 0.1 * MatrixXd::Identity(s, s);
      LinearSystem sys;
      sys.h_active = randn(rows, a);
      sys.h_schmidt_blocks = randn(rows, s);
      sys.schmidt_offsets = {0, 3};
      sys.residual = randn(rows, 1);
      sys.noise = 0.01 * MatrixXd::Identity(rows, rows);
      const MatrixXd paa0 = cov.paa(), pas0 = cov.pas(), pss0 = cov.pss();
      VectorXd dx_ref;
      MatrixXd paa_ref, pas_ref;
      dense_schmidt_reference(paa0, pas0, pss0, sys.h_active, sys.dense_h_schmidt(s),
                              sys.residual, sys.noise, &dx_ref, &paa_ref, &pas_ref);
      VectorXd dx;
      if (schmidt_update_covariance(cov, sys, 1e12, &dx) != UpdateStatus::kOk) ok = false;
      ok = ok && (dx - dx_ref).cwiseAbs().maxCoeff() < 1e-10 &&
           (MatrixXd(cov.paa()) - paa_ref).cwiseAbs().maxCoeff() < 1e-10 &&
           (MatrixXd(cov.pas()) - pas_ref).cwiseAbs().maxCoeff() < 1e-10 &&
           MatrixXd(cov.pss()) == pss0;
    }
    check(ok, "schmidt_update == dense zero-K_S reference (20 random systems)", failures);
  }

  // Nullspace projection == Schur marginalization of an infinite-prior feature.
  {
    bool ok = true;
    for (int trial = 0; trial < 10 && ok; ++trial) {
      const int x = 6, rows = 8;
      const MatrixXd bx = randn(x, x);
      const MatrixXd p = bx * bx.transpose() + 0.1 * MatrixXd::Identity(x, x);
      const MatrixXd h_x = randn(rows, x), h_f = randn(rows, 3);
      const VectorXd r = randn(rows, 1);
      const MatrixXd noise = 0.01 * MatrixXd::Identity(rows, rows);
      MatrixXd h_proj, n_proj;
      VectorXd r_proj;
      if (nullspace_project(h_x, h_f, r, noise, &h_proj, &r_proj, &n_proj) !=
          NullspaceStatus::kOk) {
        ok = false;
        break;
      }
      const MatrixXd s_mat = h_proj * p * h_proj.transpose() + n_proj;
      const VectorXd dx_proj = p * h_proj.transpose() * s_mat.inverse() * r_proj;
      // Joint information route, zero prior information on the feature.
      const MatrixXd rinv = noise.inverse();
      MatrixXd info(x + 3, x + 3);
      info.topLeftCorner(x, x) = p.inverse() + h_x.transpose() * rinv * h_x;
      info.topRightCorner(x, 3) = h_x.transpose() * rinv * h_f;
      info.bottomLeftCorner(3, x) = h_f.transpose() * rinv * h_x;
      info.bottomRightCorner(3, 3) = h_f.transpose() * rinv * h_f;
      VectorXd b(x + 3);
      b.head(x) = h_x.transpose() * rinv * r;
      b.tail(3) = h_f.transpose() * rinv * r;
      const MatrixXd schur = info.topLeftCorner(x, x) -
                             info.topRightCorner(x, 3) * info.bottomRightCorner(3, 3).inverse() *
                                 info.bottomLeftCorner(3, x);
      const VectorXd bs2 = b.head(x) - info.topRightCorner(x, 3) *
                                           info.bottomRightCorner(3, 3).inverse() * b.tail(3);
      const VectorXd dx_joint = schur.ldlt().solve(bs2);
      ok = (dx_proj - dx_joint).cwiseAbs().maxCoeff() < 1e-9;
    }
    check(ok, "nullspace projection == Schur-marginalized joint update (10 systems)", failures);
  }

  // Propagation Jacobian finite-difference check.
  {
    bool ok = true;
    NoiseParams noise;
    for (int trial = 0; trial < 10 && ok; ++trial) {
      ImuState imu;
      imu.orientation = quat_normalize(Quatd(randn(4, 1)));
      imu.gyro_bias = randn(3, 1) * 0.01;
      imu.velocity = randn(3, 1);
      imu.accel_bias = randn(3, 1) * 0.05;
      imu.position = randn(3, 1);
      ImuSample s;
      s.omega_m = randn(3, 1);
      s.accel_m = randn(3, 1) * 2.0 - kGravity;
      const double dt = 0.01;
      const ImuStepJacobians jac = error_state_jacobians(imu, s, noise, dt);
      const ImuState nominal = propagate_mean(imu, s, dt);
      const double eps = 1e-6;
      auto propagate_error = [&](const VectorXd& dx) {
        ImuState pert = imu;
        pert.orientation = small_angle_update(pert.orientation, dx.segment<3>(0));
        pert.gyro_bias += dx.segment<3>(3);
        pert.velocity += dx.segment<3>(6);
        pert.accel_bias += dx.segment<3>(9);
        pert.position += dx.segment<3>(12);
        const ImuState prop = propagate_mean(pert, s, dt);
        VectorXd err(kImuErrDim);
        err.segment<3>(0) = quat_to_rotvec(
            quat_multiply(prop.orientation, quat_inverse(nominal.orientation)));
        err.segment<3>(3) = prop.gyro_bias - nominal.gyro_bias;
        err.segment<3>(6) = prop.velocity - nominal.velocity;
        err.segment<3>(9) = prop.accel_bias - nominal.accel_bias;
        err.segment<3>(12) = prop.position - nominal.position;
        return err;
      };
      for (int col = 0; col < kImuErrDim && ok; ++col) {
        VectorXd dx = VectorXd::Zero(kImuErrDim);
        dx(col) = eps;
        const VectorXd fd = (propagate_error(dx) - propagate_error((-dx).eval())) / (2.0 * eps);
        for (int row = 0; row < kImuErrDim; ++row) {
          const double rel = std::abs(fd(row) - jac.phi(row, col)) /
                             std::max(std::abs(jac.phi(row, col)), 1e-3);
          if (rel > 1e-3) ok = false;
        }
      }
    }
    check(ok, "Phi matches central finite differences (10 random states)", failures);
  }

  // Compounding identity.
  {
    bool ok = true;
    for (int trial = 0; trial < 5 && ok; ++trial) {
      CompoundedTransition ct = CompoundedTransition::identity(4);
      MatrixXd phi_seq = MatrixXd::Identity(4, 4);
      MatrixXd q_seq = MatrixXd::Zero(4, 4);
      for (int step = 0; step < 5; ++step) {
        const MatrixXd phi = MatrixXd::Identity(4, 4) + 0.1 * randn(4, 4);
        const MatrixXd g = randn(4, 4);
        const MatrixXd q = g * g.transpose();
        compound(ct, phi, q);
        phi_seq = phi * phi_seq;
        q_seq = phi * q_seq * phi.transpose() + q;
      }
      ok = (ct.Phi == phi_seq) && (ct.Qd == q_seq);
    }
    check(ok, "compounded Phi/Q == sequential recursion (entry-exact, 5 sequences)", failures);
  }

  return failures;
}

}  // namespace sevis
