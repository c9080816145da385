#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sevis/camera_model.hpp"
#include "sevis/propagation.hpp"
#include "sevis/rng.hpp"

// Monte-Carlo world: an analytic circular trajectory inside a cylinder arena
// with landmarks on the wall, synthesizing IMU samples and bearing
// measurements with configurable noise. All randomness flows through
// per-stream counter RNGs keyed off the run seed, so a seed reproduces the
// measurement streams bit for bit.

namespace sevis {

// Table-style IMU noise units -> continuous-time densities.
inline double deg_per_sqrt_hour_to_rad_per_sqrt_s(double x) { return x * M_PI / 180.0 / 60.0; }
inline double per_sqrt_hour_to_per_sqrt_s(double x) { return x / 60.0; }
inline double milli_g_per_sqrt_hour_to_si(double x) { return x * 1e-3 * 9.81 / 60.0; }
inline double bearing_sigma_from_deg(double deg) { return std::tan(deg * M_PI / 180.0); }

struct SimConfig {
  double imu_rate_hz = 100.0;
  double cam_rate_hz = 5.0;
  double duration_s = 320.0;
  double loop_period_s = 32.0;

  double circle_radius_m = 5.0;
  double circle_height_m = 1.5;
  double cylinder_radius_m = 7.0;
  double cylinder_height_m = 4.0;
  int landmark_count = 300;

  double fov_deg = 90.0;
  double bearing_sigma_deg = 0.17;
  double depth_min_m = 0.2;
  double depth_max_m = 40.0;

  double gyro_arw_deg_per_sqrt_hr = 0.4;       // angle random walk
  double gyro_rrw_deg_per_s_per_sqrt_hr = 0.02;  // rate random walk (bias)
  double accel_vrw_m_per_s_per_sqrt_hr = 0.03;   // velocity random walk
  double accel_arw_milli_g_per_sqrt_hr = 0.25;   // acceleration random walk (bias)

  double noise_scale = 1.0;  // 0 disables measurement noise and bias walks
  std::uint64_t seed = 0;

  NoiseParams noise_params() const {
    NoiseParams n;
    n.sigma_g = deg_per_sqrt_hour_to_rad_per_sqrt_s(gyro_arw_deg_per_sqrt_hr);
    n.sigma_wg = deg_per_sqrt_hour_to_rad_per_sqrt_s(gyro_rrw_deg_per_s_per_sqrt_hr);
    n.sigma_a = per_sqrt_hour_to_per_sqrt_s(accel_vrw_m_per_s_per_sqrt_hr);
    n.sigma_wa = milli_g_per_sqrt_hour_to_si(accel_arw_milli_g_per_sqrt_hr);
    return n;
  }
  double sigma_uv() const { return bearing_sigma_from_deg(bearing_sigma_deg); }
  double imu_dt() const { return 1.0 / imu_rate_hz; }
  double cam_dt() const { return 1.0 / cam_rate_hz; }
  void validate() const;  // throws on non-positive rates or misaligned cam grid
};

struct TruthSample {
  Quatd orientation = Quatd(0, 0, 0, 1);  // {}^I_G q
  Vector3d position = Vector3d::Zero();
  Vector3d velocity = Vector3d::Zero();
  Vector3d omega_body = Vector3d::Zero();
  Vector3d accel_world = Vector3d::Zero();
};

/// Forward-facing tangent camera: optical axis along body +x.
Extrinsics default_extrinsics();

class SimWorld {
 public:
  explicit SimWorld(const SimConfig& cfg);

  /// Analytic truth; throws std::out_of_range outside [0, duration].
  TruthSample truth_at(double t) const;

  /// IMU measurement on the imu-rate grid. Calls must advance monotonically;
  /// bias random walks step once per call.
  ImuSample gen_imu(double t, double dt);

  /// Noisy bearings of all landmarks inside the field of view / depth range,
  /// with ground-truth ids.
  std::vector<Bearing> gen_bearings(double t);

  const std::vector<Vector3d>& landmarks() const { return landmarks_; }
  const SimConfig& config() const { return cfg_; }
  const Extrinsics& extrinsics() const { return ext_; }
  CounterRng& assoc_rng() { return rng_assoc_; }
  CounterRng& init_rng() { return rng_init_; }
  const Vector3d& gyro_bias_true() const { return bias_g_; }
  const Vector3d& accel_bias_true() const { return bias_a_; }

  /// Ground-truth export record: t,px,py,pz,qx,qy,qz,qw
  std::string truth_csv_line(double t) const;

 private:
  SimConfig cfg_;
  NoiseParams noise_;
  Extrinsics ext_;
  std::vector<Vector3d> landmarks_;
  CounterRng rng_gyro_, rng_accel_, rng_bias_g_, rng_bias_a_, rng_pixel_, rng_assoc_, rng_init_;
  Vector3d bias_g_ = Vector3d::Zero();
  Vector3d bias_a_ = Vector3d::Zero();
  double last_imu_t_ = -1.0;
};

}  // namespace sevis
