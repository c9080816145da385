#include "sevis/simulator.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace sevis {

namespace {
enum Stream : std::uint64_t {
  kStreamWorld = 1,
  kStreamGyro,
  kStreamAccel,
  kStreamBiasGyro,
  kStreamBiasAccel,
  kStreamPixel,
  kStreamAssoc,
  kStreamInit,
};

Vector3d normal3(CounterRng& rng) {
  return Vector3d(rng.next_normal(), rng.next_normal(), rng.next_normal());
}
}  // namespace

void SimConfig::validate() const {
  if (imu_rate_hz <= 0 || cam_rate_hz <= 0)
    throw std::invalid_argument("SimConfig: rates must be positive");
  const double ratio = imu_rate_hz / cam_rate_hz;
  if (std::abs(ratio - std::round(ratio)) > 1e-9)
    throw std::invalid_argument("SimConfig: cam rate must divide imu rate evenly");
  if (duration_s <= 0 || loop_period_s <= 0)
    throw std::invalid_argument("SimConfig: duration/loop period must be positive");
  if (landmark_count <= 0) throw std::invalid_argument("SimConfig: need landmarks");
}

Extrinsics default_extrinsics() {
  // Camera x right (-y_B), y down (-z_B), z forward (+x_B).
  Mat3<double> c_cb;
  c_cb << 0, -1, 0,
          0, 0, -1,
          1, 0, 0;
  Extrinsics ext;
  ext.q_ci = quat_from_rot(c_cb);
  ext.p_i_in_c = Vector3d::Zero();
  return ext;
}

SimWorld::SimWorld(const SimConfig& cfg)
    : cfg_(cfg),
      noise_(cfg.noise_params()),
      ext_(default_extrinsics()),
      rng_gyro_(cfg.seed, kStreamGyro),
      rng_accel_(cfg.seed, kStreamAccel),
      rng_bias_g_(cfg.seed, kStreamBiasGyro),
      rng_bias_a_(cfg.seed, kStreamBiasAccel),
      rng_pixel_(cfg.seed, kStreamPixel),
      rng_assoc_(cfg.seed, kStreamAssoc),
      rng_init_(cfg.seed, kStreamInit) {
  cfg_.validate();
  CounterRng rng_world(cfg.seed, kStreamWorld);
  landmarks_.reserve(cfg_.landmark_count);
  for (int i = 0; i < cfg_.landmark_count; ++i) {
    const double theta = 2.0 * M_PI * rng_world.next_uniform();
    const double z = cfg_.cylinder_height_m * rng_world.next_uniform();
    landmarks_.emplace_back(cfg_.cylinder_radius_m * std::cos(theta),
                            cfg_.cylinder_radius_m * std::sin(theta), z);
  }
}

TruthSample SimWorld::truth_at(double t) const {
  if (t < 0.0 || t > cfg_.duration_s + 1e-9)
    throw std::out_of_range("truth_at: t outside [0, duration]");
  const double w = 2.0 * M_PI / cfg_.loop_period_s;
  const double th = w * t;
  const double r = cfg_.circle_radius_m;

  TruthSample s;
  s.position = Vector3d(r * std::cos(th), r * std::sin(th), cfg_.circle_height_m);
  s.velocity = Vector3d(-r * w * std::sin(th), r * w * std::cos(th), 0.0);
  s.accel_world = Vector3d(-r * w * w * std::cos(th), -r * w * w * std::sin(th), 0.0);

  // Body frame: x tangent (direction of travel), y toward the cylinder axis,
  // z up; the body yaws at the loop rate.
  const Vector3d x_b(-std::sin(th), std::cos(th), 0.0);
  const Vector3d y_b(-std::cos(th), -std::sin(th), 0.0);
  const Vector3d z_b(0.0, 0.0, 1.0);
  Mat3<double> c_bg;  // {}^B_G C (rows are body axes in {G})
  c_bg.row(0) = x_b.transpose();
  c_bg.row(1) = y_b.transpose();
  c_bg.row(2) = z_b.transpose();
  s.orientation = quat_from_rot(c_bg);
  s.omega_body = c_bg * Vector3d(0.0, 0.0, w);
  return s;
}

ImuSample SimWorld::gen_imu(double t, double dt) {
  if (t <= last_imu_t_) throw std::invalid_argument("gen_imu: timestamps must increase");
  last_imu_t_ = t;
  const TruthSample truth = truth_at(t);
  const Mat3<double> c_bg = quat_to_rot(truth.orientation);
  const double k = cfg_.noise_scale;
  const double sqrt_rate = std::sqrt(1.0 / dt);

  ImuSample s;
  s.timestamp = t;
  s.omega_m = truth.omega_body + bias_g_ + k * noise_.sigma_g * sqrt_rate * normal3(rng_gyro_);
  const Vector3d specific_force = c_bg * (truth.accel_world - kGravity);
  s.accel_m = specific_force + bias_a_ + k * noise_.sigma_a * sqrt_rate * normal3(rng_accel_);

  const double sqrt_dt = std::sqrt(dt);
  bias_g_ += k * noise_.sigma_wg * sqrt_dt * normal3(rng_bias_g_);
  bias_a_ += k * noise_.sigma_wa * sqrt_dt * normal3(rng_bias_a_);
  return s;
}

std::vector<Bearing> SimWorld::gen_bearings(double t) {
  const TruthSample truth = truth_at(t);
  ClonePose pose;
  pose.orientation = truth.orientation;
  pose.position = truth.position;
  pose.timestamp = t;

  const double tan_half_fov = std::tan(cfg_.fov_deg * M_PI / 180.0 / 2.0);
  const double sigma = cfg_.noise_scale * cfg_.sigma_uv();
  std::vector<Bearing> out;
  for (size_t i = 0; i < landmarks_.size(); ++i) {
    const Vector3d p_cam = to_camera_frame(landmarks_[i], pose, ext_);
    if (p_cam.z() <= cfg_.depth_min_m || p_cam.z() > cfg_.depth_max_m) continue;
    Bearing b;
    b.u = p_cam.x() / p_cam.z();
    b.v = p_cam.y() / p_cam.z();
    if (std::abs(b.u) > tan_half_fov || std::abs(b.v) > tan_half_fov) continue;
    b.u += sigma * rng_pixel_.next_normal();
    b.v += sigma * rng_pixel_.next_normal();
    b.feature_id = static_cast<std::int64_t>(i);
    b.clone_timestamp = t;
    out.push_back(b);
  }
  return out;
}

std::string SimWorld::truth_csv_line(double t) const {
  const TruthSample s = truth_at(t);
  char buf[224];
  std::snprintf(buf, sizeof(buf), "%.9f,%.9e,%.9e,%.9e,%.9e,%.9e,%.9e,%.9e", t, s.position.x(),
                s.position.y(), s.position.z(), s.orientation(0), s.orientation(1),
                s.orientation(2), s.orientation(3));
  return std::string(buf);
}

}  // namespace sevis
