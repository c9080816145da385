#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "sevis/state.hpp"

// Perspective projection, measurement Jacobians and multi-view feature
// triangulation. Measurements are focal-normalized image coordinates of a
// calibrated pinhole camera; the fixed camera-IMU extrinsics are a
// calibration input.

namespace sevis {

using Mat23 = Eigen::Matrix<double, 2, 3>;

struct Extrinsics {
  Quatd q_ci = Quatd(0, 0, 0, 1);    // {}^C_I q
  Vector3d p_i_in_c = Vector3d::Zero();  // {}^C p_I
};

struct Bearing {
  double u = 0.0;
  double v = 0.0;
  std::int64_t feature_id = -1;
  double clone_timestamp = 0.0;
};

/// Measurement Jacobian blocks of one bearing observation (Jacobians of the
/// 2d measurement w.r.t. the observing clone's orientation/position errors
/// and the feature position error), with their column offsets filled in by
/// whoever places them into a stacked system.
struct MeasJacobian {
  Mat23 h_theta = Mat23::Zero();
  Mat23 h_p = Mat23::Zero();
  Mat23 h_f = Mat23::Zero();
  int clone_offset = -1;
  int feature_offset = -1;
  bool feature_in_schmidt = false;
};

struct FeatureTrack {
  std::int64_t id = -1;
  std::vector<Bearing> observations;  // ordered by timestamp
};

struct CameraOptions {
  double depth_min = 0.05;
  int max_iters = 20;
  double cost_tol = 1e-10;
  double min_baseline_depth_ratio = 0.02;
};

/// {}^C p_f for a feature observed from `clone` through `ext`.
Vector3d to_camera_frame(const Vector3d& p_global, const ClonePose& clone,
                         const Extrinsics& ext);

/// Perspective projection; empty when the transformed depth is <= depth_min.
std::optional<Bearing> project(const Vector3d& p_global, const ClonePose& clone,
                               const Extrinsics& ext, double depth_min = 0.05);

/// d(u,v)/d(p_cam) = 1/z^2 [z 0 -x; 0 z -y]; empty when z <= depth_min.
std::optional<Mat23> projection_jacobian(const Vector3d& p_cam, double depth_min = 0.05);

/// All three blocks of the linearized bearing measurement.
std::optional<MeasJacobian> measurement_jacobians(const Vector3d& p_global,
                                                  const ClonePose& clone,
                                                  const Extrinsics& ext,
                                                  double depth_min = 0.05);

enum class TriangulationStatus { kOk, kInsufficientBaseline, kDivergedRefinement, kBehindCamera };

struct TriangulationResult {
  TriangulationStatus status = TriangulationStatus::kInsufficientBaseline;
  Vector3d point = Vector3d::Zero();
  double final_cost = 0.0;            // sum of squared reprojection residuals
  double baseline_depth_ratio = 0.0;  // max inter-camera baseline / seed depth
  int iterations = 0;
  bool ok() const { return status == TriangulationStatus::kOk; }
};

/// Linear (DLT) seed followed by Gauss-Newton on the global xyz position.
/// Observations are matched to clones by timestamp.
TriangulationResult triangulate(const FeatureTrack& track, const std::vector<ClonePose>& clones,
                                const Extrinsics& ext, const CameraOptions& opts = {});

}  // namespace sevis
