#pragma once

#include <Eigen/Core>

#include "sevis/state.hpp"

// Discrete IMU propagation. The mean uses a zeroth-order hold on the
// measurements: exact quaternion integration of the constant angular rate and
// a midpoint rule (average of the start/end frame rotations) for velocity and
// position. Error-state Jacobians are derived analytically for exactly this
// discretization and are validated against finite differences in the tests.
// Per-sample transition/noise matrices are compounded between images so the
// partitioned covariance is touched once per image.

namespace sevis {

inline const Vector3d kGravity(0.0, 0.0, -9.81);

struct ImuSample {
  Vector3d omega_m = Vector3d::Zero();  // rad/s
  Vector3d accel_m = Vector3d::Zero();  // m/s^2 (specific force)
  double timestamp = 0.0;
};

struct NoiseParams {
  double sigma_g = 1e-4;    // gyro white noise, rad/s/sqrt(Hz)
  double sigma_wg = 1e-6;   // gyro bias walk, rad/s^2/sqrt(Hz)
  double sigma_a = 1e-3;    // accel white noise, m/s^2/sqrt(Hz)
  double sigma_wa = 1e-5;   // accel bias walk, m/s^3/sqrt(Hz)
  void validate() const;    // throws unless all strictly positive
};

/// Compounded transition Phi(i) and accumulated discrete noise Q(i) with
/// Phi(0) = I, Q(0) = 0.
struct CompoundedTransition {
  MatrixXd Phi;
  MatrixXd Qd;
  static CompoundedTransition identity(int dim) {
    return {MatrixXd::Identity(dim, dim), MatrixXd::Zero(dim, dim)};
  }
};

/// Per-sample IMU error-state transition (15x15) and discrete noise.
struct ImuStepJacobians {
  Eigen::Matrix<double, kImuErrDim, kImuErrDim> phi;
  Eigen::Matrix<double, kImuErrDim, kImuErrDim> q;
};

/// ZOH mean propagation over dt. Biases are constant in the mean.
/// Throws std::invalid_argument for dt <= 0.
ImuState propagate_mean(const ImuState& imu, const ImuSample& sample, double dt,
                        const Vector3d& gravity = kGravity);

/// Analytic Jacobian of propagate_mean w.r.t. the 15-dof IMU error state,
/// plus the first-order discrete noise Q = G diag(sigma^2) G^T dt.
ImuStepJacobians error_state_jacobians(const ImuState& imu, const ImuSample& sample,
                                       const NoiseParams& noise, double dt,
                                       const Vector3d& gravity = kGravity);

/// Phi(i+1) = Phi_step Phi(i); Q(i+1) = Phi_step Q(i) Phi_step^T + Q_step.
void compound(CompoundedTransition& ct, const MatrixXd& phi_step, const MatrixXd& q_step);

/// Applies an active-dimension compounded transition:
/// P_AA <- Phi P_AA Phi^T + Q (symmetrized), P_AS <- Phi P_AS, P_SS untouched.
/// Throws std::invalid_argument on dimension mismatch.
void propagate_covariance(PartitionedCovariance& cov, const CompoundedTransition& ct);

/// Same result as propagate_covariance with Phi = blkdiag(phi_imu, I): only
/// the 15 IMU rows/cols are touched, which keeps full-SLAM propagation at
/// O(dim^2) and the Schmidt cross term at O(n).
void propagate_covariance_imu_block(PartitionedCovariance& cov,
                                    const Eigen::Ref<const MatrixXd>& phi_imu,
                                    const Eigen::Ref<const MatrixXd>& q_imu);

/// blkdiag(ct_imu.Phi, I) / zero-padded Q at the given active dimension.
CompoundedTransition embed_active(const CompoundedTransition& ct_imu, int active_dim);

}  // namespace sevis
