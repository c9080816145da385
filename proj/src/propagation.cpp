#include "sevis/propagation.hpp"

#include <stdexcept>

namespace sevis {

void NoiseParams::validate() const {
  if (sigma_g <= 0 || sigma_wg <= 0 || sigma_a <= 0 || sigma_wa <= 0)
    throw std::invalid_argument("NoiseParams: densities must be strictly positive");
}

ImuState propagate_mean(const ImuState& imu, const ImuSample& sample, double dt,
                        const Vector3d& gravity) {
  if (dt <= 0) throw std::invalid_argument("propagate_mean: dt must be positive");
  const Vector3d w_hat = sample.omega_m - imu.gyro_bias;
  const Vector3d a_hat = sample.accel_m - imu.accel_bias;

  ImuState out = imu;
  out.orientation = quat_multiply(quat_from_rotvec((w_hat * dt).eval()), imu.orientation);

  const Mat3<double> r_old_t = quat_to_rot(imu.orientation).transpose();
  const Mat3<double> r_new_t = quat_to_rot(out.orientation).transpose();
  const Vector3d a_world = 0.5 * (r_old_t + r_new_t) * a_hat + gravity;

  out.position = imu.position + imu.velocity * dt + 0.5 * a_world * dt * dt;
  out.velocity = imu.velocity + a_world * dt;
  return out;
}

ImuStepJacobians error_state_jacobians(const ImuState& imu, const ImuSample& sample,
                                       const NoiseParams& noise, double dt,
                                       const Vector3d& gravity) {
  if (dt <= 0) throw std::invalid_argument("error_state_jacobians: dt must be positive");
  const Vector3d w_hat = sample.omega_m - imu.gyro_bias;
  const Vector3d a_hat = sample.accel_m - imu.accel_bias;
  const Vector3d delta = w_hat * dt;

  const ImuState next = propagate_mean(imu, sample, dt, gravity);
  const Mat3<double> r_old_t = quat_to_rot(imu.orientation).transpose();
  const Mat3<double> r_new_t = quat_to_rot(next.orientation).transpose();

  const Mat3<double> phi_tt = quat_to_rot(quat_from_rotvec(delta));  // exp(-skew(delta))
  const Mat3<double> phi_tbg = -so3_right_jacobian(delta) * dt;
  const Mat3<double> a_skew = skew(a_hat);
  const Mat3<double> phi_vt = -0.5 * dt * (r_old_t * a_skew + r_new_t * a_skew * phi_tt);
  const Mat3<double> phi_vbg = -0.5 * dt * r_new_t * a_skew * phi_tbg;
  const Mat3<double> phi_vba = -0.5 * dt * (r_old_t + r_new_t);

  ImuStepJacobians out;
  out.phi.setIdentity();
  out.phi.block<3, 3>(0, 0) = phi_tt;
  out.phi.block<3, 3>(0, 3) = phi_tbg;
  out.phi.block<3, 3>(6, 0) = phi_vt;
  out.phi.block<3, 3>(6, 3) = phi_vbg;
  out.phi.block<3, 3>(6, 9) = phi_vba;
  out.phi.block<3, 3>(12, 0) = 0.5 * dt * phi_vt;
  out.phi.block<3, 3>(12, 3) = 0.5 * dt * phi_vbg;
  out.phi.block<3, 3>(12, 6) = dt * Mat3<double>::Identity();
  out.phi.block<3, 3>(12, 9) = 0.5 * dt * phi_vba;

  // Q = G diag(sigma^2) G^T dt with G the continuous-time noise Jacobian for
  // [n_g, n_wg, n_a, n_wa].
  Eigen::Matrix<double, kImuErrDim, 12> g = Eigen::Matrix<double, kImuErrDim, 12>::Zero();
  g.block<3, 3>(0, 0) = -Mat3<double>::Identity();
  g.block<3, 3>(3, 3) = Mat3<double>::Identity();
  g.block<3, 3>(6, 6) = -r_old_t;
  g.block<3, 3>(9, 9) = Mat3<double>::Identity();
  Eigen::Matrix<double, 12, 1> sig2;
  sig2 << Vector3d::Constant(noise.sigma_g * noise.sigma_g),
      Vector3d::Constant(noise.sigma_wg * noise.sigma_wg),
      Vector3d::Constant(noise.sigma_a * noise.sigma_a),
      Vector3d::Constant(noise.sigma_wa * noise.sigma_wa);
  out.q.noalias() = g * sig2.asDiagonal() * g.transpose() * dt;
  return out;
}

void compound(CompoundedTransition& ct, const MatrixXd& phi_step, const MatrixXd& q_step) {
  if (phi_step.rows() != ct.Phi.rows() || phi_step.cols() != ct.Phi.cols() ||
      q_step.rows() != ct.Qd.rows() || q_step.cols() != ct.Qd.cols())
    throw std::invalid_argument("compound: shape mismatch");
  ct.Phi = phi_step * ct.Phi;
  ct.Qd = phi_step * ct.Qd * phi_step.transpose() + q_step;
}

void propagate_covariance(PartitionedCovariance& cov, const CompoundedTransition& ct) {
  const int a = cov.active_dim();
  if (ct.Phi.rows() != a || ct.Phi.cols() != a || ct.Qd.rows() != a || ct.Qd.cols() != a)
    throw std::invalid_argument("propagate_covariance: Phi must span the active dimension");
  MatrixXd paa = ct.Phi * cov.paa() * ct.Phi.transpose() + ct.Qd;
  cov.paa() = 0.5 * (paa + paa.transpose());
  if (cov.schmidt_dim() > 0) {
    const MatrixXd pas = ct.Phi * cov.pas();
    cov.pas() = pas;
  }
}

void propagate_covariance_imu_block(PartitionedCovariance& cov,
                                    const Eigen::Ref<const MatrixXd>& phi_imu,
                                    const Eigen::Ref<const MatrixXd>& q_imu) {
  const int d = kImuErrDim;
  if (phi_imu.rows() != d || phi_imu.cols() != d || q_imu.rows() != d || q_imu.cols() != d)
    throw std::invalid_argument("propagate_covariance_imu_block: expected 15x15 blocks");
  if (cov.active_dim() < d)
    throw std::invalid_argument("propagate_covariance_imu_block: active dim too small");
  auto paa = cov.paa();
  const MatrixXd top = phi_imu * paa.topRows(d);
  paa.topRows(d) = top;
  const MatrixXd left = paa.leftCols(d) * phi_imu.transpose();
  paa.leftCols(d) = left;
  paa.topLeftCorner(d, d) += q_imu;
  cov.symmetrize_paa();
  if (cov.schmidt_dim() > 0) {
    auto pas = cov.pas();
    const MatrixXd rows = phi_imu * pas.topRows(d);
    pas.topRows(d) = rows;
  }
}

CompoundedTransition embed_active(const CompoundedTransition& ct_imu, int active_dim) {
  CompoundedTransition out = CompoundedTransition::identity(active_dim);
  out.Phi.topLeftCorner(kImuErrDim, kImuErrDim) = ct_imu.Phi;
  out.Qd.topLeftCorner(kImuErrDim, kImuErrDim) = ct_imu.Qd;
  return out;
}

}  // namespace sevis
