#include <doctest.h>

#include "sevis/propagation.hpp"
#include "support/test_util.hpp"

using namespace sevis;
using namespace sevis::testing;

TEST_SUITE_BEGIN("propagation");

namespace {

ImuState random_imu(CounterRng& rng) {
  ImuState imu;
  imu.orientation = random_quat(rng);
  imu.gyro_bias = 0.01 * randv3(rng);
  imu.velocity = randv3(rng);
  imu.accel_bias = 0.05 * randv3(rng);
  imu.position = randv3(rng);
  return imu;
}

ImuSample random_sample(CounterRng& rng) {
  ImuSample s;
  s.omega_m = randv3(rng);
  s.accel_m = 2.0 * randv3(rng) - kGravity;
  return s;
}

ImuState inject_error(const ImuState& imu, const VectorXd& dx) {
  ImuState out = imu;
  out.orientation = small_angle_update(out.orientation, dx.segment<3>(0));
  out.gyro_bias += dx.segment<3>(3);
  out.velocity += dx.segment<3>(6);
  out.accel_bias += dx.segment<3>(9);
  out.position += dx.segment<3>(12);
  return out;
}

VectorXd state_error(const ImuState& x, const ImuState& ref) {
  VectorXd err(kImuErrDim);
  err.segment<3>(0) =
      quat_to_rotvec(quat_multiply(x.orientation, quat_inverse(ref.orientation)));
  err.segment<3>(3) = x.gyro_bias - ref.gyro_bias;
  err.segment<3>(6) = x.velocity - ref.velocity;
  err.segment<3>(9) = x.accel_bias - ref.accel_bias;
  err.segment<3>(12) = x.position - ref.position;
  return err;
}

}  // namespace

TEST_CASE("static equilibrium leaves pose and velocity unchanged") {
  CounterRng rng(30, 1);
  ImuState imu = random_imu(rng);
  imu.gyro_bias.setZero();
  imu.accel_bias.setZero();
  ImuSample s;
  s.omega_m.setZero();
  s.accel_m = quat_to_rot(imu.orientation) * (-kGravity);  // cancels gravity exactly
  const ImuState out = propagate_mean(imu, s, 0.01);
  CHECK((out.position - imu.position).norm() < 1e-14);
  CHECK((out.velocity - imu.velocity).norm() < 1e-13);
  CHECK((out.orientation - quat_normalize(imu.orientation)).norm() < 1e-15);
}

TEST_CASE("constant rate about z for one second advances yaw 90 degrees") {
  ImuState imu;
  const double rate = M_PI / 2.0;  // 90 deg/s
  ImuSample s;
  s.omega_m = Vector3d(0, 0, rate);
  s.accel_m = -kGravity;  // hover
  const int steps = 100;
  for (int i = 0; i < steps; ++i) imu = propagate_mean(imu, s, 1.0 / steps);
  const Vector3d rotvec = quat_to_rotvec(imu.orientation);
  CHECK((rotvec - Vector3d(0, 0, M_PI / 2.0)).norm() < 1e-6);
}

TEST_CASE("free fall from rest matches the ballistic formula") {
  ImuState imu;
  ImuSample s;  // zero inputs: pure gravity
  const int steps = 100;
  for (int i = 0; i < steps; ++i) imu = propagate_mean(imu, s, 1.0 / steps);
  CHECK((imu.position - 0.5 * kGravity).norm() < 1e-10);
  CHECK((imu.velocity - kGravity).norm() < 1e-10);
}

TEST_CASE("propagate_mean rejects non-positive dt") {
  ImuState imu;
  ImuSample s;
  CHECK_THROWS_AS(propagate_mean(imu, s, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(propagate_mean(imu, s, -0.1), std::invalid_argument);
}

TEST_CASE("Phi approaches identity and Q vanishes as dt shrinks") {
  CounterRng rng(31, 1);
  const ImuState imu = random_imu(rng);
  const ImuSample s = random_sample(rng);
  NoiseParams noise;
  const ImuStepJacobians jac = error_state_jacobians(imu, s, noise, 1e-9);
  CHECK((jac.phi - MatrixXd::Identity(15, 15)).cwiseAbs().maxCoeff() < 1e-7);
  CHECK(jac.q.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("position-velocity block is dt*I for zero rotation") {
  ImuState imu;
  ImuSample s;
  s.accel_m = -kGravity;
  NoiseParams noise;
  const ImuStepJacobians jac = error_state_jacobians(imu, s, noise, 0.01);
  CHECK((jac.phi.block<3, 3>(12, 6) - 0.01 * Mat3<double>::Identity()).cwiseAbs().maxCoeff() <
        1e-9);
}

TEST_CASE("Phi matches central finite differences of propagate_mean") {
  CounterRng rng(32, 1);
  NoiseParams noise;
  const double dt = 0.01;
  const double eps = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    const ImuState imu = random_imu(rng);
    const ImuSample s = random_sample(rng);
    const ImuStepJacobians jac = error_state_jacobians(imu, s, noise, dt);
    const ImuState nominal = propagate_mean(imu, s, dt);
    double max_rel = 0.0;
    for (int col = 0; col < kImuErrDim; ++col) {
      VectorXd dx = VectorXd::Zero(kImuErrDim);
      dx(col) = eps;
      const VectorXd plus = state_error(propagate_mean(inject_error(imu, dx), s, dt), nominal);
      const VectorXd minus =
          state_error(propagate_mean(inject_error(imu, (-dx).eval()), s, dt), nominal);
      const VectorXd fd = (plus - minus) / (2.0 * eps);
      for (int row = 0; row < kImuErrDim; ++row) {
        const double rel = std::abs(fd(row) - jac.phi(row, col)) /
                           std::max(std::abs(jac.phi(row, col)), 1e-3);
        max_rel = std::max(max_rel, rel);
      }
    }
    CHECK(max_rel < 1e-3);
  }
}

TEST_CASE("injected orientation error propagates as predicted") {
  CounterRng rng(33, 1);
  NoiseParams noise;
  const double dt = 0.01;
  const ImuState imu = random_imu(rng);
  const ImuSample s = random_sample(rng);
  const ImuStepJacobians jac = error_state_jacobians(imu, s, noise, dt);
  const ImuState nominal = propagate_mean(imu, s, dt);
  VectorXd dx = VectorXd::Zero(kImuErrDim);
  dx.segment<3>(0) = Vector3d(1e-5, -1e-5, 0.5e-5);
  const VectorXd actual = state_error(propagate_mean(inject_error(imu, dx), s, dt), nominal);
  const VectorXd predicted = jac.phi * dx;
  CHECK((actual - predicted).norm() / predicted.norm() < 1e-4);
}

TEST_CASE("Q_step is symmetric PSD and bias covariance grows linearly") {
  CounterRng rng(34, 1);
  NoiseParams noise;
  noise.sigma_g = 1e-4;
  noise.sigma_wg = 2e-6;
  noise.sigma_a = 5e-4;
  noise.sigma_wa = 4e-5;
  const ImuState imu = random_imu(rng);
  const ImuSample s = random_sample(rng);
  const double dt = 0.01;
  const ImuStepJacobians jac = error_state_jacobians(imu, s, noise, dt);
  CHECK((jac.q - jac.q.transpose()).cwiseAbs().maxCoeff() < 1e-18);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(jac.q);
  CHECK(es.eigenvalues()(0) >= -1e-18);
  // Per-axis bias diffusion sigma_w^2 dt.
  for (int i = 0; i < 3; ++i) {
    CHECK(jac.q(3 + i, 3 + i) ==
          doctest::Approx(noise.sigma_wg * noise.sigma_wg * dt).epsilon(1e-9));
    CHECK(jac.q(9 + i, 9 + i) ==
          doctest::Approx(noise.sigma_wa * noise.sigma_wa * dt).epsilon(1e-9));
  }
  // Bias mean is constant under propagation.
  const ImuState out = propagate_mean(imu, s, dt);
  CHECK((out.gyro_bias - imu.gyro_bias).norm() == 0.0);
  CHECK((out.accel_bias - imu.accel_bias).norm() == 0.0);
}

TEST_CASE("compound initial conditions and identity-Phi accumulation") {
  CounterRng rng(35, 1);
  CompoundedTransition ct = CompoundedTransition::identity(15);
  NoiseParams noise;
  const ImuState imu = random_imu(rng);
  const ImuSample s = random_sample(rng);
  const ImuStepJacobians step = error_state_jacobians(imu, s, noise, 0.01);

  compound(ct, step.phi, step.q);
  CHECK((ct.Phi - step.phi).norm() == 0.0);
  CHECK((ct.Qd - step.q).norm() == 0.0);

  CompoundedTransition ct2 = CompoundedTransition::identity(4);
  const MatrixXd q = random_psd(rng, 4);
  compound(ct2, MatrixXd::Identity(4, 4), q);
  compound(ct2, MatrixXd::Identity(4, 4), q);
  CHECK((ct2.Qd - 2.0 * q).cwiseAbs().maxCoeff() < 1e-15);

  CHECK_THROWS_AS(compound(ct2, MatrixXd::Identity(3, 3), MatrixXd::Zero(3, 3)),
                  std::invalid_argument);
}

TEST_CASE("five random steps compound to the sequential recursion entry-exact") {
  CounterRng rng(36, 1);
  for (int trial = 0; trial < 20; ++trial) {
    CompoundedTransition ct = CompoundedTransition::identity(6);
    MatrixXd phi_seq = MatrixXd::Identity(6, 6);
    MatrixXd q_seq = MatrixXd::Zero(6, 6);
    std::vector<MatrixXd> phis, qs;
    for (int step = 0; step < 5; ++step) {
      phis.push_back(MatrixXd::Identity(6, 6) + 0.2 * randn(rng, 6, 6));
      qs.push_back(random_psd(rng, 6, 0.01));
      compound(ct, phis.back(), qs.back());
      phi_seq = phis.back() * phi_seq;
      q_seq = phis.back() * q_seq * phis.back().transpose() + qs.back();
    }
    CHECK(ct.Phi == phi_seq);
    CHECK(ct.Qd == q_seq);

    // Applying the compounded pair equals stepwise propagation of a prior.
    const MatrixXd p0 = random_psd(rng, 6);
    MatrixXd p_seq = p0;
    for (int step = 0; step < 5; ++step)
      p_seq = (phis[step] * p_seq * phis[step].transpose() + qs[step]).eval();
    const MatrixXd p_cmp = ct.Phi * p0 * ct.Phi.transpose() + ct.Qd;
    CHECK((p_cmp - p_seq).cwiseAbs().maxCoeff() < 1e-10 * p_seq.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("propagate_covariance identity and zero cross block") {
  CounterRng rng(37, 1);
  SevisState state;
  PartitionedCovariance cov(64, 16);
  random_state_cov(rng, 1, 1, 2, &state, &cov);
  const MatrixXd before = cov.assemble();
  CompoundedTransition ct = CompoundedTransition::identity(cov.active_dim());
  propagate_covariance(cov, ct);
  CHECK((cov.assemble() - before).cwiseAbs().maxCoeff() < 1e-15);

  cov.pas().setZero();
  ct.Phi = MatrixXd::Identity(cov.active_dim(), cov.active_dim()) +
           0.1 * randn(rng, cov.active_dim(), cov.active_dim());
  propagate_covariance(cov, ct);
  CHECK(MatrixXd(cov.pas()).norm() == 0.0);
}

TEST_CASE("propagate_covariance matches the dense blkdiag oracle") {
  CounterRng rng(38, 1);
  for (int trial = 0; trial < 10; ++trial) {
    SevisState state;
    PartitionedCovariance cov(64, 32);
    random_state_cov(rng, 1, 1, 3, &state, &cov);
    const int a = cov.active_dim();
    const int s = cov.schmidt_dim();
    const MatrixXd before = cov.assemble();
    CompoundedTransition ct;
    ct.Phi = MatrixXd::Identity(a, a) + 0.3 * randn(rng, a, a);
    ct.Qd = random_psd(rng, a, 0.01);
    propagate_covariance(cov, ct);

    MatrixXd big_phi = MatrixXd::Identity(a + s, a + s);
    big_phi.topLeftCorner(a, a) = ct.Phi;
    MatrixXd big_q = MatrixXd::Zero(a + s, a + s);
    big_q.topLeftCorner(a, a) = ct.Qd;
    MatrixXd expected = big_phi * before * big_phi.transpose() + big_q;
    expected = 0.5 * (expected + expected.transpose()).eval();
    CHECK((cov.assemble() - expected).cwiseAbs().maxCoeff() <
          1e-11 * expected.cwiseAbs().maxCoeff());

    CompoundedTransition bad = CompoundedTransition::identity(a + 1);
    CHECK_THROWS_AS(propagate_covariance(cov, bad), std::invalid_argument);
  }
}

TEST_CASE("imu-block fast path equals the general active-dimension product") {
  CounterRng rng(39, 1);
  for (int trial = 0; trial < 10; ++trial) {
    SevisState state;
    PartitionedCovariance cov_a(96, 32), cov_b(96, 32);
    random_state_cov(rng, 2, 1, 2, &state, &cov_a);
    cov_b.set_dims(cov_a.active_dim(), cov_a.schmidt_dim());
    cov_b.paa() = cov_a.paa();
    cov_b.pas() = cov_a.pas();
    cov_b.pss() = cov_a.pss();

    CompoundedTransition imu_ct;
    imu_ct.Phi = MatrixXd::Identity(15, 15) + 0.2 * randn(rng, 15, 15);
    imu_ct.Qd = random_psd(rng, 15, 0.01);
    propagate_covariance_imu_block(cov_a, imu_ct.Phi, imu_ct.Qd);
    propagate_covariance(cov_b, embed_active(imu_ct, cov_b.active_dim()));
    CHECK((cov_a.assemble() - cov_b.assemble()).cwiseAbs().maxCoeff() < 1e-11);
  }
}

TEST_CASE("noise params must be strictly positive") {
  NoiseParams bad;
  bad.sigma_a = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_SUITE_END();
