#pragma once

#include <cmath>

#include <Eigen/Core>

// SO(3) / unit-quaternion algebra shared by every module.
//
// Quaternions follow the JPL convention: components stored [x, y, z, w]
// (vector part first, scalar last), and composition is left-handed so that
// quat_to_rot(q1 ⊗ q2) == quat_to_rot(q1) * quat_to_rot(q2).
// A quaternion q represents the rotation from the global frame {G} into a
// local frame, i.e. p_local = quat_to_rot(q) * p_global.

namespace sevis {

template <typename Scalar>
using Quat = Eigen::Matrix<Scalar, 4, 1>;
template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

using Quatd = Quat<double>;

inline constexpr double kQuatNormTol = 1e-9;

/// skew(v) * w == v x w; skew(v)^T == -skew(v).
template <typename Derived>
Mat3<typename Derived::Scalar> skew(const Eigen::MatrixBase<Derived>& v) {
  using S = typename Derived::Scalar;
  Mat3<S> m;
  m << S(0), -v(2), v(1),
       v(2), S(0), -v(0),
      -v(1), v(0), S(0);
  return m;
}

template <typename Derived>
Quat<typename Derived::Scalar> quat_identity() {
  Quat<typename Derived::Scalar> q;
  q << 0, 0, 0, 1;
  return q;
}

inline Quatd quat_identityd() { return Quatd(0, 0, 0, 1); }

/// Renormalizes only when the norm has drifted past kQuatNormTol, and keeps
/// the scalar part non-negative so representations stay unique.
template <typename Derived>
Quat<typename Derived::Scalar> quat_normalize(const Eigen::MatrixBase<Derived>& q) {
  using S = typename Derived::Scalar;
  Quat<S> out = q;
  const S n = out.norm();
  if (std::abs(n - S(1)) > S(kQuatNormTol)) out /= n;
  if (out(3) < S(0)) out = -out;
  return out;
}

/// Rotation matrix of a JPL quaternion: C = (2w^2 - 1) I - 2 w skew(v) + 2 v v^T.
template <typename Derived>
Mat3<typename Derived::Scalar> quat_to_rot(const Eigen::MatrixBase<Derived>& q) {
  using S = typename Derived::Scalar;
  const Vec3<S> v = q.template head<3>();
  const S w = q(3);
  Mat3<S> r = (S(2) * w * w - S(1)) * Mat3<S>::Identity();
  r.noalias() -= S(2) * w * skew(v);
  r.noalias() += S(2) * v * v.transpose();
  return r;
}

/// JPL product q1 ⊗ q2; satisfies C(q1 ⊗ q2) = C(q1) C(q2).
template <typename D1, typename D2>
Quat<typename D1::Scalar> quat_multiply(const Eigen::MatrixBase<D1>& q1,
                                        const Eigen::MatrixBase<D2>& q2) {
  using S = typename D1::Scalar;
  const Vec3<S> v1 = q1.template head<3>();
  const Vec3<S> v2 = q2.template head<3>();
  const S w1 = q1(3);
  const S w2 = q2(3);
  Quat<S> out;
  out.template head<3>() = w1 * v2 + w2 * v1 - v1.cross(v2);
  out(3) = w1 * w2 - v1.dot(v2);
  return quat_normalize(out);
}

template <typename Derived>
Quat<typename Derived::Scalar> quat_inverse(const Eigen::MatrixBase<Derived>& q) {
  Quat<typename Derived::Scalar> out;
  out.template head<3>() = -q.template head<3>();
  out(3) = q(3);
  return out;
}

/// Exact exponential: rotation vector (axis * angle) to quaternion.
template <typename Derived>
Quat<typename Derived::Scalar> quat_from_rotvec(const Eigen::MatrixBase<Derived>& theta) {
  using S = typename Derived::Scalar;
  const S angle = theta.norm();
  Quat<S> q;
  if (angle < S(1e-12)) {
    q.template head<3>() = theta / S(2);
    q(3) = S(1);
    return quat_normalize(q);
  }
  q.template head<3>() = std::sin(angle / S(2)) / angle * theta;
  q(3) = std::cos(angle / S(2));
  return q;
}

/// Minimal rotation vector of a quaternion (angle in [0, pi]).
template <typename Derived>
Vec3<typename Derived::Scalar> quat_to_rotvec(const Eigen::MatrixBase<Derived>& q) {
  using S = typename Derived::Scalar;
  Vec3<S> v = q.template head<3>();
  S w = q(3);
  if (w < S(0)) {
    v = -v;
    w = -w;
  }
  const S vn = v.norm();
  if (vn < S(1e-12)) return S(2) * v;
  const S angle = S(2) * std::atan2(vn, w);
  return (angle / vn) * v;
}

/// First-order error-state injection: returns normalize([dtheta/2; 1] ⊗ q).
/// The perturbation acts in the local frame: C(out) ≈ (I - skew(dtheta)) C(q).
template <typename D1, typename D2>
Quat<typename D1::Scalar> small_angle_update(const Eigen::MatrixBase<D1>& q,
                                             const Eigen::MatrixBase<D2>& dtheta) {
  using S = typename D1::Scalar;
  Quat<S> dq;
  dq.template head<3>() = dtheta / S(2);
  dq(3) = S(1);
  dq /= dq.norm();
  return quat_multiply(dq, q);
}

/// Inverse of quat_to_rot (Shepperd's method).
template <typename Derived>
Quat<typename Derived::Scalar> quat_from_rot(const Eigen::MatrixBase<Derived>& r) {
  using S = typename Derived::Scalar;
  Quat<S> q;
  const S tr = r.trace();
  if (tr > S(0)) {
    const S s = std::sqrt(tr + S(1)) * S(2);  // 4w
    q(3) = S(0.25) * s;
    q(0) = (r(1, 2) - r(2, 1)) / s;
    q(1) = (r(2, 0) - r(0, 2)) / s;
    q(2) = (r(0, 1) - r(1, 0)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    const S s = std::sqrt(S(1) + r(0, 0) - r(1, 1) - r(2, 2)) * S(2);
    q(0) = S(0.25) * s;
    q(1) = (r(0, 1) + r(1, 0)) / s;
    q(2) = (r(2, 0) + r(0, 2)) / s;
    q(3) = (r(1, 2) - r(2, 1)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    const S s = std::sqrt(S(1) + r(1, 1) - r(0, 0) - r(2, 2)) * S(2);
    q(0) = (r(0, 1) + r(1, 0)) / s;
    q(1) = S(0.25) * s;
    q(2) = (r(1, 2) + r(2, 1)) / s;
    q(3) = (r(2, 0) - r(0, 2)) / s;
  } else {
    const S s = std::sqrt(S(1) + r(2, 2) - r(0, 0) - r(1, 1)) * S(2);
    q(0) = (r(2, 0) + r(0, 2)) / s;
    q(1) = (r(1, 2) + r(2, 1)) / s;
    q(2) = S(0.25) * s;
    q(3) = (r(0, 1) - r(1, 0)) / s;
  }
  return quat_normalize(q);
}

/// Right Jacobian of SO(3): exp((theta + d)^) ≈ exp(theta^) exp((Jr(theta) d)^).
template <typename Derived>
Mat3<typename Derived::Scalar> so3_right_jacobian(const Eigen::MatrixBase<Derived>& theta) {
  using S = typename Derived::Scalar;
  const S angle = theta.norm();
  const Mat3<S> tx = skew(theta);
  if (angle < S(1e-7)) {
    return Mat3<S>::Identity() - tx / S(2) + tx * tx / S(6);
  }
  const S a2 = angle * angle;
  return Mat3<S>::Identity() - (S(1) - std::cos(angle)) / a2 * tx +
         (angle - std::sin(angle)) / (a2 * angle) * tx * tx;
}

}  // namespace sevis
