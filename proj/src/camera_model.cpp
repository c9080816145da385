#include "sevis/camera_model.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace sevis {

Vector3d to_camera_frame(const Vector3d& p_global, const ClonePose& clone,
                         const Extrinsics& ext) {
  const Mat3<double> c_ig = quat_to_rot(clone.orientation);
  return quat_to_rot(ext.q_ci) * (c_ig * (p_global - clone.position)) + ext.p_i_in_c;
}

std::optional<Bearing> project(const Vector3d& p_global, const ClonePose& clone,
                               const Extrinsics& ext, double depth_min) {
  const Vector3d p_cam = to_camera_frame(p_global, clone, ext);
  if (p_cam.z() <= depth_min) return std::nullopt;
  Bearing b;
  b.u = p_cam.x() / p_cam.z();
  b.v = p_cam.y() / p_cam.z();
  b.clone_timestamp = clone.timestamp;
  return b;
}

std::optional<Mat23> projection_jacobian(const Vector3d& p_cam, double depth_min) {
  const double z = p_cam.z();
  if (z <= depth_min) return std::nullopt;
  Mat23 h;
  h << z, 0, -p_cam.x(),
       0, z, -p_cam.y();
  h /= z * z;
  return h;
}

std::optional<MeasJacobian> measurement_jacobians(const Vector3d& p_global,
                                                  const ClonePose& clone,
                                                  const Extrinsics& ext, double depth_min) {
  const Mat3<double> c_ig = quat_to_rot(clone.orientation);
  const Mat3<double> c_ci = quat_to_rot(ext.q_ci);
  const Vector3d p_in_i = c_ig * (p_global - clone.position);
  const Vector3d p_cam = c_ci * p_in_i + ext.p_i_in_c;
  const auto h_proj = projection_jacobian(p_cam, depth_min);
  if (!h_proj) return std::nullopt;
  const Mat23 common = *h_proj * c_ci;
  MeasJacobian out;
  out.h_theta = common * skew(p_in_i);
  out.h_p = -common * c_ig;
  out.h_f = common * c_ig;
  return out;
}

namespace {

struct View {
  Mat3<double> rot_gc;   // global -> camera rotation
  Vector3d trans;        // p_cam = rot_gc * p_global + trans
  Vector3d center;       // camera center in {G}
  Eigen::Vector2d z;     // measured bearing
};

std::vector<View> gather_views(const FeatureTrack& track, const std::vector<ClonePose>& clones,
                               const Extrinsics& ext) {
  const Mat3<double> c_ci = quat_to_rot(ext.q_ci);
  std::vector<View> views;
  views.reserve(track.observations.size());
  for (const Bearing& obs : track.observations) {
    for (const ClonePose& clone : clones) {
      if (std::abs(clone.timestamp - obs.clone_timestamp) > 1e-9) continue;
      View v;
      const Mat3<double> c_ig = quat_to_rot(clone.orientation);
      v.rot_gc = c_ci * c_ig;
      v.trans = -v.rot_gc * clone.position + ext.p_i_in_c;
      v.center = clone.position - c_ig.transpose() * c_ci.transpose() * ext.p_i_in_c;
      v.z << obs.u, obs.v;
      views.push_back(v);
      break;
    }
  }
  return views;
}

double reprojection_cost(const std::vector<View>& views, const Vector3d& p, double depth_min,
                         bool* behind) {
  double cost = 0.0;
  *behind = false;
  for (const View& v : views) {
    const Vector3d pc = v.rot_gc * p + v.trans;
    if (pc.z() <= depth_min) {
      *behind = true;
      return std::numeric_limits<double>::infinity();
    }
    const Eigen::Vector2d r(pc.x() / pc.z() - v.z.x(), pc.y() / pc.z() - v.z.y());
    cost += r.squaredNorm();
  }
  return cost;
}

}  // namespace

TriangulationResult triangulate(const FeatureTrack& track, const std::vector<ClonePose>& clones,
                                const Extrinsics& ext, const CameraOptions& opts) {
  TriangulationResult res;
  const std::vector<View> views = gather_views(track, clones, ext);
  if (views.size() < 2) return res;  // kInsufficientBaseline

  // Linear seed: skew([u v 1]) (R p + t) = 0 stacked over views.
  MatrixXd a(3 * views.size(), 3);
  VectorXd b(3 * views.size());
  for (size_t i = 0; i < views.size(); ++i) {
    const Vector3d dir(views[i].z.x(), views[i].z.y(), 1.0);
    const Mat3<double> s = skew(dir);
    a.middleRows<3>(3 * i) = s * views[i].rot_gc;
    b.segment<3>(3 * i) = -s * views[i].trans;
  }
  const Vector3d seed = a.colPivHouseholderQr().solve(b);

  double baseline = 0.0;
  for (size_t i = 0; i < views.size(); ++i)
    for (size_t j = i + 1; j < views.size(); ++j)
      baseline = std::max(baseline, (views[i].center - views[j].center).norm());

  double depth = 0.0;
  for (const View& v : views) depth += (v.rot_gc * seed + v.trans).z();
  depth /= static_cast<double>(views.size());
  if (depth <= opts.depth_min) {
    res.status = TriangulationStatus::kBehindCamera;
    return res;
  }
  res.baseline_depth_ratio = baseline / depth;
  if (res.baseline_depth_ratio < opts.min_baseline_depth_ratio) {
    res.status = TriangulationStatus::kInsufficientBaseline;
    return res;
  }

  // Gauss-Newton on the global xyz.
  Vector3d p = seed;
  bool behind = false;
  double cost = reprojection_cost(views, p, opts.depth_min, &behind);
  if (behind) {
    res.status = TriangulationStatus::kBehindCamera;
    return res;
  }
  for (int it = 0; it < opts.max_iters; ++it) {
    Mat3<double> hess = Mat3<double>::Zero();
    Vector3d grad = Vector3d::Zero();
    for (const View& v : views) {
      const Vector3d pc = v.rot_gc * p + v.trans;
      const auto h_proj = projection_jacobian(pc, opts.depth_min);
      if (!h_proj) {
        res.status = TriangulationStatus::kBehindCamera;
        return res;
      }
      const Mat23 jac = *h_proj * v.rot_gc;
      const Eigen::Vector2d r(pc.x() / pc.z() - v.z.x(), pc.y() / pc.z() - v.z.y());
      hess.noalias() += jac.transpose() * jac;
      grad.noalias() += jac.transpose() * r;
    }
    const Vector3d step = hess.ldlt().solve(grad);
    const Vector3d p_new = p - step;
    const double cost_new = reprojection_cost(views, p_new, opts.depth_min, &behind);
    if (behind) {
      res.status = TriangulationStatus::kBehindCamera;
      return res;
    }
    res.iterations = it + 1;
    if (cost_new > cost + 1e-15) {
      res.status = TriangulationStatus::kDivergedRefinement;
      res.point = p;
      res.final_cost = cost;
      return res;
    }
    const double improvement = cost - cost_new;
    p = p_new;
    cost = cost_new;
    if (improvement < opts.cost_tol) break;
    if (it + 1 == opts.max_iters) {
      res.status = TriangulationStatus::kDivergedRefinement;
      res.point = p;
      res.final_cost = cost;
      return res;
    }
  }
  res.status = TriangulationStatus::kOk;
  res.point = p;
  res.final_cost = cost;
  return res;
}

}  // namespace sevis
