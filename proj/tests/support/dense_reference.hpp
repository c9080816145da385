#pragma once

#include <algorithm>
#include <map>
#include <vector>

#include <Eigen/Dense>

#include "sevis/estimator.hpp"

namespace sevis::testing {

// Textbook flat-matrix EKF-SLAM filter: one dense covariance, no partition,
// no compressed products. Shares the geometry/camera math and the per-image
// decision rules with the estimator so that, in full-SLAM mode, the two must
// agree to floating-point roundoff at every step.
class DenseReferenceFilter {
 public:
  DenseReferenceFilter(const EstimatorOptions& opts, const ImuState& init, const MatrixXd& p0)
      : opts_(opts), p_(p0) {
    imu_ = init;
  }

  void feed_imu(const ImuSample& sample) {
    if (!has_prev_) {
      prev_ = sample;
      has_prev_ = true;
      return;
    }
    const double dt = sample.timestamp - prev_.timestamp;
    const ImuStepJacobians step =
        error_state_jacobians(imu_, prev_, opts_.imu_noise, dt, opts_.gravity);
    imu_ = propagate_mean(imu_, prev_, dt, opts_.gravity);
    compound(pending_, step.phi, step.q);
    prev_ = sample;
  }

  void process_image(double t, const std::vector<Bearing>& obs) {
    // Dense covariance flush with blkdiag(Phi, I).
    const int dim = static_cast<int>(p_.rows());
    MatrixXd phi = MatrixXd::Identity(dim, dim);
    phi.topLeftCorner<15, 15>() = pending_.Phi;
    MatrixXd q = MatrixXd::Zero(dim, dim);
    q.topLeftCorner<15, 15>() = pending_.Qd;
    p_ = phi * p_ * phi.transpose() + q;
    p_ = 0.5 * (p_ + p_.transpose()).eval();
    pending_ = CompoundedTransition::identity(kImuErrDim);

    // Stochastic cloning at offset 15.
    insert_block(kImuErrDim, kCloneErrDim);
    static constexpr int kPose[6] = {0, 1, 2, 12, 13, 14};
    for (int k = 0; k < 6; ++k) p_.row(kImuErrDim + k) = p_.row(kPose[k]);
    for (int k = 0; k < 6; ++k) p_.col(kImuErrDim + k) = p_.col(kPose[k]);
    ClonePose clone;
    clone.orientation = imu_.orientation;
    clone.position = imu_.position;
    clone.timestamp = t;
    clones_.insert(clones_.begin(), clone);

    // Ingest.
    std::vector<std::int64_t> seen;
    std::vector<Bearing> slam_obs;
    for (const Bearing& b : obs) {
      seen.push_back(b.feature_id);
      if (find_feature(b.feature_id) >= 0) {
        slam_obs.push_back(b);
        continue;
      }
      FeatureTrack& tr = tracks_[b.feature_id];
      tr.id = b.feature_id;
      tr.observations.push_back(b);
    }
    auto was_seen = [&seen](std::int64_t id) {
      return std::find(seen.begin(), seen.end(), id) != seen.end();
    };

    // MSCKF for lost tracks (sorted by id, as in the estimator).
    std::vector<FeatureTrack> lost;
    for (auto it = tracks_.begin(); it != tracks_.end();) {
      if (!was_seen(it->first)) {
        lost.push_back(it->second);
        it = tracks_.erase(it);
      } else {
        ++it;
      }
    }
    std::sort(lost.begin(), lost.end(),
              [](const FeatureTrack& a, const FeatureTrack& b) { return a.id < b.id; });
    msckf(lost);

    // Promotions.
    if (static_cast<int>(clones_.size()) > opts_.max_clones) {
      const double dying = clones_.back().timestamp;
      std::vector<std::int64_t> cand;
      for (const auto& [id, tr] : tracks_)
        if (!tr.observations.empty() &&
            std::abs(tr.observations.front().clone_timestamp - dying) < 1e-9 &&
            tr.observations.size() >= 4)
          cand.push_back(id);
      std::sort(cand.begin(), cand.end());
      for (std::int64_t id : cand) {
        if (static_cast<int>(features_.size()) >= opts_.max_active_features) break;
        if (initialize(tracks_.at(id))) tracks_.erase(id);
      }
    }

    // SLAM update.
    slam_update(slam_obs);

    // Management: slide the window (features are never marginalized here).
    if (static_cast<int>(clones_.size()) > opts_.max_clones) {
      const double dying = clones_.back().timestamp;
      for (auto& [id, tr] : tracks_)
        std::erase_if(tr.observations, [dying](const Bearing& b) {
          return std::abs(b.clone_timestamp - dying) < 1e-9;
        });
      std::erase_if(tracks_, [](const auto& kv) { return kv.second.observations.empty(); });
      const int off = clone_offset(static_cast<int>(clones_.size()) - 1);
      remove_block(off, kCloneErrDim);
      clones_.pop_back();
    }
  }

  const ImuState& imu() const { return imu_; }
  const std::vector<ClonePose>& clones() const { return clones_; }
  const std::vector<FeatureState>& features() const { return features_; }
  const MatrixXd& cov() const { return p_; }

 private:
  int dim() const { return static_cast<int>(p_.rows()); }
  int clone_offset(int i) const { return kImuErrDim + kCloneErrDim * i; }
  int feature_offset(int j) const {
    return kImuErrDim + kCloneErrDim * static_cast<int>(clones_.size()) + kFeatErrDim * j;
  }
  int find_feature(std::int64_t id) const {
    for (size_t i = 0; i < features_.size(); ++i)
      if (features_[i].id == id) return static_cast<int>(i);
    return -1;
  }
  int clone_index(double ts) const {
    for (size_t i = 0; i < clones_.size(); ++i)
      if (std::abs(clones_[i].timestamp - ts) < 1e-9) return static_cast<int>(i);
    return -1;
  }

  void insert_block(int offset, int width) {
    const int n = dim();
    MatrixXd out = MatrixXd::Zero(n + width, n + width);
    auto map = [&](int i) { return i < offset ? i : i + width; };
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) out(map(i), map(j)) = p_(i, j);
    p_ = std::move(out);
  }

  void remove_block(int offset, int width) {
    const int n = dim();
    MatrixXd out(n - width, n - width);
    auto map = [&](int i) { return i < offset ? i : i + width; };
    for (int i = 0; i < n - width; ++i)
      for (int j = 0; j < n - width; ++j) out(i, j) = p_(map(i), map(j));
    p_ = std::move(out);
  }

  void apply_correction(const VectorXd& dx) {
    imu_.orientation = small_angle_update(imu_.orientation, dx.segment<3>(0));
    imu_.gyro_bias += dx.segment<3>(3);
    imu_.velocity += dx.segment<3>(6);
    imu_.accel_bias += dx.segment<3>(9);
    imu_.position += dx.segment<3>(12);
    for (size_t i = 0; i < clones_.size(); ++i) {
      const int off = clone_offset(static_cast<int>(i));
      clones_[i].orientation = small_angle_update(clones_[i].orientation, dx.segment<3>(off));
      clones_[i].position += dx.segment<3>(off + 3);
    }
    for (size_t j = 0; j < features_.size(); ++j)
      features_[j].position += dx.segment<3>(feature_offset(static_cast<int>(j)));
  }

  void dense_update(const MatrixXd& h, const VectorXd& r, const MatrixXd& noise) {
    if (r.size() == 0) return;
    const MatrixXd s = h * p_ * h.transpose() + noise;
    const MatrixXd k = p_ * h.transpose() * s.ldlt().solve(MatrixXd::Identity(s.rows(), s.rows()));
    apply_correction(k * r);
    const MatrixXd hp = h * p_;
    p_ -= k * hp;
    p_ = 0.5 * (p_ + p_.transpose()).eval();
  }

  bool build_rows(const FeatureTrack& track, const Vector3d& p_f, int foff, MatrixXd* h,
                  MatrixXd* h_f, VectorXd* r) const {
    const int n_obs = static_cast<int>(track.observations.size());
    h->setZero(2 * n_obs, dim());
    if (h_f) h_f->setZero(2 * n_obs, 3);
    r->setZero(2 * n_obs);
    int row = 0;
    for (const Bearing& b : track.observations) {
      const int ci = clone_index(b.clone_timestamp);
      if (ci < 0) return false;
      const auto jac =
          measurement_jacobians(p_f, clones_[ci], opts_.extrinsics, opts_.camera.depth_min);
      const auto pred = project(p_f, clones_[ci], opts_.extrinsics, opts_.camera.depth_min);
      if (!jac || !pred) return false;
      h->block<2, 3>(row, clone_offset(ci)) = jac->h_theta;
      h->block<2, 3>(row, clone_offset(ci) + 3) = jac->h_p;
      if (h_f)
        h_f->middleRows<2>(row) = jac->h_f;
      else
        h->block<2, 3>(row, foff) = jac->h_f;
      (*r)(row) = b.u - pred->u;
      (*r)(row + 1) = b.v - pred->v;
      row += 2;
    }
    return true;
  }

  void msckf(const std::vector<FeatureTrack>& lost) {
    const double sig2 = opts_.sigma_uv * opts_.sigma_uv;
    std::vector<MatrixXd> hs, ns;
    std::vector<VectorXd> rs;
    int total = 0;
    for (const FeatureTrack& track : lost) {
      if (track.observations.size() < 2) continue;
      const TriangulationResult tri = triangulate(track, clones_, opts_.extrinsics, opts_.camera);
      if (!tri.ok()) continue;
      MatrixXd h, h_f;
      VectorXd r;
      if (!build_rows(track, tri.point, -1, &h, &h_f, &r)) continue;
      MatrixXd h_proj, n_proj;
      VectorXd r_proj;
      const MatrixXd noise = sig2 * MatrixXd::Identity(r.size(), r.size());
      if (nullspace_project(h, h_f, r, noise, &h_proj, &r_proj, &n_proj) != NullspaceStatus::kOk)
        continue;
      total += static_cast<int>(r_proj.size());
      hs.push_back(std::move(h_proj));
      rs.push_back(std::move(r_proj));
      ns.push_back(std::move(n_proj));
    }
    if (total == 0) return;
    MatrixXd h = MatrixXd::Zero(total, dim());
    VectorXd r(total);
    MatrixXd noise = MatrixXd::Zero(total, total);
    int row = 0;
    for (size_t i = 0; i < hs.size(); ++i) {
      const int nr = static_cast<int>(rs[i].size());
      h.middleRows(row, nr) = hs[i];
      r.segment(row, nr) = rs[i];
      noise.block(row, row, nr, nr) = ns[i];
      row += nr;
    }
    dense_update(h, r, noise);
  }

  bool initialize(const FeatureTrack& track) {
    const TriangulationResult tri = triangulate(track, clones_, opts_.extrinsics, opts_.camera);
    if (!tri.ok()) return false;
    const int off = dim();
    insert_block(off, kFeatErrDim);
    p_.block<3, 3>(off, off) = opts_.init_feature_prior * Eigen::Matrix3d::Identity();
    features_.push_back({tri.point, track.id});
    MatrixXd h;
    VectorXd r;
    if (!build_rows(track, tri.point, off, &h, nullptr, &r)) {
      remove_block(off, kFeatErrDim);
      features_.pop_back();
      return false;
    }
    const double sig2 = opts_.sigma_uv * opts_.sigma_uv;
    dense_update(h, r, sig2 * MatrixXd::Identity(r.size(), r.size()));
    return true;
  }

  void slam_update(const std::vector<Bearing>& slam_obs) {
    const double sig2 = opts_.sigma_uv * opts_.sigma_uv;
    MatrixXd h = MatrixXd::Zero(2 * static_cast<int>(slam_obs.size()), dim());
    VectorXd r = VectorXd::Zero(2 * static_cast<int>(slam_obs.size()));
    int row = 0;
    for (const Bearing& b : slam_obs) {
      const int j = find_feature(b.feature_id);
      const int ci = clone_index(b.clone_timestamp);
      if (j < 0 || ci < 0) continue;
      const Vector3d& p_f = features_[j].position;
      const auto jac =
          measurement_jacobians(p_f, clones_[ci], opts_.extrinsics, opts_.camera.depth_min);
      const auto pred = project(p_f, clones_[ci], opts_.extrinsics, opts_.camera.depth_min);
      if (!jac || !pred) continue;
      h.block<2, 3>(row, clone_offset(ci)) = jac->h_theta;
      h.block<2, 3>(row, clone_offset(ci) + 3) = jac->h_p;
      h.block<2, 3>(row, feature_offset(j)) = jac->h_f;
      r(row) = b.u - pred->u;
      r(row + 1) = b.v - pred->v;
      row += 2;
    }
    h.conservativeResize(row, dim());
    r.conservativeResize(row);
    dense_update(h, r, sig2 * MatrixXd::Identity(row, row));
  }

  EstimatorOptions opts_;
  ImuState imu_;
  std::vector<ClonePose> clones_;
  std::vector<FeatureState> features_;
  std::map<std::int64_t, FeatureTrack> tracks_;
  MatrixXd p_;
  CompoundedTransition pending_ = CompoundedTransition::identity(kImuErrDim);
  ImuSample prev_;
  bool has_prev_ = false;
};

}  // namespace sevis::testing
