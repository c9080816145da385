#include "sevis/estimator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <unordered_set>

#include <Eigen/Dense>

namespace sevis {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(const Clock::time_point& t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int clone_index_for(const SevisState& state, double timestamp) {
  for (size_t i = 0; i < state.clones.size(); ++i)
    if (std::abs(state.clones[i].timestamp - timestamp) < 1e-9) return static_cast<int>(i);
  return -1;
}

// Gathered pieces of the partitioned prior needed by the compressed update.
struct SchmidtSelection {
  MatrixXd pas_sel;      // active x 3f
  MatrixXd pss_sel_sel;  // 3f x 3f
};

SchmidtSelection gather_selection(const PartitionedCovariance& cov,
                                  const std::vector<int>& offsets) {
  const int f = static_cast<int>(offsets.size());
  SchmidtSelection sel;
  sel.pas_sel.resize(cov.active_dim(), 3 * f);
  sel.pss_sel_sel.resize(3 * f, 3 * f);
  for (int i = 0; i < f; ++i) {
    sel.pas_sel.middleCols<3>(3 * i) = cov.pas().middleCols<3>(offsets[i]);
    for (int j = 0; j < f; ++j)
      sel.pss_sel_sel.block<3, 3>(3 * i, 3 * j) = cov.pss().block<3, 3>(offsets[i], offsets[j]);
  }
  return sel;
}

// S = [H_A H_S] P [H_A H_S]^T + R using only the matched Schmidt blocks.
MatrixXd innovation_covariance(const PartitionedCovariance& cov, const LinearSystem& sys,
                               const SchmidtSelection& sel, MatrixXd* m_a_out) {
  MatrixXd m_a = cov.paa() * sys.h_active.transpose();
  if (sys.has_schmidt()) m_a.noalias() += sel.pas_sel * sys.h_schmidt_blocks.transpose();
  MatrixXd s_mat = sys.h_active * m_a + sys.noise;
  if (sys.has_schmidt())
    s_mat.noalias() += sys.h_schmidt_blocks * (sel.pas_sel.transpose() * sys.h_active.transpose() +
                                               sel.pss_sel_sel * sys.h_schmidt_blocks.transpose());
  s_mat = 0.5 * (s_mat + s_mat.transpose()).eval();
  if (m_a_out) *m_a_out = std::move(m_a);
  return s_mat;
}

}  // namespace

MatrixXd LinearSystem::dense_h_schmidt(int schmidt_dim) const {
  MatrixXd h = MatrixXd::Zero(rows(), schmidt_dim);
  for (size_t i = 0; i < schmidt_offsets.size(); ++i)
    h.middleCols<3>(schmidt_offsets[i]) = h_schmidt_blocks.middleCols<3>(3 * i);
  return h;
}

std::string UpdateReport::csv_row() const {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%.9f,%.6e,%.6e,%.6e,%.6e,%d", timestamp, prop_s, update_s,
                mgmt_s, total_s, n_schmidt);
  return std::string(buf);
}

double chi2_quantile_95(int dof) {
  // Wilson-Hilferty; z_{0.95} = 1.6448536269514722
  const double k = static_cast<double>(dof);
  const double c = 2.0 / (9.0 * k);
  const double t = 1.0 - c + 1.6448536269514722 * std::sqrt(c);
  return k * t * t * t;
}

NullspaceStatus nullspace_project(const MatrixXd& h_x, const MatrixXd& h_f, const VectorXd& r,
                                  const MatrixXd& noise, MatrixXd* h_x_out, VectorXd* r_out,
                                  MatrixXd* noise_out) {
  const int rows = static_cast<int>(h_f.rows());
  if (h_x.rows() != rows || r.size() != rows || noise.rows() != rows || noise.cols() != rows)
    throw std::invalid_argument("nullspace_project: row mismatch");
  if (rows <= static_cast<int>(h_f.cols())) return NullspaceStatus::kRankDeficientFeature;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(h_f);
  if (qr.rank() < h_f.cols()) return NullspaceStatus::kRankDeficientFeature;
  const MatrixXd q = qr.householderQ();
  const MatrixXd n = q.rightCols(rows - static_cast<int>(h_f.cols()));
  *h_x_out = n.transpose() * h_x;
  *r_out = n.transpose() * r;
  *noise_out = n.transpose() * noise * n;
  return NullspaceStatus::kOk;
}

UpdateStatus schmidt_update_covariance(PartitionedCovariance& cov, const LinearSystem& sys,
                                       double cond_max, VectorXd* dx_out) {
  const int rows = sys.rows();
  if (rows == 0) {
    if (dx_out) dx_out->setZero(cov.active_dim());
    return UpdateStatus::kOk;
  }
  const int a = cov.active_dim();
  if (sys.h_active.rows() != rows || sys.h_active.cols() != a || sys.noise.rows() != rows ||
      sys.noise.cols() != rows)
    throw std::invalid_argument("schmidt_update: dimension mismatch");
  for (int off : sys.schmidt_offsets)
    if (off < 0 || off + kFeatErrDim > cov.schmidt_dim())
      throw std::invalid_argument("schmidt_update: Schmidt offset out of range");

  const SchmidtSelection sel = gather_selection(cov, sys.schmidt_offsets);
  MatrixXd m_a;  // P_AA H_A^T + P_AS H_S^T
  const MatrixXd s_mat = innovation_covariance(cov, sys, sel, &m_a);

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(s_mat);
  const double lo = es.eigenvalues()(0);
  const double hi = es.eigenvalues()(rows - 1);
  if (lo <= 0.0 || hi / lo > cond_max) return UpdateStatus::kRejectedConditioning;

  const Eigen::LDLT<MatrixXd> ldlt(s_mat);
  const MatrixXd k_a = ldlt.solve(m_a.transpose()).transpose();

  if (dx_out) *dx_out = k_a * sys.residual;

  // Eq-for-eq partitioned covariance update; M_A^T == H_A P_AA + H_S P_AS^T.
  if (cov.schmidt_dim() > 0) {
    MatrixXd w = sys.h_active * cov.pas();
    if (sys.has_schmidt()) {
      const int f = static_cast<int>(sys.schmidt_offsets.size());
      MatrixXd pss_rows(3 * f, cov.schmidt_dim());
      for (int i = 0; i < f; ++i)
        pss_rows.middleRows<3>(3 * i) = cov.pss().middleRows<3>(sys.schmidt_offsets[i]);
      w.noalias() += sys.h_schmidt_blocks * pss_rows;
    }
    cov.paa() -= k_a * m_a.transpose();
    cov.pas() -= k_a * w;
  } else {
    cov.paa() -= k_a * m_a.transpose();
  }
  cov.symmetrize_paa();
  return UpdateStatus::kOk;
}

UpdateStatus schmidt_update(SevisState& state, PartitionedCovariance& cov,
                            const LinearSystem& sys, double cond_max) {
  VectorXd dx;
  const UpdateStatus status = schmidt_update_covariance(cov, sys, cond_max, &dx);
  if (status == UpdateStatus::kOk && sys.rows() > 0) apply_active_correction(state, dx);
  return status;
}

SevisEstimator::SevisEstimator(const EstimatorOptions& opts, const ImuState& init_state,
                               const MatrixXd& init_cov_15)
    : opts_(opts),
      cov_(opts.active_capacity(), kFeatErrDim * std::max(opts.max_schmidt_features, 0)) {
  opts_.imu_noise.validate();
  if (init_cov_15.rows() != kImuErrDim || init_cov_15.cols() != kImuErrDim)
    throw std::invalid_argument("SevisEstimator: init covariance must be 15x15");
  state_.imu = init_state;
  state_.imu.orientation = quat_normalize(state_.imu.orientation);
  cov_.set_dims(kImuErrDim, 0);
  cov_.paa() = init_cov_15;
}

void SevisEstimator::feed_imu(const ImuSample& sample) {
  if (!has_prev_sample_) {
    prev_sample_ = sample;
    has_prev_sample_ = true;
    return;
  }
  const double dt = sample.timestamp - prev_sample_.timestamp;
  if (dt <= 0) throw std::invalid_argument("feed_imu: non-increasing timestamps");
  const ImuStepJacobians step =
      error_state_jacobians(state_.imu, prev_sample_, opts_.imu_noise, dt, opts_.gravity);
  state_.imu = propagate_mean(state_.imu, prev_sample_, dt, opts_.gravity);
  compound(pending_, step.phi, step.q);
  prev_sample_ = sample;
}

bool SevisEstimator::build_track_system(const FeatureTrack& track, const Vector3d& p_f,
                                        MatrixXd* h_x, MatrixXd* h_f, VectorXd* r) const {
  const int a = state_.active_dim();
  const int n_obs = static_cast<int>(track.observations.size());
  h_x->setZero(2 * n_obs, a);
  h_f->setZero(2 * n_obs, 3);
  r->setZero(2 * n_obs);
  int row = 0;
  for (const Bearing& obs : track.observations) {
    const int ci = clone_index_for(state_, obs.clone_timestamp);
    if (ci < 0) return false;
    const ClonePose& clone = state_.clones[ci];
    const auto jac = measurement_jacobians(p_f, clone, opts_.extrinsics, opts_.camera.depth_min);
    const auto pred = project(p_f, clone, opts_.extrinsics, opts_.camera.depth_min);
    if (!jac || !pred) return false;
    const int off = state_.clone_offset(ci);
    h_x->block<2, 3>(row, off) = jac->h_theta;
    h_x->block<2, 3>(row, off + 3) = jac->h_p;
    h_f->middleRows<2>(row) = jac->h_f;
    (*r)(row) = obs.u - pred->u;
    (*r)(row + 1) = obs.v - pred->v;
    row += 2;
  }
  return true;
}

bool SevisEstimator::gate_passes(const LinearSystem& sys) const {
  if (!opts_.mahalanobis_gate || sys.rows() == 0) return true;
  const SchmidtSelection sel = gather_selection(cov_, sys.schmidt_offsets);
  const MatrixXd s_mat = innovation_covariance(cov_, sys, sel, nullptr);
  const double gamma = sys.residual.dot(s_mat.ldlt().solve(sys.residual));
  return gamma <= chi2_quantile_95(sys.rows());
}

void SevisEstimator::msckf_update(const std::vector<FeatureTrack>& lost_tracks,
                                  UpdateReport& report) {
  const double sig2 = opts_.sigma_uv * opts_.sigma_uv;
  std::vector<MatrixXd> h_blocks, r_blocks_noise;
  std::vector<VectorXd> r_blocks;
  int total_rows = 0;
  for (const FeatureTrack& track : lost_tracks) {
    if (track.observations.size() < 2) {
      ++report.msckf_features_dropped;
      continue;
    }
    const TriangulationResult tri =
        triangulate(track, state_.clones, opts_.extrinsics, opts_.camera);
    if (!tri.ok()) {
      ++report.msckf_features_dropped;
      continue;
    }
    MatrixXd h_x, h_f;
    VectorXd r;
    if (!build_track_system(track, tri.point, &h_x, &h_f, &r)) {
      ++report.msckf_features_dropped;
      continue;
    }
    const MatrixXd noise = sig2 * MatrixXd::Identity(r.size(), r.size());
    MatrixXd h_proj, noise_proj;
    VectorXd r_proj;
    if (nullspace_project(h_x, h_f, r, noise, &h_proj, &r_proj, &noise_proj) !=
        NullspaceStatus::kOk) {
      ++report.msckf_features_dropped;
      continue;
    }
    LinearSystem feature_sys;
    feature_sys.h_active = h_proj;
    feature_sys.residual = r_proj;
    feature_sys.noise = noise_proj;
    if (!gate_passes(feature_sys)) {
      ++report.msckf_features_dropped;
      continue;
    }
    total_rows += static_cast<int>(r_proj.size());
    h_blocks.push_back(std::move(h_proj));
    r_blocks.push_back(std::move(r_proj));
    r_blocks_noise.push_back(std::move(noise_proj));
    ++report.msckf_features_used;
  }
  if (total_rows == 0) return;

  LinearSystem sys;
  sys.h_active.setZero(total_rows, state_.active_dim());
  sys.residual.setZero(total_rows);
  sys.noise.setZero(total_rows, total_rows);
  int row = 0;
  for (size_t i = 0; i < h_blocks.size(); ++i) {
    const int nr = static_cast<int>(r_blocks[i].size());
    sys.h_active.middleRows(row, nr) = h_blocks[i];
    sys.residual.segment(row, nr) = r_blocks[i];
    sys.noise.block(row, row, nr, nr) = r_blocks_noise[i];
    row += nr;
  }
  report.msckf_rows = total_rows;
  if (schmidt_update(state_, cov_, sys, opts_.cond_max) != UpdateStatus::kOk)
    ++report.rejected_batches;
}

std::int64_t SevisEstimator::initialize_slam_feature(const FeatureTrack& track,
                                                     UpdateReport& report) {
  const TriangulationResult tri =
      triangulate(track, state_.clones, opts_.extrinsics, opts_.camera);
  if (!tri.ok()) return -1;

  const int off = state_.active_dim();
  cov_.insert_active(off, kFeatErrDim);
  cov_.paa().block<3, 3>(off, off) =
      opts_.init_feature_prior * Eigen::Matrix3d::Identity();
  state_.active_features.push_back({tri.point, track.id});

  // One EKF update with the whole track against the large prior; h_x is
  // already sized for the post-insert active dimension.
  MatrixXd h_x, h_f;
  VectorXd r;
  const bool built = build_track_system(track, tri.point, &h_x, &h_f, &r);
  if (built) {
    LinearSystem sys;
    sys.h_active = std::move(h_x);
    sys.h_active.middleCols<3>(off) = h_f;
    sys.residual = std::move(r);
    const double sig2 = opts_.sigma_uv * opts_.sigma_uv;
    sys.noise = sig2 * MatrixXd::Identity(sys.residual.size(), sys.residual.size());
    if (schmidt_update(state_, cov_, sys, opts_.cond_max) == UpdateStatus::kOk) {
      ++report.slam_initialized;
      return track.id;
    }
  }
  // Roll back the half-initialized feature.
  cov_.remove_active(off, kFeatErrDim);
  state_.active_features.pop_back();
  return -1;
}

LinearSystem SevisEstimator::build_slam_system(const std::vector<Bearing>& slam_obs) const {
  const double sig2 = opts_.sigma_uv * opts_.sigma_uv;
  LinearSystem sys;
  const int a = state_.active_dim();
  sys.h_active.setZero(2 * static_cast<int>(slam_obs.size()), a);
  sys.residual.setZero(2 * static_cast<int>(slam_obs.size()));
  int row = 0;
  for (const Bearing& obs : slam_obs) {
    const int j = state_.find_active_feature(obs.feature_id);
    const int ci = clone_index_for(state_, obs.clone_timestamp);
    if (j < 0 || ci < 0) continue;
    const Vector3d& p_f = state_.active_features[j].position;
    const auto jac =
        measurement_jacobians(p_f, state_.clones[ci], opts_.extrinsics, opts_.camera.depth_min);
    const auto pred = project(p_f, state_.clones[ci], opts_.extrinsics, opts_.camera.depth_min);
    if (!jac || !pred) continue;
    const int coff = state_.clone_offset(ci);
    sys.h_active.block<2, 3>(row, coff) = jac->h_theta;
    sys.h_active.block<2, 3>(row, coff + 3) = jac->h_p;
    sys.h_active.block<2, 3>(row, state_.active_feature_offset(j)) = jac->h_f;
    sys.residual(row) = obs.u - pred->u;
    sys.residual(row + 1) = obs.v - pred->v;
    row += 2;
  }
  sys.h_active.conservativeResize(row, a);
  sys.residual.conservativeResize(row);
  sys.noise = sig2 * MatrixXd::Identity(row, row);
  return sys;
}

LinearSystem SevisEstimator::build_schmidt_system(const std::vector<AssocMatch>& matches) const {
  const double sig2 = opts_.sigma_uv * opts_.sigma_uv;
  LinearSystem sys;
  const int a = state_.active_dim();
  sys.h_active.setZero(2 * static_cast<int>(matches.size()), a);
  sys.h_schmidt_blocks.setZero(2 * static_cast<int>(matches.size()),
                               3 * static_cast<int>(matches.size()));
  sys.residual.setZero(2 * static_cast<int>(matches.size()));
  int row = 0;
  for (const AssocMatch& m : matches) {
    const int k = state_.find_schmidt_feature(m.schmidt_id);
    const int ci = clone_index_for(state_, m.observation.clone_timestamp);
    if (k < 0 || ci < 0) continue;
    const Vector3d& p_f = state_.schmidt_features[k].position;
    const auto jac =
        measurement_jacobians(p_f, state_.clones[ci], opts_.extrinsics, opts_.camera.depth_min);
    const auto pred = project(p_f, state_.clones[ci], opts_.extrinsics, opts_.camera.depth_min);
    if (!jac || !pred) continue;
    const int coff = state_.clone_offset(ci);
    sys.h_active.block<2, 3>(row, coff) = jac->h_theta;
    sys.h_active.block<2, 3>(row, coff + 3) = jac->h_p;
    sys.h_schmidt_blocks.block<2, 3>(row, 3 * (row / 2)) = jac->h_f;
    sys.schmidt_offsets.push_back(SevisState::schmidt_feature_offset(k));
    sys.residual(row) = m.observation.u - pred->u;
    sys.residual(row + 1) = m.observation.v - pred->v;
    row += 2;
  }
  sys.h_active.conservativeResize(row, a);
  sys.h_schmidt_blocks.conservativeResize(row, 3 * (row / 2));
  sys.residual.conservativeResize(row);
  sys.noise = sig2 * MatrixXd::Identity(row, row);
  return sys;
}

UpdateReport SevisEstimator::process_image(double timestamp,
                                           const std::vector<Bearing>& observations,
                                           const AssocResult& assoc) {
  UpdateReport report;
  report.timestamp = timestamp;
  const auto t_start = Clock::now();

  // Flush the compounded transition accumulated since the previous image.
  auto t0 = Clock::now();
  propagate_covariance_imu_block(cov_, pending_.Phi, pending_.Qd);
  pending_ = CompoundedTransition::identity(kImuErrDim);
  augment_clone(state_, cov_, timestamp, opts_.max_clones + 1);
  report.prop_s = seconds_since(t0);

  t0 = Clock::now();
  // Partition the frame: map-feature observations are handled only through
  // the association result; active-feature observations feed the SLAM
  // update; everything else extends the track table.
  std::unordered_set<std::int64_t> seen;
  std::vector<Bearing> slam_obs;
  for (const Bearing& obs : observations) {
    seen.insert(obs.feature_id);
    if (state_.find_schmidt_feature(obs.feature_id) >= 0) continue;
    if (state_.find_active_feature(obs.feature_id) >= 0) {
      slam_obs.push_back(obs);
      continue;
    }
    FeatureTrack& track = tracks_[obs.feature_id];
    track.id = obs.feature_id;
    track.observations.push_back(obs);
  }

  // MSCKF update for tracks that lost their observation this frame.
  std::vector<FeatureTrack> lost;
  for (auto it = tracks_.begin(); it != tracks_.end();) {
    if (!seen.count(it->first)) {
      lost.push_back(std::move(it->second));
      it = tracks_.erase(it);
    } else {
      ++it;
    }
  }
  std::sort(lost.begin(), lost.end(),
            [](const FeatureTrack& a, const FeatureTrack& b) { return a.id < b.id; });
  msckf_update(lost, report);

  // Promote tracks whose oldest observation is about to leave the window.
  if (static_cast<int>(state_.clones.size()) > opts_.max_clones) {
    const double dying_ts = state_.clones.back().timestamp;
    std::vector<std::int64_t> candidates;
    for (const auto& [id, track] : tracks_)
      if (!track.observations.empty() &&
          std::abs(track.observations.front().clone_timestamp - dying_ts) < 1e-9 &&
          track.observations.size() >= 4)
        candidates.push_back(id);
    std::sort(candidates.begin(), candidates.end());
    for (std::int64_t id : candidates) {
      if (static_cast<int>(state_.active_features.size()) >= opts_.max_active_features) break;
      if (initialize_slam_feature(tracks_.at(id), report) >= 0) tracks_.erase(id);
    }
  }

  // EKF update for active SLAM features observed this frame.
  {
    const LinearSystem sys = build_slam_system(slam_obs);
    report.slam_rows = sys.rows();
    report.slam_updated = sys.rows() / 2;
    if (sys.rows() > 0 && gate_passes(sys) &&
        schmidt_update(state_, cov_, sys, opts_.cond_max) != UpdateStatus::kOk)
      ++report.rejected_batches;
  }

  // Schmidt update for matched map features, capped per image.
  {
    std::vector<AssocMatch> batch;
    for (const AssocMatch& m : assoc.matches) {
      if (2 * static_cast<int>(batch.size() + 1) > opts_.max_update_rows) {
        ++report.schmidt_deferred;
        continue;
      }
      batch.push_back(m);
    }
    const LinearSystem sys = build_schmidt_system(batch);
    report.schmidt_rows = sys.rows();
    report.schmidt_matched_used = sys.rows() / 2;
    if (sys.rows() > 0 && gate_passes(sys)) {
      if (schmidt_update(state_, cov_, sys, opts_.cond_max) != UpdateStatus::kOk)
        ++report.rejected_batches;
    }
  }
  report.update_s = seconds_since(t0);

  // Management.
  t0 = Clock::now();
  // Active SLAM features that lost track: move to Schmidt (sevis), drop
  // (vio), or keep (full SLAM).
  if (opts_.mode != EstimatorMode::kFullSlam) {
    std::vector<std::int64_t> lost_features;
    for (const FeatureState& f : state_.active_features)
      if (!seen.count(f.id)) lost_features.push_back(f.id);
    std::sort(lost_features.begin(), lost_features.end());
    for (std::int64_t id : lost_features) {
      if (opts_.mode == EstimatorMode::kSevis && opts_.max_schmidt_features > 0) {
        if (static_cast<int>(state_.schmidt_features.size()) >= opts_.max_schmidt_features) {
          // Map at capacity: evict the oldest inserted feature first.
          while (!schmidt_insertion_order_.empty() &&
                 state_.find_schmidt_feature(schmidt_insertion_order_.front()) < 0)
            schmidt_insertion_order_.pop_front();
          if (!schmidt_insertion_order_.empty()) {
            marginalize_schmidt_feature(state_, cov_, schmidt_insertion_order_.front());
            schmidt_insertion_order_.pop_front();
          }
        }
        move_feature_to_schmidt(state_, cov_, id);
        schmidt_insertion_order_.push_back(id);
      } else {
        marginalize_active_feature(state_, cov_, id);
      }
    }
  }
  // Slide the window.
  if (static_cast<int>(state_.clones.size()) > opts_.max_clones) {
    const double dying_ts = state_.clones.back().timestamp;
    for (auto& [id, track] : tracks_)
      std::erase_if(track.observations, [dying_ts](const Bearing& b) {
        return std::abs(b.clone_timestamp - dying_ts) < 1e-9;
      });
    std::erase_if(tracks_, [](const auto& kv) { return kv.second.observations.empty(); });
    marginalize_clone(state_, cov_, static_cast<int>(state_.clones.size()) - 1);
  }
  // Keyframe lifecycle against the post-management Schmidt state.
  ClonePose current_pose;
  current_pose.orientation = state_.imu.orientation;
  current_pose.position = state_.imu.position;
  current_pose.timestamp = timestamp;
  maintain_keyframes(kfdb_, state_, current_pose, observations, timestamp, opts_.assoc);
  report.mgmt_s = seconds_since(t0);

  report.total_s = seconds_since(t_start);
  report.n_clones = static_cast<int>(state_.clones.size());
  report.n_active = static_cast<int>(state_.active_features.size());
  report.n_schmidt = static_cast<int>(state_.schmidt_features.size());
  return report;
}

}  // namespace sevis
