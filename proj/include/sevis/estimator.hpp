#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "sevis/assoc_sim.hpp"
#include "sevis/camera_model.hpp"
#include "sevis/propagation.hpp"
#include "sevis/state.hpp"

// The Schmidt-EKF estimator. Three measurement paths share one update
// routine: opportunistic VIO features go through triangulation and left-
// nullspace projection (MSCKF), active SLAM features through a plain EKF
// update (zero Schmidt columns), and matched map features through the
// Schmidt update with zero gain on the nuisance block. Per-image
// orchestration covers cloning, the three updates, and feature/clone/
// keyframe management.

namespace sevis {

enum class EstimatorMode { kVio, kFullSlam, kSevis };

/// Stacked linearized system. Schmidt columns are kept in compressed block
/// form (one 2x3-per-observation dense block per matched map feature plus its
/// column offset into the Schmidt dimension) so update cost stays linear in
/// map size; dense_h_schmidt materializes the logical rows x schmidt_dim
/// matrix when needed.
struct LinearSystem {
  MatrixXd h_active;           // rows x active_dim
  MatrixXd h_schmidt_blocks;   // rows x 3*f (f matched map features)
  std::vector<int> schmidt_offsets;  // per-feature column offsets into the Schmidt block
  VectorXd residual;
  MatrixXd noise;              // rows x rows, diagonal sigma^2 in practice

  int rows() const { return static_cast<int>(residual.size()); }
  bool has_schmidt() const { return !schmidt_offsets.empty(); }
  MatrixXd dense_h_schmidt(int schmidt_dim) const;
};

struct UpdateReport {
  double timestamp = 0.0;
  int msckf_features_used = 0;
  int msckf_features_dropped = 0;
  int slam_initialized = 0;
  int slam_updated = 0;
  int schmidt_matched_used = 0;
  int schmidt_deferred = 0;
  int rejected_batches = 0;
  int msckf_rows = 0;
  int slam_rows = 0;
  int schmidt_rows = 0;
  double prop_s = 0.0;
  double update_s = 0.0;
  double mgmt_s = 0.0;
  double total_s = 0.0;
  int n_clones = 0;
  int n_active = 0;
  int n_schmidt = 0;

  static std::string csv_header() { return "t,prop_s,update_s,mgmt_s,total_s,n_schmidt"; }
  std::string csv_row() const;
};

enum class NullspaceStatus { kOk, kRankDeficientFeature };

/// Projects the per-feature system onto the left nullspace of h_f
/// (N^T h_f = 0, N with orthonormal columns): h_x' = N^T h_x, r' = N^T r,
/// R' = N^T R N, reducing the rows by 3.
NullspaceStatus nullspace_project(const MatrixXd& h_x, const MatrixXd& h_f, const VectorXd& r,
                                  const MatrixXd& noise, MatrixXd* h_x_out, VectorXd* r_out,
                                  MatrixXd* noise_out);

enum class UpdateStatus { kOk, kRejectedConditioning };

/// Covariance/gain core of the Schmidt update on an arbitrary partitioned
/// covariance; writes the active-state correction K_A r to dx_out without
/// applying it. Leaves cov untouched when the batch is rejected.
UpdateStatus schmidt_update_covariance(PartitionedCovariance& cov, const LinearSystem& sys,
                                       double cond_max, VectorXd* dx_out);

/// The Schmidt-EKF update:
///   S   = [H_A H_S] P [H_A H_S]^T + R
///   K_A = (P_AA H_A^T + P_AS H_S^T) S^{-1},  K_S = 0
///   x_A += K_A r, x_S unchanged
///   P_AA -= K_A (H_A P_AA + H_S P_AS^T)
///   P_AS -= K_A (H_A P_AS + H_S P_SS)
///   P_SS unchanged
/// With no Schmidt columns this is exactly the standard EKF update on the
/// active state. Batches whose S has condition number above cond_max are
/// rejected without touching the state.
UpdateStatus schmidt_update(SevisState& state, PartitionedCovariance& cov,
                            const LinearSystem& sys, double cond_max = 1e12);

struct EstimatorOptions {
  EstimatorMode mode = EstimatorMode::kSevis;
  int max_clones = 15;
  int max_active_features = 6;
  int max_schmidt_features = 90;
  int max_update_rows = 30;       // cap on Schmidt-feature measurement rows per image
  double sigma_uv = 2.967e-3;     // bearing noise (normalized units, 1 sigma per axis)
  double cond_max = 1e12;
  bool mahalanobis_gate = false;  // 95% chi-square gate, off for simulation
  double init_feature_prior = 1e4;  // m^2, delayed-initialization prior
  NoiseParams imu_noise;
  Vector3d gravity = kGravity;
  Extrinsics extrinsics;
  CameraOptions camera;
  AssocOptions assoc;

  int active_capacity() const {
    return kImuErrDim + kCloneErrDim * (max_clones + 1) + kFeatErrDim * max_active_features;
  }
};

class SevisEstimator {
 public:
  SevisEstimator(const EstimatorOptions& opts, const ImuState& init_state,
                 const MatrixXd& init_cov_15);

  /// ZOH propagation: holds the previous sample over [t_prev, t], propagates
  /// the mean and compounds the transition/noise pair. The partitioned
  /// covariance is only touched at the next process_image.
  void feed_imu(const ImuSample& sample);

  /// Runs one image: covariance flush, stochastic cloning, the three update
  /// paths, then feature/clone/map/keyframe management.
  UpdateReport process_image(double timestamp, const std::vector<Bearing>& observations,
                             const AssocResult& assoc);

  /// MSCKF path for a batch of lost feature tracks.
  void msckf_update(const std::vector<FeatureTrack>& lost_tracks, UpdateReport& report);

  /// Delayed initialization of a SLAM feature from a full track. Returns the
  /// feature id, or -1 when triangulation fails.
  std::int64_t initialize_slam_feature(const FeatureTrack& track, UpdateReport& report);

  const SevisState& state() const { return state_; }
  SevisState& state() { return state_; }
  const PartitionedCovariance& cov() const { return cov_; }
  PartitionedCovariance& cov() { return cov_; }
  const EstimatorOptions& options() const { return opts_; }
  KeyframeDatabase& keyframes() { return kfdb_; }
  const KeyframeDatabase& keyframes() const { return kfdb_; }
  const std::unordered_map<std::int64_t, FeatureTrack>& tracks() const { return tracks_; }

 private:
  struct ObsRef {
    Bearing obs;
    std::int64_t id;
  };

  LinearSystem build_slam_system(const std::vector<Bearing>& slam_obs) const;
  LinearSystem build_schmidt_system(const std::vector<AssocMatch>& matches) const;
  bool build_track_system(const FeatureTrack& track, const Vector3d& p_f, MatrixXd* h_x,
                          MatrixXd* h_f, VectorXd* r) const;
  bool gate_passes(const LinearSystem& sys) const;

  EstimatorOptions opts_;
  SevisState state_;
  PartitionedCovariance cov_;
  std::unordered_map<std::int64_t, FeatureTrack> tracks_;
  std::deque<std::int64_t> schmidt_insertion_order_;
  KeyframeDatabase kfdb_;
  CompoundedTransition pending_ = CompoundedTransition::identity(kImuErrDim);
  ImuSample prev_sample_;
  bool has_prev_sample_ = false;
};

/// 95% chi-square quantile (Wilson-Hilferty approximation).
double chi2_quantile_95(int dof);

}  // namespace sevis
