#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sevis/geometry.hpp"

// State decomposition x = [x_A, x_S]: the active block holds the IMU state, a
// sliding window of cloned poses and the currently estimated SLAM features;
// the Schmidt block holds frozen map-feature positions. The covariance is
// kept in partitioned form {P_AA, P_AS, P_SS} with pre-allocated storage so
// feature and clone management reduce to O(n) block copies.

namespace sevis {

using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

inline constexpr int kImuErrDim = 15;   // [dtheta, dbg, dv, dba, dp]
inline constexpr int kCloneErrDim = 6;  // [dtheta, dp]
inline constexpr int kFeatErrDim = 3;

struct ImuState {
  Quatd orientation = Quatd(0, 0, 0, 1);  // {}^I_G q
  Vector3d gyro_bias = Vector3d::Zero();
  Vector3d velocity = Vector3d::Zero();   // {}^G v
  Vector3d accel_bias = Vector3d::Zero();
  Vector3d position = Vector3d::Zero();   // {}^G p
};

struct ClonePose {
  Quatd orientation = Quatd(0, 0, 0, 1);
  Vector3d position = Vector3d::Zero();
  double timestamp = 0.0;
};

struct FeatureState {
  Vector3d position = Vector3d::Zero();  // {}^G p_f
  std::int64_t id = -1;
};

struct SevisState {
  ImuState imu;
  std::vector<ClonePose> clones;  // newest first
  std::vector<FeatureState> active_features;
  std::vector<FeatureState> schmidt_features;

  int active_dim() const {
    return kImuErrDim + kCloneErrDim * static_cast<int>(clones.size()) +
           kFeatErrDim * static_cast<int>(active_features.size());
  }
  int schmidt_dim() const { return kFeatErrDim * static_cast<int>(schmidt_features.size()); }

  int clone_offset(int clone_index) const { return kImuErrDim + kCloneErrDim * clone_index; }
  int active_feature_offset(int feature_index) const {
    return kImuErrDim + kCloneErrDim * static_cast<int>(clones.size()) +
           kFeatErrDim * feature_index;
  }
  static int schmidt_feature_offset(int feature_index) { return kFeatErrDim * feature_index; }

  /// Index of the feature in the respective list, or -1.
  int find_active_feature(std::int64_t id) const;
  int find_schmidt_feature(std::int64_t id) const;
};

/// {P_AA, P_AS, P_SS} with fixed-capacity backing stores. All views are into
/// the top-left corners of the stores; growing or shrinking a block never
/// allocates.
class PartitionedCovariance {
 public:
  PartitionedCovariance(int active_capacity, int schmidt_capacity);

  int active_dim() const { return active_dim_; }
  int schmidt_dim() const { return schmidt_dim_; }
  int active_capacity() const { return static_cast<int>(paa_store_.rows()); }
  int schmidt_capacity() const { return static_cast<int>(pss_store_.rows()); }

  auto paa() { return paa_store_.topLeftCorner(active_dim_, active_dim_); }
  auto paa() const { return paa_store_.topLeftCorner(active_dim_, active_dim_); }
  auto pas() { return pas_store_.topLeftCorner(active_dim_, schmidt_dim_); }
  auto pas() const { return pas_store_.topLeftCorner(active_dim_, schmidt_dim_); }
  auto pss() { return pss_store_.topLeftCorner(schmidt_dim_, schmidt_dim_); }
  auto pss() const { return pss_store_.topLeftCorner(schmidt_dim_, schmidt_dim_); }

  /// Sets dimensions without touching contents (test/bench seeding).
  void set_dims(int active_dim, int schmidt_dim);

  /// Inserts `width` zeroed rows/cols into the active block at `offset`,
  /// shifting existing entries. Pure index moves, no arithmetic.
  void insert_active(int offset, int width);
  /// Deletes rows/cols [offset, offset+width) from the active block by the
  /// upward/leftward block copy.
  void remove_active(int offset, int width);

  /// The O(n) move of one active feature (3 rows/cols at `feature_offset`)
  /// into a new last Schmidt slot: its P_AA column block becomes the last
  /// column of P_AS, its P_AS row block becomes the last row/column of P_SS,
  /// then the active rows/cols are deleted. The assembled covariance is a
  /// symmetric permutation of the original.
  void move_active_to_schmidt(int feature_offset);

  /// Swap-remove of Schmidt slot at `slot_offset`: the last inserted feature
  /// block overwrites the removed rows/cols.
  void remove_schmidt(int slot_offset);

  void symmetrize_paa() { paa() = ((paa() + paa().transpose()) / 2.0).eval(); }

  /// Dense [[P_AA, P_AS], [P_AS^T, P_SS]].
  MatrixXd assemble() const;

  /// Cheap PSD test: LLT succeeds on assemble() + tol*trace*I.
  bool is_psd(double tol = 1e-6) const;

 private:
  MatrixXd paa_store_, pas_store_, pss_store_;
  int active_dim_ = 0;
  int schmidt_dim_ = 0;
};

/// Stochastic cloning: duplicates the current IMU pose (orientation +
/// position only) into a new newest clone with exact cross-correlations.
/// Throws std::logic_error when the window is at `max_clones`.
void augment_clone(SevisState& state, PartitionedCovariance& cov, double timestamp,
                   int max_clones);

/// Deletes clone `clone_index` (0 = newest) from state and covariance.
void marginalize_clone(SevisState& state, PartitionedCovariance& cov, int clone_index);

/// Moves an active SLAM feature into the Schmidt block.
/// Throws std::logic_error when the Schmidt block is at capacity.
void move_feature_to_schmidt(SevisState& state, PartitionedCovariance& cov, std::int64_t id);

/// Removes a Schmidt map feature; the last inserted feature takes its slot.
void marginalize_schmidt_feature(SevisState& state, PartitionedCovariance& cov,
                                 std::int64_t id);

/// Drops an active SLAM feature from state and covariance (VIO-style
/// marginalization on track loss).
void marginalize_active_feature(SevisState& state, PartitionedCovariance& cov,
                                std::int64_t id);

/// Injects an active-dimension error-state correction (orientation blocks via
/// small-angle quaternion update, everything else additive).
void apply_active_correction(SevisState& state, const VectorXd& dx);

/// One-line text snapshot: t,px,py,pz,qx,qy,qz,qw,n_clones,n_active,n_schmidt
std::string snapshot_csv(const SevisState& state, double timestamp);

}  // namespace sevis
