#include "sevis/state.hpp"

#include <cstdio>
#include <stdexcept>

#include <Eigen/Cholesky>

namespace sevis {

int SevisState::find_active_feature(std::int64_t id) const {
  for (size_t i = 0; i < active_features.size(); ++i)
    if (active_features[i].id == id) return static_cast<int>(i);
  return -1;
}

int SevisState::find_schmidt_feature(std::int64_t id) const {
  for (size_t i = 0; i < schmidt_features.size(); ++i)
    if (schmidt_features[i].id == id) return static_cast<int>(i);
  return -1;
}

PartitionedCovariance::PartitionedCovariance(int active_capacity, int schmidt_capacity)
    : paa_store_(MatrixXd::Zero(active_capacity, active_capacity)),
      pas_store_(MatrixXd::Zero(active_capacity, schmidt_capacity)),
      pss_store_(MatrixXd::Zero(schmidt_capacity, schmidt_capacity)) {}

void PartitionedCovariance::set_dims(int active_dim, int schmidt_dim) {
  if (active_dim > active_capacity() || schmidt_dim > schmidt_capacity())
    throw std::length_error("PartitionedCovariance: dimension exceeds capacity");
  active_dim_ = active_dim;
  schmidt_dim_ = schmidt_dim;
}

// Single-row/col moves are disjoint source/destination, so in-place shifting
// is well defined regardless of Eigen's traversal order.
void PartitionedCovariance::insert_active(int offset, int width) {
  if (offset < 0 || offset > active_dim_) throw std::out_of_range("insert_active: offset");
  if (active_dim_ + width > active_capacity())
    throw std::length_error("insert_active: active capacity exceeded");
  const int old_dim = active_dim_;
  active_dim_ += width;
  for (int r = old_dim - 1; r >= offset; --r) paa_store_.row(r + width) = paa_store_.row(r);
  for (int c = old_dim - 1; c >= offset; --c)
    paa_store_.col(c + width).head(active_dim_) = paa_store_.col(c).head(active_dim_);
  paa_store_.middleRows(offset, width).setZero();
  paa_store_.middleCols(offset, width).topRows(active_dim_).setZero();
  if (schmidt_dim_ > 0) {
    for (int r = old_dim - 1; r >= offset; --r)
      pas_store_.row(r + width).head(schmidt_dim_) = pas_store_.row(r).head(schmidt_dim_);
    pas_store_.middleRows(offset, width).leftCols(schmidt_dim_).setZero();
  }
}

void PartitionedCovariance::remove_active(int offset, int width) {
  if (offset < 0 || offset + width > active_dim_)
    throw std::out_of_range("remove_active: range");
  const int old_dim = active_dim_;
  for (int r = offset; r + width < old_dim; ++r) paa_store_.row(r) = paa_store_.row(r + width);
  for (int c = offset; c + width < old_dim; ++c) paa_store_.col(c) = paa_store_.col(c + width);
  if (schmidt_dim_ > 0)
    for (int r = offset; r + width < old_dim; ++r)
      pas_store_.row(r).head(schmidt_dim_) = pas_store_.row(r + width).head(schmidt_dim_);
  active_dim_ -= width;
}

void PartitionedCovariance::move_active_to_schmidt(int feature_offset) {
  const int w = kFeatErrDim;
  if (feature_offset < 0 || feature_offset + w > active_dim_)
    throw std::out_of_range("move_active_to_schmidt: offset");
  if (schmidt_dim_ + w > schmidt_capacity())
    throw std::length_error("move_active_to_schmidt: Schmidt capacity exceeded");
  const int s = schmidt_dim_;
  // New P_SS row/col: the feature's cross-covariance with existing Schmidt
  // features plus its own 3x3 block.
  if (s > 0) {
    pss_store_.block(s, 0, w, s) = pas_store_.block(feature_offset, 0, w, s);
    pss_store_.block(0, s, s, w) = pas_store_.block(feature_offset, 0, w, s).transpose();
  }
  pss_store_.block(s, s, w, w) = paa_store_.block(feature_offset, feature_offset, w, w);
  // New last P_AS column: the feature's P_AA column block (its own rows are
  // deleted by remove_active below).
  pas_store_.block(0, s, active_dim_, w) = paa_store_.block(0, feature_offset, active_dim_, w);
  schmidt_dim_ += w;
  remove_active(feature_offset, w);
}

void PartitionedCovariance::remove_schmidt(int slot_offset) {
  const int w = kFeatErrDim;
  if (slot_offset < 0 || slot_offset + w > schmidt_dim_)
    throw std::out_of_range("remove_schmidt: offset");
  const int last = schmidt_dim_ - w;
  if (slot_offset != last) {
    const MatrixXd last_rows = pss_store_.block(last, 0, w, schmidt_dim_);
    pss_store_.block(slot_offset, 0, w, schmidt_dim_) = last_rows;
    pss_store_.block(0, slot_offset, schmidt_dim_, w) = last_rows.transpose();
    pss_store_.block(slot_offset, slot_offset, w, w) = last_rows.block(0, last, w, w);
    pas_store_.block(0, slot_offset, active_dim_, w) = pas_store_.block(0, last, active_dim_, w);
  }
  schmidt_dim_ -= w;
}

MatrixXd PartitionedCovariance::assemble() const {
  const int a = active_dim_, s = schmidt_dim_;
  MatrixXd full(a + s, a + s);
  full.topLeftCorner(a, a) = paa();
  full.topRightCorner(a, s) = pas();
  full.bottomLeftCorner(s, a) = pas().transpose();
  full.bottomRightCorner(s, s) = pss();
  return full;
}

bool PartitionedCovariance::is_psd(double tol) const {
  MatrixXd full = assemble();
  const double shift = tol * std::max(full.trace(), 1e-300);
  full.diagonal().array() += shift;
  return Eigen::LLT<MatrixXd>(full).info() == Eigen::Success;
}

namespace {
// Error-state rows of the IMU pose (orientation, position) inside the IMU block.
constexpr int kPoseRows[kCloneErrDim] = {0, 1, 2, 12, 13, 14};
}  // namespace

void augment_clone(SevisState& state, PartitionedCovariance& cov, double timestamp,
                   int max_clones) {
  if (static_cast<int>(state.clones.size()) >= max_clones)
    throw std::logic_error("augment_clone: window full, marginalize first");
  const int off = kImuErrDim;  // newest clone sits directly after the IMU block
  cov.insert_active(off, kCloneErrDim);
  auto paa = cov.paa();
  for (int k = 0; k < kCloneErrDim; ++k) paa.row(off + k) = paa.row(kPoseRows[k]);
  for (int k = 0; k < kCloneErrDim; ++k) paa.col(off + k) = paa.col(kPoseRows[k]);
  if (cov.schmidt_dim() > 0) {
    auto pas = cov.pas();
    for (int k = 0; k < kCloneErrDim; ++k) pas.row(off + k) = pas.row(kPoseRows[k]);
  }
  ClonePose clone;
  clone.orientation = state.imu.orientation;
  clone.position = state.imu.position;
  clone.timestamp = timestamp;
  state.clones.insert(state.clones.begin(), clone);
}

void marginalize_clone(SevisState& state, PartitionedCovariance& cov, int clone_index) {
  if (clone_index < 0 || clone_index >= static_cast<int>(state.clones.size()))
    throw std::out_of_range("marginalize_clone: index");
  cov.remove_active(state.clone_offset(clone_index), kCloneErrDim);
  state.clones.erase(state.clones.begin() + clone_index);
}

void move_feature_to_schmidt(SevisState& state, PartitionedCovariance& cov, std::int64_t id) {
  const int j = state.find_active_feature(id);
  if (j < 0) throw std::out_of_range("move_feature_to_schmidt: id not active");
  cov.move_active_to_schmidt(state.active_feature_offset(j));
  state.schmidt_features.push_back(state.active_features[j]);
  state.active_features.erase(state.active_features.begin() + j);
}

void marginalize_schmidt_feature(SevisState& state, PartitionedCovariance& cov,
                                 std::int64_t id) {
  const int k = state.find_schmidt_feature(id);
  if (k < 0) throw std::out_of_range("marginalize_schmidt_feature: id not found");
  cov.remove_schmidt(SevisState::schmidt_feature_offset(k));
  state.schmidt_features[k] = state.schmidt_features.back();
  state.schmidt_features.pop_back();
}

void marginalize_active_feature(SevisState& state, PartitionedCovariance& cov,
                                std::int64_t id) {
  const int j = state.find_active_feature(id);
  if (j < 0) throw std::out_of_range("marginalize_active_feature: id not active");
  cov.remove_active(state.active_feature_offset(j), kFeatErrDim);
  state.active_features.erase(state.active_features.begin() + j);
}

void apply_active_correction(SevisState& state, const VectorXd& dx) {
  if (dx.size() != state.active_dim())
    throw std::invalid_argument("apply_active_correction: dimension mismatch");
  state.imu.orientation = small_angle_update(state.imu.orientation, dx.segment<3>(0));
  state.imu.gyro_bias += dx.segment<3>(3);
  state.imu.velocity += dx.segment<3>(6);
  state.imu.accel_bias += dx.segment<3>(9);
  state.imu.position += dx.segment<3>(12);
  for (size_t i = 0; i < state.clones.size(); ++i) {
    const int off = state.clone_offset(static_cast<int>(i));
    state.clones[i].orientation =
        small_angle_update(state.clones[i].orientation, dx.segment<3>(off));
    state.clones[i].position += dx.segment<3>(off + 3);
  }
  for (size_t i = 0; i < state.active_features.size(); ++i) {
    const int off = state.active_feature_offset(static_cast<int>(i));
    state.active_features[i].position += dx.segment<3>(off);
  }
}

std::string snapshot_csv(const SevisState& state, double timestamp) {
  char buf[256];
  const auto& q = state.imu.orientation;
  const auto& p = state.imu.position;
  std::snprintf(buf, sizeof(buf), "%.9f,%.9e,%.9e,%.9e,%.9e,%.9e,%.9e,%.9e,%zu,%zu,%zu",
                timestamp, p.x(), p.y(), p.z(), q(0), q(1), q(2), q(3), state.clones.size(),
                state.active_features.size(), state.schmidt_features.size());
  return std::string(buf);
}

}  // namespace sevis
