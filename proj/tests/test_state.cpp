#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "sevis/state.hpp"
#include "support/test_util.hpp"

using namespace sevis;
using namespace sevis::testing;

TEST_SUITE_BEGIN("state");

namespace {
PartitionedCovariance make_cov(const SevisState& state, int extra_active = 32,
                               int extra_schmidt = 32) {
  return PartitionedCovariance(state.active_dim() + extra_active,
                               state.schmidt_dim() + extra_schmidt);
}
}  // namespace

TEST_CASE("augment_clone duplicates the pose block exactly") {
  CounterRng rng(11, 1);
  SevisState state;
  PartitionedCovariance cov(64, 16);
  cov.set_dims(kImuErrDim, 0);
  cov.paa().setZero();
  // Pose block = I6 means: orientation/position diagonal entries 1.
  const int pose_rows[6] = {0, 1, 2, 12, 13, 14};
  for (int k = 0; k < 6; ++k) cov.paa()(pose_rows[k], pose_rows[k]) = 1.0;
  augment_clone(state, cov, 0.5, 4);
  REQUIRE(state.clones.size() == 1);
  CHECK(state.clones[0].timestamp == 0.5);
  CHECK(cov.active_dim() == kImuErrDim + 6);
  CHECK((MatrixXd(cov.paa().block(15, 15, 6, 6)) - MatrixXd::Identity(6, 6)).norm() == 0.0);
  // Cross rows equal the pose rows.
  for (int k = 0; k < 6; ++k)
    for (int c = 0; c < kImuErrDim; ++c)
      CHECK(cov.paa()(15 + k, c) == cov.paa()(pose_rows[k], c));
}

TEST_CASE("augment_clone keeps zero cross-correlation rows zero") {
  CounterRng rng(12, 1);
  SevisState state;
  PartitionedCovariance cov(64, 16);
  random_state_cov(rng, 0, 0, 2, &state, &cov);
  cov.pas().setZero();
  augment_clone(state, cov, 1.0, 4);
  CHECK(MatrixXd(cov.pas()).norm() == 0.0);
}

TEST_CASE("augment_clone preserves positive semi-definiteness") {
  CounterRng rng(13, 1);
  for (int trial = 0; trial < 10; ++trial) {
    SevisState state;
    PartitionedCovariance cov(96, 32);
    random_state_cov(rng, 2, 1, 3, &state, &cov);
    augment_clone(state, cov, 99.0, 8);
    const MatrixXd full = cov.assemble();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(full);
    CHECK(es.eigenvalues()(0) >= -1e-8 * full.trace());
  }
}

TEST_CASE("marginalize_clone shrinks and preserves the complement exactly") {
  CounterRng rng(14, 1);
  SevisState state;
  PartitionedCovariance cov(96, 32);
  random_state_cov(rng, 3, 2, 2, &state, &cov);
  const MatrixXd before = cov.assemble();
  const double trace_before = MatrixXd(cov.paa()).trace();
  const int off = state.clone_offset(1);
  const double removed = MatrixXd(cov.paa()).block(off, off, 6, 6).trace();

  marginalize_clone(state, cov, 1);
  CHECK(state.clones.size() == 2);
  CHECK(cov.active_dim() == before.rows() - cov.schmidt_dim() - 6);
  CHECK(MatrixXd(cov.paa()).trace() == doctest::Approx(trace_before - removed).epsilon(1e-12));

  // Remaining matrix equals the principal submatrix of the original.
  const MatrixXd after = cov.assemble();
  std::vector<int> keep;
  for (int i = 0; i < before.rows(); ++i)
    if (i < off || i >= off + 6) keep.push_back(i);
  for (size_t i = 0; i < keep.size(); ++i)
    for (size_t j = 0; j < keep.size(); ++j) CHECK(after(i, j) == before(keep[i], keep[j]));
}

TEST_CASE("marginalize from a single-clone state empties the window") {
  SevisState state;
  PartitionedCovariance cov(64, 0);
  CounterRng rng(15, 1);
  random_state_cov(rng, 1, 0, 0, &state, &cov);
  marginalize_clone(state, cov, 0);
  CHECK(state.clones.empty());
  CHECK(cov.active_dim() == kImuErrDim);
  CHECK_THROWS_AS(marginalize_clone(state, cov, 0), std::out_of_range);
}

TEST_CASE("move_feature_to_schmidt is a symmetric permutation") {
  CounterRng rng(16, 1);
  for (int trial = 0; trial < 10; ++trial) {
    SevisState state;
    PartitionedCovariance cov(96, 32);
    random_state_cov(rng, 2, 2, 1, &state, &cov);
    const MatrixXd before = cov.assemble();
    const int a = cov.active_dim();
    const int foff = state.active_feature_offset(0);
    const std::int64_t id = state.active_features[0].id;

    move_feature_to_schmidt(state, cov, id);
    CHECK(state.find_active_feature(id) == -1);
    CHECK(state.schmidt_features.back().id == id);

    // Permutation: feature rows move to the end of the assembled matrix.
    std::vector<int> perm;
    for (int i = 0; i < before.rows(); ++i)
      if (i < foff || i >= foff + 3) perm.push_back(i);
    for (int k = 0; k < 3; ++k) perm.push_back(foff + k);
    const MatrixXd after = cov.assemble();
    REQUIRE(after.rows() == before.rows());
    for (int i = 0; i < after.rows(); ++i)
      for (int j = 0; j < after.cols(); ++j) CHECK(after(i, j) == before(perm[i], perm[j]));
    CHECK(cov.active_dim() == a - 3);
  }
}

TEST_CASE("repeated moves append Schmidt blocks in move order") {
  CounterRng rng(17, 1);
  SevisState state;
  PartitionedCovariance cov(96, 32);
  random_state_cov(rng, 1, 3, 0, &state, &cov);
  const std::int64_t id1 = state.active_features[1].id;
  const std::int64_t id0 = state.active_features[0].id;
  move_feature_to_schmidt(state, cov, id1);
  move_feature_to_schmidt(state, cov, id0);
  REQUIRE(state.schmidt_features.size() == 2);
  CHECK(state.schmidt_features[0].id == id1);
  CHECK(state.schmidt_features[1].id == id0);
}

TEST_CASE("marginalize_schmidt_feature swap-removes") {
  CounterRng rng(18, 1);
  SevisState state;
  PartitionedCovariance cov(64, 32);
  random_state_cov(rng, 1, 0, 3, &state, &cov);
  const MatrixXd before = cov.assemble();
  const int a = cov.active_dim();
  const std::int64_t first = state.schmidt_features[0].id;
  const std::int64_t last = state.schmidt_features[2].id;

  marginalize_schmidt_feature(state, cov, first);
  REQUIRE(state.schmidt_features.size() == 2);
  CHECK(state.schmidt_features[0].id == last);

  // Slot 0 must now hold what slot 2 held, with cross blocks following.
  std::vector<int> perm;
  for (int i = 0; i < a; ++i) perm.push_back(i);
  perm.push_back(a + 6);
  perm.push_back(a + 7);
  perm.push_back(a + 8);
  perm.push_back(a + 3);
  perm.push_back(a + 4);
  perm.push_back(a + 5);
  const MatrixXd after = cov.assemble();
  for (int i = 0; i < after.rows(); ++i)
    for (int j = 0; j < after.cols(); ++j) CHECK(after(i, j) == before(perm[i], perm[j]));
}

TEST_CASE("marginalize last and only Schmidt feature truncates") {
  CounterRng rng(19, 1);
  SevisState state;
  PartitionedCovariance cov(64, 16);
  random_state_cov(rng, 1, 0, 1, &state, &cov);
  const MatrixXd before = cov.assemble();
  marginalize_schmidt_feature(state, cov, state.schmidt_features[0].id);
  CHECK(state.schmidt_features.empty());
  CHECK(cov.schmidt_dim() == 0);
  const MatrixXd after = cov.assemble();
  CHECK((after - before.topLeftCorner(after.rows(), after.cols())).norm() == 0.0);
  CHECK_THROWS_AS(marginalize_schmidt_feature(state, cov, 12345), std::out_of_range);
}

TEST_CASE("random management interleavings match the tombstone mirror entry-exact") {
  CounterRng rng(20, 1);
  for (int trial = 0; trial < 8; ++trial) {
    SevisState state;
    PartitionedCovariance cov(256, 96);
    random_state_cov(rng, 3, 2, 2, &state, &cov);
    TombstoneMirror mirror;
    mirror.init(cov.assemble(), cov.active_dim(), cov.schmidt_dim());

    for (int step = 0; step < 40; ++step) {
      const double pick = rng.next_uniform();
      if (pick < 0.3 && state.clones.size() < 8) {
        augment_clone(state, cov, 1000.0 + step, 9);
        mirror.augment_clone();
      } else if (pick < 0.45 && !state.clones.empty()) {
        const int idx = static_cast<int>(rng.next_uniform() * state.clones.size());
        mirror.remove_active(state.clone_offset(idx), kCloneErrDim);
        marginalize_clone(state, cov, idx);
      } else if (pick < 0.6 && !state.active_features.empty()) {
        const int j = static_cast<int>(rng.next_uniform() * state.active_features.size());
        const std::int64_t id = state.active_features[j].id;
        mirror.remove_active(state.active_feature_offset(j), kFeatErrDim);
        marginalize_active_feature(state, cov, id);
      } else if (pick < 0.8 && !state.active_features.empty() &&
                 cov.schmidt_dim() + 3 <= cov.schmidt_capacity()) {
        const int j = static_cast<int>(rng.next_uniform() * state.active_features.size());
        mirror.move_active_to_schmidt(state.active_feature_offset(j));
        move_feature_to_schmidt(state, cov, state.active_features[j].id);
      } else if (!state.schmidt_features.empty()) {
        const int k = static_cast<int>(rng.next_uniform() * state.schmidt_features.size());
        mirror.remove_schmidt(SevisState::schmidt_feature_offset(k));
        marginalize_schmidt_feature(state, cov, state.schmidt_features[k].id);
      }
      REQUIRE(mirror.matches(cov));
    }
  }
}

TEST_CASE("feature id maps stay bijective") {
  CounterRng rng(21, 1);
  SevisState state;
  PartitionedCovariance cov(128, 64);
  random_state_cov(rng, 2, 3, 3, &state, &cov);
  for (int j = 0; j < 3; ++j)
    CHECK(state.find_active_feature(state.active_features[j].id) == j);
  for (int k = 0; k < 3; ++k)
    CHECK(state.find_schmidt_feature(state.schmidt_features[k].id) == k);
  CHECK(state.find_active_feature(999999) == -1);
}

TEST_CASE("snapshot record carries pose and counts") {
  SevisState state;
  state.imu.position = Vector3d(1, 2, 3);
  state.clones.resize(2);
  state.active_features.resize(1);
  const std::string line = snapshot_csv(state, 1.25);
  CHECK(line.find("1.250000000") == 0);
  CHECK(line.find(",2,1,0") != std::string::npos);
}

TEST_SUITE_END();
