#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "sevis/camera_model.hpp"
#include "sevis/rng.hpp"
#include "sevis/state.hpp"

// Simulated keyframe-aided data association. Retrieval and descriptor
// matching are replaced by ground-truth id overlap with a recall knob and an
// optional wrong-id outlier injection, preserving the keyframe lifecycle and
// the association interface of the real front-end.

namespace sevis {

struct Keyframe {
  std::int64_t id = -1;
  double timestamp = 0.0;
  ClonePose pose;  // estimate snapshot at insertion
  std::unordered_map<std::int64_t, Bearing> features;  // map (Schmidt) feature ids only
};

struct AssocMatch {
  Bearing observation;
  std::int64_t schmidt_id = -1;
};

struct AssocResult {
  std::vector<AssocMatch> matches;  // each Schmidt feature appears at most once
  std::int64_t keyframe_id = -1;
};

struct AssocOptions {
  double recall = 1.0;
  double outlier_rate = 0.0;
  int min_overlap = 3;
  int kf_insert_min = 5;   // min map features in view to insert a keyframe
  double kf_period = 1.0;  // min seconds between insertions
};

struct KeyframeDatabase {
  std::vector<Keyframe> keyframes;
  std::int64_t next_id = 0;
  double last_insert_time = -1e300;
};

/// Keyframe with the largest id overlap (>= min_overlap) with the current
/// frame; ties break toward the most recent keyframe. nullptr when none.
const Keyframe* query_keyframe(const KeyframeDatabase& db,
                               const std::vector<std::int64_t>& current_frame_ids,
                               int min_overlap);

/// Pairs current observations with the keyframe's stored map-feature ids.
/// Each true pairing is kept independently with probability `recall`; with
/// probability `outlier_rate` a kept pairing is rewired to a different stored
/// id. Passing kf == nullptr yields an empty result.
AssocResult match_keyframe(const std::vector<Bearing>& current_obs, const Keyframe* kf,
                           double recall, double outlier_rate, CounterRng& rng);

/// Keyframe lifecycle: inserts a keyframe when enough map features are in the
/// current view and the insertion period has elapsed; drops stored ids that
/// left the Schmidt state and keyframes that became empty.
void maintain_keyframes(KeyframeDatabase& db, const SevisState& state,
                        const ClonePose& current_pose, const std::vector<Bearing>& current_obs,
                        double timestamp, const AssocOptions& opts);

}  // namespace sevis
