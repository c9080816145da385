#include "sevis/assoc_sim.hpp"

#include <unordered_set>

namespace sevis {

const Keyframe* query_keyframe(const KeyframeDatabase& db,
                               const std::vector<std::int64_t>& current_frame_ids,
                               int min_overlap) {
  const std::unordered_set<std::int64_t> current(current_frame_ids.begin(),
                                                 current_frame_ids.end());
  const Keyframe* best = nullptr;
  int best_overlap = 0;
  for (const Keyframe& kf : db.keyframes) {
    int overlap = 0;
    for (const auto& [id, bearing] : kf.features)
      if (current.count(id)) ++overlap;
    // Most recent wins ties: keyframes are stored in insertion order.
    if (overlap >= min_overlap && overlap >= best_overlap) {
      best = &kf;
      best_overlap = overlap;
    }
  }
  return best;
}

AssocResult match_keyframe(const std::vector<Bearing>& current_obs, const Keyframe* kf,
                           double recall, double outlier_rate, CounterRng& rng) {
  AssocResult out;
  if (kf == nullptr) return out;
  out.keyframe_id = kf->id;
  std::unordered_set<std::int64_t> used;
  for (const Bearing& obs : current_obs) {
    if (!kf->features.count(obs.feature_id)) continue;
    if (rng.next_uniform() >= recall) continue;
    std::int64_t target = obs.feature_id;
    if (outlier_rate > 0.0 && rng.next_uniform() < outlier_rate && kf->features.size() > 1) {
      // Rewire to a different stored id (wrong-id pairing).
      const auto pick = static_cast<size_t>(rng.next_uniform() * kf->features.size());
      auto it = kf->features.begin();
      std::advance(it, std::min(pick, kf->features.size() - 1));
      if (it->first != obs.feature_id) target = it->first;
    }
    if (!used.insert(target).second) continue;
    out.matches.push_back({obs, target});
  }
  return out;
}

void maintain_keyframes(KeyframeDatabase& db, const SevisState& state,
                        const ClonePose& current_pose, const std::vector<Bearing>& current_obs,
                        double timestamp, const AssocOptions& opts) {
  std::unordered_set<std::int64_t> live;
  for (const FeatureState& f : state.schmidt_features) live.insert(f.id);

  std::vector<Bearing> map_in_view;
  for (const Bearing& obs : current_obs)
    if (live.count(obs.feature_id)) map_in_view.push_back(obs);

  if (static_cast<int>(map_in_view.size()) >= opts.kf_insert_min &&
      timestamp - db.last_insert_time >= opts.kf_period) {
    Keyframe kf;
    kf.id = db.next_id++;
    kf.timestamp = timestamp;
    kf.pose = current_pose;
    for (const Bearing& obs : map_in_view) kf.features[obs.feature_id] = obs;
    db.keyframes.push_back(std::move(kf));
    db.last_insert_time = timestamp;
  }

  for (Keyframe& kf : db.keyframes) {
    for (auto it = kf.features.begin(); it != kf.features.end();) {
      if (!live.count(it->first))
        it = kf.features.erase(it);
      else
        ++it;
    }
  }
  std::erase_if(db.keyframes, [](const Keyframe& kf) { return kf.features.empty(); });
}

}  // namespace sevis
