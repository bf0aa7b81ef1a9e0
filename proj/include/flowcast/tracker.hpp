#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "flowcast/fields.hpp"

namespace flowcast {

struct TrackerConfig {
  double iou_threshold = 0.3;
  bool same_class_only = true;

  void validate() const;
};

struct Association {
  std::vector<std::pair<int, int>> matches;  // (prev_idx, next_idx), sorted by prev_idx
  std::vector<int> unmatched_prev;
  std::vector<int> unmatched_next;
};

/// Greedy one-to-one matching in descending bbox IoU; ties resolve by
/// (prev_idx, next_idx) order. Pairs below the threshold stay unmatched.
Association associate(std::span<const InstanceMask> prev, std::span<const InstanceMask> next,
                      const TrackerConfig& cfg = {});

inline constexpr std::int64_t kTrackIdStride = 1'000'000;

struct Track {
  int birth_frame = 0;
  int birth_index = 0;
  /// indices[k] is the detection index in frame birth_frame + k.
  std::vector<int> indices;

  std::int64_t id() const { return birth_frame * kTrackIdStride + birth_index; }
  int length() const { return static_cast<int>(indices.size()); }
  int last_frame() const { return birth_frame + length() - 1; }
  std::optional<int> index_at(int frame) const;
};

/// Chains frame-to-frame associations; a missed frame ends the track.
std::vector<Track> build_tracks(const SequenceSample& sample, const TrackerConfig& cfg = {});

}  // namespace flowcast
