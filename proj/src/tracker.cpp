#include "flowcast/tracker.hpp"

#include <algorithm>
#include <tuple>

namespace flowcast {

void TrackerConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) throw ConfigError("iou_threshold must lie in (0,1)");
}

Association associate(std::span<const InstanceMask> prev, std::span<const InstanceMask> next,
                      const TrackerConfig& cfg) {
  cfg.validate();
  for (std::size_t i = 1; i < prev.size(); ++i) require_same_shape(prev[i].mask, prev[0].mask, "associate");
  for (const auto& n : next) {
    if (!prev.empty()) require_same_shape(n.mask, prev[0].mask, "associate");
    if (!next.empty()) require_same_shape(n.mask, next[0].mask, "associate");
  }

  std::vector<BBox> prev_boxes, next_boxes;
  for (const auto& p : prev) prev_boxes.push_back(p.bbox());
  for (const auto& n : next) next_boxes.push_back(n.bbox());

  struct Candidate {
    double iou;
    int prev;
    int next;
  };
  std::vector<Candidate> candidates;
  for (int i = 0; i < static_cast<int>(prev.size()); ++i) {
    for (int j = 0; j < static_cast<int>(next.size()); ++j) {
      if (cfg.same_class_only && prev[i].class_id != next[j].class_id) continue;
      const double iou = bbox_iou(prev_boxes[i], next_boxes[j]);
      if (iou >= cfg.iou_threshold) candidates.push_back({iou, i, j});
    }
  }
  std::ranges::sort(candidates, [](const Candidate& a, const Candidate& b) {
    return std::tuple(-a.iou, a.prev, a.next) < std::tuple(-b.iou, b.prev, b.next);
  });

  std::vector<bool> prev_used(prev.size(), false), next_used(next.size(), false);
  Association out;
  for (const auto& c : candidates) {
    if (prev_used[c.prev] || next_used[c.next]) continue;
    prev_used[c.prev] = next_used[c.next] = true;
    out.matches.emplace_back(c.prev, c.next);
  }
  std::ranges::sort(out.matches);
  for (int i = 0; i < static_cast<int>(prev.size()); ++i) {
    if (!prev_used[i]) out.unmatched_prev.push_back(i);
  }
  for (int j = 0; j < static_cast<int>(next.size()); ++j) {
    if (!next_used[j]) out.unmatched_next.push_back(j);
  }
  return out;
}

std::optional<int> Track::index_at(int frame) const {
  if (frame < birth_frame || frame > last_frame()) return std::nullopt;
  return indices[static_cast<std::size_t>(frame - birth_frame)];
}

std::vector<Track> build_tracks(const SequenceSample& sample, const TrackerConfig& cfg) {
  std::vector<Track> tracks;
  if (sample.instances.empty()) return tracks;
  // open[j] = track index owning detection j of the current frame
  std::vector<int> open;
  for (int j = 0; j < static_cast<int>(sample.instances[0].size()); ++j) {
    tracks.push_back({0, j, {j}});
    open.push_back(static_cast<int>(tracks.size()) - 1);
  }
  for (std::size_t t = 1; t < sample.instances.size(); ++t) {
    const auto& prev = sample.instances[t - 1];
    const auto& next = sample.instances[t];
    const Association assoc = associate(prev, next, cfg);
    std::vector<int> next_open(next.size(), -1);
    for (const auto& [p, n] : assoc.matches) {
      const int track = open[static_cast<std::size_t>(p)];
      tracks[static_cast<std::size_t>(track)].indices.push_back(n);
      next_open[static_cast<std::size_t>(n)] = track;
    }
    for (int n : assoc.unmatched_next) {
      tracks.push_back({static_cast<int>(t), n, {n}});
      next_open[static_cast<std::size_t>(n)] = static_cast<int>(tracks.size()) - 1;
    }
    open = std::move(next_open);
  }
  return tracks;
}

}  // namespace flowcast
