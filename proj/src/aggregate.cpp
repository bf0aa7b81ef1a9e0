#include "flowcast/aggregate.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace flowcast {

RescoreConfig RescoreConfig::for_width(int working_width, int reference_width) {
  RescoreConfig cfg;
  cfg.scale = static_cast<double>(working_width) / static_cast<double>(reference_width);
  return cfg;
}

double rescore(const InstanceMask& inst, const RescoreConfig& cfg) {
  const BBox box = inst.bbox();
  const double w = box.width(), h = box.height();
  double score = inst.score;
  if (w < cfg.small_side * cfg.scale && h < cfg.small_side * cfg.scale) {
    score -= cfg.small_penalty;
  } else if (w < cfg.medium_side * cfg.scale && h < cfg.medium_side * cfg.scale) {
    score -= cfg.medium_penalty;
  }
  return std::clamp(score, 0.0, 1.0);
}

SemanticMap fuse_semantic(std::span<const InstanceMask> instances, int height, int width) {
  SemanticMap out(height, width);
  for (const auto& inst : instances) require_same_shape(inst.mask, out.labels, "fuse_semantic");
  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), 0);
  // Paint order: ascending score, then descending id (lower id painted last wins ties).
  std::ranges::sort(order, [&](std::size_t a, std::size_t b) {
    if (instances[a].score != instances[b].score) return instances[a].score < instances[b].score;
    return instances[a].id > instances[b].id;
  });
  for (std::size_t k : order) {
    const auto& inst = instances[k];
    const auto src = inst.mask.values();
    auto dst = out.labels.values();
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (src[i] != 0) dst[i] = static_cast<std::uint8_t>(inst.class_id);
    }
  }
  return out;
}

SemanticMap fuse_semantic(std::span<const InstanceMask> instances) {
  if (instances.empty()) throw ShapeError("fuse_semantic needs a shape; pass height/width for empty input");
  return fuse_semantic(instances, instances.front().mask.height(), instances.front().mask.width());
}

}  // namespace flowcast
