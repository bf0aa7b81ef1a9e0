#pragma once

#include <span>

#include "flowcast/fields.hpp"

namespace flowcast {

/// Size-based confidence penalty. Side thresholds are in pixels at the
/// reference resolution and are multiplied by `scale` for the working one.
struct RescoreConfig {
  double small_side = 64.0;
  double medium_side = 128.0;
  double small_penalty = 0.5;
  double medium_penalty = 0.3;
  double scale = 1.0;

  /// Scale relative to a 2048 px wide reference frame.
  static RescoreConfig for_width(int working_width, int reference_width = 2048);
};

double rescore(const InstanceMask& inst, const RescoreConfig& cfg = {});

/// Paints instances in ascending score order so the highest score owns
/// contested pixels; equal scores resolve in favour of the lower id.
/// Callers pass already-rescored scores.
SemanticMap fuse_semantic(std::span<const InstanceMask> instances);

/// Shape of the map returned for an empty instance list.
SemanticMap fuse_semantic(std::span<const InstanceMask> instances, int height, int width);

}  // namespace flowcast
