#pragma once

// Non-learned mask forecasting baselines.

#include <span>

#include "flowcast/fields.hpp"

namespace flowcast {

InstanceMask copy_last(const InstanceMask& inst);

/// Translates the whole mask by the mean flow over its support, rounded half
/// away from zero. Pixels leaving the frame are dropped.
InstanceMask shift_mask(const InstanceMask& inst, const FlowField& flow);

/// Forward bilinear splat of every foreground pixel to (x+u, y+v); cells with
/// accumulated weight >= 0.5 become foreground.
InstanceMask warp_mask(const InstanceMask& inst, const FlowField& flow);

/// Left fold of warp_mask over the flow sequence.
InstanceMask warp_iterated(const InstanceMask& inst, std::span<const FlowField> flows);

/// Left fold of shift_mask over the flow sequence.
InstanceMask shift_iterated(const InstanceMask& inst, std::span<const FlowField> flows);

}  // namespace flowcast
