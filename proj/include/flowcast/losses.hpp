#pragma once

// Reference (double precision) training objectives with closed-form gradients.

#include <span>
#include <vector>

#include "flowcast/fields.hpp"

namespace flowcast {

/// 1 - 2*sum(p*g) / (sum(p^2) + sum(g^2)); 0 when both sums vanish.
double dice_loss(std::span<const double> prob, std::span<const double> gt);
double dice_loss(const Grid<float>& prob, const MaskGrid& gt);
std::vector<double> dice_loss_grad(std::span<const double> prob, std::span<const double> gt);

/// Shifted-sequence L2 objective over `steps` equal blocks of H*W*2 values:
/// (1/steps) * sum_k ||pred_k - gt_k||^2 / (H*W*2).
double sequence_l2_loss(std::span<const double> pred, std::span<const double> gt, int steps);
std::vector<double> sequence_l2_loss_grad(std::span<const double> pred, std::span<const double> gt, int steps);

double loss_flow(std::span<const FlowField> pred, std::span<const FlowField> gt);

/// Mean per-pixel binary cross-entropy, used only for the loss ablation.
double binary_cross_entropy(std::span<const double> prob, std::span<const double> gt);

}  // namespace flowcast
