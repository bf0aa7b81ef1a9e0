#pragma once

// Conversions between grid domain types and CPU float tensors.

#include <span>
#include <vector>

#include <torch/torch.h>

#include "flowcast/fields.hpp"

namespace flowcast::nn {

/// [2, H, W] with channel order (u, v).
torch::Tensor flow_to_tensor(const FlowField& flow);
FlowField tensor_to_flow(const torch::Tensor& t);

/// [T, 2, H, W]
torch::Tensor stack_flows(std::span<const FlowField> flows);
std::vector<FlowField> unstack_flows(const torch::Tensor& t);

/// [1, H, W] with values in {0, 1} (or label values for semantics).
torch::Tensor grid_to_tensor(const Grid<std::uint8_t>& grid);
torch::Tensor grid_to_tensor(const Grid<float>& grid);
Grid<float> tensor_to_grid(const torch::Tensor& t);

}  // namespace flowcast::nn
