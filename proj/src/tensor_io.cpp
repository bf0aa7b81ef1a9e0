#include "flowcast/tensor_io.hpp"

#include <algorithm>

namespace flowcast::nn {

torch::Tensor flow_to_tensor(const FlowField& flow) {
  require_same_shape(flow.u, flow.v, "flow_to_tensor");
  const int64_t h = flow.height(), w = flow.width();
  auto t = torch::empty({2, h, w}, torch::kFloat32);
  std::copy(flow.u.values().begin(), flow.u.values().end(), t.data_ptr<float>());
  std::copy(flow.v.values().begin(), flow.v.values().end(), t.data_ptr<float>() + h * w);
  return t;
}

FlowField tensor_to_flow(const torch::Tensor& t) {
  if (t.dim() != 3 || t.size(0) != 2) throw ShapeError("expected a [2,H,W] flow tensor");
  const auto c = t.to(torch::kFloat32).contiguous();
  const int h = static_cast<int>(c.size(1)), w = static_cast<int>(c.size(2));
  FlowField flow(h, w);
  const float* p = c.data_ptr<float>();
  std::copy(p, p + h * w, flow.u.values().begin());
  std::copy(p + h * w, p + 2 * h * w, flow.v.values().begin());
  return flow;
}

torch::Tensor stack_flows(std::span<const FlowField> flows) {
  if (flows.empty()) throw ShapeError("stack_flows: empty sequence");
  std::vector<torch::Tensor> ts;
  for (const auto& f : flows) {
    require_same_shape(f.u, flows.front().u, "stack_flows");
    ts.push_back(flow_to_tensor(f));
  }
  return torch::stack(ts);
}

std::vector<FlowField> unstack_flows(const torch::Tensor& t) {
  if (t.dim() != 4) throw ShapeError("expected a [T,2,H,W] tensor");
  std::vector<FlowField> out;
  for (int64_t k = 0; k < t.size(0); ++k) out.push_back(tensor_to_flow(t[k]));
  return out;
}

torch::Tensor grid_to_tensor(const Grid<std::uint8_t>& grid) {
  auto t = torch::empty({1, grid.height(), grid.width()}, torch::kFloat32);
  std::transform(grid.values().begin(), grid.values().end(), t.data_ptr<float>(),
                 [](std::uint8_t x) { return static_cast<float>(x); });
  return t;
}

torch::Tensor grid_to_tensor(const Grid<float>& grid) {
  auto t = torch::empty({1, grid.height(), grid.width()}, torch::kFloat32);
  std::copy(grid.values().begin(), grid.values().end(), t.data_ptr<float>());
  return t;
}

Grid<float> tensor_to_grid(const torch::Tensor& t) {
  const auto c = t.to(torch::kFloat32).contiguous();
  if (c.dim() < 2) throw ShapeError("expected a grid tensor");
  const int h = static_cast<int>(c.size(-2)), w = static_cast<int>(c.size(-1));
  if (c.numel() != static_cast<int64_t>(h) * w) throw ShapeError("grid tensor has extra channels");
  Grid<float> g(h, w);
  std::copy(c.data_ptr<float>(), c.data_ptr<float>() + c.numel(), g.values().begin());
  return g;
}

}  // namespace flowcast::nn
