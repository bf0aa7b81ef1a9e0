#include "flowcast/warpop.hpp"

#include <cmath>

namespace flowcast {

InstanceMask copy_last(const InstanceMask& inst) { return inst; }

InstanceMask shift_mask(const InstanceMask& inst, const FlowField& flow) {
  require_same_shape(inst.mask, flow.u, "shift_mask");
  require_same_shape(flow.u, flow.v, "shift_mask flow");
  const int h = inst.mask.height(), w = inst.mask.width();
  double su = 0.0, sv = 0.0;
  long n = 0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (inst.mask(r, c) == 0) continue;
      su += flow.u(r, c);
      sv += flow.v(r, c);
      ++n;
    }
  }
  InstanceMask out = inst;
  if (n == 0) return out;
  const int dx = static_cast<int>(std::round(su / static_cast<double>(n)));
  const int dy = static_cast<int>(std::round(sv / static_cast<double>(n)));
  out.mask = MaskGrid(h, w, 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (inst.mask(r, c) != 0 && out.mask.contains(r + dy, c + dx)) out.mask(r + dy, c + dx) = 1;
    }
  }
  return out;
}

InstanceMask warp_mask(const InstanceMask& inst, const FlowField& flow) {
  require_same_shape(inst.mask, flow.u, "warp_mask");
  require_same_shape(flow.u, flow.v, "warp_mask flow");
  const int h = inst.mask.height(), w = inst.mask.width();
  Grid<double> mass(h, w, 0.0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (inst.mask(r, c) == 0) continue;
      const double x = c + static_cast<double>(flow.u(r, c));
      const double y = r + static_cast<double>(flow.v(r, c));
      const double fx = std::floor(x), fy = std::floor(y);
      const double ax = x - fx, ay = y - fy;
      const int cx = static_cast<int>(fx), cy = static_cast<int>(fy);
      const double weights[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
      const int offsets[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
      for (int k = 0; k < 4; ++k) {
        const int tc = cx + offsets[k][0], tr = cy + offsets[k][1];
        if (weights[k] > 0.0 && mass.contains(tr, tc)) mass(tr, tc) += weights[k];
      }
    }
  }
  InstanceMask out = inst;
  out.mask = MaskGrid(h, w, 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) out.mask(r, c) = mass(r, c) >= 0.5 ? 1 : 0;
  }
  return out;
}

InstanceMask warp_iterated(const InstanceMask& inst, std::span<const FlowField> flows) {
  if (flows.empty()) throw ShapeError("warp_iterated needs at least one flow");
  InstanceMask cur = inst;
  for (const auto& f : flows) cur = warp_mask(cur, f);
  return cur;
}

InstanceMask shift_iterated(const InstanceMask& inst, std::span<const FlowField> flows) {
  if (flows.empty()) throw ShapeError("shift_iterated needs at least one flow");
  InstanceMask cur = inst;
  for (const auto& f : flows) cur = shift_mask(cur, f);
  return cur;
}

}  // namespace flowcast
