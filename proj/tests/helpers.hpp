#pragma once

#include <cstdint>
#include <random>

#include "flowcast/fields.hpp"

namespace testutil {

inline flowcast::MaskGrid rect_mask(int h, int w, int x0, int y0, int x1, int y1) {
  flowcast::MaskGrid m(h, w, 0);
  for (int r = std::max(0, y0); r < std::min(h, y1); ++r) {
    for (int c = std::max(0, x0); c < std::min(w, x1); ++c) m(r, c) = 1;
  }
  return m;
}

inline flowcast::InstanceMask instance(std::int64_t id, int cls, double score, flowcast::MaskGrid mask) {
  return {id, cls, score, std::move(mask)};
}

inline flowcast::MaskGrid random_mask(std::mt19937_64& rng, int h, int w, double p) {
  std::bernoulli_distribution on(p);
  flowcast::MaskGrid m(h, w, 0);
  for (auto& v : m.values()) v = on(rng) ? 1 : 0;
  return m;
}

inline flowcast::FlowField random_flow(std::mt19937_64& rng, int h, int w, double scale = 2.0) {
  std::uniform_real_distribution<float> d(static_cast<float>(-scale), static_cast<float>(scale));
  flowcast::FlowField f(h, w);
  for (auto& v : f.u.values()) v = d(rng);
  for (auto& v : f.v.values()) v = d(rng);
  return f;
}

}  // namespace testutil
