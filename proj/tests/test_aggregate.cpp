#include <doctest.h>

#include "flowcast/aggregate.hpp"
#include "flowcast/errors.hpp"
#include "helpers.hpp"

using namespace flowcast;
using testutil::instance;
using testutil::rect_mask;

TEST_CASE("rescore at the reference resolution") {
  CHECK(rescore(instance(1, 1, 0.9, rect_mask(300, 300, 0, 0, 50, 50))) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(rescore(instance(1, 1, 0.9, rect_mask(300, 300, 0, 0, 100, 100))) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(rescore(instance(1, 1, 0.9, rect_mask(300, 300, 0, 0, 200, 150))) == 0.9);
  CHECK(rescore(instance(1, 1, 0.3, rect_mask(300, 300, 0, 0, 10, 10))) == 0.0);
}

TEST_CASE("rescore thresholds scale with the working resolution") {
  const auto cfg = RescoreConfig::for_width(128);
  CHECK(cfg.scale == doctest::Approx(128.0 / 2048.0));
  // 64 px and 128 px at 2048 wide become 4 px and 8 px at 128 wide
  CHECK(rescore(instance(1, 1, 0.9, rect_mask(64, 128, 0, 0, 3, 3)), cfg) == doctest::Approx(0.4));
  CHECK(rescore(instance(1, 1, 0.9, rect_mask(64, 128, 0, 0, 6, 6)), cfg) == doctest::Approx(0.6));
  CHECK(rescore(instance(1, 1, 0.9, rect_mask(64, 128, 0, 0, 9, 9)), cfg) == 0.9);
}

TEST_CASE("fuse_semantic: single and disjoint instances") {
  const auto a = instance(1, 3, 0.5, rect_mask(8, 8, 0, 0, 3, 3));
  const auto b = instance(2, 5, 0.5, rect_mask(8, 8, 5, 5, 8, 8));
  const auto one = fuse_semantic(std::span(&a, 1));
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) CHECK(one.labels(r, c) == 3 * a.mask(r, c));
  }
  const std::vector<InstanceMask> both{a, b};
  const auto two = fuse_semantic(both);
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) CHECK(two.labels(r, c) == 3 * a.mask(r, c) + 5 * b.mask(r, c));
  }
}

TEST_CASE("fuse_semantic: higher score owns the overlap regardless of input order") {
  const auto hi = instance(1, 2, 0.8, rect_mask(8, 8, 0, 0, 5, 5));
  const auto lo = instance(2, 7, 0.4, rect_mask(8, 8, 3, 3, 8, 8));
  for (const auto& order : {std::vector<InstanceMask>{hi, lo}, std::vector<InstanceMask>{lo, hi}}) {
    const auto s = fuse_semantic(order);
    CHECK(s.labels(4, 4) == 2);
    CHECK(s.labels(6, 6) == 7);
    CHECK(s.labels(0, 7) == kBackground);
  }
}

TEST_CASE("fuse_semantic: equal scores resolve to the lower id") {
  const auto a = instance(5, 2, 0.5, rect_mask(4, 4, 0, 0, 4, 4));
  const auto b = instance(9, 6, 0.5, rect_mask(4, 4, 0, 0, 4, 4));
  CHECK(fuse_semantic(std::vector<InstanceMask>{a, b}).labels(1, 1) == 2);
  CHECK(fuse_semantic(std::vector<InstanceMask>{b, a}).labels(1, 1) == 2);
}

TEST_CASE("fuse_semantic: shape checks") {
  const std::vector<InstanceMask> mixed{instance(1, 1, 1, MaskGrid(4, 4, 1)), instance(2, 1, 1, MaskGrid(4, 5, 1))};
  CHECK_THROWS_AS(fuse_semantic(mixed), ShapeError);
  const auto empty = fuse_semantic(std::span<const InstanceMask>{}, 3, 4);
  CHECK(empty.labels == LabelGrid(3, 4, 0));
}
