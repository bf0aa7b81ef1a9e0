#include <doctest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "flowcast/errors.hpp"
#include "flowcast/fields.hpp"
#include "helpers.hpp"

using namespace flowcast;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  auto dir = fs::temp_directory_path() / ("flowcast_test_" + std::string(name));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Independent encoder: byte layout written out by hand.
std::vector<std::uint8_t> encode_by_hand(const FlowField& f) {
  std::vector<std::uint8_t> out{'P', 'I', 'E', 'H'};
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put32(static_cast<std::uint32_t>(f.width()));
  put32(static_cast<std::uint32_t>(f.height()));
  for (int r = 0; r < f.height(); ++r) {
    for (int c = 0; c < f.width(); ++c) {
      put32(std::bit_cast<std::uint32_t>(f.u(r, c)));
      put32(std::bit_cast<std::uint32_t>(f.v(r, c)));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("flow file: 1x1 zero field round-trips in 20 bytes") {
  const auto dir = temp_dir("flo1");
  const FlowField f(1, 1);
  flow_write(f, dir / "a.flo");
  CHECK(fs::file_size(dir / "a.flo") == 12 + 8);
  CHECK(flow_read(dir / "a.flo") == f);
}

TEST_CASE("flow file: 2x3 ramp round-trips with size 12 + 2*3*8") {
  const auto dir = temp_dir("flo2");
  FlowField f(2, 3);
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 3; ++c) {
      f.u(r, c) = static_cast<float>(c);
      f.v(r, c) = static_cast<float>(r);
    }
  }
  flow_write(f, dir / "a.flo");
  CHECK(fs::file_size(dir / "a.flo") == 12 + 2 * 3 * 8);
  CHECK(flow_read(dir / "a.flo") == f);
  CHECK(flow_encode(f) == encode_by_hand(f));
}

TEST_CASE("flow file: encoding matches a hand-written layout on random fields") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto f = testutil::random_flow(rng, 1 + i % 5, 1 + i % 7, 100.0);
    const auto bytes = flow_encode(f);
    CHECK(bytes == encode_by_hand(f));
    CHECK(flow_decode(bytes) == f);
  }
}

TEST_CASE("flow file: corrupt inputs raise FormatError") {
  const auto dir = temp_dir("flo3");
  {
    std::ofstream out(dir / "bad.flo", std::ios::binary);
    out << "XXXX" << std::string(8 + 8, '\0');
  }
  CHECK_THROWS_AS(flow_read(dir / "bad.flo"), FormatError);

  auto bytes = flow_encode(FlowField(2, 2));
  bytes.pop_back();
  CHECK_THROWS_AS(flow_decode(bytes), FormatError);
  bytes = flow_encode(FlowField(2, 2));
  bytes.push_back(0);
  CHECK_THROWS_AS(flow_decode(bytes), FormatError);
  std::vector<std::uint8_t> neg{'P', 'I', 'E', 'H', 0xff, 0xff, 0xff, 0xff, 1, 0, 0, 0};
  CHECK_THROWS_AS(flow_decode(neg), FormatError);
  CHECK_THROWS_AS(flow_read(dir / "missing.flo"), IoError);
}

TEST_CASE("bbox_iou examples") {
  const auto a = BBox::FromCorners(0, 0, 10, 10);
  CHECK(bbox_iou(a, a) == 1.0);
  CHECK(bbox_iou(a, BBox::FromCorners(20, 20, 30, 30)) == 0.0);
  CHECK(bbox_iou(a, BBox::FromCorners(5, 0, 15, 10)) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(bbox_iou(BBox::Empty(), a) == 0.0);
  CHECK(bbox_iou(BBox::Empty(), BBox::Empty()) == 0.0);
}

TEST_CASE("bbox_iou is symmetric and bounded on random boxes") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> d(0, 20);
  for (int i = 0; i < 500; ++i) {
    const auto a = BBox::FromCorners(d(rng), d(rng), d(rng), d(rng));
    const auto b = BBox::FromCorners(d(rng), d(rng), d(rng), d(rng));
    const double ab = bbox_iou(a, b);
    CHECK(ab == bbox_iou(b, a));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
  }
}

TEST_CASE("mask_iou examples") {
  const auto sq = testutil::rect_mask(4, 4, 0, 0, 2, 2);
  CHECK(mask_iou(sq, sq) == 1.0);
  CHECK(mask_iou(sq, testutil::rect_mask(4, 4, 2, 2, 4, 4)) == 0.0);
  // 4-px square vs the same square shifted one column: overlap 2, union 6
  CHECK(mask_iou(sq, testutil::rect_mask(4, 4, 1, 0, 3, 2)) == doctest::Approx(2.0 / 6.0).epsilon(1e-12));
  CHECK(mask_iou(MaskGrid(3, 3, 0), MaskGrid(3, 3, 0)) == 1.0);
  CHECK_THROWS_AS(mask_iou(MaskGrid(3, 3, 0), MaskGrid(3, 4, 0)), ShapeError);
}

TEST_CASE("tight_bbox is half-open and EMPTY for empty masks") {
  CHECK(tight_bbox(MaskGrid(5, 5, 0)).empty);
  const auto b = tight_bbox(testutil::rect_mask(8, 8, 2, 3, 5, 7));
  CHECK(b == BBox::FromCorners(2, 3, 5, 7));
  CHECK(b.area() == 12);
}

TEST_CASE("label maps round-trip through PGM") {
  const auto dir = temp_dir("pgm");
  std::mt19937_64 rng(5);
  LabelGrid g(7, 9, 0);
  for (auto& v : g.values()) v = static_cast<std::uint8_t>(rng() % 9);
  label_write(g, dir / "a.pgm");
  CHECK(label_read(dir / "a.pgm") == g);
  {
    std::ofstream out(dir / "bad.pgm", std::ios::binary);
    out << "P2\n1 1\n255\n0";
  }
  CHECK_THROWS_AS(label_read(dir / "bad.pgm"), FormatError);
}

TEST_CASE("instance validation") {
  CHECK_NOTHROW(validate_instance(testutil::instance(1, 3, 0.5, MaskGrid(2, 2, 1))));
  CHECK_THROWS_AS(validate_instance(testutil::instance(1, 0, 0.5, MaskGrid(2, 2, 1))), ConfigError);
  CHECK_THROWS_AS(validate_instance(testutil::instance(1, 3, 1.5, MaskGrid(2, 2, 1))), ConfigError);
  CHECK_THROWS_AS(validate_instance(testutil::instance(1, 3, 0.5, MaskGrid(2, 2, 2))), ConfigError);
}
