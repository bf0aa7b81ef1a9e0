#pragma once

// Grid-valued domain types shared by every module, plus the binary flow
// container and 8-bit label image I/O.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flowcast/grid.hpp"

namespace flowcast {

inline constexpr int kBackground = 0;
/// Moving-object classes are labelled 1..kNumClasses.
inline constexpr int kNumClasses = 8;

using MaskGrid = Grid<std::uint8_t>;
using LabelGrid = Grid<std::uint8_t>;

/// Dense displacement field; flows[i] of a sequence maps frame i to frame i+1.
struct FlowField {
  Grid<float> u;
  Grid<float> v;

  FlowField() = default;
  FlowField(int height, int width, float fill_u = 0.0f, float fill_v = 0.0f)
      : u(height, width, fill_u), v(height, width, fill_v) {}

  int height() const { return u.height(); }
  int width() const { return u.width(); }

  bool operator==(const FlowField&) const = default;
};

/// Throws ShapeError if u/v disagree, FormatError on non-finite entries.
void validate_flow(const FlowField& flow);

/// Half-open pixel box [x0, x1) x [y0, y1). `empty` marks the EMPTY sentinel.
struct BBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;
  bool empty = true;

  static BBox Empty() { return {}; }
  static BBox FromCorners(int x0, int y0, int x1, int y1) { return {x0, y0, x1, y1, x1 <= x0 || y1 <= y0}; }

  int width() const { return empty ? 0 : x1 - x0; }
  int height() const { return empty ? 0 : y1 - y0; }
  long area() const { return static_cast<long>(width()) * height(); }

  bool operator==(const BBox&) const = default;
};

BBox tight_bbox(const MaskGrid& mask);
long mask_area(const MaskGrid& mask);

struct InstanceMask {
  std::int64_t id = 0;
  int class_id = 1;
  double score = 1.0;
  MaskGrid mask;

  BBox bbox() const { return tight_bbox(mask); }
  bool is_empty() const { return mask_area(mask) == 0; }
};

/// Throws ConfigError on out-of-range class/score or non-binary mask entries.
void validate_instance(const InstanceMask& inst);

struct SemanticMap {
  LabelGrid labels;

  SemanticMap() = default;
  SemanticMap(int height, int width) : labels(height, width, kBackground) {}

  int height() const { return labels.height(); }
  int width() const { return labels.width(); }
  bool operator==(const SemanticMap&) const = default;
};

struct SequenceSample {
  std::vector<FlowField> flows;
  std::vector<std::vector<InstanceMask>> instances;
  std::vector<SemanticMap> semantics;
  std::uint64_t seed = 0;
  std::string config_json;

  int frames() const { return static_cast<int>(semantics.size()); }
  int height() const { return semantics.empty() ? 0 : semantics.front().height(); }
  int width() const { return semantics.empty() ? 0 : semantics.front().width(); }

  /// Frame counts, shared grid shape, and per-frame unique ids.
  void validate() const;
};

double bbox_iou(const BBox& a, const BBox& b);
double mask_iou(const MaskGrid& a, const MaskGrid& b);

/// Binary flow container: "PIEH", int32 width, int32 height (little-endian),
/// then row-major interleaved float32 (u, v).
void flow_write(const FlowField& field, const std::filesystem::path& path);
FlowField flow_read(const std::filesystem::path& path);

std::vector<std::uint8_t> flow_encode(const FlowField& field);
FlowField flow_decode(const std::vector<std::uint8_t>& bytes);

/// Binary PGM (P5), 8-bit, lossless.
void label_write(const LabelGrid& labels, const std::filesystem::path& path);
LabelGrid label_read(const std::filesystem::path& path);

}  // namespace flowcast
