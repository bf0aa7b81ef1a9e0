#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "flowcast/fields.hpp"

namespace flowcast {

struct SemanticIou {
  /// Indexed by class id; nullopt when the class is absent from both maps.
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;
  int classes_present = 0;
};

/// Per-class IoU over `classes` and their mean over classes present in either map.
SemanticIou semantic_iou(const SemanticMap& pred, const SemanticMap& gt, std::span<const int> classes);
SemanticIou semantic_iou(const SemanticMap& pred, const SemanticMap& gt);

/// Dataset-level IoU: intersections and unions summed over many frames.
class SemanticIouAccumulator {
 public:
  void add(const SemanticMap& pred, const SemanticMap& gt);
  SemanticIou result() const;

 private:
  std::array<long, kNumClasses + 1> inter_{};
  std::array<long, kNumClasses + 1> uni_{};
};

/// 0.50, 0.55, ..., 0.95
std::vector<double> coco_iou_thresholds();

struct ApResult {
  double ap = 0.0;    // mean over thresholds, then over classes
  double ap50 = 0.0;  // class mean at the 0.50 threshold (0 if absent)
  std::vector<double> per_threshold;               // class-mean AP at each threshold
  std::vector<std::optional<double>> per_class;   // threshold-mean AP, indexed by class id
};

struct PrCurve {
  std::vector<double> precision;
  std::vector<double> recall;
};

/// Average precision of scored instance forecasts against ground truth.
/// Each image's predictions are matched only against that image's ground
/// truth; empty ground-truth masks are ignored; classes without ground truth
/// are excluded from the mean.
ApResult average_precision(std::span<const std::vector<InstanceMask>> preds,
                           std::span<const std::vector<InstanceMask>> gts,
                           std::span<const double> iou_thresholds);

ApResult average_precision(std::span<const std::vector<InstanceMask>> preds,
                           std::span<const std::vector<InstanceMask>> gts);

/// Class-pooled precision/recall curve at one threshold (for plotting).
PrCurve precision_recall(std::span<const std::vector<InstanceMask>> preds,
                         std::span<const std::vector<InstanceMask>> gts, double iou_threshold);

struct FlowMse {
  double mse = 0.0;
  double mse_u = 0.0;
  double mse_v = 0.0;
};

/// Per-step MSE over all pixels, jointly and per component.
std::vector<FlowMse> flow_mse(std::span<const FlowField> pred, std::span<const FlowField> gt);

}  // namespace flowcast
