#include "flowcast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

namespace flowcast {
namespace {

constexpr double kThresholdSlack = 1e-12;

std::vector<int> all_classes() {
  std::vector<int> c(kNumClasses);
  std::iota(c.begin(), c.end(), 1);
  return c;
}

struct ClassCase {
  struct Pred {
    double score;
    int image;
    int index;
    std::vector<double> iou;  // against gt_index[image]
  };
  std::vector<std::vector<int>> gt_index;  // per image
  std::vector<Pred> preds;                 // sorted, best first
  int n_gt = 0;
};

ClassCase collect_class(std::span<const std::vector<InstanceMask>> preds,
                        std::span<const std::vector<InstanceMask>> gts, int class_id) {
  ClassCase cc;
  cc.gt_index.resize(gts.size());
  for (std::size_t img = 0; img < gts.size(); ++img) {
    for (std::size_t g = 0; g < gts[img].size(); ++g) {
      const auto& gt = gts[img][g];
      if (gt.class_id == class_id && !gt.is_empty()) cc.gt_index[img].push_back(static_cast<int>(g));
    }
    cc.n_gt += static_cast<int>(cc.gt_index[img].size());
  }
  for (std::size_t img = 0; img < preds.size(); ++img) {
    for (std::size_t p = 0; p < preds[img].size(); ++p) {
      const auto& pred = preds[img][p];
      if (pred.class_id != class_id) continue;
      ClassCase::Pred entry{pred.score, static_cast<int>(img), static_cast<int>(p), {}};
      for (int g : cc.gt_index[img]) entry.iou.push_back(mask_iou(pred.mask, gts[img][static_cast<std::size_t>(g)].mask));
      cc.preds.push_back(std::move(entry));
    }
  }
  std::ranges::sort(cc.preds, [](const ClassCase::Pred& a, const ClassCase::Pred& b) {
    return std::tuple(-a.score, a.image, a.index) < std::tuple(-b.score, b.image, b.index);
  });
  return cc;
}

/// Greedy matching; returns the true-positive flag per sorted prediction.
std::vector<bool> match(const ClassCase& cc, double threshold) {
  std::vector<std::vector<bool>> used(cc.gt_index.size());
  for (std::size_t i = 0; i < used.size(); ++i) used[i].assign(cc.gt_index[i].size(), false);
  std::vector<bool> tp;
  tp.reserve(cc.preds.size());
  for (const auto& p : cc.preds) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < p.iou.size(); ++g) {
      if (used[static_cast<std::size_t>(p.image)][g]) continue;
      if (p.iou[g] < threshold - kThresholdSlack) continue;
      if (p.iou[g] > best_iou) {
        best_iou = p.iou[g];
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) used[static_cast<std::size_t>(p.image)][static_cast<std::size_t>(best)] = true;
    tp.push_back(best >= 0);
  }
  return tp;
}

PrCurve curve_from(const std::vector<bool>& tp, int n_gt) {
  PrCurve curve;
  int tps = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    tps += tp[i] ? 1 : 0;
    curve.precision.push_back(static_cast<double>(tps) / static_cast<double>(i + 1));
    curve.recall.push_back(n_gt > 0 ? static_cast<double>(tps) / n_gt : 0.0);
  }
  return curve;
}

/// All-point interpolated area under the PR curve.
double area(const PrCurve& curve) {
  const std::size_t n = curve.precision.size();
  std::vector<double> envelope(curve.precision);
  for (std::size_t i = n; i-- > 1;) envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (curve.recall[i] - prev_recall) * envelope[i];
    prev_recall = curve.recall[i];
  }
  return ap;
}

void check_inputs(std::span<const std::vector<InstanceMask>> preds, std::span<const std::vector<InstanceMask>> gts) {
  if (preds.size() != gts.size()) {
    throw ShapeError("average_precision: " + std::to_string(preds.size()) + " prediction images vs " +
                     std::to_string(gts.size()) + " ground-truth images");
  }
  for (std::size_t img = 0; img < preds.size(); ++img) {
    const MaskGrid* ref = nullptr;
    for (const auto& g : gts[img]) {
      if (ref) require_same_shape(g.mask, *ref, "average_precision");
      ref = &g.mask;
    }
    for (const auto& p : preds[img]) {
      if (ref) require_same_shape(p.mask, *ref, "average_precision");
      ref = &p.mask;
      if (std::isnan(p.score)) throw ConfigError("prediction without a score");
    }
  }
}

}  // namespace

SemanticIou semantic_iou(const SemanticMap& pred, const SemanticMap& gt, std::span<const int> classes) {
  require_same_shape(pred.labels, gt.labels, "semantic_iou");
  const int max_class = classes.empty() ? 0 : *std::ranges::max_element(classes);
  std::vector<long> inter(static_cast<std::size_t>(std::max(max_class, kNumClasses)) + 1, 0);
  std::vector<long> uni(inter.size(), 0);
  const auto p = pred.labels.values();
  const auto g = gt.labels.values();
  for (int c : classes) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const bool a = p[i] == c, b = g[i] == c;
      inter[static_cast<std::size_t>(c)] += a && b;
      uni[static_cast<std::size_t>(c)] += a || b;
    }
  }
  SemanticIou out;
  out.per_class.assign(inter.size(), std::nullopt);
  double sum = 0.0;
  for (int c : classes) {
    const auto k = static_cast<std::size_t>(c);
    if (uni[k] == 0) continue;
    out.per_class[k] = static_cast<double>(inter[k]) / static_cast<double>(uni[k]);
    sum += *out.per_class[k];
    ++out.classes_present;
  }
  out.mean = out.classes_present > 0 ? sum / out.classes_present : 1.0;
  return out;
}

SemanticIou semantic_iou(const SemanticMap& pred, const SemanticMap& gt) {
  const auto classes = all_classes();
  return semantic_iou(pred, gt, classes);
}

void SemanticIouAccumulator::add(const SemanticMap& pred, const SemanticMap& gt) {
  require_same_shape(pred.labels, gt.labels, "semantic_iou");
  const auto p = pred.labels.values();
  const auto g = gt.labels.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > kNumClasses || g[i] > kNumClasses) throw ConfigError("semantic label out of range");
    if (p[i] == g[i]) {
      ++inter_[p[i]];
      ++uni_[p[i]];
    } else {
      ++uni_[p[i]];
      ++uni_[g[i]];
    }
  }
}

SemanticIou SemanticIouAccumulator::result() const {
  SemanticIou out;
  out.per_class.assign(kNumClasses + 1, std::nullopt);
  double sum = 0.0;
  for (int c = 1; c <= kNumClasses; ++c) {
    if (uni_[static_cast<std::size_t>(c)] == 0) continue;
    out.per_class[static_cast<std::size_t>(c)] =
        static_cast<double>(inter_[static_cast<std::size_t>(c)]) / static_cast<double>(uni_[static_cast<std::size_t>(c)]);
    sum += *out.per_class[static_cast<std::size_t>(c)];
    ++out.classes_present;
  }
  out.mean = out.classes_present > 0 ? sum / out.classes_present : 1.0;
  return out;
}

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int k = 50; k <= 95; k += 5) t.push_back(k / 100.0);
  return t;
}

ApResult average_precision(std::span<const std::vector<InstanceMask>> preds,
                           std::span<const std::vector<InstanceMask>> gts,
                           std::span<const double> iou_thresholds) {
  check_inputs(preds, gts);
  if (iou_thresholds.empty()) throw ConfigError("at least one IoU threshold required");
  ApResult out;
  out.per_class.assign(kNumClasses + 1, std::nullopt);
  out.per_threshold.assign(iou_thresholds.size(), 0.0);
  int n_classes = 0;
  for (int c = 1; c <= kNumClasses; ++c) {
    const ClassCase cc = collect_class(preds, gts, c);
    if (cc.n_gt == 0) continue;
    ++n_classes;
    double class_sum = 0.0;
    for (std::size_t t = 0; t < iou_thresholds.size(); ++t) {
      const double ap = area(curve_from(match(cc, iou_thresholds[t]), cc.n_gt));
      out.per_threshold[t] += ap;
      class_sum += ap;
    }
    out.per_class[static_cast<std::size_t>(c)] = class_sum / static_cast<double>(iou_thresholds.size());
  }
  if (n_classes == 0) {
    out.per_threshold.assign(iou_thresholds.size(), 0.0);
    return out;
  }
  double total = 0.0;
  for (int c = 1; c <= kNumClasses; ++c) {
    if (out.per_class[static_cast<std::size_t>(c)]) total += *out.per_class[static_cast<std::size_t>(c)];
  }
  out.ap = total / n_classes;
  for (std::size_t t = 0; t < iou_thresholds.size(); ++t) {
    out.per_threshold[t] /= n_classes;
    if (std::abs(iou_thresholds[t] - 0.5) < 1e-9) out.ap50 = out.per_threshold[t];
  }
  return out;
}

ApResult average_precision(std::span<const std::vector<InstanceMask>> preds,
                           std::span<const std::vector<InstanceMask>> gts) {
  const auto thresholds = coco_iou_thresholds();
  return average_precision(preds, gts, thresholds);
}

PrCurve precision_recall(std::span<const std::vector<InstanceMask>> preds,
                         std::span<const std::vector<InstanceMask>> gts, double iou_threshold) {
  check_inputs(preds, gts);
  // Pool all classes: sort every prediction by score and record TP flags from per-class matching.
  struct Flagged {
    double score;
    int image;
    int index;
    bool tp;
  };
  std::vector<Flagged> all;
  int n_gt = 0;
  for (int c = 1; c <= kNumClasses; ++c) {
    const ClassCase cc = collect_class(preds, gts, c);
    n_gt += cc.n_gt;
    const auto tp = match(cc, iou_threshold);
    for (std::size_t i = 0; i < cc.preds.size(); ++i) {
      all.push_back({cc.preds[i].score, cc.preds[i].image, cc.preds[i].index, tp[i]});
    }
  }
  std::ranges::sort(all, [](const Flagged& a, const Flagged& b) {
    return std::tuple(-a.score, a.image, a.index) < std::tuple(-b.score, b.image, b.index);
  });
  std::vector<bool> flags;
  for (const auto& f : all) flags.push_back(f.tp);
  return curve_from(flags, n_gt);
}

std::vector<FlowMse> flow_mse(std::span<const FlowField> pred, std::span<const FlowField> gt) {
  if (pred.size() != gt.size()) throw ShapeError("flow_mse: sequence lengths differ");
  std::vector<FlowMse> out;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    require_same_shape(pred[k].u, gt[k].u, "flow_mse");
    require_same_shape(pred[k].v, gt[k].v, "flow_mse");
    const auto pu = pred[k].u.values(), pv = pred[k].v.values();
    const auto gu = gt[k].u.values(), gv = gt[k].v.values();
    double su = 0.0, sv = 0.0;
    for (std::size_t i = 0; i < pu.size(); ++i) {
      const double du = static_cast<double>(pu[i]) - gu[i];
      const double dv = static_cast<double>(pv[i]) - gv[i];
      su += du * du;
      sv += dv * dv;
    }
    const double n = static_cast<double>(pu.size());
    FlowMse m{0.0, n > 0 ? su / n : 0.0, n > 0 ? sv / n : 0.0};
    m.mse = 0.5 * (m.mse_u + m.mse_v);
    out.push_back(m);
  }
  return out;
}

}  // namespace flowcast
