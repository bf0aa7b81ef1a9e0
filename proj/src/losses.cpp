#include "flowcast/losses.hpp"

#include <algorithm>
#include <cmath>

namespace flowcast {
namespace {

void require_same_length(std::size_t a, std::size_t b, const char* context) {
  if (a != b) {
    throw ShapeError(std::string(context) + ": " + std::to_string(a) + " vs " + std::to_string(b) + " values");
  }
}

std::vector<double> flatten(std::span<const FlowField> seq) {
  std::vector<double> out;
  for (const auto& f : seq) {
    const auto u = f.u.values(), v = f.v.values();
    for (std::size_t i = 0; i < u.size(); ++i) {
      out.push_back(u[i]);
      out.push_back(v[i]);
    }
  }
  return out;
}

}  // namespace

double dice_loss(std::span<const double> prob, std::span<const double> gt) {
  require_same_length(prob.size(), gt.size(), "dice_loss");
  double inter = 0.0, denom = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    inter += prob[i] * gt[i];
    denom += prob[i] * prob[i] + gt[i] * gt[i];
  }
  if (denom == 0.0) return 0.0;
  return 1.0 - 2.0 * inter / denom;
}

double dice_loss(const Grid<float>& prob, const MaskGrid& gt) {
  require_same_shape(prob, gt, "dice_loss");
  std::vector<double> p(prob.values().begin(), prob.values().end());
  std::vector<double> g(gt.values().begin(), gt.values().end());
  return dice_loss(p, g);
}

std::vector<double> dice_loss_grad(std::span<const double> prob, std::span<const double> gt) {
  require_same_length(prob.size(), gt.size(), "dice_loss_grad");
  double inter = 0.0, denom = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    inter += prob[i] * gt[i];
    denom += prob[i] * prob[i] + gt[i] * gt[i];
  }
  std::vector<double> grad(prob.size(), 0.0);
  if (denom == 0.0) return grad;
  const double d2 = denom * denom;
  for (std::size_t i = 0; i < prob.size(); ++i) grad[i] = (4.0 * inter * prob[i] - 2.0 * gt[i] * denom) / d2;
  return grad;
}

double sequence_l2_loss(std::span<const double> pred, std::span<const double> gt, int steps) {
  require_same_length(pred.size(), gt.size(), "sequence_l2_loss");
  if (steps < 1 || pred.size() % static_cast<std::size_t>(steps) != 0) throw ShapeError("sequence_l2_loss: bad step count");
  const std::size_t block = pred.size() / static_cast<std::size_t>(steps);
  double total = 0.0;
  for (int k = 0; k < steps; ++k) {
    double s = 0.0;
    for (std::size_t i = k * block; i < (k + 1) * block; ++i) {
      const double d = gt[i] - pred[i];
      s += d * d;
    }
    total += s / static_cast<double>(block);
  }
  return total / steps;
}

std::vector<double> sequence_l2_loss_grad(std::span<const double> pred, std::span<const double> gt, int steps) {
  require_same_length(pred.size(), gt.size(), "sequence_l2_loss_grad");
  if (steps < 1 || pred.size() % static_cast<std::size_t>(steps) != 0) throw ShapeError("sequence_l2_loss: bad step count");
  const double scale = 2.0 / static_cast<double>(pred.size());
  std::vector<double> grad(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) grad[i] = scale * (pred[i] - gt[i]);
  return grad;
}

double loss_flow(std::span<const FlowField> pred, std::span<const FlowField> gt) {
  if (pred.size() != gt.size() || pred.empty()) throw ShapeError("loss_flow: sequence lengths differ or are empty");
  for (std::size_t k = 0; k < pred.size(); ++k) {
    require_same_shape(pred[k].u, gt[k].u, "loss_flow");
    require_same_shape(pred[k].u, pred[0].u, "loss_flow");
  }
  const auto p = flatten(pred), g = flatten(gt);
  return sequence_l2_loss(p, g, static_cast<int>(pred.size()));
}

double binary_cross_entropy(std::span<const double> prob, std::span<const double> gt) {
  require_same_length(prob.size(), gt.size(), "binary_cross_entropy");
  if (prob.empty()) return 0.0;
  constexpr double eps = 1e-12;
  double s = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double p = std::clamp(prob[i], eps, 1.0 - eps);
    s -= gt[i] * std::log(p) + (1.0 - gt[i]) * std::log(1.0 - p);
  }
  return s / static_cast<double>(prob.size());
}

}  // namespace flowcast
