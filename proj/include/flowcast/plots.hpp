#pragma once

// Static plot files: SVG line charts and PPM mask overlays.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "flowcast/fields.hpp"
#include "flowcast/metrics.hpp"

namespace flowcast {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 640;
  int height = 400;
};

/// Polyline chart with axes, ticks and a legend. Throws ShapeError when a
/// series has mismatched x/y lengths.
std::string svg_line_plot(const PlotSpec& spec, std::span<const Series> series);

/// MSE, MSE_u and MSE_v against the rollout step.
std::string svg_mse_plot(std::span<const FlowMse> mse, const std::string& title);

std::string svg_pr_plot(const PrCurve& curve, const std::string& title);

/// Binary PPM (P6). Gray = semantic class shade, green = ground truth only,
/// red = prediction only, yellow = both.
std::vector<std::uint8_t> overlay_ppm(const SemanticMap& background, std::span<const InstanceMask> predicted,
                                      std::span<const InstanceMask> truth);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace flowcast
