#include "flowcast/plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "flowcast/errors.hpp"

namespace flowcast {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

}  // namespace

std::string svg_line_plot(const PlotSpec& spec, std::span<const Series> series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ShapeError("series '" + s.name + "' has mismatched x/y lengths");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  y0 = std::min(y0, 0.0);
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;

  const double left = 60, right = 150, top = 30, bottom = 45;
  const double pw = spec.width - left - right, ph = spec.height - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\"" << spec.height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << spec.width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << escape(spec.title)
      << "</text>\n";
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    svg << "<text x=\"" << px(xv) << "\" y=\"" << top + ph + 15 << "\" text-anchor=\"middle\">" << fmt(xv)
        << "</text>\n";
    svg << "<text x=\"" << left - 5 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
    svg << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(yv) << "\" y2=\"" << py(yv)
        << "\" stroke=\"#ddd\"/>\n";
  }
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << spec.height - 8 << "\" text-anchor=\"middle\">"
      << escape(spec.x_label) << "</text>\n";
  svg << "<text transform=\"translate(14," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(spec.y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) svg << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    }
    svg << "\"/>\n";
    const double ly = top + 15 + 18.0 * static_cast<double>(k);
    svg << "<line x1=\"" << left + pw + 10 << "\" x2=\"" << left + pw + 30 << "\" y1=\"" << ly << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << left + pw + 35 << "\" y=\"" << ly + 4 << "\">" << escape(s.name) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string svg_mse_plot(std::span<const FlowMse> mse, const std::string& title) {
  std::vector<Series> series{{"MSE", {}, {}}, {"MSE u", {}, {}}, {"MSE v", {}, {}}};
  for (std::size_t k = 0; k < mse.size(); ++k) {
    const double step = static_cast<double>(k + 1);
    for (auto& s : series) s.x.push_back(step);
    series[0].y.push_back(mse[k].mse);
    series[1].y.push_back(mse[k].mse_u);
    series[2].y.push_back(mse[k].mse_v);
  }
  return svg_line_plot({title, "steps ahead", "mean squared error"}, series);
}

std::string svg_pr_plot(const PrCurve& curve, const std::string& title) {
  const Series s{"precision", curve.recall, curve.precision};
  return svg_line_plot({title, "recall", "precision"}, std::span(&s, 1));
}

std::vector<std::uint8_t> overlay_ppm(const SemanticMap& background, std::span<const InstanceMask> predicted,
                                      std::span<const InstanceMask> truth) {
  const int h = background.height(), w = background.width();
  MaskGrid pred(h, w, 0), gt(h, w, 0);
  for (const auto& inst : predicted) {
    require_same_shape(pred, inst.mask, "overlay prediction");
    for (std::size_t i = 0; i < pred.values().size(); ++i) pred.values()[i] |= inst.mask.values()[i];
  }
  for (const auto& inst : truth) {
    require_same_shape(gt, inst.mask, "overlay ground truth");
    for (std::size_t i = 0; i < gt.values().size(); ++i) gt.values()[i] |= inst.mask.values()[i];
  }
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto labels = background.labels.values();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto shade = static_cast<std::uint8_t>(40 + 20 * std::min<int>(labels[i], kNumClasses));
    const bool p = pred.values()[i] != 0, g = gt.values()[i] != 0;
    std::uint8_t rgb[3] = {shade, shade, shade};
    if (p && g) {
      rgb[0] = 230, rgb[1] = 210, rgb[2] = 40;
    } else if (g) {
      rgb[0] = 40, rgb[1] = 190, rgb[2] = 60;
    } else if (p) {
      rgb[0] = 220, rgb[1] = 50, rgb[2] = 40;
    }
    out.insert(out.end(), rgb, rgb + 3);
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

}  // namespace flowcast
