#include "smac/svg.hpp"

#include "smac/error.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>

namespace smac {

namespace {

constexpr double kWidth = 760;
constexpr double kPanelHeight = 240;
constexpr double kMarginLeft = 60;
constexpr double kMarginRight = 20;
constexpr double kMarginTop = 30;
constexpr double kMarginBottom = 40;

struct Panel {
  double y0; // top of the drawable area
  double x_of(double t, long t_max) const {
    return kMarginLeft + (kWidth - kMarginLeft - kMarginRight) *
                             (t_max > 1 ? (t - 1) / static_cast<double>(t_max - 1) : 0.5);
  }
  double y_of(double v, double v_max) const {
    const double usable = kPanelHeight - kMarginTop - kMarginBottom;
    return y0 + kMarginTop + usable * (1.0 - v / v_max);
  }
};

void draw_panel(std::string& svg, const MonitoringReport& report, bool shape,
                double limit, double y0) {
  Panel panel{y0};
  const long t_max = report.steps.empty() ? 1 : report.steps.back().t;
  double v_max = limit * 1.2;
  for (const auto& s : report.steps)
    v_max = std::max(v_max, (shape ? s.cusum_s : s.cusum_c) * 1.1);
  if (v_max <= 0) v_max = 1;

  char buf[256];
  // frame and labels
  std::snprintf(buf, sizeof(buf),
                "<rect x='%.1f' y='%.1f' width='%.1f' height='%.1f' fill='none' "
                "stroke='#444'/>\n",
                kMarginLeft, y0 + kMarginTop, kWidth - kMarginLeft - kMarginRight,
                kPanelHeight - kMarginTop - kMarginBottom);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x='%.1f' y='%.1f' font-size='14' font-family='sans-serif'>%s "
                "chart</text>\n",
                kMarginLeft, y0 + kMarginTop - 8, shape ? "shape" : "color");
  svg += buf;

  // control limit
  std::snprintf(buf, sizeof(buf),
                "<line x1='%.1f' y1='%.2f' x2='%.1f' y2='%.2f' stroke='#c00' "
                "stroke-dasharray='6,4'/>\n",
                kMarginLeft, panel.y_of(limit, v_max), kWidth - kMarginRight,
                panel.y_of(limit, v_max));
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x='%.1f' y='%.2f' font-size='11' fill='#c00' "
                "font-family='sans-serif'>h = %.3f</text>\n",
                kWidth - kMarginRight - 90, panel.y_of(limit, v_max) - 4, limit);
  svg += buf;

  if (!report.steps.empty()) {
    svg += "<polyline fill='none' stroke='#06c' stroke-width='1.5' points='";
    for (const auto& s : report.steps) {
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", panel.x_of(static_cast<double>(s.t), t_max),
                    panel.y_of(shape ? s.cusum_s : s.cusum_c, v_max));
      svg += buf;
    }
    svg += "'/>\n";
    for (const auto& s : report.steps) {
      const bool mark = shape ? (s.signal == SignalSource::shape || s.signal == SignalSource::both)
                              : (s.signal == SignalSource::color || s.signal == SignalSource::both);
      if (!mark) continue;
      std::snprintf(buf, sizeof(buf),
                    "<circle cx='%.2f' cy='%.2f' r='4' fill='#c00'/>\n",
                    panel.x_of(static_cast<double>(s.t), t_max),
                    panel.y_of(shape ? s.cusum_s : s.cusum_c, v_max));
      svg += buf;
    }
  }

  // axis ticks: 0 and v_max
  std::snprintf(buf, sizeof(buf),
                "<text x='%.1f' y='%.2f' font-size='10' text-anchor='end' "
                "font-family='sans-serif'>0</text>\n",
                kMarginLeft - 4, panel.y_of(0, v_max) + 3);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x='%.1f' y='%.2f' font-size='10' text-anchor='end' "
                "font-family='sans-serif'>%.2f</text>\n",
                kMarginLeft - 4, panel.y_of(v_max, v_max) + 3, v_max);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x='%.1f' y='%.1f' font-size='11' text-anchor='middle' "
                "font-family='sans-serif'>t</text>\n",
                kWidth / 2, y0 + kPanelHeight - 14);
  svg += buf;
}

} // namespace

void write_control_chart_svg(const std::filesystem::path& path,
                             const MonitoringReport& report, double h_shape,
                             double h_color) {
  std::string svg;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns='http://www.w3.org/2000/svg' width='%.0f' height='%.0f' "
                "viewBox='0 0 %.0f %.0f'>\n",
                kWidth, 2 * kPanelHeight, kWidth, 2 * kPanelHeight);
  svg += buf;
  svg += "<rect width='100%' height='100%' fill='white'/>\n";
  draw_panel(svg, report, true, h_shape, 0);
  draw_panel(svg, report, false, h_color, kPanelHeight);
  svg += "</svg>\n";

  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << svg;
  if (!out) throw IoError("write failure on " + path.string());
}

} // namespace smac
