#pragma once

#include "smac/monitoring.hpp"

#include <filesystem>

namespace smac {

// Two stacked panels (shape chart above color chart): CUSUM statistic
// polyline, horizontal control limit, markers at signalling steps.
void write_control_chart_svg(const std::filesystem::path& path,
                             const MonitoringReport& report, double h_shape,
                             double h_color);

} // namespace smac
