#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace baa {

enum class SeriesStyle { line, dashed, points, bars };

struct PlotSeries {
    std::string name;
    SeriesStyle style = SeriesStyle::line;
    std::vector<std::pair<double, double>> points;
    std::array<std::uint8_t, 3> color{31, 119, 180}; // RGB
};

/// Renderer-independent description of a chart.
struct PlotData {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<PlotSeries> series;
    /// Categorical tick labels keyed by x position; numeric ticks otherwise.
    std::map<double, std::string> x_tick_labels;

    const PlotSeries* find(const std::string& name) const;
};

/// Rasterises the chart to a PNG. Returns false when the file cannot be
/// written.
bool render_plot(const PlotData& plot, const std::filesystem::path& path, int width = 900, int height = 600);

} // namespace baa
