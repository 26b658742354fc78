#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mobgp {

/// One plotted series. Band vectors, when non-empty, must match x in length and are
/// drawn as a translucent ribbon under the line.
struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> band_low;
    std::vector<double> band_high;
    std::string color;        ///< CSS color; palette-assigned when empty
    bool markers = false;     ///< draw point markers on top of the line
    bool line = true;         ///< set false for scatter-only series
    bool right_axis = false;  ///< scale against the secondary y axis
};

struct PlotSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::string y2_label;  ///< secondary axis label; the axis appears if any series uses it
    int width = 900;
    int height = 420;
    bool legend = true;
    std::vector<PlotSeries> series;
};

/// Renders a self-contained SVG document (no external references).
std::string render_plot(const PlotSpec& spec);

void write_plot(const std::filesystem::path& path, const PlotSpec& spec);

}  // namespace mobgp
