#pragma once

#include "tiltcal/survival.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tiltcal {

struct PlotCurve {
    std::string label;
    SurvivalCurve curve;
    std::string color; // empty picks from the default palette
    bool dashed = false;
};

struct PlotSpec {
    std::string title;
    std::string x_label = "Days";
    std::string y_label = "Survival";
    std::optional<double> x_max; // defaults to the last time over all curves
    double y_min = 0.0;
    double y_max = 1.0;
    std::vector<PlotCurve> curves;
    double width = 720.0;
    double height = 460.0;
};

/// Step-function overlay as a standalone SVG document. Throws precondition
/// errors for an empty curve list or a degenerate axis range.
std::string render_svg(const PlotSpec& spec);
void write_svg(const std::filesystem::path& path, const PlotSpec& spec);

} // namespace tiltcal
