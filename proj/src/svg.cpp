#include "tiltcal/svg.hpp"

#include "tiltcal/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace tiltcal {

namespace {

const char* const palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

double nice_step(double range, int ticks) {
    const double raw = range / ticks;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
        if (raw <= m * mag) return m * mag;
    return 10.0 * mag;
}

} // namespace

std::string render_svg(const PlotSpec& spec) {
    require(!spec.curves.empty(), "plot needs at least one curve");
    double x_max = 0.0;
    for (const auto& c : spec.curves)
        if (!c.curve.points.empty()) x_max = std::max(x_max, c.curve.points.back().time);
    if (spec.x_max) x_max = *spec.x_max;
    if (!(x_max > 0.0)) x_max = 1.0;
    require(spec.y_max > spec.y_min, "plot y range is empty");

    const double left = 64, right = 170, top = 40, bottom = 52;
    const double pw = spec.width - left - right, ph = spec.height - top - bottom;
    const auto sx = [&](double t) { return left + pw * std::min(t, x_max) / x_max; };
    const auto sy = [&](double s) {
        const double c = std::clamp(s, spec.y_min, spec.y_max);
        return top + ph * (1.0 - (c - spec.y_min) / (spec.y_max - spec.y_min));
    };

    std::ostringstream o;
    o << std::fixed << std::setprecision(2);
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\"" << spec.height
      << "\" viewBox=\"0 0 " << spec.width << " " << spec.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!spec.title.empty())
        o << "<text x=\"" << left + pw / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << escape(spec.title)
          << "</text>\n";

    const double xs = nice_step(x_max, 8);
    for (double t = 0; t <= x_max + 1e-9; t += xs) {
        o << "<line x1=\"" << sx(t) << "\" y1=\"" << top << "\" x2=\"" << sx(t) << "\" y2=\"" << top + ph
          << "\" stroke=\"#e5e5e5\"/>\n";
        o << "<text x=\"" << sx(t) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << std::setprecision(0)
          << t << std::setprecision(2) << "</text>\n";
    }
    const double ys = nice_step(spec.y_max - spec.y_min, 5);
    for (double s = spec.y_min; s <= spec.y_max + 1e-9; s += ys) {
        o << "<line x1=\"" << left << "\" y1=\"" << sy(s) << "\" x2=\"" << left + pw << "\" y2=\"" << sy(s)
          << "\" stroke=\"#e5e5e5\"/>\n";
        o << "<text x=\"" << left - 6 << "\" y=\"" << sy(s) + 4 << "\" text-anchor=\"end\">" << s << "</text>\n";
    }
    o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    o << "<text x=\"" << left + pw / 2 << "\" y=\"" << spec.height - 12 << "\" text-anchor=\"middle\">"
      << escape(spec.x_label) << "</text>\n";
    o << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(spec.y_label) << "</text>\n";

    for (std::size_t i = 0; i < spec.curves.size(); ++i) {
        const auto& c = spec.curves[i];
        const std::string color = c.color.empty() ? palette[i % std::size(palette)] : c.color;
        o << "<path class=\"curve\" data-label=\"" << escape(c.label) << "\" fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"1.8\"" << (c.dashed ? " stroke-dasharray=\"6 4\"" : "") << " d=\"M" << sx(0) << ","
          << sy(c.curve.initial);
        double prev = c.curve.initial;
        for (const auto& p : c.curve.points) {
            if (p.time > x_max) break;
            o << " H" << sx(p.time);
            if (p.survival != prev) o << " V" << sy(p.survival);
            prev = p.survival;
        }
        o << " H" << sx(x_max) << "\"/>\n";
        const double ly = top + 14 + 18 * static_cast<double>(i);
        o << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 36 << "\" y2=\"" << ly
          << "\" stroke=\"" << color << "\" stroke-width=\"2\"" << (c.dashed ? " stroke-dasharray=\"6 4\"" : "")
          << "/>\n";
        o << "<text x=\"" << left + pw + 42 << "\" y=\"" << ly + 4 << "\">" << escape(c.label) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

void write_svg(const std::filesystem::path& path, const PlotSpec& spec) {
    const std::string doc = render_svg(spec);
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
    out << doc;
}

} // namespace tiltcal
