#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "confound_bench/errors.hpp"

namespace confound_bench {

enum class SeriesKind { line, markers };

struct PlotSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    SeriesKind kind = SeriesKind::line;
    std::string color = "#333333";
};

struct PlotStyle {
    std::string title;
    std::string x_label;
    std::string y_label;
};

namespace detail {

inline std::string svg_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    std::string s = buf;
    if (s == "-0.00") s = "0.00";
    return s;
}

inline std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", std::abs(v) < 1e-12 ? 0.0 : v);
    return buf;
}

inline std::string xml_escape(const std::string& s) {
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

/// 1-2-5 tick step giving roughly `target` intervals over [lo, hi].
inline double nice_step(double lo, double hi, int target = 6) {
    const double raw = (hi - lo) / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double f = raw / mag;
    const double nice = f < 1.5 ? 1.0 : f < 3.5 ? 2.0 : f < 7.5 ? 5.0 : 10.0;
    return nice * mag;
}

struct AxisRange {
    double lo, hi, step;
};

inline AxisRange axis_range(double lo, double hi) {
    if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
        const double pad = std::max(0.5, std::abs(hi) * 0.1);
        lo -= pad;
        hi += pad;
    }
    const double step = nice_step(lo, hi);
    return {std::floor(lo / step) * step, std::ceil(hi / step) * step, step};
}

}  // namespace detail

/// Standalone SVG 1.1 line chart on a fixed 800x600 canvas. Output is a pure
/// function of the input, so it can be compared byte for byte.
inline std::string emit_svg(const std::vector<PlotSeries>& series, const PlotStyle& style = {}) {
    if (series.empty()) throw EmptySeries("emit_svg: no series");
    double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
    for (const auto& s : series) {
        if (s.x.empty()) throw EmptySeries("emit_svg: series '" + s.name + "' has no points");
        if (s.x.size() != s.y.size()) throw std::invalid_argument("emit_svg: x/y length mismatch in '" + s.name + "'");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]))
                throw std::invalid_argument("emit_svg: non-finite point in '" + s.name + "'");
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }

    constexpr double kWidth = 800, kHeight = 600;
    constexpr double kLeft = 80, kRight = 620, kTop = 50, kBottom = 530;
    const auto xr = detail::axis_range(xmin, xmax);
    const auto yr = detail::axis_range(ymin, ymax);
    auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * (kRight - kLeft); };
    auto py = [&](double y) { return kBottom - (y - yr.lo) / (yr.hi - yr.lo) * (kBottom - kTop); };
    using detail::svg_num;

    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"800\" height=\"600\" "
          "viewBox=\"0 0 800 600\">\n"
       << "<style>.axis{stroke:#000;stroke-width:1}.grid{stroke:#ddd;stroke-width:1}"
          "text{font-family:sans-serif;font-size:12px}.title{font-size:16px}</style>\n"
       << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"#fff\"/>\n";
    if (!style.title.empty())
        os << "<text class=\"title\" x=\"" << svg_num((kLeft + kRight) / 2) << "\" y=\"30\" text-anchor=\"middle\">"
           << detail::xml_escape(style.title) << "</text>\n";

    const int nx = static_cast<int>(std::lround((xr.hi - xr.lo) / xr.step));
    for (int k = 0; k <= nx; ++k) {
        const double v = xr.lo + k * xr.step;
        os << "<line class=\"grid\" x1=\"" << svg_num(px(v)) << "\" y1=\"" << svg_num(kTop) << "\" x2=\""
           << svg_num(px(v)) << "\" y2=\"" << svg_num(kBottom) << "\"/>\n"
           << "<text x=\"" << svg_num(px(v)) << "\" y=\"" << svg_num(kBottom + 18)
           << "\" text-anchor=\"middle\">" << detail::tick_label(v) << "</text>\n";
    }
    const int ny = static_cast<int>(std::lround((yr.hi - yr.lo) / yr.step));
    for (int k = 0; k <= ny; ++k) {
        const double v = yr.lo + k * yr.step;
        os << "<line class=\"grid\" x1=\"" << svg_num(kLeft) << "\" y1=\"" << svg_num(py(v)) << "\" x2=\""
           << svg_num(kRight) << "\" y2=\"" << svg_num(py(v)) << "\"/>\n"
           << "<text x=\"" << svg_num(kLeft - 8) << "\" y=\"" << svg_num(py(v) + 4) << "\" text-anchor=\"end\">"
           << detail::tick_label(v) << "</text>\n";
    }
    os << "<line class=\"axis\" x1=\"" << svg_num(kLeft) << "\" y1=\"" << svg_num(kBottom) << "\" x2=\""
       << svg_num(kRight) << "\" y2=\"" << svg_num(kBottom) << "\"/>\n"
       << "<line class=\"axis\" x1=\"" << svg_num(kLeft) << "\" y1=\"" << svg_num(kTop) << "\" x2=\""
       << svg_num(kLeft) << "\" y2=\"" << svg_num(kBottom) << "\"/>\n";
    if (!style.x_label.empty())
        os << "<text x=\"" << svg_num((kLeft + kRight) / 2) << "\" y=\"" << svg_num(kBottom + 45)
           << "\" text-anchor=\"middle\">" << detail::xml_escape(style.x_label) << "</text>\n";
    if (!style.y_label.empty())
        os << "<text x=\"20\" y=\"" << svg_num((kTop + kBottom) / 2) << "\" text-anchor=\"middle\" "
           << "transform=\"rotate(-90 20 " << svg_num((kTop + kBottom) / 2) << ")\">"
           << detail::xml_escape(style.y_label) << "</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const std::string cls = "series-" + std::to_string(k);
        if (s.kind == SeriesKind::line) {
            os << "<polyline class=\"" << cls << "\" fill=\"none\" stroke=\"" << s.color
               << "\" stroke-width=\"2\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i)
                os << (i ? " " : "") << svg_num(px(s.x[i])) << ',' << svg_num(py(s.y[i]));
            os << "\"/>\n";
        } else {
            os << "<g class=\"" << cls << "\" fill=\"" << s.color << "\">\n";
            for (std::size_t i = 0; i < s.x.size(); ++i)
                os << "<circle cx=\"" << svg_num(px(s.x[i])) << "\" cy=\"" << svg_num(py(s.y[i])) << "\" r=\"4\"/>\n";
            os << "</g>\n";
        }
    }

    // Legend
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const double y = kTop + 10 + 20.0 * static_cast<double>(k);
        if (s.kind == SeriesKind::line)
            os << "<line class=\"series-" << k << "\" x1=\"640\" y1=\"" << svg_num(y) << "\" x2=\"670\" y2=\""
               << svg_num(y) << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
        else
            os << "<circle class=\"series-" << k << "\" cx=\"655\" cy=\"" << svg_num(y) << "\" r=\"4\" fill=\""
               << s.color << "\"/>\n";
        os << "<text x=\"678\" y=\"" << svg_num(y + 4) << "\">" << detail::xml_escape(s.name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace confound_bench
