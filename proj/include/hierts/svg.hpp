#pragma once

// Minimal static SVG line charts: one polyline per series with a shaded
// mean +/- se band. Output depends only on the inputs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace hierts::svg {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> band;  ///< half-width; empty for no band
};

struct ChartOptions {
    std::string title;
    std::string x_label = "round";
    std::string y_label = "cumulative regret";
    int width = 720;
    int height = 440;
};

namespace detail {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string escape(const std::string& s) {
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

inline const char* palette(std::size_t k) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    return colors[k % 6];
}

/// Round step for about `target` ticks over [0, span].
inline double tick_step(double span, int target) {
    if (span <= 0.0) return 1.0;
    const double raw = span / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        if (m * mag >= raw) return m * mag;
    }
    return 10.0 * mag;
}

inline std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

}  // namespace detail

inline void line_chart(std::ostream& out, const std::vector<Series>& series, const ChartOptions& opt) {
    const double left = 70, right = 150, top = 40, bottom = 50;
    const double pw = opt.width - left - right;
    const double ph = opt.height - top - bottom;

    double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
    bool first = true;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double b = s.band.empty() ? 0.0 : s.band[i];
            if (first) {
                xmin = xmax = s.x[i];
                ymin = s.y[i] - b;
                ymax = s.y[i] + b;
                first = false;
            }
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i] - b);
            ymax = std::max(ymax, s.y[i] + b);
        }
    }
    ymin = std::min(ymin, 0.0);
    if (xmax <= xmin) xmax = xmin + 1.0;
    if (ymax <= ymin) ymax = ymin + 1.0;

    auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return top + ph - (y - ymin) / (ymax - ymin) * ph; };
    using detail::num;

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\"" << opt.height
        << "\" viewBox=\"0 0 " << opt.width << ' ' << opt.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!opt.title.empty()) {
        out << "<text x=\"" << num(left + pw / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
            << detail::escape(opt.title) << "</text>\n";
    }

    const double ys = detail::tick_step(ymax - ymin, 5);
    for (double v = std::ceil(ymin / ys) * ys; v <= ymax + 1e-9 * ys; v += ys) {
        out << "<line x1=\"" << num(left) << "\" x2=\"" << num(left + pw) << "\" y1=\"" << num(py(v)) << "\" y2=\""
            << num(py(v)) << "\" stroke=\"#e0e0e0\"/>\n";
        out << "<text x=\"" << num(left - 6) << "\" y=\"" << num(py(v) + 4) << "\" text-anchor=\"end\">"
            << detail::tick_label(v) << "</text>\n";
    }
    const double xs = detail::tick_step(xmax - xmin, 6);
    for (double v = std::ceil(xmin / xs) * xs; v <= xmax + 1e-9 * xs; v += xs) {
        out << "<text x=\"" << num(px(v)) << "\" y=\"" << num(top + ph + 18) << "\" text-anchor=\"middle\">"
            << detail::tick_label(v) << "</text>\n";
    }
    out << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
        << "\" fill=\"none\" stroke=\"#333\"/>\n";
    out << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(opt.height - 10.0)
        << "\" text-anchor=\"middle\">" << detail::escape(opt.x_label) << "</text>\n";
    out << "<text transform=\"translate(16 " << num(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
        << detail::escape(opt.y_label) << "</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = detail::palette(k);
        if (!s.band.empty() && !s.x.empty()) {
            out << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i) out << num(px(s.x[i])) << ',' << num(py(s.y[i] + s.band[i])) << ' ';
            for (std::size_t i = s.x.size(); i-- > 0;) out << num(px(s.x[i])) << ',' << num(py(s.y[i] - s.band[i])) << ' ';
            out << "\"/>\n";
        }
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) out << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
        out << "\"/>\n";
        const double ly = top + 14 + 20.0 * static_cast<double>(k);
        out << "<line x1=\"" << num(left + pw + 12) << "\" x2=\"" << num(left + pw + 36) << "\" y1=\"" << num(ly)
            << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << num(left + pw + 42) << "\" y=\"" << num(ly + 4) << "\">" << detail::escape(s.name)
            << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace hierts::svg
