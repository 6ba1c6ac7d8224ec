#include "intxlab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace intxlab::svg {

namespace {

constexpr int kWidth = 680;
constexpr int kHeight = 460;
constexpr int kMarginL = 70, kMarginR = 160, kMarginT = 40, kMarginB = 55;

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

}  // namespace

void write_line_chart(const std::filesystem::path& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series, bool log_y) {
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    auto yval = [&](double v) { return log_y ? std::log10(std::max(v, 1e-300)) : v; };
    for (const Series& s : series) {
        for (double v : s.x) { xmin = std::min(xmin, v); xmax = std::max(xmax, v); }
        for (std::size_t i = 0; i < s.y.size(); ++i) {
            double lo = s.y[i], hi = s.y[i];
            if (i < s.yerr.size()) { lo -= s.yerr[i]; hi += s.yerr[i]; }
            if (log_y) { lo = std::max(lo, 1e-300); }
            ymin = std::min(ymin, yval(lo));
            ymax = std::max(ymax, yval(hi));
        }
    }
    if (!std::isfinite(xmin)) { xmin = 0; xmax = 1; }
    if (!std::isfinite(ymin)) { ymin = 0; ymax = 1; }
    if (xmax == xmin) { xmax = xmin + 1; }
    if (ymax == ymin) { ymax = ymin + 1; }
    const double xpad = 0.02 * (xmax - xmin), ypad = 0.05 * (ymax - ymin);
    xmin -= xpad; xmax += xpad; ymin -= ypad; ymax += ypad;

    const double plot_w = kWidth - kMarginL - kMarginR;
    const double plot_h = kHeight - kMarginT - kMarginB;
    auto px = [&](double v) { return kMarginL + (v - xmin) / (xmax - xmin) * plot_w; };
    auto py = [&](double v) {
        return kMarginT + plot_h - (yval(v) - ymin) / (ymax - ymin) * plot_h;
    };

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
        << "\" height=\"" << kHeight << "\" font-family=\"sans-serif\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" "
        << "font-size=\"15\">" << title << "</text>\n";

    // Axes and ticks.
    out << "<rect x=\"" << kMarginL << "\" y=\"" << kMarginT << "\" width=\""
        << plot_w << "\" height=\"" << plot_h
        << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int t = 0; t <= 5; ++t) {
        const double fx = xmin + (xmax - xmin) * t / 5.0;
        const double fy = ymin + (ymax - ymin) * t / 5.0;
        out << "<line x1=\"" << px(fx) << "\" y1=\"" << kMarginT + plot_h
            << "\" x2=\"" << px(fx) << "\" y2=\"" << kMarginT + plot_h + 5
            << "\" stroke=\"#333\"/>\n";
        out << "<text x=\"" << px(fx) << "\" y=\"" << kMarginT + plot_h + 18
            << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt(fx) << "</text>\n";
        const double ypix = kMarginT + plot_h - plot_h * t / 5.0;
        out << "<line x1=\"" << kMarginL - 5 << "\" y1=\"" << ypix << "\" x2=\""
            << kMarginL << "\" y2=\"" << ypix << "\" stroke=\"#333\"/>\n";
        out << "<text x=\"" << kMarginL - 8 << "\" y=\"" << ypix + 4
            << "\" text-anchor=\"end\" font-size=\"11\">"
            << fmt(log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
    }
    out << "<text x=\"" << kMarginL + plot_w / 2 << "\" y=\"" << kHeight - 12
        << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
    out << "<text x=\"16\" y=\"" << kMarginT + plot_h / 2
        << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
        << kMarginT + plot_h / 2 << ")\">" << y_label
        << (log_y ? " (log scale)" : "") << "</text>\n";

    // Series.
    for (std::size_t si = 0; si < series.size(); ++si) {
        const Series& s = series[si];
        const char* color = kPalette[si % 8];
        std::ostringstream pts;
        for (std::size_t i = 0; i < s.x.size(); ++i)
            pts << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
        out << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\""
            << color << "\" stroke-width=\"1.8\"/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            out << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i])
                << "\" r=\"2.6\" fill=\"" << color << "\"/>\n";
            if (i < s.yerr.size() && s.yerr[i] > 0.0) {
                const double lo = log_y ? std::max(s.y[i] - s.yerr[i], 1e-300)
                                        : s.y[i] - s.yerr[i];
                out << "<line x1=\"" << px(s.x[i]) << "\" y1=\"" << py(lo)
                    << "\" x2=\"" << px(s.x[i]) << "\" y2=\""
                    << py(s.y[i] + s.yerr[i]) << "\" stroke=\"" << color
                    << "\" stroke-width=\"1\"/>\n";
            }
        }
        // Legend entry.
        const double ly = kMarginT + 14 + 18.0 * si;
        out << "<line x1=\"" << kMarginL + plot_w + 10 << "\" y1=\"" << ly
            << "\" x2=\"" << kMarginL + plot_w + 30 << "\" y2=\"" << ly
            << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << kMarginL + plot_w + 35 << "\" y=\"" << ly + 4
            << "\" font-size=\"11\">" << s.name << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace intxlab::svg
