#include "mobgp/svgplot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "mobgp/errors.hpp"

namespace mobgp {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
constexpr int kPaletteSize = 8;

std::string xml_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (const char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&apos;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

std::string num(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void take(double v) {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    bool valid() const { return lo <= hi; }
    void pad() {
        if (!valid()) {
            lo = 0.0;
            hi = 1.0;
            return;
        }
        if (lo == hi) {
            const double d = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
            lo -= d;
            hi += d;
            return;
        }
        const double d = (hi - lo) * 0.05;
        lo -= d;
        hi += d;
    }
};

// Tick step from the 1-2-5 ladder giving roughly `target` divisions.
double nice_step(double range, int target) {
    const double raw = range / std::max(target, 1);
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double frac = raw / mag;
    double step;
    if (frac <= 1.0) {
        step = 1.0;
    } else if (frac <= 2.0) {
        step = 2.0;
    } else if (frac <= 5.0) {
        step = 5.0;
    } else {
        step = 10.0;
    }
    return step * mag;
}

std::vector<double> ticks(const Range& r, int target) {
    const double step = nice_step(r.hi - r.lo, target);
    std::vector<double> out;
    double t = std::ceil(r.lo / step) * step;
    // guard against -0 labels
    for (; t <= r.hi + step * 1e-9; t += step) out.push_back(t == 0.0 ? 0.0 : t);
    return out;
}

struct Mapper {
    Range range;
    double a = 1.0, b = 0.0;  // pixel = a * value + b

    void fit(double pix_lo, double pix_hi) {
        a = (pix_hi - pix_lo) / (range.hi - range.lo);
        b = pix_lo - a * range.lo;
    }
    double operator()(double v) const { return a * v + b; }
};

void emit_polyline(std::ostringstream& os, const std::vector<double>& x,
                   const std::vector<double>& y, const Mapper& mx, const Mapper& my,
                   const std::string& color) {
    // split at non-finite samples so gaps stay gaps
    std::size_t i = 0;
    while (i < x.size()) {
        while (i < x.size() && !(std::isfinite(x[i]) && std::isfinite(y[i]))) ++i;
        std::size_t j = i;
        while (j < x.size() && std::isfinite(x[j]) && std::isfinite(y[j])) ++j;
        if (j - i >= 2) {
            os << "<polyline fill=\"none\" stroke=\"" << color
               << "\" stroke-width=\"1.5\" points=\"";
            for (std::size_t k = i; k < j; ++k) {
                if (k > i) os << ' ';
                os << num(mx(x[k])) << ',' << num(my(y[k]));
            }
            os << "\"/>\n";
        }
        i = j;
    }
}

}  // namespace

std::string render_plot(const PlotSpec& spec) {
    if (spec.series.empty()) throw EmptyInput("plot has no series");
    bool any_right = false;
    for (const auto& s : spec.series) {
        if (s.x.size() != s.y.size()) throw DimensionError("series x/y length mismatch");
        if (!s.band_low.empty() &&
            (s.band_low.size() != s.x.size() || s.band_high.size() != s.x.size())) {
            throw DimensionError("series band length mismatch");
        }
        any_right = any_right || s.right_axis;
    }

    Range xr, yr, y2r;
    for (const auto& s : spec.series) {
        Range& yaxis = s.right_axis ? y2r : yr;
        for (std::size_t k = 0; k < s.x.size(); ++k) {
            xr.take(s.x[k]);
            yaxis.take(s.y[k]);
            if (!s.band_low.empty()) {
                yaxis.take(s.band_low[k]);
                yaxis.take(s.band_high[k]);
            }
        }
    }
    xr.pad();
    yr.pad();
    y2r.pad();

    const double left = 64.0;
    const double right = spec.width - (any_right ? 64.0 : 20.0);
    const double top = spec.title.empty() ? 16.0 : 34.0;
    const double bottom = spec.height - 46.0;

    Mapper mx{xr}, my{yr}, my2{y2r};
    mx.fit(left, right);
    my.fit(bottom, top);
    my2.fit(bottom, top);

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\""
       << spec.height << "\" viewBox=\"0 0 " << spec.width << ' ' << spec.height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";

    if (!spec.title.empty()) {
        os << "<text x=\"" << num((left + right) / 2)
           << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(spec.title)
           << "</text>\n";
    }

    for (const double t : ticks(yr, 6)) {
        const double py = my(t);
        os << "<line x1=\"" << num(left) << "\" y1=\"" << num(py) << "\" x2=\"" << num(right)
           << "\" y2=\"" << num(py) << "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
        os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(py + 3)
           << "\" text-anchor=\"end\">" << num(t) << "</text>\n";
    }
    for (const double t : ticks(xr, 8)) {
        const double px = mx(t);
        os << "<line x1=\"" << num(px) << "\" y1=\"" << num(bottom) << "\" x2=\"" << num(px)
           << "\" y2=\"" << num(bottom + 4) << "\" stroke=\"#333\"/>\n";
        os << "<text x=\"" << num(px) << "\" y=\"" << num(bottom + 16)
           << "\" text-anchor=\"middle\">" << num(t) << "</text>\n";
    }
    if (any_right) {
        for (const double t : ticks(y2r, 6)) {
            const double py = my2(t);
            os << "<text x=\"" << num(right + 6) << "\" y=\"" << num(py + 3)
               << "\" text-anchor=\"start\">" << num(t) << "</text>\n";
        }
    }

    // axis frame
    os << "<line x1=\"" << num(left) << "\" y1=\"" << num(top) << "\" x2=\"" << num(left)
       << "\" y2=\"" << num(bottom) << "\" stroke=\"#333\"/>\n";
    os << "<line x1=\"" << num(left) << "\" y1=\"" << num(bottom) << "\" x2=\"" << num(right)
       << "\" y2=\"" << num(bottom) << "\" stroke=\"#333\"/>\n";
    if (any_right) {
        os << "<line x1=\"" << num(right) << "\" y1=\"" << num(top) << "\" x2=\"" << num(right)
           << "\" y2=\"" << num(bottom) << "\" stroke=\"#333\"/>\n";
    }

    if (!spec.x_label.empty()) {
        os << "<text x=\"" << num((left + right) / 2) << "\" y=\"" << num(spec.height - 8)
           << "\" text-anchor=\"middle\" font-size=\"12\">" << xml_escape(spec.x_label)
           << "</text>\n";
    }
    if (!spec.y_label.empty()) {
        os << "<text x=\"14\" y=\"" << num((top + bottom) / 2)
           << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 "
           << num((top + bottom) / 2) << ")\">" << xml_escape(spec.y_label) << "</text>\n";
    }
    if (any_right && !spec.y2_label.empty()) {
        const double x = spec.width - 10.0;
        os << "<text x=\"" << num(x) << "\" y=\"" << num((top + bottom) / 2)
           << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(90 " << num(x) << ' '
           << num((top + bottom) / 2) << ")\">" << xml_escape(spec.y2_label) << "</text>\n";
    }

    int palette_next = 0;
    std::vector<std::string> colors;
    for (const auto& s : spec.series) {
        colors.push_back(s.color.empty() ? kPalette[palette_next++ % kPaletteSize] : s.color);
    }

    for (std::size_t si = 0; si < spec.series.size(); ++si) {
        const auto& s = spec.series[si];
        const Mapper& myy = s.right_axis ? my2 : my;
        if (!s.band_low.empty() && s.x.size() >= 2) {
            os << "<path fill=\"" << colors[si] << "\" fill-opacity=\"0.18\" stroke=\"none\" d=\"";
            for (std::size_t k = 0; k < s.x.size(); ++k) {
                os << (k == 0 ? 'M' : 'L') << num(mx(s.x[k])) << ' ' << num(myy(s.band_high[k]));
            }
            for (std::size_t k = s.x.size(); k-- > 0;) {
                os << 'L' << num(mx(s.x[k])) << ' ' << num(myy(s.band_low[k]));
            }
            os << "Z\"/>\n";
        }
        if (s.line) emit_polyline(os, s.x, s.y, mx, myy, colors[si]);
        if (s.markers || !s.line) {
            for (std::size_t k = 0; k < s.x.size(); ++k) {
                if (!(std::isfinite(s.x[k]) && std::isfinite(s.y[k]))) continue;
                os << "<circle cx=\"" << num(mx(s.x[k])) << "\" cy=\"" << num(myy(s.y[k]))
                   << "\" r=\"2.5\" fill=\"" << colors[si] << "\"/>\n";
            }
        }
    }

    if (spec.legend) {
        const double lx = right - 150.0;
        double ly = top + 10.0;
        for (std::size_t si = 0; si < spec.series.size(); ++si) {
            if (spec.series[si].label.empty()) continue;
            os << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly - 3) << "\" x2=\""
               << num(lx + 18) << "\" y2=\"" << num(ly - 3) << "\" stroke=\"" << colors[si]
               << "\" stroke-width=\"2\"/>\n";
            os << "<text x=\"" << num(lx + 24) << "\" y=\"" << num(ly) << "\">"
               << xml_escape(spec.series[si].label) << "</text>\n";
            ly += 15.0;
        }
    }

    os << "</g>\n</svg>\n";
    return os.str();
}

void write_plot(const std::filesystem::path& path, const PlotSpec& spec) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open " + path.string() + " for writing");
    out << render_plot(spec);
}

}  // namespace mobgp
