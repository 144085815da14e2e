// Minimal SVG rendering: mechanism snapshots (trusses, nodes, ground
// hatches, target crosses) and the two-series fitness comparison plot.
// The viewport is fit to the union bounding box of everything drawn, with a
// 10% margin and one uniform scale, so drawn truss lengths stay a fixed
// multiple of model lengths.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mechsyn/io.hpp"
#include "mechsyn/model.hpp"

namespace mechsyn {

struct MechanismLayer {
    const CoordSet* coords = nullptr;
    std::string stroke = "#1f77b4";
    double stroke_width = 2.0;
    std::string dash;  // e.g. "6,4" for dashed
    std::string label;
};

class SvgCanvas {
public:
    SvgCanvas(double width = 720.0, double height = 540.0) : width_(width), height_(height) {}

    void add_mechanism(const Mechanism& mech, const MechanismLayer& layer) {
        layers_.push_back({&mech, layer});
        for (Eigen::Index s = 0; s < layer.coords->node_count(); ++s) grow(layer.coords->at(s));
    }

    void add_target(const Vec2& p) {
        targets_.push_back(p);
        grow(p);
    }

    std::string render() const {
        const double s = scale();
        std::string svg;
        svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + format_sig9(width_) +
               "\" height=\"" + format_sig9(height_) + "\" viewBox=\"0 0 " + format_sig9(width_) + " " +
               format_sig9(height_) + "\">\n";
        svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

        for (const auto& [mech, layer] : layers_) {
            svg += "<g class=\"mechanism\" stroke=\"" + layer.stroke + "\" stroke-width=\"" +
                   format_sig9(layer.stroke_width) + "\" fill=\"none\"";
            if (!layer.dash.empty()) svg += " stroke-dasharray=\"" + layer.dash + "\"";
            svg += ">\n";
            for (const Truss& t : mech->trusses()) {
                const Vec2 a = map(layer.coords->at(mech->node_slot(t.k)), s);
                const Vec2 b = map(layer.coords->at(mech->node_slot(t.l)), s);
                svg += "  <line class=\"truss\" x1=\"" + format_sig9(a.x()) + "\" y1=\"" +
                       format_sig9(a.y()) + "\" x2=\"" + format_sig9(b.x()) + "\" y2=\"" +
                       format_sig9(b.y()) + "\"/>\n";
            }
            svg += "</g>\n";
            svg += "<g class=\"joints\" fill=\"" + layer.stroke + "\" stroke=\"none\">\n";
            for (int ns = 0; ns < mech->node_count(); ++ns) {
                const Node& n = mech->nodes()[ns];
                const Vec2 q = map(layer.coords->at(ns), s);
                svg += "  <circle cx=\"" + format_sig9(q.x()) + "\" cy=\"" + format_sig9(q.y()) +
                       "\" r=\"3\"/>\n";
                if (n.fixed) svg += ground_hatch(q, layer.stroke);
            }
            svg += "</g>\n";
        }

        svg += "<g class=\"targets\" stroke=\"#d62728\" stroke-width=\"1.5\">\n";
        for (const Vec2& t : targets_) {
            const Vec2 q = map(t, s);
            const double r = 5.0;
            svg += "  <line x1=\"" + format_sig9(q.x() - r) + "\" y1=\"" + format_sig9(q.y() - r) +
                   "\" x2=\"" + format_sig9(q.x() + r) + "\" y2=\"" + format_sig9(q.y() + r) + "\"/>\n";
            svg += "  <line x1=\"" + format_sig9(q.x() - r) + "\" y1=\"" + format_sig9(q.y() + r) +
                   "\" x2=\"" + format_sig9(q.x() + r) + "\" y2=\"" + format_sig9(q.y() - r) + "\"/>\n";
        }
        svg += "</g>\n";

        double ly = 18.0;
        for (const auto& [mech, layer] : layers_) {
            if (layer.label.empty()) continue;
            svg += "<text x=\"10\" y=\"" + format_sig9(ly) + "\" font-size=\"12\" fill=\"" + layer.stroke +
                   "\">" + layer.label + "</text>\n";
            ly += 16.0;
        }
        svg += "</svg>\n";
        return svg;
    }

private:
    void grow(const Vec2& p) {
        lo_ = lo_.cwiseMin(p);
        hi_ = hi_.cwiseMax(p);
    }
    double scale() const {
        const double w = std::max(hi_.x() - lo_.x(), 1e-9);
        const double h = std::max(hi_.y() - lo_.y(), 1e-9);
        // 10% margin on each side of the union bounding box.
        return std::min(width_ / (1.2 * w), height_ / (1.2 * h));
    }
    Vec2 map(const Vec2& p, double s) const {
        const Vec2 c = 0.5 * (lo_ + hi_);
        return Vec2(width_ / 2 + (p.x() - c.x()) * s, height_ / 2 - (p.y() - c.y()) * s);
    }
    static std::string ground_hatch(const Vec2& q, const std::string& stroke) {
        // Small triangle with hatch marks under a fixed joint.
        const double r = 8.0;
        std::string g = "  <path fill=\"none\" stroke=\"" + stroke + "\" d=\"M " + format_sig9(q.x()) +
                        " " + format_sig9(q.y()) + " L " + format_sig9(q.x() - r) + " " +
                        format_sig9(q.y() + r) + " L " + format_sig9(q.x() + r) + " " +
                        format_sig9(q.y() + r) + " Z\"/>\n";
        for (int i = 0; i < 3; ++i) {
            const double x = q.x() - r + (2.0 * r) * (i + 0.5) / 3.0;
            g += "  <line stroke=\"" + stroke + "\" x1=\"" + format_sig9(x) + "\" y1=\"" +
                 format_sig9(q.y() + r) + "\" x2=\"" + format_sig9(x - 4.0) + "\" y2=\"" +
                 format_sig9(q.y() + r + 5.0) + "\"/>\n";
        }
        return g;
    }

    double width_, height_;
    Vec2 lo_ = Vec2::Constant(std::numeric_limits<double>::infinity());
    Vec2 hi_ = Vec2::Constant(-std::numeric_limits<double>::infinity());
    std::vector<std::pair<const Mechanism*, MechanismLayer>> layers_;
    std::vector<Vec2> targets_;
};

/// Two-series fitness-vs-iteration plot; log scale when every value is
/// positive, linear otherwise.
inline std::string fitness_plot_svg(const std::vector<double>& series_a, const std::string& label_a,
                                    const std::vector<double>& series_b, const std::string& label_b) {
    const double w = 720.0, h = 540.0, ml = 70.0, mr = 20.0, mt = 20.0, mb = 50.0;
    bool log_scale = true;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    std::size_t n = std::max(series_a.size(), series_b.size());
    for (const auto* s : {&series_a, &series_b})
        for (double v : *s) {
            if (v <= 0.0) log_scale = false;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (!(lo < hi)) {
        lo -= 1.0;
        hi += 1.0;
    }
    auto ty = [&](double v) {
        const double a = log_scale ? std::log10(v) : v;
        const double alo = log_scale ? std::log10(lo) : lo;
        const double ahi = log_scale ? std::log10(hi) : hi;
        return h - mb - (a - alo) / std::max(ahi - alo, 1e-12) * (h - mt - mb);
    };
    auto tx = [&](std::size_t i) {
        return ml + (n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5) * (w - ml - mr);
    };

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + format_sig9(w) +
                      "\" height=\"" + format_sig9(h) + "\">\n<rect width=\"100%\" height=\"100%\" "
                      "fill=\"white\"/>\n";
    svg += "<line stroke=\"black\" x1=\"" + format_sig9(ml) + "\" y1=\"" + format_sig9(mt) + "\" x2=\"" +
           format_sig9(ml) + "\" y2=\"" + format_sig9(h - mb) + "\"/>\n";
    svg += "<line stroke=\"black\" x1=\"" + format_sig9(ml) + "\" y1=\"" + format_sig9(h - mb) +
           "\" x2=\"" + format_sig9(w - mr) + "\" y2=\"" + format_sig9(h - mb) + "\"/>\n";
    svg += "<text x=\"" + format_sig9(w / 2) + "\" y=\"" + format_sig9(h - 12.0) +
           "\" font-size=\"13\" text-anchor=\"middle\">iteration</text>\n";
    svg += "<text x=\"16\" y=\"" + format_sig9(h / 2) + "\" font-size=\"13\" transform=\"rotate(-90 16 " +
           format_sig9(h / 2) + ")\" text-anchor=\"middle\">fitness" +
           std::string(log_scale ? " (log scale)" : "") + "</text>\n";

    const char* colors[2] = {"#1f77b4", "#d62728"};
    const std::vector<double>* series[2] = {&series_a, &series_b};
    const std::string labels[2] = {label_a, label_b};
    for (int si = 0; si < 2; ++si) {
        if (series[si]->empty()) continue;
        svg += "<polyline fill=\"none\" stroke=\"";
        svg += colors[si];
        svg += "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < series[si]->size(); ++i)
            svg += format_sig9(tx(i)) + "," + format_sig9(ty((*series[si])[i])) + " ";
        svg += "\"/>\n";
        for (std::size_t i = 0; i < series[si]->size(); ++i) {
            const double cx = tx(i), cy = ty((*series[si])[i]);
            if (si == 0)  // squares for the first series
                svg += "<rect fill=\"" + std::string(colors[si]) + "\" x=\"" + format_sig9(cx - 3) +
                       "\" y=\"" + format_sig9(cy - 3) + "\" width=\"6\" height=\"6\"/>\n";
            else  // diamonds for the second
                svg += "<rect fill=\"" + std::string(colors[si]) + "\" x=\"" + format_sig9(cx - 3) +
                       "\" y=\"" + format_sig9(cy - 3) +
                       "\" width=\"6\" height=\"6\" transform=\"rotate(45 " + format_sig9(cx) + " " +
                       format_sig9(cy) + ")\"/>\n";
        }
        svg += "<text x=\"" + format_sig9(w - mr - 160.0) + "\" y=\"" + format_sig9(mt + 18.0 + 18.0 * si) +
               "\" font-size=\"13\" fill=\"" + colors[si] + "\">" + labels[si] + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace mechsyn
