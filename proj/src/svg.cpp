#include "saltseg/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace saltseg {

namespace {

struct Panel {
    const char* label;
    const char* color;
    std::vector<double> values;
};

std::string fnum(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace

void write_curves_svg(const std::filesystem::path& path, const std::vector<EpochRecord>& history,
                      const std::string& title) {
    const int width = 880, panel_h = 180, margin = 56, gap = 34;
    std::vector<Panel> panels(3);
    panels[0] = {"learning rate", "#d62728", {}};
    panels[1] = {"train loss", "#1f77b4", {}};
    panels[2] = {"validation IoU", "#2ca02c", {}};
    for (const auto& r : history) {
        panels[0].values.push_back(r.lr);
        panels[1].values.push_back(r.train_loss);
        panels[2].values.push_back(r.val_iou);
    }

    const int height = margin + 3 * panel_h + 2 * gap + 30;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << margin << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">" << title
       << "</text>\n";

    const std::size_t n = history.size();
    for (std::size_t p = 0; p < panels.size(); ++p) {
        const int top = margin + static_cast<int>(p) * (panel_h + gap);
        const int left = margin, right = width - 24;
        const int bottom = top + panel_h;
        const auto& panel = panels[p];

        double lo = 0.0, hi = 1.0;
        if (!panel.values.empty()) {
            lo = *std::min_element(panel.values.begin(), panel.values.end());
            hi = *std::max_element(panel.values.begin(), panel.values.end());
            if (hi - lo < 1e-12) {
                hi = lo + 1.0;
            }
        }

        os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << (right - left)
           << "\" height=\"" << panel_h << "\" fill=\"none\" stroke=\"#888\"/>\n";
        os << "<text x=\"" << left << "\" y=\"" << (top - 6)
           << "\" font-family=\"sans-serif\" font-size=\"12\">" << panel.label << "</text>\n";
        os << "<text x=\"" << (left - 50) << "\" y=\"" << (top + 12)
           << "\" font-family=\"sans-serif\" font-size=\"10\">" << fnum(hi) << "</text>\n";
        os << "<text x=\"" << (left - 50) << "\" y=\"" << bottom
           << "\" font-family=\"sans-serif\" font-size=\"10\">" << fnum(lo) << "</text>\n";

        if (n >= 1) {
            os << "<polyline fill=\"none\" stroke=\"" << panel.color << "\" stroke-width=\"1.5\" points=\"";
            for (std::size_t i = 0; i < n; ++i) {
                const double fx = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
                const double fy = (panel.values[i] - lo) / (hi - lo);
                const double x = left + fx * (right - left);
                const double y = bottom - fy * panel_h;
                os << fnum(x) << "," << fnum(y) << " ";
            }
            os << "\"/>\n";
        }
        os << "<text x=\"" << (right - 60) << "\" y=\"" << (bottom + 14)
           << "\" font-family=\"sans-serif\" font-size=\"10\">epoch " << (n == 0 ? 0 : n - 1)
           << "</text>\n";
    }
    os << "</svg>\n";
    if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace saltseg
