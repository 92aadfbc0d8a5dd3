#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "lcfm/errors.hpp"
#include "lcfm/ssl.hpp"

namespace lcfm {

/// Atomic file write: temp in the same directory, then rename, so an
/// interrupted run never leaves a partial artifact.
inline void atomic_write(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) raise(ErrorCode::IoError, "cannot open " + tmp + " for writing");
        f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!f) raise(ErrorCode::IoError, "short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

namespace detail {

inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string fmt_g6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace detail

/// History CSV: epoch,train_total,val_total,recon,mask,forecast,kl,lr with
/// the classification columns appended for fine-tuning runs.
inline std::string history_csv(const std::vector<EpochRecord>& history, bool with_class) {
    std::string out = "epoch,train_total,val_total,recon,mask,forecast,kl,lr";
    if (with_class) out += ",class_loss,val_class_loss,val_accuracy";
    out += '\n';
    for (const auto& r : history) {
        out += std::to_string(r.epoch);
        for (double v : {r.train.total, r.val.total, r.train.recon, r.train.mask, r.train.forecast,
                         r.train.kl, r.lr})
            out += ',' + detail::fmt_g17(v);
        if (with_class)
            for (double v : {r.train_class, r.val_class, r.val_accuracy}) out += ',' + detail::fmt_g17(v);
        out += '\n';
    }
    return out;
}

struct Series {
    std::string name;
    std::vector<double> y;
};

/// Minimal deterministic SVG line plot; series share the x axis (index).
inline std::string svg_line_plot(const std::vector<Series>& series, const std::string& title,
                                 int width = 860, int height = 430) {
    static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                     "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    const int ml = 64, mr = 160, mt = 36, mb = 40;
    const double pw = width - ml - mr, ph = height - mt - mb;

    double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
    std::size_t n = 0;
    for (const auto& s : series) {
        n = std::max(n, s.y.size());
        for (double v : s.y) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    }
    if (n == 0 || !std::isfinite(ymin)) {
        ymin = 0.0;
        ymax = 1.0;
        n = 1;
    }
    if (ymax == ymin) ymax = ymin + 1.0;
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;

    auto xpos = [&](std::size_t i) {
        return ml + (n <= 1 ? 0.0 : pw * static_cast<double>(i) / static_cast<double>(n - 1));
    };
    auto ypos = [&](double v) { return mt + ph * (1.0 - (v - ymin) / (ymax - ymin)); };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
           std::to_string(height) + "\" viewBox=\"0 0 " + std::to_string(width) + " " +
           std::to_string(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + std::to_string(ml) + "\" y=\"22\" font-family=\"monospace\" font-size=\"14\">" +
           title + "</text>\n";
    // frame and y gridlines
    svg += "<rect x=\"" + std::to_string(ml) + "\" y=\"" + std::to_string(mt) + "\" width=\"" +
           detail::fmt_g6(pw) + "\" height=\"" + detail::fmt_g6(ph) +
           "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int g = 0; g <= 4; ++g) {
        const double v = ymin + (ymax - ymin) * g / 4.0;
        const double y = ypos(v);
        svg += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + detail::fmt_g6(y) + "\" x2=\"" +
               detail::fmt_g6(ml + pw) + "\" y2=\"" + detail::fmt_g6(y) +
               "\" stroke=\"#ddd\" stroke-width=\"1\"/>\n";
        svg += "<text x=\"4\" y=\"" + detail::fmt_g6(y + 4) + "\" font-family=\"monospace\" font-size=\"11\">" +
               detail::fmt_g6(v) + "</text>\n";
    }
    svg += "<text x=\"" + detail::fmt_g6(ml + pw / 2) + "\" y=\"" + std::to_string(height - 8) +
           "\" font-family=\"monospace\" font-size=\"11\">epoch</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        if (s.y.empty()) continue;
        std::string points;
        for (std::size_t i = 0; i < s.y.size(); ++i) {
            points += (i ? " " : "");
            points += detail::fmt_g6(xpos(i)) + "," + detail::fmt_g6(ypos(s.y[i]));
        }
        const char* color = kPalette[si % 8];
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" +
               points + "\"/>\n";
        const double ly = mt + 16.0 * static_cast<double>(si) + 12.0;
        svg += "<line x1=\"" + detail::fmt_g6(ml + pw + 8) + "\" y1=\"" + detail::fmt_g6(ly - 4) + "\" x2=\"" +
               detail::fmt_g6(ml + pw + 28) + "\" y2=\"" + detail::fmt_g6(ly - 4) + "\" stroke=\"" + color +
               "\" stroke-width=\"2\"/>\n";
        svg += "<text x=\"" + detail::fmt_g6(ml + pw + 32) + "\" y=\"" + detail::fmt_g6(ly) +
               "\" font-family=\"monospace\" font-size=\"11\">" + s.name + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

/// Parses a history CSV back into named columns (header-driven).
inline std::pair<std::vector<std::string>, std::vector<std::vector<double>>> read_csv_columns(
    std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) raise(ErrorCode::EmptyFile, "empty CSV");
    std::vector<std::string> names;
    {
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            names.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
    }
    std::vector<std::vector<double>> cols(names.size());
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::size_t start = 0, c = 0;
        while (c < names.size()) {
            const auto comma = line.find(',', start);
            const std::string cell = line.substr(start, comma - start);
            try {
                cols[c].push_back(std::stod(cell));
            } catch (...) {
                raise(ErrorCode::IoError, "line " + std::to_string(lineno) + ": bad number " + cell);
            }
            ++c;
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (c != names.size())
            raise(ErrorCode::ShapeMismatch, "line " + std::to_string(lineno) + ": column count mismatch");
    }
    return {std::move(names), std::move(cols)};
}

}  // namespace lcfm
