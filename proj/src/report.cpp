#include "patchbench/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "patchbench/error.hpp"

namespace patchbench {

namespace {

std::string escape_xml(const std::string& s) {
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

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string rgb(const std::array<unsigned char, 3>& c) {
    return "rgb(" + std::to_string(c[0]) + "," + std::to_string(c[1]) + "," + std::to_string(c[2]) + ")";
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw RuntimeFailure("cannot write " + path.string());
}

std::filesystem::path sidecar(const std::filesystem::path& svg, const std::string& ext) {
    std::filesystem::path p = svg;
    p.replace_extension(ext);
    return p;
}

const std::array<std::array<unsigned char, 3>, 8> kPalette{{{31, 119, 180},
                                                           {255, 127, 14},
                                                           {44, 160, 44},
                                                           {214, 39, 40},
                                                           {148, 103, 189},
                                                           {140, 86, 75},
                                                           {227, 119, 194},
                                                           {127, 127, 127}}};

}  // namespace

double marker_area(double map_drop, const ScatterStyle& style) {
    const double t = std::clamp(map_drop, 0.0, 1.0);
    return style.min_area + (style.max_area - style.min_area) * t;
}

std::array<unsigned char, 3> heat_color(double t) {
    t = std::isfinite(t) ? std::clamp(t, 0.0, 1.0) : 0.0;
    auto ramp = [&](double lo) {
        return static_cast<unsigned char>(std::lround(255.0 * std::clamp((t - lo) * 3.0, 0.0, 1.0)));
    };
    return {ramp(0.0), ramp(1.0 / 3.0), ramp(2.0 / 3.0)};
}

void render_heatmap(const CompatibilityMatrix& matrix, const std::filesystem::path& svg_path) {
    const auto means = matrix.rowwise_mean.size() == matrix.cells.size() ? matrix.rowwise_mean : rowwise_means(matrix);
    std::vector<std::string> labels{"mean"};
    for (const auto& c : matrix.columns) labels.push_back(c.label);

    const int cw = 72, ch = 28, left = 160, top = 110;
    const int width = left + cw * static_cast<int>(labels.size()) + 20;
    const int height = top + ch * static_cast<int>(matrix.cells.size()) + 20;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
        << "<defs><pattern id=\"hatch\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\">"
        << "<rect width=\"6\" height=\"6\" fill=\"#eee\"/><path d=\"M0,6 L6,0\" stroke=\"#999\"/></pattern></defs>\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t j = 0; j < labels.size(); ++j) {
        const int x = left + cw * static_cast<int>(j) + cw / 2;
        svg << "<text x=\"" << x << "\" y=\"" << top - 6 << "\" transform=\"rotate(-45 " << x << " " << top - 6
            << ")\">" << escape_xml(labels[j]) << "</text>\n";
    }
    for (std::size_t r = 0; r < matrix.cells.size(); ++r) {
        const int y = top + ch * static_cast<int>(r);
        svg << "<text x=\"" << left - 6 << "\" y=\"" << y + ch / 2 + 4 << "\" text-anchor=\"end\">"
            << escape_xml(matrix.eval_labels.at(r)) << "</text>\n";
        for (std::size_t j = 0; j < labels.size(); ++j) {
            const std::optional<double> v = j == 0 ? means[r] : matrix.cells[r][j - 1];
            const int x = left + cw * static_cast<int>(j);
            if (v) {
                const auto color = heat_color(*v);
                const bool dark = color[0] + color[1] + color[2] < 380;
                svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cw << "\" height=\"" << ch
                    << "\" fill=\"" << rgb(color) << "\" stroke=\"white\"/>"
                    << "<text x=\"" << x + cw / 2 << "\" y=\"" << y + ch / 2 + 4 << "\" text-anchor=\"middle\" fill=\""
                    << (dark ? "white" : "black") << "\">" << fixed(*v, 3) << "</text>\n";
            } else {
                svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cw << "\" height=\"" << ch
                    << "\" fill=\"url(#hatch)\" stroke=\"white\"/>\n";
            }
        }
    }
    svg << "</svg>\n";
    write_file(svg_path, svg.str());
    write_file(sidecar(svg_path, ".csv"), to_csv(matrix));
}

void render_tsne(const std::vector<EmbeddingPoint>& points, const std::filesystem::path& svg_path,
                 const ScatterStyle& style) {
    const double size = 520.0, margin = 40.0, legend = 200.0;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (!points.empty()) {
        xmin = xmax = points[0].x;
        ymin = ymax = points[0].y;
        for (const auto& p : points) {
            xmin = std::min(xmin, p.x);
            xmax = std::max(xmax, p.x);
            ymin = std::min(ymin, p.y);
            ymax = std::max(ymax, p.y);
        }
    }
    const double span = std::max({xmax - xmin, ymax - ymin, 1e-12});
    auto sx = [&](double x) { return margin + (x - xmin) / span * (size - 2 * margin); };
    auto sy = [&](double y) { return size - margin - (y - ymin) / span * (size - 2 * margin); };

    std::map<std::string, std::size_t> colors;
    std::map<std::string, int> shapes;
    for (const auto& p : points) {
        colors.emplace(p.source_model, 0);
        shapes.emplace(p.arch_group, 0);
    }
    std::size_t k = 0;
    for (auto& [name, idx] : colors) idx = k++ % kPalette.size();
    int s = 0;
    for (auto& [name, idx] : shapes) idx = s++ % 3;

    auto marker = [&](std::ostringstream& out, double x, double y, double area, int shape, const std::string& fill) {
        if (shape == 0) {
            out << "<circle cx=\"" << fixed(x, 2) << "\" cy=\"" << fixed(y, 2) << "\" r=\""
                << fixed(std::sqrt(area / M_PI), 2) << "\"";
        } else if (shape == 1) {
            const double a = std::sqrt(area);
            out << "<rect x=\"" << fixed(x - a / 2, 2) << "\" y=\"" << fixed(y - a / 2, 2) << "\" width=\""
                << fixed(a, 2) << "\" height=\"" << fixed(a, 2) << "\"";
        } else {
            const double a = std::sqrt(4.0 * area / std::sqrt(3.0));
            const double hgt = a * std::sqrt(3.0) / 2.0;
            out << "<polygon points=\"" << fixed(x, 2) << "," << fixed(y - 2 * hgt / 3, 2) << " "
                << fixed(x - a / 2, 2) << "," << fixed(y + hgt / 3, 2) << " " << fixed(x + a / 2, 2) << ","
                << fixed(y + hgt / 3, 2) << "\"";
        }
        out << " fill=\"" << fill << "\" fill-opacity=\"0.75\" stroke=\"black\" stroke-width=\"0.5\"/>\n";
    };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size + legend << "\" height=\"" << size
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (const auto& p : points) {
        marker(svg, sx(p.x), sy(p.y), marker_area(p.map_drop, style), shapes[p.arch_group],
               rgb(kPalette[colors[p.source_model]]));
    }
    double ly = 30;
    for (const auto& [name, idx] : colors) {
        svg << "<rect x=\"" << size + 10 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\""
            << rgb(kPalette[idx]) << "\"/><text x=\"" << size + 26 << "\" y=\"" << ly << "\">" << escape_xml(name)
            << "</text>\n";
        ly += 16;
    }
    ly += 10;
    for (const auto& [name, shape] : shapes) {
        marker(svg, size + 15, ly - 4, 60.0, shape, "#bbb");
        svg << "<text x=\"" << size + 26 << "\" y=\"" << ly << "\">" << escape_xml(name) << "</text>\n";
        ly += 18;
    }
    svg << "<text x=\"" << size + 10 << "\" y=\"" << ly + 10 << "\">marker area ~ mAP drop</text>\n</svg>\n";
    write_file(svg_path, svg.str());

    nlohmann::json j = nlohmann::json::array();
    for (const auto& p : points) {
        j.push_back({{"x", p.x},
                     {"y", p.y},
                     {"patch_id", p.patch_id},
                     {"source_model", p.source_model},
                     {"arch_group", p.arch_group},
                     {"map_drop", p.map_drop},
                     {"marker_area", marker_area(p.map_drop, style)}});
    }
    write_file(sidecar(svg_path, ".json"), j.dump(2) + "\n");
}

void render_histograms(const HistogramGrid& grid, const std::filesystem::path& svg_path) {
    const std::array<std::string, 3> channels = grid.space == ColorSpace::RGB
                                                    ? std::array<std::string, 3>{"R", "G", "B"}
                                                    : std::array<std::string, 3>{"H", "S", "V"};
    const int pw = 280, ph = 150, gap = 30, left = 40, top = 40;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + 3 * (pw + gap) << "\" height=\""
        << top + 3 * (ph + gap) << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::ostringstream csv;
    csv << "channel,column,bin,count\n";
    for (int col = 0; col < 3; ++col) {
        svg << "<text x=\"" << left + col * (pw + gap) + pw / 2 << "\" y=\"20\" text-anchor=\"middle\">"
            << escape_xml(grid.column_titles[col]) << "</text>\n";
    }
    for (int row = 0; row < 3; ++row) {
        for (int col = 0; col < 3; ++col) {
            const Histogram& h = grid.cells[row][col];
            const int x0 = left + col * (pw + gap), y0 = top + row * (ph + gap);
            std::uint64_t peak = 1;
            for (int b = 1; b <= 254; ++b) peak = std::max(peak, h[b]);
            svg << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << pw << "\" height=\"" << ph
                << "\" fill=\"none\" stroke=\"#444\"/>\n<path d=\"";
            for (int b = 0; b < 256; ++b) {
                // Saturated end bins are drawn clipped so they do not flatten the rest.
                const double frac = std::min(1.0, static_cast<double>(h[b]) / static_cast<double>(peak));
                const double bx = x0 + b * pw / 256.0, bh = frac * (ph - 4);
                if (bh > 0) svg << "M" << fixed(bx, 2) << "," << y0 + ph << "v" << fixed(-bh, 2);
                csv << channels[row] << ',' << csv_field(grid.column_titles[col]) << ',' << b << ',' << h[b] << '\n';
            }
            svg << "\" stroke=\"steelblue\" stroke-width=\"1\"/>\n";
        }
        svg << "<text x=\"12\" y=\"" << top + row * (ph + gap) + ph / 2 << "\">" << channels[row] << "</text>\n";
    }
    svg << "</svg>\n";
    write_file(svg_path, svg.str());
    write_file(sidecar(svg_path, ".csv"), csv.str());
}

std::string render_stats_table(const std::vector<StatsRow>& rows) {
    std::ostringstream out;
    out << "Channel,Source,Mean±Std,Median,Skewness,Kurtosis\n";
    for (const StatsRow& r : rows) {
        out << csv_field(r.channel) << ',' << csv_field(r.source) << ',' << format_double(r.stats.mean) << "±"
            << format_double(r.stats.std) << ',' << format_double(r.stats.median) << ','
            << format_double(r.stats.skewness) << ',' << format_double(r.stats.kurtosis) << '\n';
    }
    return out.str();
}

std::vector<StatsRow> parse_stats_table(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || split_csv_line(line).size() != 6) throw ParseError("bad stats table header");
    auto num = [](const std::string& s) {
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size()) throw ParseError("bad number '" + s + "' in stats table");
            return v;
        } catch (const std::logic_error&) {
            throw ParseError("bad number '" + s + "' in stats table");
        }
    };
    std::vector<StatsRow> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        if (f.size() != 6) throw ParseError("stats row must have 6 fields");
        const std::string pm = "±";
        const auto at = f[2].find(pm);
        if (at == std::string::npos) throw ParseError("Mean±Std field lacks the separator");
        StatsRow r;
        r.channel = f[0];
        r.source = f[1];
        r.stats.mean = num(f[2].substr(0, at));
        r.stats.std = num(f[2].substr(at + pm.size()));
        r.stats.median = num(f[3]);
        r.stats.skewness = num(f[4]);
        r.stats.kurtosis = num(f[5]);
        rows.push_back(r);
    }
    return rows;
}

}  // namespace patchbench
