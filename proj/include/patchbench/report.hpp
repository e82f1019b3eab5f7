#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "patchbench/analysis.hpp"
#include "patchbench/evaluation.hpp"

namespace patchbench {

struct EmbeddingPoint {
    double x = 0.0;
    double y = 0.0;
    std::string patch_id;
    std::string source_model;
    std::string arch_group;
    double map_drop = 0.0;
};

struct ScatterStyle {
    double min_area = 20.0;   ///< marker area (px^2) at drop 0
    double max_area = 400.0;  ///< marker area at drop 1
};

/// Marker area, affine in the drop clamped to [0,1].
double marker_area(double map_drop, const ScatterStyle& style);

/// Brightness-monotone colormap (black -> red -> yellow -> white) on [0,1].
std::array<unsigned char, 3> heat_color(double t);

/// SVG heatmap plus `<stem>.csv`. Columns left to right: row mean, baselines,
/// sources; missing cells are hatched.
void render_heatmap(const CompatibilityMatrix& matrix, const std::filesystem::path& svg_path);

/// SVG scatter plus `<stem>.json` sidecar.
void render_tsne(const std::vector<EmbeddingPoint>& points, const std::filesystem::path& svg_path,
                 const ScatterStyle& style = {});

struct StatsRow {
    std::string channel;
    std::string source;
    HistogramStats stats;
};

/// Rows = channels, columns = {single patch, per-source set, all patches}.
struct HistogramGrid {
    ColorSpace space = ColorSpace::RGB;
    std::array<std::string, 3> column_titles{"Single", "Source", "All"};
    std::array<std::array<Histogram, 3>, 3> cells{};  ///< [row = channel][column]
};

/// SVG 3x3 panel figure plus `<stem>.csv` with the bin counts.
void render_histograms(const HistogramGrid& grid, const std::filesystem::path& svg_path);

/// Channel, Source, Mean±Std, Median, Skewness, Kurtosis.
std::string render_stats_table(const std::vector<StatsRow>& rows);
std::vector<StatsRow> parse_stats_table(const std::string& csv);

}  // namespace patchbench
