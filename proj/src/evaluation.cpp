#include "patchbench/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "patchbench/error.hpp"
#include "patchbench/parallel.hpp"

namespace patchbench {

using nlohmann::json;

double iou(const BBox& a, const BBox& b) {
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double average_precision(const std::vector<ScoredDetection>& dets, const GroundTruth& gt, double iou_thresh) {
    std::size_t npos = 0;
    for (const auto& boxes : gt) npos += boxes.size();
    if (npos == 0) throw UndefinedMetric("average precision is undefined without ground truth");

    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

    std::vector<std::vector<char>> used(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) used[i].assign(gt[i].size(), 0);

    std::vector<double> recall, precision;
    recall.reserve(order.size());
    precision.reserve(order.size());
    std::size_t tp = 0;
    std::size_t seen = 0;
    for (std::size_t idx : order) {
        const ScoredDetection& d = dets[idx];
        ++seen;
        if (d.image < gt.size()) {
            double best = iou_thresh;
            std::ptrdiff_t match = -1;
            for (std::size_t g = 0; g < gt[d.image].size(); ++g) {
                if (used[d.image][g]) continue;
                const double v = iou(d.box, gt[d.image][g]);
                if (v >= best && (match < 0 || v > best)) {
                    best = v;
                    match = static_cast<std::ptrdiff_t>(g);
                }
            }
            if (match >= 0) {
                used[d.image][static_cast<std::size_t>(match)] = 1;
                ++tp;
            }
        }
        recall.push_back(static_cast<double>(tp) / static_cast<double>(npos));
        precision.push_back(static_cast<double>(tp) / static_cast<double>(seen));
    }
    // Precision envelope, then sample at 101 recall points.
    for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double sum = 0.0;
    for (int k = 0; k <= 100; ++k) {
        const double r = k / 100.0;
        const auto it = std::lower_bound(recall.begin(), recall.end(), r);
        if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    return sum / 101.0;
}

std::array<double, 10> coco_iou_thresholds() {
    std::array<double, 10> t{};
    for (int i = 0; i < 10; ++i) t[i] = (50 + 5 * i) / 100.0;
    return t;
}

double coco_map(const std::vector<ScoredDetection>& dets, const GroundTruth& gt) {
    double sum = 0.0;
    for (double t : coco_iou_thresholds()) sum += average_precision(dets, gt, t);
    return sum / 10.0;
}

double map_drop(double map_clean, double map_patched) { return map_clean - map_patched; }

double normalized_map_drop(double map_clean, double map_patched) {
    return map_clean > 0.0 ? (map_clean - map_patched) / map_clean : 0.0;
}

Image apply_patch_to_sample(const Image& image, const std::vector<BBox>& boxes, const Image& patch,
                            double placement_scale) {
    Image out = image;
    for (const BBox& box : boxes) out = embed_patch(out, patch, target_square(box, placement_scale)).image;
    return out;
}

namespace {

std::vector<ScoredDetection> detect_sample(const DetectorAdapter& adapter, const AnnotatedDataset& dataset,
                                           std::size_t i, const Image* patch, const EvalParams& params) {
    Image img = dataset.image(i);
    if (patch) img = apply_patch_to_sample(img, dataset.samples[i].boxes, *patch, params.placement_scale);
    Letterbox lb;
    if (const auto size = adapter.input_size()) img = letterbox(img, size->first, size->second, lb);
    std::vector<ScoredDetection> out;
    for (const Detection& d : adapter.detect(img, params.conf_thresh, params.iou_thresh)) {
        out.push_back({i, lb.identity() ? d.box : lb.to_original(d.box), d.score});
    }
    return out;
}

}  // namespace

MapResult dataset_map(const DetectorAdapter& adapter, const AnnotatedDataset& dataset, const Image* patch,
                      const EvalParams& params) {
    if (params.placement_scale <= 0.0) throw InvalidArgument("placement scale must be positive");
    const std::size_t n = dataset.samples.size();
    std::vector<std::vector<ScoredDetection>> per_image(n);
    parallel_for(n, params.jobs, [&](std::size_t i) { per_image[i] = detect_sample(adapter, dataset, i, patch, params); });

    std::vector<ScoredDetection> dets;
    GroundTruth gt(n);
    for (std::size_t i = 0; i < n; ++i) {
        dets.insert(dets.end(), per_image[i].begin(), per_image[i].end());
        gt[i] = dataset.samples[i].boxes;
    }
    MapResult r;
    r.map = coco_map(dets, gt);
    r.ap50 = average_precision(dets, gt, 0.5);
    return r;
}

namespace {

EvalRecord evaluate_with_clean(const DetectorAdapter& adapter, const AnnotatedDataset& dataset,
                               const std::vector<Patch>& patches, const EvalParams& params,
                               const std::string& patch_set_id, const MapResult& clean) {
    if (patches.empty()) throw InvalidArgument("patch set '" + patch_set_id + "' is empty");
    EvalRecord rec;
    rec.model = adapter.name();
    rec.patch_set_id = patch_set_id;
    rec.dataset_id = dataset.id;
    rec.map_clean = clean.map;
    rec.ap50_clean = clean.ap50;
    double sum_map = 0.0, sum_ap50 = 0.0, sum_drop = 0.0;
    for (const Patch& p : patches) {
        const MapResult r = dataset_map(adapter, dataset, &p.pixels, params);
        sum_map += r.map;
        sum_ap50 += r.ap50;
        const double drop = map_drop(clean.map, r.map);
        sum_drop += drop;
        rec.per_patch_drops.push_back(drop);
        rec.patch_ids.push_back(p.meta.patch_id);
    }
    const double n = static_cast<double>(patches.size());
    rec.map_patched = sum_map / n;
    rec.ap50_patched = sum_ap50 / n;
    rec.map_drop = sum_drop / n;
    rec.normalized_drop = normalized_map_drop(clean.map, rec.map_patched);
    return rec;
}

}  // namespace

EvalRecord evaluate_patch_set(const DetectorAdapter& adapter, const AnnotatedDataset& dataset,
                              const std::vector<Patch>& patches, const EvalParams& params,
                              const std::string& patch_set_id) {
    if (patches.empty()) throw InvalidArgument("patch set '" + patch_set_id + "' is empty");
    const MapResult clean = dataset_map(adapter, dataset, nullptr, params);
    return evaluate_with_clean(adapter, dataset, patches, params, patch_set_id, clean);
}

std::vector<std::pair<double, double>> grayscale_sweep(const DetectorAdapter& adapter,
                                                        const AnnotatedDataset& dataset,
                                                        const std::vector<double>& levels,
                                                        const EvalParams& params, int patch_side) {
    if (levels.empty()) throw InvalidArgument("grayscale sweep needs at least one level");
    for (double l : levels) {
        if (!(l >= 0.0 && l <= 1.0)) throw InvalidArgument("gray level must lie in [0,1]");
    }
    const MapResult clean = dataset_map(adapter, dataset, nullptr, params);
    std::vector<std::pair<double, double>> out;
    for (double l : levels) {
        const Patch p = baseline_patch(PatchKind::Grayscale, l, std::nullopt, patch_side, patch_side);
        out.emplace_back(l, map_drop(clean.map, dataset_map(adapter, dataset, &p.pixels, params).map));
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string gray_label(double level) { return "gray-" + format_double(level); }

std::vector<std::string> CompatibilityMatrix::source_labels() const {
    std::vector<std::string> out;
    for (const auto& c : columns) {
        if (c.kind == ColumnKind::Source) out.push_back(c.label);
    }
    return out;
}

std::vector<std::optional<double>> rowwise_means(const CompatibilityMatrix& matrix) {
    std::vector<std::optional<double>> out;
    for (const auto& row : matrix.cells) {
        double sum = 0.0;
        int n = 0;
        for (std::size_t j = 0; j < matrix.columns.size() && j < row.size(); ++j) {
            if (matrix.columns[j].kind == ColumnKind::Source && row[j]) {
                sum += *row[j];
                ++n;
            }
        }
        out.push_back(n > 0 ? std::optional<double>(sum / n) : std::nullopt);
    }
    return out;
}

CompatibilityMatrix compatibility_matrix(const std::vector<PatchSet>& patch_sets,
                                         const std::vector<Evaluator>& evaluators,
                                         const AnnotatedDataset& dataset, const BaselineConfig& baselines,
                                         const EvalParams& params) {
    CompatibilityMatrix m;
    std::vector<std::vector<Patch>> column_patches;
    if (baselines.noise_seed) {
        m.columns.push_back({"noise", ColumnKind::Noise});
        column_patches.push_back({baseline_patch(PatchKind::UniformNoise, std::nullopt, *baselines.noise_seed,
                                                 baselines.patch_side, baselines.patch_side)});
    }
    for (double level : baselines.gray_levels) {
        m.columns.push_back({gray_label(level), ColumnKind::Gray});
        column_patches.push_back(
            {baseline_patch(PatchKind::Grayscale, level, std::nullopt, baselines.patch_side, baselines.patch_side)});
    }
    std::set<std::string> seen;
    for (const auto& c : m.columns) seen.insert(c.label);
    for (const PatchSet& ps : patch_sets) {
        if (!seen.insert(ps.source).second) throw InvalidArgument("duplicate matrix column '" + ps.source + "'");
        if (ps.patches.empty()) throw InvalidArgument("patch set '" + ps.source + "' is empty");
        m.columns.push_back({ps.source, ColumnKind::Source});
        column_patches.push_back(ps.patches);
    }
    std::set<std::string> names;
    for (const Evaluator& e : evaluators) {
        if (!names.insert(e.name).second) throw InvalidArgument("duplicate evaluator '" + e.name + "'");
        m.eval_labels.push_back(e.name);
    }

    const std::size_t rows = evaluators.size(), cols = m.columns.size();
    std::vector<std::optional<MapResult>> clean(rows);
    std::vector<std::string> row_error(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        if (!evaluators[r].adapter) row_error[r] = evaluators[r].error.empty() ? "not loaded" : evaluators[r].error;
    }
    EvalParams inner = params;
    inner.jobs = 1;
    parallel_for(rows, params.jobs, [&](std::size_t r) {
        if (!evaluators[r].adapter) return;
        try {
            clean[r] = dataset_map(*evaluators[r].adapter, dataset, nullptr, inner);
        } catch (const BackendError& e) {
            row_error[r] = e.what();
        }
    });

    std::vector<std::optional<EvalRecord>> cell_records(rows * cols);
    std::vector<std::string> cell_error(rows * cols);
    parallel_for(rows * cols, params.jobs, [&](std::size_t k) {
        const std::size_t r = k / cols, c = k % cols;
        if (!clean[r]) return;
        try {
            cell_records[k] = evaluate_with_clean(*evaluators[r].adapter, dataset, column_patches[c], inner,
                                                  m.columns[c].label, *clean[r]);
        } catch (const BackendError& e) {
            cell_error[k] = e.what();
        }
    });

    m.cells.assign(rows, std::vector<std::optional<double>>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        if (!row_error[r].empty()) m.warnings.push_back("evaluator '" + evaluators[r].name + "' skipped: " + row_error[r]);
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t k = r * cols + c;
            if (cell_records[k]) {
                m.cells[r][c] = cell_records[k]->map_drop;
                m.records.push_back(std::move(*cell_records[k]));
            } else if (!cell_error[k].empty()) {
                m.warnings.push_back("cell (" + evaluators[r].name + ", " + m.columns[c].label + ") failed: " +
                                     cell_error[k]);
            }
        }
    }
    m.rowwise_mean = rowwise_means(m);
    return m;
}

namespace {

std::string kind_name(ColumnKind k) {
    switch (k) {
        case ColumnKind::Noise: return "noise";
        case ColumnKind::Gray: return "gray";
        case ColumnKind::Source: return "source";
    }
    return "source";
}

ColumnKind kind_from_name(const std::string& s) {
    if (s == "noise") return ColumnKind::Noise;
    if (s == "gray") return ColumnKind::Gray;
    if (s == "source") return ColumnKind::Source;
    throw ParseError("unknown column kind '" + s + "'");
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> number_or_null(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

std::optional<double> parse_cell(const std::string& s) {
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ParseError("bad number '" + s + "' in CSV");
    return v;
}

}  // namespace

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                out.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else if (c != '\r') {
            out.back() += c;
        }
    }
    return out;
}

json to_json(const EvalRecord& r) {
    return {{"model", r.model},
            {"patch_set_id", r.patch_set_id},
            {"dataset_id", r.dataset_id},
            {"map_clean", r.map_clean},
            {"map_patched", r.map_patched},
            {"map_drop", r.map_drop},
            {"normalized_drop", r.normalized_drop},
            {"ap50_clean", r.ap50_clean},
            {"ap50_patched", r.ap50_patched},
            {"per_patch_drops", r.per_patch_drops},
            {"patch_ids", r.patch_ids}};
}

EvalRecord eval_record_from_json(const json& j) {
    try {
        EvalRecord r;
        r.model = j.at("model").get<std::string>();
        r.patch_set_id = j.at("patch_set_id").get<std::string>();
        r.dataset_id = j.at("dataset_id").get<std::string>();
        r.map_clean = j.at("map_clean").get<double>();
        r.map_patched = j.at("map_patched").get<double>();
        r.map_drop = j.at("map_drop").get<double>();
        r.normalized_drop = j.value("normalized_drop", 0.0);
        r.ap50_clean = j.value("ap50_clean", 0.0);
        r.ap50_patched = j.value("ap50_patched", 0.0);
        r.per_patch_drops = j.at("per_patch_drops").get<std::vector<double>>();
        r.patch_ids = j.value("patch_ids", std::vector<std::string>{});
        return r;
    } catch (const json::exception& e) {
        throw ParseError(std::string("eval record: ") + e.what());
    }
}

json to_json(const CompatibilityMatrix& m) {
    json cols = json::array();
    for (const auto& c : m.columns) cols.push_back({{"label", c.label}, {"kind", kind_name(c.kind)}});
    json cells = json::array();
    for (const auto& row : m.cells) {
        json jr = json::array();
        for (const auto& v : row) jr.push_back(optional_number(v));
        cells.push_back(jr);
    }
    json means = json::array();
    for (const auto& v : m.rowwise_mean) means.push_back(optional_number(v));
    json records = json::array();
    for (const auto& r : m.records) records.push_back(to_json(r));
    return {{"evaluators", m.eval_labels}, {"columns", cols},   {"cells", cells},
            {"rowwise_mean", means},       {"records", records}, {"warnings", m.warnings}};
}

CompatibilityMatrix matrix_from_json(const json& j) {
    try {
        CompatibilityMatrix m;
        m.eval_labels = j.at("evaluators").get<std::vector<std::string>>();
        for (const auto& c : j.at("columns")) {
            m.columns.push_back({c.at("label").get<std::string>(), kind_from_name(c.at("kind").get<std::string>())});
        }
        for (const auto& row : j.at("cells")) {
            std::vector<std::optional<double>> r;
            for (const auto& v : row) r.push_back(number_or_null(v));
            if (r.size() != m.columns.size()) throw ParseError("matrix row has the wrong number of cells");
            m.cells.push_back(std::move(r));
        }
        if (m.cells.size() != m.eval_labels.size()) throw ParseError("matrix has the wrong number of rows");
        for (const auto& v : j.value("rowwise_mean", json::array())) m.rowwise_mean.push_back(number_or_null(v));
        if (m.rowwise_mean.empty()) m.rowwise_mean = rowwise_means(m);
        for (const auto& r : j.value("records", json::array())) m.records.push_back(eval_record_from_json(r));
        m.warnings = j.value("warnings", std::vector<std::string>{});
        return m;
    } catch (const json::exception& e) {
        throw ParseError(std::string("matrix: ") + e.what());
    }
}

std::string to_csv(const CompatibilityMatrix& m) {
    std::ostringstream out;
    out << "evaluator,mean";
    for (const auto& c : m.columns) out << ',' << csv_field(c.label);
    out << '\n';
    const auto means = m.rowwise_mean.size() == m.cells.size() ? m.rowwise_mean : rowwise_means(m);
    for (std::size_t r = 0; r < m.cells.size(); ++r) {
        out << csv_field(m.eval_labels[r]) << ',' << (means[r] ? format_double(*means[r]) : "");
        for (const auto& v : m.cells[r]) out << ',' << (v ? format_double(*v) : "");
        out << '\n';
    }
    return out.str();
}

CompatibilityMatrix matrix_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty matrix CSV");
    const auto header = split_csv_line(line);
    if (header.size() < 2 || header[0] != "evaluator" || header[1] != "mean") {
        throw ParseError("matrix CSV header must start with 'evaluator,mean'");
    }
    CompatibilityMatrix m;
    for (std::size_t i = 2; i < header.size(); ++i) {
        const std::string& label = header[i];
        const ColumnKind kind = label == "noise"                ? ColumnKind::Noise
                                : label.rfind("gray-", 0) == 0 ? ColumnKind::Gray
                                                                : ColumnKind::Source;
        m.columns.push_back({label, kind});
    }
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size()) throw ParseError("matrix CSV row has the wrong number of fields");
        m.eval_labels.push_back(fields[0]);
        m.rowwise_mean.push_back(parse_cell(fields[1]));
        std::vector<std::optional<double>> row;
        for (std::size_t i = 2; i < fields.size(); ++i) row.push_back(parse_cell(fields[i]));
        m.cells.push_back(std::move(row));
    }
    return m;
}

}  // namespace patchbench
