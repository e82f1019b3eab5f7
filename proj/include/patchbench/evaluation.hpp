#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchbench/detectors.hpp"
#include "patchbench/evaldata.hpp"
#include "patchbench/geometry.hpp"
#include "patchbench/patch.hpp"

namespace patchbench {

double iou(const BBox& a, const BBox& b);

/// A detection tagged with the index of the image it belongs to.
struct ScoredDetection {
    std::size_t image = 0;
    BBox box;
    double score = 0.0;
};

using GroundTruth = std::vector<std::vector<BBox>>;  ///< boxes per image

/// COCO-style AP at one IoU threshold: detections sorted by descending score
/// (stable), each matched greedily to the unmatched ground truth of highest
/// IoU >= thresh, then 101-point interpolated precision. Throws
/// UndefinedMetric when there is no ground truth.
double average_precision(const std::vector<ScoredDetection>& dets, const GroundTruth& gt, double iou_thresh);

/// IoU thresholds 0.50, 0.55, ..., 0.95.
std::array<double, 10> coco_iou_thresholds();

/// Mean AP over the ten COCO thresholds.
double coco_map(const std::vector<ScoredDetection>& dets, const GroundTruth& gt);

double map_drop(double map_clean, double map_patched);
/// Drop divided by clean mAP (0 when clean mAP is 0).
double normalized_map_drop(double map_clean, double map_patched);

struct EvalParams {
    double conf_thresh = kDefaultConfThresh;
    double iou_thresh = kDefaultIouThresh;
    double placement_scale = 0.75;
    int jobs = 1;
};

struct MapResult {
    double map = 0.0;   ///< COCO mAP@[.50:.95]
    double ap50 = 0.0;
};

/// mAP of `adapter` on `dataset`, optionally with `patch` pasted into every
/// ground-truth box (no augmentation).
MapResult dataset_map(const DetectorAdapter& adapter, const AnnotatedDataset& dataset, const Image* patch,
                      const EvalParams& params);

/// Pastes `patch` into every box of `sample` at the evaluation placement.
Image apply_patch_to_sample(const Image& image, const std::vector<BBox>& boxes, const Image& patch,
                            double placement_scale);

struct EvalRecord {
    std::string model;
    std::string patch_set_id;
    std::string dataset_id;
    double map_clean = 0.0;
    double map_patched = 0.0;  ///< mean over patches
    double map_drop = 0.0;     ///< mean of per_patch_drops
    double normalized_drop = 0.0;
    double ap50_clean = 0.0;
    double ap50_patched = 0.0;
    std::vector<double> per_patch_drops;
    std::vector<std::string> patch_ids;
};

nlohmann::json to_json(const EvalRecord& record);
EvalRecord eval_record_from_json(const nlohmann::json& j);

EvalRecord evaluate_patch_set(const DetectorAdapter& adapter, const AnnotatedDataset& dataset,
                              const std::vector<Patch>& patches, const EvalParams& params,
                              const std::string& patch_set_id);

/// (level, drop) per requested level, duplicates kept.
std::vector<std::pair<double, double>> grayscale_sweep(const DetectorAdapter& adapter,
                                                        const AnnotatedDataset& dataset,
                                                        const std::vector<double>& levels,
                                                        const EvalParams& params, int patch_side = 64);

enum class ColumnKind { Noise, Gray, Source };

struct MatrixColumn {
    std::string label;
    ColumnKind kind = ColumnKind::Source;
};

/// Evaluator x column grid of mean mAP drops. Missing cells are nullopt.
struct CompatibilityMatrix {
    std::vector<std::string> eval_labels;
    std::vector<MatrixColumn> columns;  ///< noise, gray levels, then sources
    std::vector<std::vector<std::optional<double>>> cells;
    std::vector<std::optional<double>> rowwise_mean;  ///< over Source columns only
    std::vector<EvalRecord> records;
    std::vector<std::string> warnings;

    std::vector<std::string> source_labels() const;
};

struct PatchSet {
    std::string source;
    std::vector<Patch> patches;
};

struct Evaluator {
    std::string name;
    const DetectorAdapter* adapter = nullptr;  ///< null when it failed to load
    std::string error;
};

struct BaselineConfig {
    std::optional<std::int64_t> noise_seed = 0;
    std::vector<double> gray_levels{0.5};
    int patch_side = 64;
};

std::string gray_label(double level);

CompatibilityMatrix compatibility_matrix(const std::vector<PatchSet>& patch_sets,
                                         const std::vector<Evaluator>& evaluators,
                                         const AnnotatedDataset& dataset, const BaselineConfig& baselines,
                                         const EvalParams& params);

/// Row mean over Source columns, skipping missing cells.
std::vector<std::optional<double>> rowwise_means(const CompatibilityMatrix& matrix);

nlohmann::json to_json(const CompatibilityMatrix& matrix);
CompatibilityMatrix matrix_from_json(const nlohmann::json& j);
/// `evaluator,mean,<columns...>` with empty fields for missing cells.
std::string to_csv(const CompatibilityMatrix& matrix);
CompatibilityMatrix matrix_from_csv(const std::string& text);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

/// One CSV record with RFC 4180 quoting; a trailing CR is dropped.
std::vector<std::string> split_csv_line(const std::string& line);
/// Quotes a field when it contains a comma, quote or newline.
std::string csv_field(const std::string& text);

}  // namespace patchbench
