#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "patchbench/image.hpp"

namespace patchbench {

/// Loss taxonomy shared by all detectors of one family.
enum class ArchGroup {
    ObjectnessV7,  ///< max objectness logit over anchors
    ClassMax,      ///< max class logit (v8 / v9 / NAS / RT-DETR)
    DualHeadV10,   ///< max one2many + max one2one
};

std::string to_string(ArchGroup group);
ArchGroup arch_group_from_string(const std::string& text);

enum class PatchKind { Optimized, UniformNoise, Grayscale };

std::string to_string(PatchKind kind);
PatchKind patch_kind_from_string(const std::string& text);

struct LossWeights {
    double lambda_s = 0.1;
    double lambda_v = 1.0;
    double lambda_m = 1.0;

    /// Throws InvalidArgument on a negative weight, or on an all-zero set
    /// unless `allow_all_zero`.
    void validate(bool allow_all_zero = false) const;

    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct PatchMeta {
    std::string patch_id;
    std::string source_model = "baseline";
    std::optional<ArchGroup> arch_group;  ///< empty for baselines
    PatchKind kind = PatchKind::Optimized;
    std::optional<double> gray_level;
    std::int64_t seed = 0;
    int epochs_trained = 0;
    LossWeights loss_weights;
    std::string created_at;  ///< ISO-8601 UTC

    /// Checks the kind/gray_level/source_model coupling.
    void validate() const;

    friend bool operator==(const PatchMeta&, const PatchMeta&) = default;
};

/// An adversarial (or baseline) patch. Pixel values are always representable
/// as float32 so that the binary container round-trips them exactly.
struct Patch {
    Image pixels;
    PatchMeta meta;

    int height() const { return pixels.height(); }
    int width() const { return pixels.width(); }
};

inline constexpr int kMinPatchSide = 8;
inline constexpr int kDefaultPatchSide = 256;

/// Uniform noise on [0,1], deterministic in `seed`.
Patch init_patch(std::int64_t seed, int height = kDefaultPatchSide, int width = kDefaultPatchSide);

/// Evaluation baselines: constant gray or uniform noise.
Patch baseline_patch(PatchKind kind, std::optional<double> level, std::optional<std::int64_t> seed,
                     int height = kDefaultPatchSide, int width = kDefaultPatchSide);

/// Clamps to [0,1] and rounds every value to float32.
Image to_patch_range(const Image& values);

/// Writes `<stem>.patch.bin`, `<stem>.patch.json` and `<stem>.png` where
/// `stem` is `path` with any `.patch.bin` suffix removed.
void save_patch(const Patch& patch, const std::filesystem::path& path);

/// Accepts the stem or the `.patch.bin` path.
Patch load_patch(const std::filesystem::path& path);

/// 8-bit PNG preview (round(v * 255)).
void export_png(const Patch& patch, const std::filesystem::path& path);

/// Current UTC time formatted as ISO-8601.
std::string utc_timestamp();

}  // namespace patchbench
