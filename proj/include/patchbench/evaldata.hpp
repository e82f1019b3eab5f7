#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "patchbench/detectors.hpp"
#include "patchbench/geometry.hpp"
#include "patchbench/image.hpp"

namespace patchbench {

struct Sample {
    std::string image_path;  ///< empty for in-memory samples
    int width = 0;
    int height = 0;
    std::vector<BBox> boxes;
    std::shared_ptr<const Image> pixels;  ///< set for synthetic data
};

/// Images with ground-truth boxes of one target category.
struct AnnotatedDataset {
    std::string id;
    std::string category = "person";
    std::vector<Sample> samples;
    std::vector<std::string> warnings;

    std::size_t box_count() const;
    /// Loads (or returns) the RGB pixels of sample i.
    Image image(std::size_t i) const;
};

enum class InriaSplit { Train, Test };

/// INRIA Person layout: `<root>/<Split>/annotations/*.txt` in the PASCAL 1.00
/// text format, image paths relative to `root`.
AnnotatedDataset load_inria(const std::filesystem::path& root, InriaSplit split);

/// COCO detection JSON, keeping only images with at least one box of
/// `category_name`.
AnnotatedDataset load_coco_subset(const std::filesystem::path& ann_json,
                                  const std::filesystem::path& images_dir,
                                  const std::string& category_name);

/// Normalized manifest: JSON array of {image, width, height, boxes: [[x,y,w,h]...]}.
/// Relative image paths resolve against the manifest's directory.
AnnotatedDataset load_manifest(const std::filesystem::path& path);
void save_manifest(const AnnotatedDataset& dataset, const std::filesystem::path& path);

struct SyntheticSpec {
    int count = 32;
    int width = 64;
    int height = 64;
    /// Each object carries every template's pattern in that template's channel.
    std::vector<ToyTemplate> templates{builtin_template("red")};
    double noise_sigma = 0.03;
    /// Object contrast is drawn uniformly from this range per image.
    double contrast_lo = 0.2;
    double contrast_hi = 1.0;
};

/// Smooth random backgrounds with one template object per image at a random
/// integer position; the box is the exact object footprint.
AnnotatedDataset synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed);

/// Reads a `{"kind": "synthetic", ...}` description.
SyntheticSpec synthetic_spec_from_file(const std::filesystem::path& path, std::uint64_t& seed);

/// Dispatches on content: synthetic description, COCO JSON (needs
/// `images_dir`), normalized manifest, or an INRIA root directory.
AnnotatedDataset load_dataset(const std::filesystem::path& path, const std::string& split = "test",
                              const std::filesystem::path& images_dir = {},
                              const std::string& category = "person");

}  // namespace patchbench
