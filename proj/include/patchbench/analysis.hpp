#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "patchbench/patch.hpp"

namespace patchbench {

struct FeatureVector {
    std::vector<double> values;
    std::string patch_id;
    std::string extractor_id;
};

class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string id() const = 0;
    virtual FeatureVector extract(const Patch& patch) const = 0;
};

/// Stand-in for a CNN: area-resize to `input_side`, a bank of random k x k x 3
/// filters (valid, stride 1) with tanh, global average pooling.
class MockExtractor final : public FeatureExtractor {
public:
    MockExtractor(int dims = 32, int input_side = 32, int kernel = 5, std::uint64_t seed = 0);
    std::string id() const override;
    FeatureVector extract(const Patch& patch) const override;

    int dims() const { return dims_; }
    int input_side() const { return input_side_; }
    int kernel() const { return kernel_; }
    /// Filter bank, dims x (kernel * kernel * 3), (ky, kx, c) minor order.
    const std::vector<double>& filters() const { return filters_; }

private:
    int dims_;
    int input_side_;
    int kernel_;
    std::uint64_t seed_;
    std::vector<double> filters_;
};

/// Runs an ONNX / TensorFlow network (e.g. Inception-v3) through OpenCV DNN
/// and globally average-pools the named layer.
class DnnExtractor final : public FeatureExtractor {
public:
    DnnExtractor(const std::filesystem::path& model, std::string layer, int input_side = 299);
    ~DnnExtractor() override;
    std::string id() const override;
    FeatureVector extract(const Patch& patch) const override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

FeatureVector extract_features(const FeatureExtractor& extractor, const Patch& patch);

struct TsneParams {
    double perplexity = 30.0;
    int iterations = 1000;
    double early_exaggeration = 12.0;
    int exaggeration_iters = 250;
    double learning_rate = 0.0;  ///< <= 0 selects max(n / (4 * early_exaggeration), 50)
    std::uint64_t seed = 0;
};

/// Exact O(n^2) t-SNE with PCA initialization. Inputs are processed in
/// patch_id order so the result does not depend on input order; the output
/// is aligned with the input. Requires n >= 4 and 0 < perplexity < (n - 1) / 3.
std::vector<std::array<double, 2>> tsne_embed(const std::vector<FeatureVector>& features,
                                              const TsneParams& params);

/// Perplexity-calibrated conditional probabilities, row-major n x n.
std::vector<double> tsne_affinities(const std::vector<std::vector<double>>& points, double perplexity);

enum class ColorSpace { RGB, HSV };

using Histogram = std::array<std::uint64_t, 256>;

/// One 256-bin histogram per channel aggregated over all patches.
std::array<Histogram, 3> channel_histograms(const std::vector<Patch>& patches, ColorSpace space);

struct HistogramStats {
    double mean = 0.0;
    double std = 0.0;
    double median = 0.0;
    double skewness = 0.0;  ///< g1
    double kurtosis = 0.0;  ///< excess, g2
    std::uint64_t count = 0;
};

/// Statistics of the bin-index distribution restricted to bins 1..254.
HistogramStats histogram_stats(const Histogram& bins);

struct Hsv {
    double h = 0.0;
    double s = 0.0;
    double v = 0.0;
};

Hsv rgb_to_hsv(double r, double g, double b);
std::array<double, 3> hsv_to_rgb(double h, double s, double v);

}  // namespace patchbench
