#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "patchbench/geometry.hpp"
#include "patchbench/image.hpp"
#include "patchbench/patch.hpp"

namespace patchbench {

/// Pre-sigmoid, pre-NMS scores tagged with the architecture group. Only the
/// fields of the tagged group are populated.
struct RawScores {
    ArchGroup group = ArchGroup::ObjectnessV7;
    std::vector<double> objectness;   ///< ObjectnessV7: one logit per anchor
    std::vector<double> class_logits; ///< ClassMax: candidates x num_classes, row-major
    int num_classes = 0;
    std::vector<double> one2many;     ///< DualHeadV10
    std::vector<double> one2one;      ///< DualHeadV10

    /// Throws InvalidArgument if fields of other groups are set or required
    /// fields are empty.
    void validate() const;
};

/// d(loss)/d(logit), shaped like the RawScores it belongs to.
struct ScoreGrad {
    std::vector<double> objectness;
    std::vector<double> class_logits;
    std::vector<double> one2many;
    std::vector<double> one2one;
};

struct Detection {
    BBox box;
    double score = 0.0;  ///< post-sigmoid
    int category = 0;
};

/// Candidate boxes with the logits detect() converts into scores.
struct Candidates {
    std::vector<BBox> boxes;
    std::vector<double> logits;
    std::vector<int> categories;
};

inline constexpr double kDefaultConfThresh = 0.25;
inline constexpr double kDefaultIouThresh = 0.45;

double sigmoid(double x);

/// Greedy hard NMS. Returns indices into `dets` of the survivors, in
/// descending score order. Boxes of different categories never suppress
/// each other.
std::vector<std::size_t> nms(const std::vector<Detection>& dets, double iou_thresh);

/// Wraps one detector. raw_scores / backward give the differentiable path the
/// optimizer needs; detect gives post-sigmoid, post-NMS boxes for mAP.
class DetectorAdapter {
public:
    virtual ~DetectorAdapter() = default;

    virtual std::string name() const = 0;
    virtual ArchGroup group() const = 0;
    virtual std::string weights_id() const = 0;
    /// Fixed network input (height, width); nullopt accepts any size.
    virtual std::optional<std::pair<int, int>> input_size() const = 0;

    virtual RawScores raw_scores(const Image& image) const = 0;
    /// Vector-Jacobian product: d(loss)/d(image) given d(loss)/d(logits).
    virtual Image backward(const Image& image, const RawScores& scores, const ScoreGrad& grad) const = 0;

    /// Post-sigmoid candidates prior to thresholding and NMS.
    virtual Candidates candidates(const Image& image) const = 0;
    /// False for set-prediction detectors that are NMS-free by design.
    virtual bool uses_nms() const { return true; }

    /// Threshold, NMS, sort by descending score.
    std::vector<Detection> detect(const Image& image, double conf_thresh = kDefaultConfThresh,
                                  double iou_thresh = kDefaultIouThresh) const;

    /// Content hash of the parameters, used to check that training leaves
    /// the model untouched.
    virtual std::size_t parameter_hash() const = 0;

protected:
    void check_input(const Image& image) const;
};

/// Single-channel pattern the toy detector correlates against. The default
/// is upright (1:2) like a pedestrian box.
struct ToyTemplate {
    int width = 16;
    int height = 32;
    int channel = 0;           ///< 0 = R, 1 = G, 2 = B
    int block = 4;             ///< pattern is piecewise constant on block x block cells
    std::uint64_t pattern_seed = 1;

    /// height x width pattern values in [0.1, 0.9].
    Image pattern() const;
};

struct ToyDetectorSpec {
    std::string name = "toy";
    std::string weights_id;  ///< defaults to "toy:<name>"
    ToyTemplate tmpl;
    int stride = 1;
    double gain = 10.0;
    double bias = -5.0;
    /// Per-pixel variance added under the square root, so flat windows score
    /// near zero instead of an arbitrary correlation.
    double variance_floor = 0.01;
    ArchGroup group = ArchGroup::ObjectnessV7;
    /// Second head of the DualHeadV10 toy: logit = gain2 * ncc + bias2.
    double gain2 = 12.0;
    double bias2 = -6.0;
};

/// Differentiable stand-in detector: the logit of each template-sized window is
/// gain * NCC(window projected on the template channel, pattern) + bias, where
/// the window variance is padded by `variance_floor` per pixel.
class ToyDetector final : public DetectorAdapter {
public:
    explicit ToyDetector(ToyDetectorSpec spec);

    std::string name() const override { return spec_.name; }
    ArchGroup group() const override { return spec_.group; }
    std::string weights_id() const override;
    std::optional<std::pair<int, int>> input_size() const override { return std::nullopt; }

    RawScores raw_scores(const Image& image) const override;
    Image backward(const Image& image, const RawScores& scores, const ScoreGrad& grad) const override;
    Candidates candidates(const Image& image) const override;
    std::size_t parameter_hash() const override;

    const ToyDetectorSpec& spec() const { return spec_; }

    /// NCC map, row-major over window positions.
    std::vector<double> correlation(const Image& image, int& rows, int& cols) const;

private:
    ToyDetectorSpec spec_;
    Image pattern_;
    std::vector<double> centered_;  ///< pattern minus its mean
    double centered_norm_ = 0.0;

    void add_window_grad(const Image& image, int row, int col, double dncc, Image& grad) const;
};

std::unique_ptr<DetectorAdapter> toy_detector(const ToyDetectorSpec& spec);

/// Built-in templates: "red", "green", "blue" (channel 0/1/2, distinct seeds).
ToyTemplate builtin_template(const std::string& color);

}  // namespace patchbench
