#include "patchbench/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "patchbench/error.hpp"
#include "patchbench/evaluation.hpp"

namespace patchbench {

namespace {


}  // namespace

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void RawScores::validate() const {
    const bool obj = !objectness.empty();
    const bool cls = !class_logits.empty();
    const bool dual = !one2many.empty() || !one2one.empty();
    switch (group) {
        case ArchGroup::ObjectnessV7:
            if (!obj || cls || dual) throw InvalidArgument("OBJECTNESS_V7 scores carry objectness logits only");
            break;
        case ArchGroup::ClassMax:
            if (!cls || obj || dual) throw InvalidArgument("CLASSMAX scores carry class logits only");
            if (num_classes <= 0 || class_logits.size() % num_classes != 0) {
                throw InvalidArgument("class logits are not a candidates x classes matrix");
            }
            break;
        case ArchGroup::DualHeadV10:
            if (one2many.empty() || one2one.empty() || obj || cls) {
                throw InvalidArgument("DUALHEAD_V10 scores carry both heads only");
            }
            break;
    }
}

std::vector<std::size_t> nms(const std::vector<Detection>& dets, double iou_thresh) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    std::vector<std::size_t> kept;
    for (std::size_t i : order) {
        bool keep = true;
        for (std::size_t k : kept) {
            if (dets[k].category == dets[i].category && iou(dets[k].box, dets[i].box) > iou_thresh) {
                keep = false;
                break;
            }
        }
        if (keep) kept.push_back(i);
    }
    return kept;
}

void DetectorAdapter::check_input(const Image& image) const {
    if (image.channels() != 3) {
        throw InvalidArgument(name() + ": expected an RGB image");
    }
    if (auto size = input_size()) {
        if (image.height() != size->first || image.width() != size->second) {
            throw InvalidArgument(name() + ": image is " + std::to_string(image.height()) + "x" +
                                  std::to_string(image.width()) + ", adapter expects " +
                                  std::to_string(size->first) + "x" + std::to_string(size->second));
        }
    }
}

std::vector<Detection> DetectorAdapter::detect(const Image& image, double conf_thresh, double iou_thresh) const {
    if (!(conf_thresh > 0.0 && conf_thresh < 1.0) || !(iou_thresh > 0.0 && iou_thresh < 1.0)) {
        throw InvalidArgument("confidence and IoU thresholds must lie in (0, 1)");
    }
    const Candidates cand = candidates(image);
    std::vector<Detection> dets;
    for (std::size_t i = 0; i < cand.logits.size(); ++i) {
        const double score = sigmoid(cand.logits[i]);
        if (score >= conf_thresh) {
            dets.push_back({cand.boxes[i], score, cand.categories.empty() ? 0 : cand.categories[i]});
        }
    }
    std::vector<Detection> out;
    if (uses_nms()) {
        for (std::size_t i : nms(dets, iou_thresh)) out.push_back(dets[i]);
    } else {
        out = std::move(dets);
        std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    }
    return out;
}

// ---------------------------------------------------------------------------

Image ToyTemplate::pattern() const {
    if (width < 2 || height < 2 || block < 1 || channel < 0 || channel > 2) {
        throw InvalidArgument("toy template needs sides >= 2, block >= 1 and channel in {0,1,2}");
    }
    const int cells_x = (width + block - 1) / block;
    const int cells_y = (height + block - 1) / block;
    std::mt19937_64 rng(pattern_seed);
    std::uniform_real_distribution<double> value(0.1, 0.9);
    std::vector<double> cell(static_cast<std::size_t>(cells_x) * cells_y);
    for (double& v : cell) v = value(rng);
    Image out(height, width, 1);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) out.at(y, x) = cell[(y / block) * cells_x + x / block];
    return out;
}

ToyTemplate builtin_template(const std::string& color) {
    ToyTemplate t;
    if (color == "red") {
        t.channel = 0;
        t.pattern_seed = 101;
    } else if (color == "green") {
        t.channel = 1;
        t.pattern_seed = 202;
    } else if (color == "blue") {
        t.channel = 2;
        t.pattern_seed = 303;
    } else {
        throw InvalidArgument("unknown built-in template '" + color + "' (red, green, blue)");
    }
    return t;
}

ToyDetector::ToyDetector(ToyDetectorSpec spec) : spec_(std::move(spec)) {
    if (spec_.stride < 1) throw InvalidArgument("toy detector stride must be >= 1");
    if (!(spec_.variance_floor > 0.0)) throw InvalidArgument("toy detector variance floor must be positive");
    pattern_ = spec_.tmpl.pattern();
    const auto values = pattern_.values();
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    centered_.resize(values.size());
    double ss = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        centered_[i] = values[i] - mean;
        ss += centered_[i] * centered_[i];
    }
    centered_norm_ = std::sqrt(ss);
    if (centered_norm_ == 0.0) throw InvalidArgument("toy template pattern is constant");
    if (spec_.weights_id.empty()) spec_.weights_id = "toy:" + spec_.name;
}

std::string ToyDetector::weights_id() const { return spec_.weights_id; }

std::vector<double> ToyDetector::correlation(const Image& image, int& rows, int& cols) const {
    check_input(image);
    const int kh = spec_.tmpl.height, kw = spec_.tmpl.width;
    if (kh > image.height() || kw > image.width()) {
        throw InvalidArgument(name() + ": template " + std::to_string(kw) + "x" + std::to_string(kh) +
                              " exceeds the input");
    }
    const int stride = spec_.stride;
    const int ch = spec_.tmpl.channel;
    rows = (image.height() - kh) / stride + 1;
    cols = (image.width() - kw) / stride + 1;
    const double npx = static_cast<double>(kh) * kw;
    const double floor = npx * spec_.variance_floor;
    std::vector<double> ncc(static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const int y0 = r * stride, x0 = c * stride;
            double sum = 0.0, num = 0.0;
            for (int dy = 0; dy < kh; ++dy) {
                const double* t = &centered_[static_cast<std::size_t>(dy) * kw];
                for (int dx = 0; dx < kw; ++dx) {
                    const double v = image.at(y0 + dy, x0 + dx, ch);
                    sum += v;
                    num += v * t[dx];
                }
            }
            const double mean = sum / npx;
            double ss = 0.0;
            for (int dy = 0; dy < kh; ++dy) {
                for (int dx = 0; dx < kw; ++dx) {
                    const double d = image.at(y0 + dy, x0 + dx, ch) - mean;
                    ss += d * d;
                }
            }
            ncc[static_cast<std::size_t>(r) * cols + c] = num / (centered_norm_ * std::sqrt(ss + floor));
        }
    }
    return ncc;
}

RawScores ToyDetector::raw_scores(const Image& image) const {
    int rows = 0, cols = 0;
    const std::vector<double> ncc = correlation(image, rows, cols);
    RawScores s;
    s.group = spec_.group;
    std::vector<double> logits(ncc.size());
    for (std::size_t i = 0; i < ncc.size(); ++i) logits[i] = spec_.gain * ncc[i] + spec_.bias;
    switch (spec_.group) {
        case ArchGroup::ObjectnessV7: s.objectness = std::move(logits); break;
        case ArchGroup::ClassMax:
            s.class_logits = std::move(logits);
            s.num_classes = 1;
            break;
        case ArchGroup::DualHeadV10:
            s.one2many = std::move(logits);
            s.one2one.resize(ncc.size());
            for (std::size_t i = 0; i < ncc.size(); ++i) s.one2one[i] = spec_.gain2 * ncc[i] + spec_.bias2;
            break;
    }
    return s;
}

void ToyDetector::add_window_grad(const Image& image, int row, int col, double dncc, Image& grad) const {
    const int kh = spec_.tmpl.height, kw = spec_.tmpl.width;
    const int ch = spec_.tmpl.channel;
    const int y0 = row * spec_.stride, x0 = col * spec_.stride;
    const double npx = static_cast<double>(kh) * kw;
    double sum = 0.0, num = 0.0;
    for (int dy = 0; dy < kh; ++dy)
        for (int dx = 0; dx < kw; ++dx) {
            const double v = image.at(y0 + dy, x0 + dx, ch);
            sum += v;
            num += v * centered_[static_cast<std::size_t>(dy) * kw + dx];
        }
    const double mean = sum / npx;
    double ss = 0.0;
    for (int dy = 0; dy < kh; ++dy)
        for (int dx = 0; dx < kw; ++dx) {
            const double d = image.at(y0 + dy, x0 + dx, ch) - mean;
            ss += d * d;
        }
    const double floor = npx * spec_.variance_floor;
    const double denom = centered_norm_ * std::sqrt(ss + floor);
    const double ncc = num / denom;
    for (int dy = 0; dy < kh; ++dy)
        for (int dx = 0; dx < kw; ++dx) {
            const double centered = image.at(y0 + dy, x0 + dx, ch) - mean;
            const double d = centered_[static_cast<std::size_t>(dy) * kw + dx] / denom -
                             ncc * centered / (ss + floor);
            grad.at(y0 + dy, x0 + dx, ch) += dncc * d;
        }
}

Image ToyDetector::backward(const Image& image, const RawScores& scores, const ScoreGrad& grad) const {
    check_input(image);
    const int cols = (image.width() - spec_.tmpl.width) / spec_.stride + 1;
    Image out(image.height(), image.width(), image.channels());
    auto accumulate = [&](const std::vector<double>& g, double gain) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (g[i] == 0.0) continue;
            add_window_grad(image, static_cast<int>(i) / cols, static_cast<int>(i) % cols, g[i] * gain, out);
        }
    };
    switch (scores.group) {
        case ArchGroup::ObjectnessV7: accumulate(grad.objectness, spec_.gain); break;
        case ArchGroup::ClassMax: accumulate(grad.class_logits, spec_.gain); break;
        case ArchGroup::DualHeadV10:
            accumulate(grad.one2many, spec_.gain);
            accumulate(grad.one2one, spec_.gain2);
            break;
    }
    return out;
}

Candidates ToyDetector::candidates(const Image& image) const {
    int rows = 0, cols = 0;
    const std::vector<double> ncc = correlation(image, rows, cols);
    const bool dual = spec_.group == ArchGroup::DualHeadV10;
    const double gain = dual ? spec_.gain2 : spec_.gain;
    const double bias = dual ? spec_.bias2 : spec_.bias;
    const double kw = spec_.tmpl.width, kh = spec_.tmpl.height;
    Candidates c;
    c.boxes.reserve(ncc.size());
    c.logits.reserve(ncc.size());
    for (int r = 0; r < rows; ++r) {
        for (int q = 0; q < cols; ++q) {
            c.boxes.push_back({static_cast<double>(q * spec_.stride), static_cast<double>(r * spec_.stride), kw, kh});
            c.logits.push_back(gain * ncc[static_cast<std::size_t>(r) * cols + q] + bias);
        }
    }
    c.categories.assign(c.logits.size(), 0);
    return c;
}

std::size_t ToyDetector::parameter_hash() const {
    std::size_t h = std::hash<std::string>{}(spec_.name + "|" + spec_.weights_id);
    auto mix = [&h](double v) { h ^= std::hash<double>{}(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2); };
    for (double v : pattern_.values()) mix(v);
    mix(spec_.gain);
    mix(spec_.bias);
    mix(spec_.gain2);
    mix(spec_.bias2);
    mix(spec_.variance_floor);
    mix(spec_.stride);
    mix(spec_.tmpl.channel);
    return h;
}

std::unique_ptr<DetectorAdapter> toy_detector(const ToyDetectorSpec& spec) {
    return std::make_unique<ToyDetector>(spec);
}

}  // namespace patchbench
