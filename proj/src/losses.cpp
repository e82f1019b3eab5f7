#include "patchbench/losses.hpp"

#include <algorithm>
#include <cmath>

#include "patchbench/detectors.hpp"
#include "patchbench/error.hpp"

namespace patchbench {

namespace {

void check_smoothness_shape(const Image& patch) {
    if (patch.height() < 2 || patch.width() < 2) {
        throw InvalidArgument("smoothness loss needs at least 2 rows and 2 columns");
    }
}

std::size_t argmax(std::span<const double> v, const char* what) {
    if (v.empty()) {
        throw InvalidArgument(std::string("empty score set for ") + what);
    }
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

double smoothness_loss(const Image& patch) {
    check_smoothness_shape(patch);
    const double floor = std::sqrt(kSmoothnessEps);
    const int h = patch.height(), w = patch.width(), ch = patch.channels();
    double sum = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < ch; ++c) {
                const double p = patch.at(y, x, c);
                if (y + 1 < h) {
                    const double dy = patch.at(y + 1, x, c) - p;
                    sum += std::sqrt(dy * dy + kSmoothnessEps) - floor;
                }
                if (x + 1 < w) {
                    const double dx = patch.at(y, x + 1, c) - p;
                    sum += std::sqrt(dx * dx + kSmoothnessEps) - floor;
                }
            }
        }
    }
    return sum / static_cast<double>(patch.size());
}

void smoothness_grad(const Image& patch, double weight, Image& grad) {
    check_smoothness_shape(patch);
    if (!grad.same_shape(patch)) throw InvalidArgument("gradient buffer must match the patch");
    const double scale = weight / static_cast<double>(patch.size());
    const int h = patch.height(), w = patch.width(), ch = patch.channels();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < ch; ++c) {
                const double p = patch.at(y, x, c);
                if (y + 1 < h) {
                    const double dy = patch.at(y + 1, x, c) - p;
                    const double g = scale * dy / std::sqrt(dy * dy + kSmoothnessEps);
                    grad.at(y + 1, x, c) += g;
                    grad.at(y, x, c) -= g;
                }
                if (x + 1 < w) {
                    const double dx = patch.at(y, x + 1, c) - p;
                    const double g = scale * dx / std::sqrt(dx * dx + kSmoothnessEps);
                    grad.at(y, x + 1, c) += g;
                    grad.at(y, x, c) -= g;
                }
            }
        }
    }
}

double validity_loss(const Image& patch) {
    double sum = 0.0;
    for (double v : patch.values()) {
        if (v > 1.0) sum += (v - 1.0) * (v - 1.0);
        else if (v < 0.0) sum += v * v;
    }
    return sum;
}

void validity_grad(const Image& patch, double weight, Image& grad) {
    if (!grad.same_shape(patch)) throw InvalidArgument("gradient buffer must match the patch");
    auto g = grad.values();
    auto p = patch.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 1.0) g[i] += weight * 2.0 * (p[i] - 1.0);
        else if (p[i] < 0.0) g[i] += weight * 2.0 * p[i];
    }
}

double target_loss_objectness(std::span<const double> logits) {
    return logits[argmax(logits, "objectness loss")];
}

double target_loss_classmax(std::span<const double> logits) {
    return logits[argmax(logits, "class-max loss")];
}

double target_loss_dualhead(std::span<const double> one2many, std::span<const double> one2one) {
    return one2many[argmax(one2many, "one2many head")] + one2one[argmax(one2one, "one2one head")];
}

namespace {

// Column `cls` of a candidates x classes matrix.
std::vector<double> class_column(const RawScores& s, int cls) {
    if (cls < 0 || cls >= s.num_classes) {
        throw InvalidArgument("target class " + std::to_string(cls) + " outside [0, " +
                              std::to_string(s.num_classes) + ")");
    }
    std::vector<double> col;
    for (std::size_t i = cls; i < s.class_logits.size(); i += s.num_classes) col.push_back(s.class_logits[i]);
    return col;
}

}  // namespace

double target_loss(const RawScores& scores, int restrict_class) {
    scores.validate();
    switch (scores.group) {
        case ArchGroup::ObjectnessV7: return target_loss_objectness(scores.objectness);
        case ArchGroup::ClassMax:
            if (restrict_class >= 0) return target_loss_classmax(class_column(scores, restrict_class));
            return target_loss_classmax(scores.class_logits);
        case ArchGroup::DualHeadV10: return target_loss_dualhead(scores.one2many, scores.one2one);
    }
    return 0.0;
}

ScoreGrad target_loss_grad(const RawScores& scores, double weight, int restrict_class) {
    scores.validate();
    ScoreGrad g;
    switch (scores.group) {
        case ArchGroup::ObjectnessV7:
            g.objectness.assign(scores.objectness.size(), 0.0);
            g.objectness[argmax(scores.objectness, "objectness loss")] = weight;
            break;
        case ArchGroup::ClassMax:
            g.class_logits.assign(scores.class_logits.size(), 0.0);
            if (restrict_class >= 0) {
                const auto col = class_column(scores, restrict_class);
                g.class_logits[argmax(col, "class-max loss") * scores.num_classes + restrict_class] = weight;
            } else {
                g.class_logits[argmax(scores.class_logits, "class-max loss")] = weight;
            }
            break;
        case ArchGroup::DualHeadV10:
            g.one2many.assign(scores.one2many.size(), 0.0);
            g.one2one.assign(scores.one2one.size(), 0.0);
            g.one2many[argmax(scores.one2many, "one2many head")] = weight;
            g.one2one[argmax(scores.one2one, "one2one head")] = weight;
            break;
    }
    return g;
}

LossBreakdown total_loss(double l_s, double l_v, double l_m, const LossWeights& weights) {
    weights.validate(/*allow_all_zero=*/true);
    return {l_s, l_v, l_m, weights.lambda_s * l_s + weights.lambda_v * l_v + weights.lambda_m * l_m};
}

}  // namespace patchbench
