#pragma once

#include <span>

#include "patchbench/image.hpp"
#include "patchbench/patch.hpp"

namespace patchbench {

struct RawScores;
struct ScoreGrad;

struct LossBreakdown {
    double l_s = 0.0;
    double l_v = 0.0;
    double l_m = 0.0;
    double total = 0.0;
};

inline constexpr double kSmoothnessEps = 1e-8;

/// Anisotropic total variation with forward differences and edge replication:
///   mean over (y, x, c) of [sqrt(dy^2 + eps) - sqrt(eps)] + [sqrt(dx^2 + eps) - sqrt(eps)]
/// Zero exactly for a constant image.
double smoothness_loss(const Image& patch);
/// Adds d(smoothness)/d(patch) scaled by `weight` into `grad`.
void smoothness_grad(const Image& patch, double weight, Image& grad);

/// Sum over values of max(0, v - 1)^2 + max(0, -v)^2.
double validity_loss(const Image& patch);
void validity_grad(const Image& patch, double weight, Image& grad);

/// Max pre-sigmoid objectness logit.
double target_loss_objectness(std::span<const double> logits);
/// Max pre-sigmoid class logit over every candidate (and class).
double target_loss_classmax(std::span<const double> logits);
/// max(one2many) + max(one2one).
double target_loss_dualhead(std::span<const double> one2many, std::span<const double> one2one);

/// Dispatches on the score group. When `restrict_class` is set, CLASSMAX
/// scores only consider that class column.
double target_loss(const RawScores& scores, int restrict_class = -1);
/// Gradient of target_loss with respect to the logits (one-hot at each argmax;
/// ties resolve to the first index).
ScoreGrad target_loss_grad(const RawScores& scores, double weight, int restrict_class = -1);

/// Weighted sum of the three terms.
LossBreakdown total_loss(double l_s, double l_v, double l_m, const LossWeights& weights);

}  // namespace patchbench
