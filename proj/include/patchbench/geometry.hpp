#pragma once

#include <array>
#include <random>

#include "patchbench/image.hpp"

namespace patchbench {

/// Axis-aligned box in pixels, top-left anchored. May extend past the image.
struct BBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    double area() const { return w * h; }
    double center_x() const { return x + w / 2.0; }
    double center_y() const { return y + h / 2.0; }
    bool valid() const { return w > 0.0 && h > 0.0; }
    bool intersects_frame(int width, int height) const;

    friend bool operator==(const BBox&, const BBox&) = default;
};

/// Square target region for a patch. An empty mask means fully opaque;
/// otherwise it is a 1-channel alpha map in [0,1] over the patch canvas.
struct Placement {
    double center_x = 0.0;
    double center_y = 0.0;
    double side = 0.0;
    Image mask;
};

/// Square of side scale * min(w, h) centered on the box.
Placement target_square(const BBox& box, double scale);

/// Integer pixel footprint of a placement: side rounded to the nearest pixel
/// (at least 1) and top-left rounded to the nearest pixel corner.
struct Footprint {
    int x0 = 0;
    int y0 = 0;
    int side = 0;
};

Footprint footprint(const Placement& placement);

struct EmbedResult {
    Image image;
    bool outside = false;  ///< placement did not touch the image at all
};

/// Bilinearly resamples `patch` (and the placement mask) to the footprint and
/// alpha-composites it over `image`. Pixels outside the footprint are copied
/// unchanged.
EmbedResult embed_patch(const Image& image, const Image& patch, const Placement& placement);

/// Adjoint of embed_patch. On entry `image_grad` holds d/d(output); on return
/// it holds d/d(input image). d/d(patch) is accumulated into `patch_grad`.
void embed_patch_backward(Image& image_grad, const Image& patch, const Placement& placement,
                          Image& patch_grad);

struct ColorJitter {
    double brightness = 0.2;
    double contrast = 0.2;
    double saturation = 0.2;
    double hue = 0.05;  ///< fraction of a full hue turn
};

struct AugmentParams {
    double resize_lo = 0.75;
    double resize_hi = 1.0;
    double rotation_deg = 30.0;
    ColorJitter jitter;
    double perspective_scale = 0.1;

    void validate() const;
    static AugmentParams identity();
};

/// One concrete draw of every random augmentation parameter.
struct AugmentDraw {
    double resize_factor = 1.0;
    double brightness = 1.0;
    double contrast = 1.0;
    double saturation = 1.0;
    double hue = 0.0;
    /// Corner displacements as fractions of the canvas side, in the order
    /// top-left, top-right, bottom-right, bottom-left.
    std::array<std::array<double, 2>, 4> corners{};
    double rotation_deg = 0.0;
};

AugmentDraw sample_augment(std::mt19937_64& rng, const AugmentParams& params);

struct AugmentedPatch {
    Image canvas;         ///< warped, jittered patch
    Placement placement;  ///< where to embed it; mask is the warp alpha
    AugmentDraw draw;
};

/// Training-time pipeline: resize -> color jitter -> perspective -> rotation.
AugmentedPatch augment_patch(const Image& patch, const Placement& placement, std::mt19937_64& rng,
                             const AugmentParams& params);

/// Same pipeline with explicit parameters.
AugmentedPatch apply_augment(const Image& patch, const Placement& placement, const AugmentDraw& draw);

/// Adjoint of apply_augment with respect to the patch pixels. The pipeline is
/// affine in the pixels, so only the draw is needed.
Image augment_backward(const Image& canvas_grad, const Image& patch, const AugmentedPatch& augmented);

/// Color jitter stages (brightness, contrast, saturation, hue) with explicit
/// factors. Factor 1 / hue 0 skips the stage exactly.
Image color_jitter(const Image& rgb, double brightness, double contrast, double saturation, double hue);
Image color_jitter_backward(const Image& grad, double brightness, double contrast, double saturation,
                            double hue);

/// 3x3 projective transform, row-major.
using Homography = std::array<double, 9>;

Homography identity_homography();
Homography multiply(const Homography& a, const Homography& b);
Homography invert(const Homography& h);
/// Maps the square [0,side]^2 onto the quad given by its four corners
/// (top-left, top-right, bottom-right, bottom-left).
Homography square_to_quad(double side, const std::array<std::array<double, 2>, 4>& quad);
/// Rotation by `degrees` about (cx, cy).
Homography rotation_about(double degrees, double cx, double cy);

/// Inverse warp: output pixel center q samples `src` at inverse_map(q).
/// Colors are edge-clamped; `alpha` receives the bilinear coverage of the
/// source square (zero outside).
Image warp(const Image& src, const Homography& inverse_map, Image& alpha);
Image warp_backward(const Image& grad, int src_height, int src_width, const Homography& inverse_map);

/// Aspect-preserving resize with constant padding to a fixed detector input.
struct Letterbox {
    double scale = 1.0;
    double pad_x = 0.0;
    double pad_y = 0.0;

    BBox to_input(const BBox& box) const;
    BBox to_original(const BBox& box) const;
    bool identity() const { return scale == 1.0 && pad_x == 0.0 && pad_y == 0.0; }
};

inline constexpr double kLetterboxPad = 114.0 / 255.0;

Image letterbox(const Image& image, int height, int width, Letterbox& transform,
                double pad_value = kLetterboxPad);

}  // namespace patchbench
