#include "patchbench/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include <Eigen/Dense>

#include "patchbench/error.hpp"

namespace patchbench {

namespace {

long round_half_up(double v) { return static_cast<long>(std::floor(v + 0.5)); }

// Sampling position of output index k when n outputs cover `src` inputs with
// half-pixel centers, clamped to the valid range.
struct Tap {
    int i0;
    int i1;
    double f;
};

Tap resample_tap(int k, int n, int src) {
    const double s = std::clamp((k + 0.5) * src / static_cast<double>(n) - 0.5, 0.0, src - 1.0);
    const int i0 = static_cast<int>(s);
    return {i0, std::min(i0 + 1, src - 1), s - i0};
}

double bilinear(const Image& img, const Tap& ty, const Tap& tx, int c) {
    return (1 - ty.f) * ((1 - tx.f) * img.at(ty.i0, tx.i0, c) + tx.f * img.at(ty.i0, tx.i1, c)) +
           ty.f * ((1 - tx.f) * img.at(ty.i1, tx.i0, c) + tx.f * img.at(ty.i1, tx.i1, c));
}

void scatter_bilinear(Image& img, const Tap& ty, const Tap& tx, int c, double g) {
    img.at(ty.i0, tx.i0, c) += (1 - ty.f) * (1 - tx.f) * g;
    img.at(ty.i0, tx.i1, c) += (1 - ty.f) * tx.f * g;
    img.at(ty.i1, tx.i0, c) += ty.f * (1 - tx.f) * g;
    img.at(ty.i1, tx.i1, c) += ty.f * tx.f * g;
}

// Adjoint of resize_bilinear.
Image resize_bilinear_backward(const Image& grad, int src_height, int src_width) {
    Image out(src_height, src_width, grad.channels());
    for (int y = 0; y < grad.height(); ++y) {
        const Tap ty = resample_tap(y, grad.height(), src_height);
        for (int x = 0; x < grad.width(); ++x) {
            const Tap tx = resample_tap(x, grad.width(), src_width);
            for (int c = 0; c < grad.channels(); ++c) {
                scatter_bilinear(out, ty, tx, c, grad.at(y, x, c));
            }
        }
    }
    return out;
}

void check_mask(const Image& patch, const Placement& placement) {
    if (placement.mask.empty()) return;
    if (placement.mask.channels() != 1 || placement.mask.height() != patch.height() ||
        placement.mask.width() != patch.width()) {
        throw InvalidArgument("placement mask must be single-channel and match the patch canvas");
    }
}

}  // namespace

bool BBox::intersects_frame(int width, int height) const {
    return x < width && y < height && x + w > 0.0 && y + h > 0.0;
}

Placement target_square(const BBox& box, double scale) {
    if (!box.valid()) {
        throw InvalidArgument("box must have positive width and height");
    }
    if (!(scale > 0.0)) {
        throw InvalidArgument("placement scale must be positive");
    }
    Placement p;
    p.center_x = box.center_x();
    p.center_y = box.center_y();
    p.side = scale * std::min(box.w, box.h);
    return p;
}

Footprint footprint(const Placement& placement) {
    if (!(placement.side > 0.0) || !std::isfinite(placement.center_x) || !std::isfinite(placement.center_y)) {
        throw InvalidArgument("placement needs a positive side and a finite center");
    }
    Footprint fp;
    fp.side = static_cast<int>(std::max(1L, round_half_up(placement.side)));
    fp.x0 = static_cast<int>(round_half_up(placement.center_x - fp.side / 2.0));
    fp.y0 = static_cast<int>(round_half_up(placement.center_y - fp.side / 2.0));
    return fp;
}

EmbedResult embed_patch(const Image& image, const Image& patch, const Placement& placement) {
    if (image.channels() != patch.channels()) {
        throw InvalidArgument("image and patch channel counts differ");
    }
    check_mask(patch, placement);
    const Footprint fp = footprint(placement);
    EmbedResult result{image, true};
    Image& out = result.image;
    const bool masked = !placement.mask.empty();
    for (int k = 0; k < fp.side; ++k) {
        const int y = fp.y0 + k;
        if (y < 0 || y >= image.height()) continue;
        const Tap ty = resample_tap(k, fp.side, patch.height());
        for (int l = 0; l < fp.side; ++l) {
            const int x = fp.x0 + l;
            if (x < 0 || x >= image.width()) continue;
            result.outside = false;
            const Tap tx = resample_tap(l, fp.side, patch.width());
            const double alpha = masked ? bilinear(placement.mask, ty, tx, 0) : 1.0;
            if (alpha == 0.0) continue;
            for (int c = 0; c < image.channels(); ++c) {
                const double p = bilinear(patch, ty, tx, c);
                out.at(y, x, c) = alpha == 1.0 ? p : image.at(y, x, c) * (1.0 - alpha) + alpha * p;
            }
        }
    }
    return result;
}

void embed_patch_backward(Image& image_grad, const Image& patch, const Placement& placement, Image& patch_grad) {
    check_mask(patch, placement);
    if (!patch_grad.same_shape(patch)) {
        throw InvalidArgument("patch gradient buffer must match the patch");
    }
    const Footprint fp = footprint(placement);
    const bool masked = !placement.mask.empty();
    for (int k = 0; k < fp.side; ++k) {
        const int y = fp.y0 + k;
        if (y < 0 || y >= image_grad.height()) continue;
        const Tap ty = resample_tap(k, fp.side, patch.height());
        for (int l = 0; l < fp.side; ++l) {
            const int x = fp.x0 + l;
            if (x < 0 || x >= image_grad.width()) continue;
            const Tap tx = resample_tap(l, fp.side, patch.width());
            const double alpha = masked ? bilinear(placement.mask, ty, tx, 0) : 1.0;
            if (alpha == 0.0) continue;
            for (int c = 0; c < image_grad.channels(); ++c) {
                double& g = image_grad.at(y, x, c);
                scatter_bilinear(patch_grad, ty, tx, c, alpha * g);
                g *= 1.0 - alpha;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Color jitter

namespace {

constexpr std::array<double, 3> kGray{0.299, 0.587, 0.114};

using Mat3 = Eigen::Matrix3d;

Mat3 saturation_matrix(double s) {
    Mat3 m = s * Mat3::Identity();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m(i, j) += (1.0 - s) * kGray[j];
    return m;
}

// Hue rotation about the gray axis in YIQ space.
Mat3 hue_matrix(double hue) {
    Mat3 to_yiq;
    to_yiq << 0.299, 0.587, 0.114, 0.596, -0.274, -0.322, 0.211, -0.523, 0.312;
    const double a = 2.0 * std::numbers::pi * hue;
    Mat3 rot;
    rot << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
    return to_yiq.inverse() * rot * to_yiq;
}

// Combined per-pixel linear map of the saturation and hue stages, or nullopt
// when both are identities.
std::optional<Mat3> pixel_matrix(double saturation, double hue) {
    std::optional<Mat3> m;
    if (saturation != 1.0) m = saturation_matrix(saturation);
    if (hue != 0.0) m = m ? Mat3(hue_matrix(hue) * *m) : hue_matrix(hue);
    return m;
}

void apply_pixel_matrix(Image& img, const Mat3& m) {
    auto v = img.values();
    for (std::size_t p = 0; p + 2 < v.size(); p += 3) {
        const Eigen::Vector3d rgb(v[p], v[p + 1], v[p + 2]);
        const Eigen::Vector3d out = m * rgb;
        v[p] = out[0];
        v[p + 1] = out[1];
        v[p + 2] = out[2];
    }
}

}  // namespace

Image color_jitter(const Image& rgb, double brightness, double contrast, double saturation, double hue) {
    if (rgb.channels() != 3) {
        throw InvalidArgument("color jitter needs an RGB image");
    }
    Image out = rgb;
    auto v = out.values();
    if (brightness != 1.0) {
        for (double& x : v) x *= brightness;
    }
    if (contrast != 1.0) {
        double mean = 0.0;
        for (std::size_t p = 0; p < v.size(); p += 3) {
            mean += kGray[0] * v[p] + kGray[1] * v[p + 1] + kGray[2] * v[p + 2];
        }
        mean /= static_cast<double>(v.size() / 3);
        for (double& x : v) x = contrast * x + (1.0 - contrast) * mean;
    }
    if (auto m = pixel_matrix(saturation, hue)) {
        apply_pixel_matrix(out, *m);
    }
    return out;
}

Image color_jitter_backward(const Image& grad, double brightness, double contrast, double saturation,
                            double hue) {
    Image g = grad;
    if (auto m = pixel_matrix(saturation, hue)) {
        apply_pixel_matrix(g, m->transpose());
    }
    auto v = g.values();
    if (contrast != 1.0) {
        double total = 0.0;
        for (double x : v) total += x;
        const double npix = static_cast<double>(v.size() / 3);
        for (std::size_t p = 0; p < v.size(); p += 3) {
            for (int c = 0; c < 3; ++c) {
                v[p + c] = contrast * v[p + c] + (1.0 - contrast) * total * kGray[c] / npix;
            }
        }
    }
    if (brightness != 1.0) {
        for (double& x : v) x *= brightness;
    }
    return g;
}

// ---------------------------------------------------------------------------
// Projective warps

Homography identity_homography() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Homography multiply(const Homography& a, const Homography& b) {
    Homography r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) r[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
    return r;
}

Homography invert(const Homography& h) {
    const double a = h[0], b = h[1], c = h[2], d = h[3], e = h[4], f = h[5], g = h[6], k = h[7], l = h[8];
    const double A = e * l - f * k, B = -(d * l - f * g), C = d * k - e * g;
    const double det = a * A + b * B + c * C;
    if (det == 0.0 || !std::isfinite(det)) {
        throw InvalidArgument("singular homography");
    }
    Homography adj{A, -(b * l - c * k), b * f - c * e, B, a * l - c * g, -(a * f - c * d), C, -(a * k - b * g),
                   a * e - b * d};
    for (double& x : adj) x /= det;
    return adj;
}

Homography square_to_quad(double side, const std::array<std::array<double, 2>, 4>& quad) {
    if (!(side > 0.0)) throw InvalidArgument("square side must be positive");
    const auto& [x0, y0] = quad[0];
    const auto& [x1, y1] = quad[1];
    const auto& [x2, y2] = quad[2];
    const auto& [x3, y3] = quad[3];
    const double dx3 = x0 - x1 + x2 - x3;
    const double dy3 = y0 - y1 + y2 - y3;
    double a, b, d, e, g = 0.0, h = 0.0;
    if (dx3 == 0.0 && dy3 == 0.0) {
        a = x1 - x0;
        b = x3 - x0;
        d = y1 - y0;
        e = y3 - y0;
    } else {
        const double dx1 = x1 - x2, dx2 = x3 - x2, dy1 = y1 - y2, dy2 = y3 - y2;
        const double den = dx1 * dy2 - dx2 * dy1;
        if (den == 0.0) throw InvalidArgument("degenerate quad");
        g = (dx3 * dy2 - dx2 * dy3) / den;
        h = (dx1 * dy3 - dx3 * dy1) / den;
        a = x1 - x0 + g * x1;
        b = x3 - x0 + h * x3;
        d = y1 - y0 + g * y1;
        e = y3 - y0 + h * y3;
    }
    // Unit-square map composed with (x, y) -> (x / side, y / side).
    return {a / side, b / side, x0, d / side, e / side, y0, g / side, h / side, 1.0};
}

Homography rotation_about(double degrees, double cx, double cy) {
    const double t = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(t), s = std::sin(t);
    return {c, -s, cx - c * cx + s * cy, s, c, cy - s * cx - c * cy, 0, 0, 1};
}

namespace {

struct WarpTap {
    int x0, y0;
    double fx, fy;
    bool valid;
};

WarpTap warp_tap(const Homography& m, int x, int y) {
    const double qx = x + 0.5, qy = y + 0.5;
    const double w = m[6] * qx + m[7] * qy + m[8];
    if (!(w > 0.0)) return {0, 0, 0, 0, false};
    const double u = (m[0] * qx + m[1] * qy + m[2]) / w - 0.5;
    const double v = (m[3] * qx + m[4] * qy + m[5]) / w - 0.5;
    if (!std::isfinite(u) || !std::isfinite(v)) return {0, 0, 0, 0, false};
    const double fu = std::floor(u), fv = std::floor(v);
    return {static_cast<int>(fu), static_cast<int>(fv), u - fu, v - fv, true};
}

}  // namespace

Image warp(const Image& src, const Homography& inverse_map, Image& alpha) {
    const int n_h = src.height(), n_w = src.width();
    Image out(n_h, n_w, src.channels());
    alpha = Image(n_h, n_w, 1);
    for (int y = 0; y < n_h; ++y) {
        for (int x = 0; x < n_w; ++x) {
            const WarpTap t = warp_tap(inverse_map, x, y);
            if (!t.valid) continue;
            const int xs[2] = {t.x0, t.x0 + 1};
            const int ys[2] = {t.y0, t.y0 + 1};
            const double wx[2] = {1 - t.fx, t.fx};
            const double wy[2] = {1 - t.fy, t.fy};
            double a = 0.0;
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    if (ys[i] >= 0 && ys[i] < n_h && xs[j] >= 0 && xs[j] < n_w) a += wy[i] * wx[j];
            alpha.at(y, x) = a;
            if (a == 0.0) continue;
            for (int i = 0; i < 2; ++i) {
                const int sy = std::clamp(ys[i], 0, n_h - 1);
                for (int j = 0; j < 2; ++j) {
                    const int sx = std::clamp(xs[j], 0, n_w - 1);
                    const double w = wy[i] * wx[j];
                    if (w == 0.0) continue;
                    for (int c = 0; c < src.channels(); ++c) out.at(y, x, c) += w * src.at(sy, sx, c);
                }
            }
        }
    }
    return out;
}

Image warp_backward(const Image& grad, int src_height, int src_width, const Homography& inverse_map) {
    Image out(src_height, src_width, grad.channels());
    for (int y = 0; y < grad.height(); ++y) {
        for (int x = 0; x < grad.width(); ++x) {
            const WarpTap t = warp_tap(inverse_map, x, y);
            if (!t.valid) continue;
            const int xs[2] = {t.x0, t.x0 + 1};
            const int ys[2] = {t.y0, t.y0 + 1};
            const double wx[2] = {1 - t.fx, t.fx};
            const double wy[2] = {1 - t.fy, t.fy};
            bool any = false;
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    any |= ys[i] >= 0 && ys[i] < src_height && xs[j] >= 0 && xs[j] < src_width &&
                           wy[i] * wx[j] > 0.0;
            if (!any) continue;
            for (int i = 0; i < 2; ++i) {
                const int sy = std::clamp(ys[i], 0, src_height - 1);
                for (int j = 0; j < 2; ++j) {
                    const int sx = std::clamp(xs[j], 0, src_width - 1);
                    const double w = wy[i] * wx[j];
                    if (w == 0.0) continue;
                    for (int c = 0; c < grad.channels(); ++c) out.at(sy, sx, c) += w * grad.at(y, x, c);
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation pipeline

void AugmentParams::validate() const {
    if (!(resize_lo > 0.0 && resize_lo <= resize_hi && resize_hi <= 1.0)) {
        throw InvalidArgument("resize range must satisfy 0 < lo <= hi <= 1");
    }
    if (!(rotation_deg >= 0.0 && rotation_deg <= 90.0)) {
        throw InvalidArgument("rotation bound must lie in [0, 90] degrees");
    }
    for (double d : {jitter.brightness, jitter.contrast, jitter.saturation, jitter.hue}) {
        if (!(d >= 0.0)) throw InvalidArgument("jitter deltas must be non-negative");
    }
    if (!(perspective_scale >= 0.0 && perspective_scale < 1.0)) {
        throw InvalidArgument("perspective scale must lie in [0, 1)");
    }
}

AugmentParams AugmentParams::identity() {
    AugmentParams p;
    p.resize_lo = p.resize_hi = 1.0;
    p.rotation_deg = 0.0;
    p.jitter = {0.0, 0.0, 0.0, 0.0};
    p.perspective_scale = 0.0;
    return p;
}

AugmentDraw sample_augment(std::mt19937_64& rng, const AugmentParams& params) {
    params.validate();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    AugmentDraw d;
    d.resize_factor = between(params.resize_lo, params.resize_hi);
    const ColorJitter& j = params.jitter;
    d.brightness = between(std::max(0.0, 1.0 - j.brightness), 1.0 + j.brightness);
    d.contrast = between(std::max(0.0, 1.0 - j.contrast), 1.0 + j.contrast);
    d.saturation = between(std::max(0.0, 1.0 - j.saturation), 1.0 + j.saturation);
    d.hue = between(-j.hue, j.hue);
    const double half = params.perspective_scale / 2.0;
    for (auto& corner : d.corners) {
        corner[0] = between(-half, half);
        corner[1] = between(-half, half);
    }
    d.rotation_deg = between(-params.rotation_deg, params.rotation_deg);
    return d;
}

namespace {

bool has_warp(const AugmentDraw& d) {
    if (d.rotation_deg != 0.0) return true;
    for (const auto& c : d.corners)
        if (c[0] != 0.0 || c[1] != 0.0) return true;
    return false;
}

// Inverse of (rotation o perspective) on an n x n canvas.
Homography warp_inverse(const AugmentDraw& d, int n) {
    const double s = n;
    std::array<std::array<double, 2>, 4> quad{{{0.0, 0.0}, {s, 0.0}, {s, s}, {0.0, s}}};
    for (int i = 0; i < 4; ++i) {
        quad[i][0] += d.corners[i][0] * s;
        quad[i][1] += d.corners[i][1] * s;
    }
    const Homography forward = multiply(rotation_about(d.rotation_deg, s / 2.0, s / 2.0), square_to_quad(s, quad));
    return invert(forward);
}

int canvas_side(const Placement& placement, double factor) {
    if (!(placement.side > 0.0)) throw InvalidArgument("placement side must be positive");
    return static_cast<int>(std::max(1L, round_half_up(placement.side * factor)));
}

}  // namespace

AugmentedPatch apply_augment(const Image& patch, const Placement& placement, const AugmentDraw& draw) {
    const int n = canvas_side(placement, draw.resize_factor);
    AugmentedPatch out;
    out.draw = draw;
    Image canvas = (n == patch.height() && n == patch.width()) ? patch : resize_bilinear(patch, n, n);
    canvas = color_jitter(canvas, draw.brightness, draw.contrast, draw.saturation, draw.hue);
    out.placement.center_x = placement.center_x;
    out.placement.center_y = placement.center_y;
    out.placement.side = n;
    if (has_warp(draw)) {
        canvas = warp(canvas, warp_inverse(draw, n), out.placement.mask);
    } else {
        out.placement.mask = Image(n, n, 1, 1.0);
    }
    out.canvas = std::move(canvas);
    return out;
}

AugmentedPatch augment_patch(const Image& patch, const Placement& placement, std::mt19937_64& rng,
                             const AugmentParams& params) {
    return apply_augment(patch, placement, sample_augment(rng, params));
}

Image augment_backward(const Image& canvas_grad, const Image& patch, const AugmentedPatch& augmented) {
    const AugmentDraw& d = augmented.draw;
    const int n = canvas_grad.height();
    Image g = has_warp(d) ? warp_backward(canvas_grad, n, n, warp_inverse(d, n)) : canvas_grad;
    g = color_jitter_backward(g, d.brightness, d.contrast, d.saturation, d.hue);
    if (n == patch.height() && n == patch.width()) return g;
    return resize_bilinear_backward(g, patch.height(), patch.width());
}

// ---------------------------------------------------------------------------

BBox Letterbox::to_input(const BBox& box) const {
    return {box.x * scale + pad_x, box.y * scale + pad_y, box.w * scale, box.h * scale};
}

BBox Letterbox::to_original(const BBox& box) const {
    return {(box.x - pad_x) / scale, (box.y - pad_y) / scale, box.w / scale, box.h / scale};
}

Image letterbox(const Image& image, int height, int width, Letterbox& transform, double pad_value) {
    if (height <= 0 || width <= 0) throw InvalidArgument("letterbox target must be positive");
    if (image.height() == height && image.width() == width) {
        transform = {};
        return image;
    }
    const double scale = std::min(static_cast<double>(width) / image.width(),
                                  static_cast<double>(height) / image.height());
    const int nw = std::max(1, static_cast<int>(round_half_up(image.width() * scale)));
    const int nh = std::max(1, static_cast<int>(round_half_up(image.height() * scale)));
    const Image resized = scale < 1.0 ? resize_area(image, nh, nw) : resize_bilinear(image, nh, nw);
    transform.scale = scale;
    transform.pad_x = (width - nw) / 2;
    transform.pad_y = (height - nh) / 2;
    Image out(height, width, image.channels(), pad_value);
    for (int y = 0; y < nh; ++y)
        for (int x = 0; x < nw; ++x)
            for (int c = 0; c < image.channels(); ++c)
                out.at(y + static_cast<int>(transform.pad_y), x + static_cast<int>(transform.pad_x), c) =
                    resized.at(y, x, c);
    return out;
}

}  // namespace patchbench
