#include <gtest/gtest.h>

#include <numbers>

#include "patchbench/error.hpp"
#include "patchbench/geometry.hpp"
#include "support.hpp"

using namespace patchbench;

namespace {

double dot(const Image& a, const Image& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    return s;
}

AugmentDraw random_draw(std::mt19937_64& rng) {
    AugmentParams p;
    p.perspective_scale = 0.3;
    return sample_augment(rng, p);
}

std::array<double, 2> apply(const Homography& h, double x, double y) {
    const double w = h[6] * x + h[7] * y + h[8];
    return {(h[0] * x + h[1] * y + h[2]) / w, (h[3] * x + h[4] * y + h[5]) / w};
}

}  // namespace

TEST(TargetSquare, ShorterSideAndCenter) {
    const Placement p = target_square({10, 20, 100, 200}, 0.75);
    EXPECT_EQ(p.side, 75.0);
    EXPECT_EQ(p.center_x, 60.0);
    EXPECT_EQ(p.center_y, 120.0);
    EXPECT_TRUE(p.mask.empty());
    EXPECT_THROW(target_square({0, 0, 0, 5}, 0.75), InvalidArgument);
    EXPECT_THROW(target_square({0, 0, 5, 5}, 0.0), InvalidArgument);
}

TEST(Footprint, RoundsSideAndCorner) {
    Placement p;
    p.center_x = 10.0;
    p.center_y = 7.0;
    p.side = 4.4;
    Footprint f = footprint(p);
    EXPECT_EQ(f.side, 4);
    EXPECT_EQ(f.x0, 8);
    EXPECT_EQ(f.y0, 5);
    p.side = 0.2;
    EXPECT_EQ(footprint(p).side, 1);
    p.side = 0.0;
    EXPECT_THROW(footprint(p), InvalidArgument);
}

// Property: no pixel outside the placed square changes.
TEST(Embed, LeavesPixelsOutsideTheSquareUntouched) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-10.0, 50.0), s(0.5, 30.0);
    for (int trial = 0; trial < 200; ++trial) {
        const Image img = oracle::random_image(rng, 40, 33, 3);
        const Image patch = oracle::random_image(rng, 8 + trial % 9, 8 + trial % 9, 3);
        Placement p;
        p.center_x = u(rng);
        p.center_y = u(rng);
        p.side = s(rng);
        const EmbedResult r = embed_patch(img, patch, p);
        const Footprint f = footprint(p);
        bool touched = false;
        for (int y = 0; y < img.height(); ++y) {
            for (int x = 0; x < img.width(); ++x) {
                const bool inside = y >= f.y0 && y < f.y0 + f.side && x >= f.x0 && x < f.x0 + f.side;
                touched = touched || inside;
                for (int c = 0; c < 3; ++c) {
                    if (!inside) ASSERT_EQ(r.image.at(y, x, c), img.at(y, x, c));
                }
            }
        }
        EXPECT_EQ(r.outside, !touched);
    }
}

TEST(Embed, SameSizeOpaqueIsACopy) {
    std::mt19937_64 rng(3);
    const Image img = oracle::random_image(rng, 20, 20, 3);
    const Image patch = oracle::random_image(rng, 8, 8, 3);
    Placement p;
    p.center_x = 10.0;
    p.center_y = 9.0;
    p.side = 8.0;
    const Image out = embed_patch(img, patch, p).image;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            for (int c = 0; c < 3; ++c) EXPECT_EQ(out.at(5 + y, 6 + x, c), patch.at(y, x, c));
}

TEST(Embed, OutsideTheFrameIsANoOp) {
    const Image img(10, 10, 3, 0.4);
    const Image patch(8, 8, 3, 0.9);
    Placement p;
    p.center_x = -20.0;
    p.center_y = 5.0;
    p.side = 6.0;
    const EmbedResult r = embed_patch(img, patch, p);
    EXPECT_TRUE(r.outside);
    EXPECT_EQ(r.image, img);
}

TEST(Embed, MaskBlendsLinearly) {
    const Image img(6, 6, 3, 0.2);
    const Image patch(6, 6, 3, 1.0);
    Placement p;
    p.center_x = p.center_y = 3.0;
    p.side = 6.0;
    p.mask = Image(6, 6, 1, 0.25);
    const Image out = embed_patch(img, patch, p).image;
    for (double v : out.values()) EXPECT_NEAR(v, 0.2 * 0.75 + 0.25, 1e-15);
    p.mask = Image(5, 5, 1, 1.0);
    EXPECT_THROW(embed_patch(img, patch, p), InvalidArgument);
}

// embed is linear in (image, patch) jointly, so the backward pass must be its
// exact adjoint: <E(x, p), g> = <x, E_x^T g> + <p, E_p^T g>.
TEST(Embed, BackwardIsTheAdjoint) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> c(-3.0, 20.0), s(2.0, 25.0);
    for (int trial = 0; trial < 50; ++trial) {
        const Image img = oracle::random_image(rng, 18, 17, 3, -1, 1);
        const Image patch = oracle::random_image(rng, 9, 9, 3, -1, 1);
        const Image g = oracle::random_image(rng, 18, 17, 3, -1, 1);
        Placement p;
        p.center_x = c(rng);
        p.center_y = c(rng);
        p.side = s(rng);
        if (trial % 2) p.mask = oracle::random_image(rng, 9, 9, 1);
        const Image out = embed_patch(img, patch, p).image;
        Image gi = g;
        Image gp(9, 9, 3);
        embed_patch_backward(gi, patch, p, gp);
        EXPECT_NEAR(dot(out, g), dot(img, gi) + dot(patch, gp), 1e-10);
    }
}

TEST(ColorJitter, IdentityFactorsAreExact) {
    std::mt19937_64 rng(1);
    const Image img = oracle::random_image(rng, 5, 6, 3);
    EXPECT_EQ(color_jitter(img, 1.0, 1.0, 1.0, 0.0), img);
    const Image gray(4, 4, 3, 0.37);
    const Image saturated = color_jitter(gray, 1.0, 1.0, 1.7, 0.2), flattened = color_jitter(gray, 1.0, 0.3, 1.0, 0.0);
    for (double v : saturated.values()) EXPECT_NEAR(v, 0.37, 1e-12);
    for (double v : flattened.values()) EXPECT_NEAR(v, 0.37, 1e-12);
}

TEST(ColorJitter, BackwardIsTheAdjoint) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> f(0.5, 1.5), h(-0.1, 0.1);
    for (int trial = 0; trial < 30; ++trial) {
        const Image x = oracle::random_image(rng, 6, 7, 3);
        const Image g = oracle::random_image(rng, 6, 7, 3, -1, 1);
        const double b = f(rng), c = f(rng), s = f(rng), hue = h(rng);
        EXPECT_NEAR(dot(color_jitter(x, b, c, s, hue), g), dot(x, color_jitter_backward(g, b, c, s, hue)), 1e-10);
    }
}

TEST(Homography, InverseAndCornerMapping) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        const double s = 10.0;
        std::array<std::array<double, 2>, 4> q{{{0, 0}, {s, 0}, {s, s}, {0, s}}};
        for (auto& c : q) {
            c[0] += d(rng);
            c[1] += d(rng);
        }
        const Homography h = square_to_quad(s, q);
        const std::array<std::array<double, 2>, 4> corners{{{0, 0}, {s, 0}, {s, s}, {0, s}}};
        for (int i = 0; i < 4; ++i) {
            const auto m = apply(h, corners[i][0], corners[i][1]);
            EXPECT_NEAR(m[0], q[i][0], 1e-9);
            EXPECT_NEAR(m[1], q[i][1], 1e-9);
        }
        const Homography id = multiply(h, invert(h));
        const Homography ref = identity_homography();
        for (int i = 0; i < 9; ++i) EXPECT_NEAR(id[i] / id[8], ref[i], 1e-9);
    }
}

TEST(Homography, RotationFixesItsCenter) {
    const Homography r = rotation_about(30.0, 4.0, 5.0);
    const auto c = apply(r, 4.0, 5.0);
    EXPECT_NEAR(c[0], 4.0, 1e-12);
    EXPECT_NEAR(c[1], 5.0, 1e-12);
    const auto p = apply(r, 5.0, 5.0);
    EXPECT_NEAR(p[0], 4.0 + std::cos(std::numbers::pi / 6), 1e-12);
    EXPECT_NEAR(std::hypot(p[0] - 4.0, p[1] - 5.0), 1.0, 1e-12);
}

TEST(Warp, IdentityKeepsImageAndFullCoverage) {
    std::mt19937_64 rng(2);
    const Image img = oracle::random_image(rng, 7, 7, 3);
    Image alpha;
    const Image out = warp(img, identity_homography(), alpha);
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(out.data()[i], img.data()[i], 1e-12);
    for (double a : alpha.values()) EXPECT_NEAR(a, 1.0, 1e-12);
}

TEST(Augment, IdentityDrawIsExact) {
    std::mt19937_64 rng(0);
    const Image patch = oracle::random_image(rng, 12, 12, 3);
    Placement p;
    p.center_x = p.center_y = 20.0;
    p.side = 12.0;
    const AugmentDraw identity = sample_augment(rng, AugmentParams::identity());
    const AugmentedPatch a = apply_augment(patch, p, identity);
    EXPECT_EQ(a.canvas, patch);
    for (double v : a.placement.mask.values()) EXPECT_EQ(v, 1.0);
    EXPECT_EQ(a.placement.side, 12.0);
}

// Property: every drawn parameter lies in its configured range.
TEST(Augment, DrawsStayInRange) {
    std::mt19937_64 rng(12);
    const AugmentParams p;
    for (int i = 0; i < 2000; ++i) {
        const AugmentDraw d = sample_augment(rng, p);
        ASSERT_GE(d.resize_factor, p.resize_lo);
        ASSERT_LE(d.resize_factor, p.resize_hi);
        ASSERT_LE(std::abs(d.rotation_deg), p.rotation_deg);
        ASSERT_LE(std::abs(d.brightness - 1.0), p.jitter.brightness);
        ASSERT_LE(std::abs(d.contrast - 1.0), p.jitter.contrast);
        ASSERT_LE(std::abs(d.saturation - 1.0), p.jitter.saturation);
        ASSERT_LE(std::abs(d.hue), p.jitter.hue);
        for (const auto& c : d.corners) {
            ASSERT_LE(std::abs(c[0]), p.perspective_scale / 2);
            ASSERT_LE(std::abs(c[1]), p.perspective_scale / 2);
        }
    }
    AugmentParams bad;
    bad.resize_lo = 1.2;
    EXPECT_THROW(bad.validate(), InvalidArgument);
    bad = AugmentParams{};
    bad.rotation_deg = -1.0;
    EXPECT_THROW(bad.validate(), InvalidArgument);
}

// The pipeline is linear in the patch pixels for a fixed draw, so the
// backward pass is checked as an exact adjoint.
TEST(Augment, BackwardIsTheAdjoint) {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 8 + trial % 8;
        const Image patch = oracle::random_image(rng, n, n, 3);
        Placement p;
        p.center_x = p.center_y = 30.0;
        p.side = 6.0 + trial % 13;
        const AugmentedPatch a = apply_augment(patch, p, random_draw(rng));
        const Image g = oracle::random_image(rng, a.canvas.height(), a.canvas.width(), 3, -1, 1);
        EXPECT_NEAR(dot(a.canvas, g), dot(patch, augment_backward(g, patch, a)), 1e-9);
        for (double m : a.placement.mask.values()) {
            ASSERT_GE(m, -1e-12);
            ASSERT_LE(m, 1.0 + 1e-12);
        }
    }
}

TEST(Letterbox, MapsBoxesBothWays) {
    std::mt19937_64 rng(9);
    const Image img = oracle::random_image(rng, 30, 60, 3);
    Letterbox lb;
    const Image out = letterbox(img, 64, 64, lb);
    EXPECT_EQ(out.height(), 64);
    EXPECT_EQ(out.width(), 64);
    EXPECT_NEAR(lb.scale, 64.0 / 60.0, 1e-12);
    EXPECT_EQ(lb.pad_x, 0.0);
    EXPECT_EQ(lb.pad_y, 16.0);
    EXPECT_EQ(out.at(0, 0, 0), kLetterboxPad);
    const BBox b{3, 4, 10, 12};
    const BBox back = lb.to_original(lb.to_input(b));
    EXPECT_NEAR(back.x, b.x, 1e-12);
    EXPECT_NEAR(back.y, b.y, 1e-12);
    EXPECT_NEAR(back.w, b.w, 1e-12);
    EXPECT_NEAR(back.h, b.h, 1e-12);

    Letterbox same;
    EXPECT_EQ(letterbox(img, 30, 60, same), img);
    EXPECT_TRUE(same.identity());
}
