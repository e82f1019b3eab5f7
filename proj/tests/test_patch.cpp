#include <gtest/gtest.h>

#include <fstream>

#include "patchbench/error.hpp"
#include "patchbench/image.hpp"
#include "patchbench/patch.hpp"
#include "support.hpp"

using namespace patchbench;

TEST(InitPatch, DeterministicAndSeedSensitive) {
    const Patch a = init_patch(7, 16, 16);
    const Patch b = init_patch(7, 16, 16);
    const Patch c = init_patch(8, 16, 16);
    EXPECT_EQ(a.pixels, b.pixels);
    EXPECT_NE(a.pixels, c.pixels);
    EXPECT_EQ(a.height(), 16);
    EXPECT_EQ(a.pixels.channels(), 3);
}

TEST(InitPatch, UniformOnUnitInterval) {
    // 256 x 256 x 3 draws: the sample mean of U[0,1] has standard error
    // 1/sqrt(12 n) ~ 6.5e-4, so 5e-3 is a wide margin.
    const Patch p = init_patch(3);
    double sum = 0.0, sq = 0.0;
    for (double v : p.pixels.values()) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
        ASSERT_EQ(v, static_cast<double>(static_cast<float>(v)));
        sum += v;
        sq += v * v;
    }
    const double n = static_cast<double>(p.pixels.size());
    EXPECT_NEAR(sum / n, 0.5, 5e-3);
    EXPECT_NEAR(sq / n - (sum / n) * (sum / n), 1.0 / 12.0, 5e-3);
}

TEST(InitPatch, RejectsTinySides) {
    EXPECT_THROW(init_patch(0, kMinPatchSide - 1, 16), InvalidArgument);
    EXPECT_THROW(init_patch(0, 16, 0), InvalidArgument);
}

TEST(Baseline, GrayIsConstantAndNoiseIsSeeded) {
    const Patch g = baseline_patch(PatchKind::Grayscale, 0.25, std::nullopt, 8, 8);
    for (double v : g.pixels.values()) EXPECT_EQ(v, 0.25);
    EXPECT_EQ(g.meta.source_model, "baseline");
    ASSERT_TRUE(g.meta.gray_level.has_value());
    EXPECT_NO_THROW(g.meta.validate());

    const Patch n1 = baseline_patch(PatchKind::UniformNoise, std::nullopt, 4, 8, 8);
    const Patch n2 = baseline_patch(PatchKind::UniformNoise, std::nullopt, 4, 8, 8);
    EXPECT_EQ(n1.pixels, n2.pixels);
    EXPECT_THROW(baseline_patch(PatchKind::Grayscale, 1.5, std::nullopt, 8, 8), InvalidArgument);
    EXPECT_THROW(baseline_patch(PatchKind::Grayscale, std::nullopt, std::nullopt, 8, 8), InvalidArgument);
    EXPECT_THROW(baseline_patch(PatchKind::UniformNoise, std::nullopt, std::nullopt, 8, 8), InvalidArgument);
    EXPECT_THROW(baseline_patch(PatchKind::Optimized, std::nullopt, 1, 8, 8), InvalidArgument);
}

TEST(PatchMeta, KindCouplingIsEnforced) {
    PatchMeta m;
    m.source_model = "yolov5";
    EXPECT_NO_THROW(m.validate());
    m.gray_level = 0.5;
    EXPECT_THROW(m.validate(), InvalidArgument);
    m.kind = PatchKind::Grayscale;
    EXPECT_THROW(m.validate(), InvalidArgument);  // grayscale must come from "baseline"
    m.source_model = "baseline";
    EXPECT_NO_THROW(m.validate());
    m.gray_level = -0.1;
    EXPECT_THROW(m.validate(), InvalidArgument);
}

TEST(LossWeights, Validation) {
    EXPECT_NO_THROW(LossWeights{}.validate());
    EXPECT_THROW((LossWeights{-1.0, 1.0, 1.0}.validate()), InvalidArgument);
    EXPECT_THROW((LossWeights{0.0, 0.0, 0.0}.validate()), InvalidArgument);
    EXPECT_NO_THROW((LossWeights{0.0, 0.0, 0.0}.validate(true)));
}

TEST(Enums, StringRoundTrip) {
    for (ArchGroup g : {ArchGroup::ObjectnessV7, ArchGroup::ClassMax, ArchGroup::DualHeadV10}) {
        EXPECT_EQ(arch_group_from_string(to_string(g)), g);
    }
    for (PatchKind k : {PatchKind::Optimized, PatchKind::UniformNoise, PatchKind::Grayscale}) {
        EXPECT_EQ(patch_kind_from_string(to_string(k)), k);
    }
    EXPECT_THROW(arch_group_from_string("YOLO"), InvalidArgument);
}

TEST(ToPatchRange, ClampsAndRoundsToFloat) {
    Image img(1, 4, 1);
    img.data() = {-0.5, 0.1, 1.7, std::nan("")};
    const Image out = to_patch_range(img);
    EXPECT_EQ(out.data()[0], 0.0);
    EXPECT_EQ(out.data()[1], static_cast<double>(0.1f));
    EXPECT_EQ(out.data()[2], 1.0);
    EXPECT_EQ(out.data()[3], 0.0);
}

// Property: save followed by load reproduces pixels and metadata exactly.
TEST(PatchIo, RoundTripIsExact) {
    oracle::TempDir dir("patchio");
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int h = std::uniform_int_distribution<int>(8, 24)(rng);
        const int w = std::uniform_int_distribution<int>(8, 24)(rng);
        Patch p = init_patch(trial, h, w);
        p.pixels = to_patch_range(oracle::random_image(rng, h, w, 3, -0.2, 1.2));
        p.meta.source_model = "toy-red";
        p.meta.arch_group = ArchGroup::ClassMax;
        p.meta.epochs_trained = trial;
        p.meta.loss_weights = {0.25, 0.5, 2.0};
        const auto stem = dir / ("p" + std::to_string(trial));
        save_patch(p, stem);
        const Patch q = load_patch(stem.string() + ".patch.bin");
        EXPECT_EQ(q.pixels, p.pixels);
        EXPECT_EQ(q.meta, p.meta);
        EXPECT_TRUE(std::filesystem::exists(stem.string() + ".png"));
    }
}

TEST(PatchIo, CorruptContainersAreRejected) {
    oracle::TempDir dir("patchbad");
    const Patch p = init_patch(1, 8, 8);
    save_patch(p, dir / "a");
    {
        // Truncate the tensor payload.
        std::ifstream in(dir / "a.patch.bin", std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        std::ofstream out(dir / "b.patch.bin", std::ios::binary);
        out << bytes.substr(0, bytes.size() - 4);
        std::filesystem::copy_file(dir / "a.patch.json", dir / "b.patch.json");
    }
    EXPECT_THROW(load_patch(dir / "b"), FormatError);
    {
        std::ofstream out(dir / "c.patch.bin", std::ios::binary);
        out << "NOPE0000000000000000";
    }
    EXPECT_THROW(load_patch(dir / "c"), FormatError);
    EXPECT_THROW(load_patch(dir / "missing"), NotFound);

    // Sidecar disagreeing with the tensor shape.
    save_patch(init_patch(2, 9, 9), dir / "d");
    std::filesystem::copy_file(dir / "a.patch.json", dir / "d.patch.json",
                               std::filesystem::copy_options::overwrite_existing);
    EXPECT_THROW(load_patch(dir / "d"), FormatError);

    EXPECT_THROW(save_patch(p, dir / "no" / "such" / "dir" / "x"), NotFound);
}

TEST(Quantize, RoundsHalfUp) {
    EXPECT_EQ(quantize_8bit(0.0), 0);
    EXPECT_EQ(quantize_8bit(1.0), 255);
    EXPECT_EQ(quantize_8bit(-3.0), 0);
    EXPECT_EQ(quantize_8bit(0.5), 128);  // 127.5 rounds up
    EXPECT_EQ(quantize_8bit(100.0 / 255.0), 100);
}

TEST(Resize, AreaPreservesMeanAndConstants) {
    std::mt19937_64 rng(5);
    const Image img = oracle::random_image(rng, 12, 18, 3);
    const Image small = resize_area(img, 4, 6);  // integer factor 3
    for (int c = 0; c < 3; ++c) {
        double a = 0.0, b = 0.0;
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 18; ++x) a += img.at(y, x, c);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 6; ++x) b += small.at(y, x, c);
        EXPECT_NEAR(a / (12 * 18), b / (4 * 6), 1e-12);
    }
    // Each output pixel of an integer-factor shrink is the block mean.
    double block = 0.0;
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) block += img.at(3 + y, 6 + x, 1);
    EXPECT_NEAR(small.at(1, 2, 1), block / 9.0, 1e-12);

    const Image flat(7, 5, 3, 0.3);
    const Image up = resize_bilinear(flat, 11, 13), down = resize_area(flat, 3, 2);
    for (double v : up.values()) EXPECT_NEAR(v, 0.3, 1e-15);
    for (double v : down.values()) EXPECT_NEAR(v, 0.3, 1e-15);
    EXPECT_EQ(resize_bilinear(img, 12, 18), img);
}

TEST(ImageIo, PngRoundTripWithinQuantization) {
    oracle::TempDir dir("png");
    std::mt19937_64 rng(2);
    const Image img = oracle::random_image(rng, 5, 7, 3);
    write_image_8bit(img, (dir / "x.png").string());
    const Image back = read_image((dir / "x.png").string());
    ASSERT_TRUE(back.same_shape(img));
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back.data()[i], img.data()[i], 0.5 / 255.0 + 1e-12);
    EXPECT_THROW(read_image((dir / "none.png").string()), NotFound);
}
