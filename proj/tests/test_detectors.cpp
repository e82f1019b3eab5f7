#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "patchbench/detectors.hpp"
#include "patchbench/error.hpp"
#include "patchbench/losses.hpp"
#include "patchbench/registry.hpp"
#include "support.hpp"

using namespace patchbench;

namespace {

ToyDetector red_detector() {
    ToyDetectorSpec spec;
    spec.name = "toy-red";
    spec.tmpl = builtin_template("red");
    return ToyDetector(spec);
}

// Writes `values` (one channel) into channel `ch` of `img` with its top-left
// corner at (x0, y0).
void paste(Image& img, const Image& values, int x0, int y0, int ch) {
    for (int y = 0; y < values.height(); ++y)
        for (int x = 0; x < values.width(); ++x) img.at(y0 + y, x0 + x, ch) = values.at(y, x);
}

std::vector<Detection> random_detections(std::mt19937_64& rng, int n) {
    std::uniform_int_distribution<int> coord(0, 20), extent(1, 10), cat(0, 1);
    std::uniform_real_distribution<double> score(0.0, 1.0);
    std::vector<Detection> d;
    for (int i = 0; i < n; ++i) {
        d.push_back({BBox{static_cast<double>(coord(rng)), static_cast<double>(coord(rng)),
                          static_cast<double>(extent(rng)), static_cast<double>(extent(rng))},
                     score(rng), cat(rng)});
    }
    return d;
}

}  // namespace

TEST(ToyDetector, BlackImageHasNoResponse) {
    const ToyDetector det = red_detector();
    const RawScores s = det.raw_scores(Image(64, 64, 3, 0.0));
    ASSERT_FALSE(s.objectness.empty());
    for (double v : s.objectness) EXPECT_LE(v, -3.0);
}

TEST(ToyDetector, FullContrastTemplatePeaksAtPasteLocation) {
    const ToyDetector det = red_detector();
    Image img(96, 96, 3, 0.0);
    paste(img, det.spec().tmpl.pattern(), 32, 32, 0);
    int rows = 0, cols = 0;
    det.correlation(img, rows, cols);
    const RawScores s = det.raw_scores(img);
    const auto best = std::max_element(s.objectness.begin(), s.objectness.end()) - s.objectness.begin();
    EXPECT_EQ(best / cols, 32);
    EXPECT_EQ(best % cols, 32);
    EXPECT_GE(s.objectness[static_cast<std::size_t>(best)], 3.0);
}

TEST(ToyDetector, InvertedTemplateFallsBelowBlankBaseline) {
    const ToyDetector det = red_detector();
    const Image pattern = det.spec().tmpl.pattern();
    Image inverted(pattern.height(), pattern.width(), 1);
    for (std::size_t i = 0; i < pattern.size(); ++i) inverted.data()[i] = 1.0 - pattern.data()[i];
    Image img(96, 96, 3, 0.0);
    paste(img, inverted, 32, 32, 0);
    int rows = 0, cols = 0;
    det.correlation(img, rows, cols);
    const double baseline = det.raw_scores(Image(96, 96, 3, 0.0)).objectness.front();
    EXPECT_LT(det.raw_scores(img).objectness[static_cast<std::size_t>(32 * cols + 32)], baseline);
}

TEST(ToyDetector, UniformImageGivesEqualLogits) {
    const ToyDetector det = red_detector();
    for (double level : {0.0, 0.3, 1.0}) {
        const RawScores s = det.raw_scores(Image(50, 40, 3, level));
        for (double v : s.objectness) EXPECT_EQ(v, s.objectness.front());
    }
}

TEST(ToyDetector, DeterministicAndValidated) {
    const ToyDetector det = red_detector();
    std::mt19937_64 rng(2);
    const Image img = oracle::random_image(rng, 40, 30, 3);
    EXPECT_EQ(det.raw_scores(img).objectness, det.raw_scores(img).objectness);
    EXPECT_EQ(det.detect(img).size(), det.detect(img).size());
    EXPECT_THROW(det.raw_scores(Image(20, 40, 3)), InvalidArgument);  // template taller than the image
    EXPECT_THROW(det.raw_scores(Image(40, 40, 1)), InvalidArgument);
    EXPECT_THROW(det.detect(img, 0.0, 0.5), InvalidArgument);
    EXPECT_THROW(det.detect(img, 0.5, 1.0), InvalidArgument);

    ToyDetectorSpec bad;
    bad.variance_floor = 0.0;
    EXPECT_THROW(ToyDetector{bad}, InvalidArgument);
    bad = {};
    bad.stride = 0;
    EXPECT_THROW(ToyDetector{bad}, InvalidArgument);
    EXPECT_THROW(builtin_template("purple"), InvalidArgument);
}

TEST(ToyDetector, TopScoreIsSigmoidOfMaxLogit) {
    const ToyDetector det = red_detector();
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        Image img = oracle::random_image(rng, 64, 64, 3, 0.3, 0.7);
        paste(img, det.spec().tmpl.pattern(), 8 + trial, 12 + trial, 0);
        const RawScores s = det.raw_scores(img);
        const auto dets = det.detect(img);
        ASSERT_FALSE(dets.empty());
        const double top = sigmoid(*std::max_element(s.objectness.begin(), s.objectness.end()));
        EXPECT_NEAR(dets.front().score, top, 1e-6);
        for (std::size_t i = 1; i < dets.size(); ++i) EXPECT_LE(dets[i].score, dets[i - 1].score);
    }
}

TEST(ToyDetector, HighThresholdOnBlankGivesNothing) {
    EXPECT_TRUE(red_detector().detect(Image(64, 64, 3, 0.5), 0.999).empty());
}

TEST(ToyDetector, GroupsPopulateTheirOwnFields) {
    ToyDetectorSpec spec;
    spec.group = ArchGroup::ClassMax;
    const ToyDetector cls(spec);
    std::mt19937_64 rng(6);
    const Image img = oracle::random_image(rng, 40, 24, 3);
    const RawScores c = cls.raw_scores(img);
    c.validate();
    EXPECT_EQ(c.num_classes, 1);
    EXPECT_TRUE(c.objectness.empty());

    spec.group = ArchGroup::DualHeadV10;
    const ToyDetector dual(spec);
    const RawScores d = dual.raw_scores(img);
    d.validate();
    EXPECT_EQ(d.one2many.size(), d.one2one.size());
    EXPECT_NE(d.one2many, d.one2one);
}

TEST(ToyDetector, ParameterHashIdentifiesTheModel) {
    ToyDetectorSpec a, b;
    b.tmpl = builtin_template("green");
    EXPECT_EQ(ToyDetector(a).parameter_hash(), ToyDetector(a).parameter_hash());
    EXPECT_NE(ToyDetector(a).parameter_hash(), ToyDetector(b).parameter_hash());
    b = a;
    b.variance_floor = 0.02;
    EXPECT_NE(ToyDetector(a).parameter_hash(), ToyDetector(b).parameter_hash());
}

// d(max objectness)/d(patch) through embedding and the toy correlation.
TEST(ToyDetector, PatchGradientMatchesFiniteDifferences) {
    const ToyDetector det = red_detector();
    std::mt19937_64 rng(11);
    const Image background = oracle::random_image(rng, 48, 40, 3);
    const Image patch = oracle::random_image(rng, 10, 10, 3);
    Placement place;
    place.center_x = 20.3;
    place.center_y = 23.8;
    place.side = 13.0;

    auto loss = [&](const Image& p) {
        return target_loss_objectness(det.raw_scores(embed_patch(background, p, place).image).objectness);
    };
    const Image composed = embed_patch(background, patch, place).image;
    const RawScores s = det.raw_scores(composed);
    Image image_grad = det.backward(composed, s, target_loss_grad(s, 1.0));
    Image patch_grad(patch.height(), patch.width(), patch.channels());
    embed_patch_backward(image_grad, patch, place, patch_grad);

    int checked = 0;
    for (std::size_t i = 0; i < patch.size(); ++i) {
        const double fd = oracle::central_difference(loss, patch, i, 1e-6);
        if (std::abs(fd) < 1e-6 && std::abs(patch_grad.data()[i]) < 1e-6) continue;
        EXPECT_LT(oracle::relative_error(patch_grad.data()[i], fd), 1e-3) << i;
        ++checked;
    }
    EXPECT_GT(checked, 50);
}

TEST(Nms, KeepsTheBetterOfTwoDuplicates) {
    const std::vector<Detection> d{{{0, 0, 10, 10}, 0.8, 0}, {{0, 0, 10, 10}, 0.9, 0}};
    EXPECT_EQ(nms(d, 0.5), (std::vector<std::size_t>{1}));
    const std::vector<Detection> other{{{0, 0, 10, 10}, 0.8, 0}, {{0, 0, 10, 10}, 0.9, 1}};
    EXPECT_EQ(nms(other, 0.5), (std::vector<std::size_t>{1, 0}));
    EXPECT_TRUE(nms({}, 0.5).empty());
}

TEST(Nms, MatchesBruteForceOracle) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 500; ++trial) {
        const auto d = random_detections(rng, trial % 30);
        const double thresh = 0.1 + 0.8 * (trial % 9) / 8.0;
        const auto got = nms(d, thresh);
        EXPECT_EQ(got, oracle::nms(d, thresh)) << trial;
        for (std::size_t i = 0; i < got.size(); ++i)
            for (std::size_t j = i + 1; j < got.size(); ++j) {
                if (d[got[i]].category != d[got[j]].category) continue;
                EXPECT_LE(oracle::box_iou(d[got[i]].box, d[got[j]].box), thresh);
            }
    }
}

TEST(RawScoresValidate, RejectsForeignFields) {
    RawScores s;
    s.group = ArchGroup::ObjectnessV7;
    EXPECT_THROW(s.validate(), InvalidArgument);
    s.objectness = {1.0};
    s.validate();
    s.one2one = {1.0};
    EXPECT_THROW(s.validate(), InvalidArgument);
    RawScores c;
    c.group = ArchGroup::ClassMax;
    c.class_logits = {1, 2, 3};
    c.num_classes = 2;
    EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Registry, ListsSortedEntries) {
    const auto reg = AdapterRegistry::parse(R"([toy-red]
group = "OBJECTNESS_V7"
backend = "toy"
template = "red"

[toy-blue]
group = "OBJECTNESS_V7"
backend = "toy"
template = "blue"
)");
    const auto list = list_adapters(reg);
    ASSERT_EQ(list.size(), 2u);
    EXPECT_EQ(list[0].name, "toy-blue");
    EXPECT_EQ(list[1].name, "toy-red");
    EXPECT_EQ(list[1].weights_id, "toy:toy-red");
    EXPECT_TRUE(list_adapters(AdapterRegistry{}).empty());
    EXPECT_TRUE(list_adapters(AdapterRegistry::parse("")).empty());
}

TEST(Registry, DualHeadEntryIsTagged) {
    const auto reg = AdapterRegistry::parse(R"([yolov10n]
group = "DUALHEAD_V10"
backend = "plugin"
weights_id = "yolov10n.pt"
input_size = [640, 640]
library = "libmissing-backend.so"
)");
    const auto list = list_adapters(reg);
    ASSERT_EQ(list.size(), 1u);
    EXPECT_EQ(list[0].group, ArchGroup::DualHeadV10);
    EXPECT_EQ(list[0].weights_id, "yolov10n.pt");
    EXPECT_EQ(reg.entry("yolov10n").input_size, std::make_pair(640, 640));
    EXPECT_EQ(reg.entry("yolov10n").option("library"), "libmissing-backend.so");
    EXPECT_THROW(reg.make("yolov10n"), BackendError);
    EXPECT_THROW(reg.make("yolov9c"), NotFound);
}

TEST(Registry, RejectsMalformedEntries) {
    EXPECT_THROW(AdapterRegistry::parse("[a]\nbackend = \"toy\"\n"), ParseError);
    EXPECT_THROW(AdapterRegistry::parse("[a]\ngroup = \"V5\"\nbackend = \"toy\"\n"), ParseError);
    EXPECT_THROW(AdapterRegistry::parse("[a]\ngroup = \"CLASSMAX\"\n"), ParseError);
    EXPECT_THROW(AdapterRegistry::parse("group = \"CLASSMAX\"\n"), ParseError);
    const auto reg = AdapterRegistry::parse("[a]\ngroup = \"CLASSMAX\"\nbackend = \"toy\"\ngain = \"lots\"\n");
    EXPECT_THROW(reg.make("a"), ParseError);
    const auto onnx = AdapterRegistry::parse("[a]\ngroup = \"CLASSMAX\"\nbackend = \"onnx\"\n");
    EXPECT_THROW(onnx.make("a"), BackendError);
    EXPECT_THROW(AdapterRegistry::load("/nonexistent/adapters.toml"), NotFound);
}

TEST(Registry, BuiltinToysAndOptions) {
    const auto reg = AdapterRegistry::builtin();
    ASSERT_EQ(reg.list().size(), 3u);
    const auto green = reg.make("toy-green");
    EXPECT_EQ(green->group(), ArchGroup::ObjectnessV7);
    EXPECT_EQ(green->weights_id(), "toy:green");

    const auto custom = AdapterRegistry::parse(
        "[t]\ngroup = \"DUALHEAD_V10\"\nbackend = \"toy\"\ntemplate = \"blue\"\nwidth = 8\nheight = 12\n"
        "gain = 4\nvariance_floor = 0.05\n");
    const ToyDetectorSpec spec = toy_spec_from_entry(custom.entry("t"));
    EXPECT_EQ(spec.tmpl.channel, 2);
    EXPECT_EQ(spec.tmpl.width, 8);
    EXPECT_EQ(spec.tmpl.height, 12);
    EXPECT_EQ(spec.gain, 4.0);
    EXPECT_EQ(spec.variance_floor, 0.05);
    EXPECT_EQ(spec.group, ArchGroup::DualHeadV10);
}

#ifdef PATCHBENCH_TEST_PLUGIN
TEST(Registry, LoadsSharedLibraryPlugin) {
    const auto reg = AdapterRegistry::parse(std::string("[const]\ngroup = \"CLASSMAX\"\nbackend = \"plugin\"\n") +
                                            "library = \"" + PATCHBENCH_TEST_PLUGIN + "\"\nlogit = 2.0\n");
    const auto det = reg.make("const");
    EXPECT_EQ(det->name(), "const");
    EXPECT_EQ(det->group(), ArchGroup::ClassMax);
    EXPECT_FALSE(det->uses_nms());
    const Image img(8, 8, 3, 0.5);
    EXPECT_EQ(target_loss(det->raw_scores(img)), 2.0);
    const auto dets = det->detect(img);
    ASSERT_EQ(dets.size(), 1u);
    EXPECT_NEAR(dets[0].score, sigmoid(2.0), 1e-12);
}
#endif
