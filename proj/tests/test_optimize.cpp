#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "patchbench/error.hpp"
#include "patchbench/optimize.hpp"
#include "support.hpp"

using namespace patchbench;

namespace {

ToyDetector toy_red() {
    ToyDetectorSpec spec;
    spec.name = "toy-red";
    spec.tmpl = builtin_template("red");
    return ToyDetector(spec);
}

AnnotatedDataset toy_data(int count, std::uint64_t seed = 7) {
    SyntheticSpec spec;
    spec.count = count;
    return synthetic_dataset(spec, seed);
}

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.patch_height = cfg.patch_width = 16;
    cfg.seed = 11;
    return cfg;
}

// Reports NaN logits, as a diverged network would.
class NanDetector final : public DetectorAdapter {
public:
    std::string name() const override { return "nan"; }
    ArchGroup group() const override { return ArchGroup::ObjectnessV7; }
    std::string weights_id() const override { return "nan"; }
    std::optional<std::pair<int, int>> input_size() const override { return std::nullopt; }
    RawScores raw_scores(const Image&) const override {
        RawScores s;
        s.objectness = {std::numeric_limits<double>::quiet_NaN()};
        return s;
    }
    Image backward(const Image& image, const RawScores&, const ScoreGrad&) const override {
        return Image(image.height(), image.width(), image.channels());
    }
    Candidates candidates(const Image&) const override { return {}; }
    std::size_t parameter_hash() const override { return 0; }
};

}  // namespace

TEST(LrSchedule, StepDrops) {
    TrainConfig cfg;
    EXPECT_EQ(lr_schedule(0, cfg), 0.01);
    EXPECT_EQ(lr_schedule(24, cfg), 0.01);
    EXPECT_NEAR(lr_schedule(25, cfg), 1e-3, 1e-18);
    EXPECT_NEAR(lr_schedule(50, cfg), 1e-4, 1e-18);
    EXPECT_NEAR(lr_schedule(75, cfg), 1e-5, 1e-18);
    EXPECT_THROW(lr_schedule(-1, cfg), InvalidArgument);
    EXPECT_THROW(lr_schedule(100, cfg), InvalidArgument);

    cfg.lr_drop_every = cfg.epochs + 1;
    for (int e = 0; e < cfg.epochs; ++e) EXPECT_EQ(lr_schedule(e, cfg), cfg.lr0);
}

// Non-increasing, and it changes exactly at multiples of the drop interval.
TEST(LrSchedule, PiecewiseConstantProperty) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> epochs(2, 200), every(1, 40);
    std::uniform_real_distribution<double> lr(1e-4, 1.0), factor(1.01, 20.0);
    for (int trial = 0; trial < 200; ++trial) {
        TrainConfig cfg;
        cfg.epochs = epochs(rng);
        cfg.lr_drop_every = every(rng);
        cfg.lr0 = lr(rng);
        cfg.lr_drop_factor = factor(rng);
        for (int e = 1; e < cfg.epochs; ++e) {
            const double prev = lr_schedule(e - 1, cfg), cur = lr_schedule(e, cfg);
            EXPECT_LE(cur, prev);
            EXPECT_EQ(cur != prev, e % cfg.lr_drop_every == 0) << e;
        }
    }
}

TEST(TrainConfig, Validation) {
    TrainConfig cfg;
    cfg.validate();
    auto bad = [&](auto mutate) {
        TrainConfig c;
        mutate(c);
        EXPECT_THROW(c.validate(), InvalidArgument);
    };
    bad([](TrainConfig& c) { c.epochs = -1; });
    bad([](TrainConfig& c) { c.lr0 = 0.0; });
    bad([](TrainConfig& c) { c.lr_drop_factor = 1.0; });
    bad([](TrainConfig& c) { c.lr_drop_every = 0; });
    bad([](TrainConfig& c) { c.batch_size = 0; });
    bad([](TrainConfig& c) { c.patch_width = 4; });
    bad([](TrainConfig& c) { c.weights.lambda_s = -1.0; });
    bad([](TrainConfig& c) { c.optimizer.beta2 = 1.0; });
    bad([](TrainConfig& c) { c.placement_scale = 0.0; });
}

// Reference update written out per coordinate.
TEST(AdamW, MatchesReferenceUpdate) {
    AdamWConfig c;
    c.weight_decay = 0.05;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> p(7), ref(7), m(7, 0.0), v(7, 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) ref[i] = p[i] = u(rng);
    AdamW opt(p.size(), c);
    for (int t = 1; t <= 20; ++t) {
        std::vector<double> g(7);
        for (double& x : g) x = u(rng);
        const double lr = 0.01 * (t % 3 + 1);
        opt.step(p, g, lr);
        for (std::size_t i = 0; i < ref.size(); ++i) {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            const double mh = m[i] / (1.0 - std::pow(0.9, t)), vh = v[i] / (1.0 - std::pow(0.999, t));
            ref[i] = ref[i] * (1.0 - lr * 0.05) - lr * mh / (std::sqrt(vh) + 1e-8);
        }
        for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(p[i], ref[i], 1e-14);
    }
    EXPECT_EQ(opt.steps(), 20);
    std::vector<double> wrong(3);
    EXPECT_THROW(opt.step(wrong, wrong, 0.1), InvalidArgument);
}

// d(total)/d(patch) through augmentation, embedding and the toy detector.
TEST(BatchGradient, MatchesFiniteDifferences) {
    const ToyDetector det = toy_red();
    std::mt19937_64 rng(21);
    const std::vector<Image> images{oracle::random_image(rng, 56, 48, 3), oracle::random_image(rng, 56, 48, 3)};
    const std::vector<std::vector<BBox>> boxes{{{6, 4, 30, 44}}, {{3, 8, 24, 40}, {20, 2, 26, 50}}};
    AugmentParams params;
    params.perspective_scale = 0.15;
    std::vector<std::vector<AugmentDraw>> draws;
    for (const auto& b : boxes) {
        draws.emplace_back();
        for (std::size_t j = 0; j < b.size(); ++j) draws.back().push_back(sample_augment(rng, params));
    }
    const Image patch = oracle::patch_without_kinks(rng, 10, 10, 0.01, -0.2, 1.2);
    TrainConfig cfg;
    cfg.weights = {0.3, 1.0, 1.0};

    auto loss = [&](const Image& p) { return batch_loss_and_grad(det, images, boxes, draws, p, cfg).loss.total; };
    const BatchGradient bg = batch_loss_and_grad(det, images, boxes, draws, patch, cfg);
    int checked = 0;
    for (std::size_t i = 0; i < patch.size(); i += 3) {
        const double v = patch.data()[i];
        if (std::abs(v) < 1e-3 || std::abs(v - 1.0) < 1e-3) continue;
        const double fd = oracle::central_difference(loss, patch, i, 1e-6);
        const double scale = std::max(std::abs(fd), 1e-3);
        EXPECT_LT(std::abs(bg.grad.data()[i] - fd) / scale, 1e-3) << i;
        ++checked;
    }
    EXPECT_GT(checked, 80);
    EXPECT_NEAR(bg.loss.total, 0.3 * bg.loss.l_s + bg.loss.l_v + bg.loss.l_m, 1e-12);
}

TEST(TrainPatch, ZeroEpochsReturnsTheSeededPatch) {
    const ToyDetector det = toy_red();
    TrainConfig cfg = small_config();
    cfg.epochs = 0;
    const TrainResult r = train_patch(det, toy_data(4), cfg);
    EXPECT_EQ(r.patch.pixels, init_patch(cfg.seed, 16, 16).pixels);
    EXPECT_TRUE(r.log.epochs.empty());
    EXPECT_TRUE(r.log.batches.empty());
}

TEST(TrainPatch, AllZeroWeightsLeaveThePatchAlone) {
    const ToyDetector det = toy_red();
    TrainConfig cfg = small_config();
    cfg.weights = {0.0, 0.0, 0.0};
    const TrainResult r = train_patch(det, toy_data(8), cfg);
    EXPECT_EQ(r.patch.pixels, init_patch(cfg.seed, 16, 16).pixels);
    EXPECT_EQ(r.log.epochs.size(), 3u);
    for (const auto& e : r.log.epochs) EXPECT_EQ(e.mean.total, 0.0);
}

TEST(TrainPatch, OnlyThePatchChanges) {
    const ToyDetector det = toy_red();
    const auto data = toy_data(8);
    const std::size_t before = det.parameter_hash();
    const Image first = data.image(0);
    TrainConfig cfg = small_config();
    cfg.lr0 = 0.5;
    cfg.weights.lambda_v = 0.0;
    const TrainResult r = train_patch(det, data, cfg);
    EXPECT_EQ(det.parameter_hash(), before);
    EXPECT_EQ(data.image(0), first);
    EXPECT_NE(r.patch.pixels, init_patch(cfg.seed, 16, 16).pixels);
    // Export clamps into range and float32 precision regardless of dynamics.
    for (double v : r.patch.pixels.values()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        EXPECT_EQ(static_cast<double>(static_cast<float>(v)), v);
    }
    EXPECT_EQ(r.patch.meta.patch_id, "toy-red-s11");
    EXPECT_EQ(r.patch.meta.source_model, "toy-red");
    EXPECT_EQ(r.patch.meta.arch_group, ArchGroup::ObjectnessV7);
    EXPECT_EQ(r.patch.meta.epochs_trained, 3);
    r.patch.meta.validate();
}

TEST(TrainPatch, LogShape) {
    const TrainResult r = train_patch(toy_red(), toy_data(10), small_config());
    ASSERT_EQ(r.log.epochs.size(), 3u);
    EXPECT_EQ(r.log.batches.size(), 9u);  // ceil(10 / 4) per epoch
    std::istringstream lines(r.log.to_jsonl());
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        for (const char* key : {"epoch", "batch", "l_s", "l_v", "l_m", "total", "lr"}) EXPECT_TRUE(j.contains(key)) << key;
        ++n;
    }
    EXPECT_EQ(n, 9);
}

TEST(TrainPatch, Errors) {
    const ToyDetector det = toy_red();
    EXPECT_THROW(train_patch(det, AnnotatedDataset{}, small_config()), InvalidArgument);
    AnnotatedDataset boxless = toy_data(2);
    for (auto& s : boxless.samples) s.boxes.clear();
    EXPECT_THROW(train_patch(det, boxless, small_config()), InvalidArgument);
    EXPECT_THROW(train_patch(NanDetector{}, toy_data(2), small_config()), RuntimeFailure);
    EXPECT_THROW(train_patch_set(det, toy_data(2), small_config(), 0), InvalidArgument);
}

TEST(TrainPatch, WritesCheckpoints) {
    oracle::TempDir dir("ckpt");
    TrainConfig cfg = small_config();
    cfg.checkpoint_every = 2;
    cfg.epochs = 4;
    cfg.checkpoint_dir = dir.path();
    train_patch(toy_red(), toy_data(4), cfg);
    EXPECT_EQ(load_patch(dir / "toy-red-s11-epoch2").meta.epochs_trained, 2);
    EXPECT_EQ(load_patch(dir / "toy-red-s11-epoch4").meta.epochs_trained, 4);
    EXPECT_FALSE(std::filesystem::exists(dir / "toy-red-s11-epoch3.patch.bin"));
}

TEST(TrainPatch, TargetLossDecreases) {
    TrainConfig cfg;
    cfg.patch_height = cfg.patch_width = 32;
    cfg.seed = 1;
    const TrainResult r = train_patch(toy_red(), toy_data(32), cfg);
    ASSERT_EQ(r.log.epochs.size(), 100u);
    EXPECT_LT(r.log.epochs.back().mean.l_m, r.log.epochs.front().mean.l_m);
}

TEST(TrainPatch, PureSmoothingFlattensThePatch) {
    TrainConfig cfg;
    cfg.patch_height = cfg.patch_width = 32;
    cfg.weights = {100.0, 1.0, 0.0};
    cfg.seed = 2;
    cfg.batch_size = 1;
    const TrainResult r = train_patch(toy_red(), toy_data(8), cfg);
    const double initial = smoothness_loss(init_patch(cfg.seed, 32, 32).pixels);
    EXPECT_LT(smoothness_loss(r.patch.pixels), 0.01 * initial);
}

TEST(TrainPatchSet, SeedsConsistencyAndDeterminism) {
    const ToyDetector det = toy_red();
    const auto data = toy_data(4);
    TrainConfig cfg = small_config();
    cfg.epochs = 2;

    const auto single = train_patch_set(det, data, cfg, 1);
    ASSERT_EQ(single.size(), 1u);
    EXPECT_EQ(single[0].patch.pixels, train_patch(det, data, cfg).patch.pixels);

    const auto ten = train_patch_set(det, data, cfg, 10, 3);
    ASSERT_EQ(ten.size(), 10u);
    for (std::size_t i = 0; i < ten.size(); ++i) {
        EXPECT_EQ(ten[i].patch.meta.seed, cfg.seed + static_cast<std::int64_t>(i));
        for (std::size_t j = 0; j < i; ++j) EXPECT_NE(ten[i].patch.pixels, ten[j].patch.pixels);
    }
    const auto again = train_patch_set(det, data, cfg, 10, 1);
    for (std::size_t i = 0; i < ten.size(); ++i) EXPECT_EQ(ten[i].patch.pixels, again[i].patch.pixels);
}
