#include "patchbench/optimize.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "patchbench/error.hpp"
#include "patchbench/parallel.hpp"

namespace patchbench {

void TrainConfig::validate() const {
    if (epochs < 0) throw InvalidArgument("epochs must be non-negative");
    if (!(lr0 > 0.0)) throw InvalidArgument("learning rate must be positive");
    if (lr_drop_every < 1) throw InvalidArgument("lr drop interval must be at least 1");
    if (!(lr_drop_factor > 1.0)) throw InvalidArgument("lr drop factor must be greater than 1");
    if (batch_size < 1) throw InvalidArgument("batch size must be at least 1");
    if (!(placement_scale > 0.0)) throw InvalidArgument("placement scale must be positive");
    if (patch_height < kMinPatchSide || patch_width < kMinPatchSide) {
        throw InvalidArgument("patch sides must be at least " + std::to_string(kMinPatchSide));
    }
    if (checkpoint_every < 0) throw InvalidArgument("checkpoint interval must be non-negative");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
        throw InvalidArgument("AdamW betas must lie in [0,1)");
    }
    weights.validate(/*allow_all_zero=*/true);
    augment.validate();
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
    if (epoch < 0 || epoch >= cfg.epochs) {
        throw InvalidArgument("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + ")");
    }
    return cfg.lr0 / std::pow(cfg.lr_drop_factor, epoch / cfg.lr_drop_every);
}

std::string TrainLog::to_jsonl() const {
    std::ostringstream out;
    for (const BatchRecord& b : batches) {
        const nlohmann::json j = {{"epoch", b.epoch}, {"batch", b.batch},      {"l_s", b.loss.l_s},
                                  {"l_v", b.loss.l_v},  {"l_m", b.loss.l_m},    {"total", b.loss.total},
                                  {"lr", b.lr}};
        out << j.dump() << '\n';
    }
    return out.str();
}

AdamW::AdamW(std::size_t size, AdamWConfig config) : config_(config), m_(size, 0.0), v_(size, 0.0) {}

void AdamW::step(std::span<double> params, std::span<const double> grad, double lr) {
    if (params.size() != m_.size() || grad.size() != m_.size()) throw InvalidArgument("AdamW size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, t_);
    const double c2 = 1.0 - std::pow(config_.beta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grad[i];
        v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
        const double mhat = m_[i] / c1;
        const double vhat = v_[i] / c2;
        params[i] -= lr * config_.weight_decay * params[i];
        params[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
}

BatchGradient batch_loss_and_grad(const DetectorAdapter& adapter, const std::vector<Image>& images,
                                  const std::vector<std::vector<BBox>>& boxes,
                                  const std::vector<std::vector<AugmentDraw>>& draws, const Image& patch,
                                  const TrainConfig& cfg) {
    if (images.empty()) throw InvalidArgument("empty batch");
    if (boxes.size() != images.size() || draws.size() != images.size()) {
        throw InvalidArgument("batch images, boxes and draws must align");
    }
    BatchGradient out;
    out.grad = Image(patch.height(), patch.width(), patch.channels());
    const double inv_batch = 1.0 / static_cast<double>(images.size());
    double l_m = 0.0;

    for (std::size_t b = 0; b < images.size(); ++b) {
        if (draws[b].size() != boxes[b].size()) throw InvalidArgument("one augmentation draw per box is required");
        std::vector<AugmentedPatch> augmented;
        Image img = images[b];
        for (std::size_t j = 0; j < boxes[b].size(); ++j) {
            augmented.push_back(apply_augment(patch, target_square(boxes[b][j], cfg.placement_scale), draws[b][j]));
            img = embed_patch(img, augmented.back().canvas, augmented.back().placement).image;
        }
        const RawScores scores = adapter.raw_scores(img);
        l_m += target_loss(scores, cfg.target_class) * inv_batch;
        if (cfg.weights.lambda_m == 0.0) continue;

        const ScoreGrad sg = target_loss_grad(scores, cfg.weights.lambda_m * inv_batch, cfg.target_class);
        Image g = adapter.backward(img, scores, sg);
        for (std::size_t j = augmented.size(); j-- > 0;) {
            const AugmentedPatch& a = augmented[j];
            Image canvas_grad(a.canvas.height(), a.canvas.width(), a.canvas.channels());
            embed_patch_backward(g, a.canvas, a.placement, canvas_grad);
            const Image pg = augment_backward(canvas_grad, patch, a);
            for (std::size_t k = 0; k < pg.values().size(); ++k) out.grad.values()[k] += pg.values()[k];
        }
    }

    const double l_s = smoothness_loss(patch);
    const double l_v = validity_loss(patch);
    if (cfg.weights.lambda_s != 0.0) smoothness_grad(patch, cfg.weights.lambda_s, out.grad);
    if (cfg.weights.lambda_v != 0.0) validity_grad(patch, cfg.weights.lambda_v, out.grad);
    out.loss = total_loss(l_s, l_v, l_m, cfg.weights);
    return out;
}

namespace {

bool all_finite(const Image& img) {
    return std::all_of(img.values().begin(), img.values().end(), [](double v) { return std::isfinite(v); });
}

std::string patch_id_for(const DetectorAdapter& adapter, std::int64_t seed) {
    return adapter.name() + "-s" + std::to_string(seed);
}

}  // namespace

TrainResult train_patch(const DetectorAdapter& adapter, const AnnotatedDataset& dataset, const TrainConfig& cfg) {
    cfg.validate();
    if (dataset.box_count() == 0) throw InvalidArgument("cannot train on a dataset without boxes");

    // Detector inputs are prepared once; the patch is embedded after letterboxing.
    std::vector<Image> inputs;
    std::vector<std::vector<BBox>> input_boxes;
    const auto size = adapter.input_size();
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        Image img = dataset.image(i);
        std::vector<BBox> bx = dataset.samples[i].boxes;
        if (size) {
            Letterbox lb;
            img = letterbox(img, size->first, size->second, lb);
            for (BBox& b : bx) b = lb.to_input(b);
        }
        inputs.push_back(std::move(img));
        input_boxes.push_back(std::move(bx));
    }

    TrainResult result;
    result.patch = init_patch(cfg.seed, cfg.patch_height, cfg.patch_width);
    Image& pixels = result.patch.pixels;
    PatchMeta& meta = result.patch.meta;
    meta.patch_id = patch_id_for(adapter, cfg.seed);
    meta.source_model = adapter.name();
    meta.arch_group = adapter.group();
    meta.kind = PatchKind::Optimized;
    meta.seed = cfg.seed;
    meta.loss_weights = cfg.weights;

    std::mt19937_64 rng(static_cast<std::uint64_t>(cfg.seed) ^ 0x5bd1e995u);
    AdamW opt(pixels.values().size(), cfg.optimizer);
    std::vector<std::size_t> order(inputs.size());
    std::iota(order.begin(), order.end(), 0);
    const auto start = std::chrono::steady_clock::now();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, cfg);
        std::shuffle(order.begin(), order.end(), rng);
        LossBreakdown sum;
        int batches = 0;
        for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Image> imgs;
            std::vector<std::vector<BBox>> bxs;
            std::vector<std::vector<AugmentDraw>> draws;
            for (std::size_t k = first; k < last; ++k) {
                imgs.push_back(inputs[order[k]]);
                bxs.push_back(input_boxes[order[k]]);
                std::vector<AugmentDraw> d;
                for (std::size_t j = 0; j < bxs.back().size(); ++j) d.push_back(sample_augment(rng, cfg.augment));
                draws.push_back(std::move(d));
            }
            const BatchGradient bg = batch_loss_and_grad(adapter, imgs, bxs, draws, pixels, cfg);
            if (!std::isfinite(bg.loss.total) || !all_finite(bg.grad)) {
                throw RuntimeFailure("non-finite loss or gradient at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batches));
            }
            opt.step(pixels.values(), bg.grad.values(), lr);
            result.log.batches.push_back({epoch, batches, bg.loss, lr});
            sum.l_s += bg.loss.l_s;
            sum.l_v += bg.loss.l_v;
            sum.l_m += bg.loss.l_m;
            sum.total += bg.loss.total;
            ++batches;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.mean = {sum.l_s / batches, sum.l_v / batches, sum.l_m / batches, sum.total / batches};
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.log.epochs.push_back(rec);
        meta.epochs_trained = epoch + 1;

        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && (epoch + 1) % cfg.checkpoint_every == 0) {
            std::filesystem::create_directories(cfg.checkpoint_dir);
            Patch ckpt{to_patch_range(pixels), meta};
            ckpt.meta.created_at = utc_timestamp();
            save_patch(ckpt, cfg.checkpoint_dir / (meta.patch_id + "-epoch" + std::to_string(epoch + 1)));
        }
    }
    pixels = to_patch_range(pixels);
    meta.created_at = utc_timestamp();
    return result;
}

std::vector<TrainResult> train_patch_set(const DetectorAdapter& adapter, const AnnotatedDataset& dataset,
                                         const TrainConfig& cfg, int count, int jobs) {
    if (count < 1) throw InvalidArgument("patch count must be at least 1");
    cfg.validate();
    std::vector<TrainResult> out(static_cast<std::size_t>(count));
    parallel_for(out.size(), jobs, [&](std::size_t i) {
        TrainConfig c = cfg;
        c.seed = cfg.seed + static_cast<std::int64_t>(i);
        out[i] = train_patch(adapter, dataset, c);
    });
    return out;
}

}  // namespace patchbench
