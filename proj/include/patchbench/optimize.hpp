#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "patchbench/detectors.hpp"
#include "patchbench/evaldata.hpp"
#include "patchbench/geometry.hpp"
#include "patchbench/losses.hpp"
#include "patchbench/patch.hpp"

namespace patchbench {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

struct TrainConfig {
    int epochs = 100;
    double lr0 = 0.01;
    int lr_drop_every = 25;
    double lr_drop_factor = 10.0;
    int batch_size = 8;
    LossWeights weights;
    AugmentParams augment;
    double placement_scale = 0.75;
    std::int64_t seed = 0;
    AdamWConfig optimizer;
    int patch_height = kDefaultPatchSide;
    int patch_width = kDefaultPatchSide;
    /// CLASSMAX only: restrict the max to this class column (-1 = all).
    int target_class = -1;
    /// Write a checkpoint every N epochs when > 0 and a directory is set.
    int checkpoint_every = 0;
    std::filesystem::path checkpoint_dir;

    void validate() const;
};

/// lr0 / factor^floor(epoch / drop_every).
double lr_schedule(int epoch, const TrainConfig& cfg);

struct EpochRecord {
    int epoch = 0;
    LossBreakdown mean;  ///< mean over the epoch's batches
    double lr = 0.0;
    double wall_time = 0.0;  ///< seconds since training started
};

struct BatchRecord {
    int epoch = 0;
    int batch = 0;
    LossBreakdown loss;
    double lr = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    std::vector<BatchRecord> batches;

    /// JSON lines: epoch, batch, l_s, l_v, l_m, total, lr (one per batch).
    std::string to_jsonl() const;
};

/// Decoupled-weight-decay Adam over a flat parameter vector.
class AdamW {
public:
    AdamW(std::size_t size, AdamWConfig config);
    void step(std::span<double> params, std::span<const double> grad, double lr);
    int steps() const { return t_; }

private:
    AdamWConfig config_;
    std::vector<double> m_;
    std::vector<double> v_;
    int t_ = 0;
};

struct TrainResult {
    Patch patch;
    TrainLog log;
};

/// Loss and patch gradient of one batch. Exposed so the gradient can be
/// checked against finite differences.
struct BatchGradient {
    LossBreakdown loss;
    Image grad;
};

BatchGradient batch_loss_and_grad(const DetectorAdapter& adapter, const std::vector<Image>& images,
                                  const std::vector<std::vector<BBox>>& boxes,
                                  const std::vector<std::vector<AugmentDraw>>& draws, const Image& patch,
                                  const TrainConfig& cfg);

TrainResult train_patch(const DetectorAdapter& adapter, const AnnotatedDataset& dataset, const TrainConfig& cfg);

/// `count` patches with seeds cfg.seed, cfg.seed + 1, ...; runs up to `jobs`
/// members concurrently.
std::vector<TrainResult> train_patch_set(const DetectorAdapter& adapter, const AnnotatedDataset& dataset,
                                         const TrainConfig& cfg, int count, int jobs = 1);

}  // namespace patchbench
