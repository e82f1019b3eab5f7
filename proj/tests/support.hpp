#pragma once

// Independent reference implementations and random generators shared by the
// unit tests and the acceptance binary. Nothing here calls into the code under
// test except for plain data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "patchbench/evaluation.hpp"
#include "patchbench/image.hpp"

namespace oracle {

using patchbench::BBox;
using patchbench::Image;

inline double box_iou(const BBox& a, const BBox& b) {
    const double x0 = std::max(a.x, b.x), y0 = std::max(a.y, b.y);
    const double x1 = std::min(a.x + a.w, b.x + b.w), y1 = std::min(a.y + a.h, b.y + b.h);
    if (x1 <= x0 || y1 <= y0) return 0.0;
    const double inter = (x1 - x0) * (y1 - y0);
    return inter / (a.w * a.h + b.w * b.h - inter);
}

/// Brute-force AP: greedy matching in stable descending-score order, then
/// for every recall level r in {0, .01, ..., 1} the maximum precision over
/// all ranks whose recall reaches r.
inline double average_precision(const std::vector<patchbench::ScoredDetection>& dets,
                                const patchbench::GroundTruth& gt, double thresh) {
    std::vector<std::size_t> idx(dets.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    // Insertion sort keeps equal scores in input order.
    for (std::size_t i = 1; i < idx.size(); ++i) {
        for (std::size_t j = i; j > 0 && dets[idx[j]].score > dets[idx[j - 1]].score; --j) std::swap(idx[j], idx[j - 1]);
    }
    std::size_t total = 0;
    for (const auto& g : gt) total += g.size();
    std::vector<std::vector<bool>> taken;
    for (const auto& g : gt) taken.emplace_back(g.size(), false);

    std::vector<double> prec, rec;
    double tp = 0;
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto& d = dets[idx[r]];
        int best = -1;
        double best_iou = -1.0;
        for (std::size_t g = 0; d.image < gt.size() && g < gt[d.image].size(); ++g) {
            if (taken[d.image][g]) continue;
            const double v = box_iou(d.box, gt[d.image][g]);
            if (v >= thresh && v > best_iou) {
                best_iou = v;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0) {
            taken[d.image][static_cast<std::size_t>(best)] = true;
            tp += 1;
        }
        prec.push_back(tp / static_cast<double>(r + 1));
        rec.push_back(tp / static_cast<double>(total));
    }
    double area = 0.0;
    for (int k = 0; k <= 100; ++k) {
        const double level = k / 100.0;
        double p = 0.0;
        for (std::size_t i = 0; i < prec.size(); ++i) {
            if (rec[i] >= level) p = std::max(p, prec[i]);
        }
        area += p;
    }
    return area / 101.0;
}

inline double coco_map(const std::vector<patchbench::ScoredDetection>& dets, const patchbench::GroundTruth& gt) {
    double s = 0.0;
    // Thresholds are the doubles nearest to .50, .55, ..., .95.
    for (int pct = 50; pct <= 95; pct += 5) s += oracle::average_precision(dets, gt, pct / 100.0);
    return s / 10.0;
}

/// Greedy NMS by exhaustive scan: repeatedly take the best remaining box and
/// drop everything of its category that overlaps it too much.
inline std::vector<std::size_t> nms(const std::vector<patchbench::Detection>& dets, double thresh) {
    std::vector<bool> alive(dets.size(), true);
    std::vector<std::size_t> keep;
    for (;;) {
        int best = -1;
        for (std::size_t i = 0; i < dets.size(); ++i) {
            if (alive[i] && (best < 0 || dets[i].score > dets[static_cast<std::size_t>(best)].score)) {
                best = static_cast<int>(i);
            }
        }
        if (best < 0) return keep;
        const auto b = static_cast<std::size_t>(best);
        keep.push_back(b);
        alive[b] = false;
        for (std::size_t i = 0; i < dets.size(); ++i) {
            if (alive[i] && dets[i].category == dets[b].category && box_iou(dets[i].box, dets[b].box) > thresh) {
                alive[i] = false;
            }
        }
    }
}

/// Central finite difference of f at x along coordinate i.
inline double central_difference(const std::function<double(const Image&)>& f, const Image& x, std::size_t i,
                                 double h) {
    Image plus = x, minus = x;
    plus.data()[i] += h;
    minus.data()[i] -= h;
    return (f(plus) - f(minus)) / (2.0 * h);
}

inline double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

inline Image random_image(std::mt19937_64& rng, int h, int w, int c, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Image img(h, w, c);
    for (double& v : img.data()) v = u(rng);
    return img;
}

/// Random patch in [lo, hi] whose horizontally and vertically neighbouring
/// values differ by at least `gap`. Keeps finite differences away from the
/// smoothed kinks of total-variation terms.
inline Image patch_without_kinks(std::mt19937_64& rng, int h, int w, double gap, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Image p(h, w, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = 0.0;
                do {
                    v = u(rng);
                } while ((x > 0 && std::abs(v - p.at(y, x - 1, c)) < gap) ||
                         (y > 0 && std::abs(v - p.at(y - 1, x, c)) < gap));
                p.at(y, x, c) = v;
            }
    return p;
}

/// Small random detection problem: up to `max_images` images with up to
/// `max_boxes` ground-truth and detected boxes in total, on a coarse grid so
/// that IoU ties and exact threshold hits occur.
struct DetectionProblem {
    std::vector<patchbench::ScoredDetection> dets;
    patchbench::GroundTruth gt;
};

inline DetectionProblem random_problem(std::mt19937_64& rng, int max_images = 3, int max_boxes = 10) {
    std::uniform_int_distribution<int> n_img(1, max_images);
    DetectionProblem p;
    p.gt.resize(static_cast<std::size_t>(n_img(rng)));
    std::uniform_int_distribution<int> coord(0, 8), extent(1, 6), n_box(0, max_boxes);
    std::uniform_int_distribution<std::size_t> which(0, p.gt.size() - 1);
    auto box = [&] {
        return BBox{static_cast<double>(coord(rng)), static_cast<double>(coord(rng)),
                    static_cast<double>(extent(rng)), static_cast<double>(extent(rng))};
    };
    const int n_gt = std::max(1, n_box(rng));
    for (int i = 0; i < n_gt; ++i) p.gt[which(rng)].push_back(box());
    const int n_det = n_box(rng);
    std::uniform_int_distribution<int> score(0, 9);
    std::bernoulli_distribution jitter(0.5);
    for (int i = 0; i < n_det; ++i) {
        const std::size_t im = which(rng);
        BBox b = box();
        if (!p.gt[im].empty() && jitter(rng)) {
            b = p.gt[im][std::uniform_int_distribution<std::size_t>(0, p.gt[im].size() - 1)(rng)];
            b.x += std::uniform_int_distribution<int>(-1, 1)(rng);
            b.w += std::uniform_int_distribution<int>(0, 1)(rng);
        }
        p.dets.push_back({im, b, score(rng) / 10.0});
    }
    return p;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("patchbench-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    std::filesystem::path path_;
};

}  // namespace oracle
