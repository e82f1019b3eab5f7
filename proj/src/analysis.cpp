#include "patchbench/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <opencv2/dnn.hpp>

#include "patchbench/error.hpp"

namespace patchbench {

MockExtractor::MockExtractor(int dims, int input_side, int kernel, std::uint64_t seed)
    : dims_(dims), input_side_(input_side), kernel_(kernel), seed_(seed) {
    if (dims < 1 || kernel < 1 || input_side < kernel) {
        throw InvalidArgument("mock extractor needs dims >= 1 and input_side >= kernel >= 1");
    }
    std::mt19937_64 rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(kernel * kernel * 3));
    std::normal_distribution<double> dist(0.0, scale);
    filters_.resize(static_cast<std::size_t>(dims) * kernel * kernel * 3);
    for (double& w : filters_) w = dist(rng);
}

std::string MockExtractor::id() const {
    return "mock-d" + std::to_string(dims_) + "-i" + std::to_string(input_side_) + "-k" + std::to_string(kernel_) +
           "-s" + std::to_string(seed_);
}

FeatureVector MockExtractor::extract(const Patch& patch) const {
    if (patch.pixels.channels() != 3) throw InvalidArgument("feature extraction expects RGB patches");
    const Image x = resize_area(patch.pixels, input_side_, input_side_);
    const int out = input_side_ - kernel_ + 1;
    const std::size_t taps = static_cast<std::size_t>(kernel_) * kernel_ * 3;
    FeatureVector fv;
    fv.patch_id = patch.meta.patch_id;
    fv.extractor_id = id();
    fv.values.assign(static_cast<std::size_t>(dims_), 0.0);
    for (int d = 0; d < dims_; ++d) {
        const double* w = filters_.data() + d * taps;
        double acc = 0.0;
        for (int y = 0; y < out; ++y) {
            for (int xx = 0; xx < out; ++xx) {
                double s = 0.0;
                std::size_t t = 0;
                for (int ky = 0; ky < kernel_; ++ky) {
                    for (int kx = 0; kx < kernel_; ++kx) {
                        for (int c = 0; c < 3; ++c) s += w[t++] * (2.0 * x.at(y + ky, xx + kx, c) - 1.0);
                    }
                }
                acc += std::tanh(s);
            }
        }
        fv.values[static_cast<std::size_t>(d)] = acc / (static_cast<double>(out) * out);
    }
    return fv;
}

struct DnnExtractor::Impl {
    cv::dnn::Net net;
    std::string layer;
    int input_side;
    std::string model_name;
};

DnnExtractor::DnnExtractor(const std::filesystem::path& model, std::string layer, int input_side)
    : impl_(std::make_unique<Impl>()) {
    if (!std::filesystem::exists(model)) throw NotFound("feature model not found: " + model.string());
    try {
        impl_->net = cv::dnn::readNet(model.string());
    } catch (const cv::Exception& e) {
        throw BackendError("cannot load feature model " + model.string() + ": " + e.what());
    }
    if (impl_->net.empty()) throw BackendError("cannot load feature model " + model.string());
    impl_->layer = std::move(layer);
    impl_->input_side = input_side;
    impl_->model_name = model.filename().string();
}

DnnExtractor::~DnnExtractor() = default;

std::string DnnExtractor::id() const { return "dnn-" + impl_->model_name + "-" + impl_->layer; }

FeatureVector DnnExtractor::extract(const Patch& patch) const {
    const Image& p = patch.pixels;
    cv::Mat rgb(p.height(), p.width(), CV_32FC3);
    for (int y = 0; y < p.height(); ++y) {
        for (int x = 0; x < p.width(); ++x) {
            for (int c = 0; c < 3; ++c) rgb.ptr<float>(y)[x * 3 + c] = static_cast<float>(2.0 * p.at(y, x, c) - 1.0);
        }
    }
    const cv::Mat blob = cv::dnn::blobFromImage(rgb, 1.0, cv::Size(impl_->input_side, impl_->input_side),
                                                cv::Scalar(), false, false, CV_32F);
    cv::Mat out;
    try {
        impl_->net.setInput(blob);
        out = impl_->net.forward(impl_->layer);
    } catch (const cv::Exception& e) {
        throw BackendError("feature forward pass failed: " + std::string(e.what()));
    }
    FeatureVector fv;
    fv.patch_id = patch.meta.patch_id;
    fv.extractor_id = id();
    if (out.dims == 4) {
        const int ch = out.size[1];
        const std::size_t spatial = static_cast<std::size_t>(out.size[2]) * out.size[3];
        const float* data = out.ptr<float>();
        for (int c = 0; c < ch; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < spatial; ++i) s += data[c * spatial + i];
            fv.values.push_back(s / static_cast<double>(spatial));
        }
    } else {
        const cv::Mat flat = out.reshape(1, 1);
        for (int i = 0; i < flat.cols; ++i) fv.values.push_back(flat.at<float>(0, i));
    }
    return fv;
}

FeatureVector extract_features(const FeatureExtractor& extractor, const Patch& patch) {
    FeatureVector fv = extractor.extract(patch);
    for (double v : fv.values) {
        if (!std::isfinite(v)) throw RuntimeFailure("non-finite feature for patch " + patch.meta.patch_id);
    }
    return fv;
}

std::vector<double> tsne_affinities(const std::vector<std::vector<double>>& points, double perplexity) {
    const std::size_t n = points.size();
    std::vector<double> d2(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < points[i].size(); ++k) {
                const double d = points[i][k] - points[j][k];
                s += d * d;
            }
            d2[i * n + j] = d2[j * n + i] = s;
        }
    }
    const double target = std::log(perplexity);
    std::vector<double> p(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
        for (int iter = 0; iter < 200; ++iter) {
            double dmin = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                if (j != i) dmin = std::min(dmin, d2[i * n + j]);
            }
            double sum = 0.0, dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const double e = std::exp(-beta * (d2[i * n + j] - dmin));
                p[i * n + j] = e;
                sum += e;
                dot += e * (d2[i * n + j] - dmin);
            }
            // Shannon entropy of the row in nats.
            const double h = std::log(sum) + beta * dot / sum;
            for (std::size_t j = 0; j < n; ++j) p[i * n + j] /= sum;
            const double diff = h - target;
            if (std::abs(diff) < 1e-5) break;
            if (diff > 0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    }
    return p;
}

namespace {

bool feature_less(const FeatureVector& a, const FeatureVector& b) {
    if (a.patch_id != b.patch_id) return a.patch_id < b.patch_id;
    return a.values < b.values;
}

}  // namespace

std::vector<std::array<double, 2>> tsne_embed(const std::vector<FeatureVector>& features,
                                              const TsneParams& params) {
    const std::size_t n = features.size();
    if (n < 4) throw InvalidArgument("t-SNE needs at least 4 points, got " + std::to_string(n));
    const std::size_t dim = features.front().values.size();
    for (const auto& f : features) {
        if (f.values.size() != dim) throw InvalidArgument("feature vectors differ in length");
    }
    if (!(params.perplexity > 0.0) || params.perplexity >= (static_cast<double>(n) - 1.0) / 3.0) {
        throw InvalidArgument("perplexity must lie in (0, (n - 1) / 3)");
    }
    if (params.iterations < 1) throw InvalidArgument("t-SNE needs at least one iteration");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return feature_less(features[a], features[b]); });
    std::vector<std::vector<double>> pts(n);
    for (std::size_t i = 0; i < n; ++i) pts[i] = features[order[i]].values;

    const std::vector<double> cond = tsne_affinities(pts, params.perplexity);
    std::vector<double> P(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            P[i * n + j] = std::max((cond[i * n + j] + cond[j * n + i]) / (2.0 * n), 1e-12);
        }
    }

    // PCA initialization, signs fixed so that each axis' largest loading is positive.
    Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < dim; ++k) X(i, k) = pts[i][k];
    }
    X.rowwise() -= X.colwise().mean();
    Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), 2);
    if (dim > 0 && X.norm() > 0.0) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinV);
        const Eigen::MatrixXd& V = svd.matrixV();
        for (Eigen::Index c = 0; c < std::min<Eigen::Index>(2, V.cols()); ++c) {
            Eigen::Index arg = 0;
            V.col(c).cwiseAbs().maxCoeff(&arg);
            const double sign = V(arg, c) < 0 ? -1.0 : 1.0;
            Y.col(c) = sign * (X * V.col(c));
        }
    }
    const double sd = std::sqrt(Y.col(0).squaredNorm() / static_cast<double>(n));
    if (sd > 0.0) {
        Y *= 1e-4 / sd;
    } else {
        std::mt19937_64 rng(params.seed);
        std::normal_distribution<double> dist(0.0, 1e-4);
        for (Eigen::Index i = 0; i < Y.size(); ++i) Y.data()[i] = dist(rng);
    }

    const double lr = params.learning_rate > 0.0
                          ? params.learning_rate
                          : std::max(static_cast<double>(n) / (4.0 * params.early_exaggeration), 50.0);
    Eigen::MatrixXd update = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), 2);
    Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(n), 2);
    std::vector<double> num(n * n);
    for (int it = 0; it < params.iterations; ++it) {
        const double exag = it < params.exaggeration_iters ? params.early_exaggeration : 1.0;
        const double momentum = it < params.exaggeration_iters ? 0.5 : 0.8;
        double zsum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            num[i * n + i] = 0.0;
            for (std::size_t j = i + 1; j < n; ++j) {
                const double dx = Y(i, 0) - Y(j, 0), dy = Y(i, 1) - Y(j, 1);
                const double q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = num[j * n + i] = q;
                zsum += 2.0 * q;
            }
        }
        Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), 2);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double q = num[i * n + j];
                const double mult = 4.0 * (exag * P[i * n + j] - q / zsum) * q;
                grad(i, 0) += mult * (Y(i, 0) - Y(j, 0));
                grad(i, 1) += mult * (Y(i, 1) - Y(j, 1));
            }
        }
        for (Eigen::Index k = 0; k < Y.size(); ++k) {
            double& g = gains.data()[k];
            const bool same = (grad.data()[k] > 0) == (update.data()[k] > 0);
            g = same ? std::max(g * 0.8, 0.01) : g + 0.2;
            update.data()[k] = momentum * update.data()[k] - lr * g * grad.data()[k];
            Y.data()[k] += update.data()[k];
        }
    }
    Y.rowwise() -= Y.colwise().mean();

    std::vector<std::array<double, 2>> out(n);
    for (std::size_t i = 0; i < n; ++i) out[order[i]] = {Y(i, 0), Y(i, 1)};
    return out;
}

Hsv rgb_to_hsv(double r, double g, double b) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double d = mx - mn;
    Hsv out;
    out.v = mx;
    out.s = mx > 0.0 ? d / mx : 0.0;
    if (d > 0.0) {
        double h;
        if (mx == r) {
            h = (g - b) / d;
        } else if (mx == g) {
            h = 2.0 + (b - r) / d;
        } else {
            h = 4.0 + (r - g) / d;
        }
        h /= 6.0;
        if (h < 0.0) h += 1.0;
        out.h = h >= 1.0 ? h - 1.0 : h;
    }
    return out;
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
    const double hh = (h - std::floor(h)) * 6.0;
    const int sector = static_cast<int>(hh) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
    switch (sector) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

std::array<Histogram, 3> channel_histograms(const std::vector<Patch>& patches, ColorSpace space) {
    std::array<Histogram, 3> h{};
    for (const Patch& patch : patches) {
        const Image& img = patch.pixels;
        if (img.channels() != 3) throw InvalidArgument("histograms expect RGB patches");
        for (int y = 0; y < img.height(); ++y) {
            for (int x = 0; x < img.width(); ++x) {
                std::array<double, 3> v{img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
                if (space == ColorSpace::HSV) {
                    const Hsv hsv = rgb_to_hsv(v[0], v[1], v[2]);
                    v = {hsv.h, hsv.s, hsv.v};
                }
                for (int c = 0; c < 3; ++c) ++h[c][quantize_8bit(v[c])];
            }
        }
    }
    return h;
}

HistogramStats histogram_stats(const Histogram& bins) {
    HistogramStats s;
    double n = 0.0, sum = 0.0;
    for (int b = 1; b <= 254; ++b) {
        s.count += bins[b];
        n += static_cast<double>(bins[b]);
        sum += static_cast<double>(bins[b]) * b;
    }
    if (s.count < 2) throw UndefinedMetric("histogram needs at least 2 counts in bins 1..254");
    s.mean = sum / n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (int b = 1; b <= 254; ++b) {
        const double d = b - s.mean, w = static_cast<double>(bins[b]);
        m2 += w * d * d;
        m3 += w * d * d * d;
        m4 += w * d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    s.std = std::sqrt(m2);
    if (m2 > 0.0) {
        s.skewness = m3 / std::pow(m2, 1.5);
        s.kurtosis = m4 / (m2 * m2) - 3.0;
    }
    // k-th smallest value (0-based) in the restricted distribution.
    auto kth = [&](std::uint64_t k) {
        std::uint64_t seen = 0;
        for (int b = 1; b <= 254; ++b) {
            seen += bins[b];
            if (seen > k) return static_cast<double>(b);
        }
        return 254.0;
    };
    s.median = s.count % 2 == 1 ? kth(s.count / 2) : 0.5 * (kth(s.count / 2 - 1) + kth(s.count / 2));
    return s;
}

}  // namespace patchbench
