#include "patchbench/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>

#include "patchbench/error.hpp"

namespace patchbench {

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
    if (height < 0 || width < 0 || channels <= 0) {
        throw InvalidArgument("image dimensions must be non-negative with at least one channel");
    }
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

unsigned char quantize_8bit(double v) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    return static_cast<unsigned char>(std::lround(clamped * 255.0));
}

Image read_image(const std::string& path) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) {
        throw NotFound("cannot read image: " + path);
    }
    Image out(bgr.rows, bgr.cols, 3);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            for (int c = 0; c < 3; ++c) {
                out.at(y, x, c) = row[x][2 - c] / 255.0;
            }
        }
    }
    return out;
}

void write_image_8bit(const Image& image, const std::string& path) {
    if (image.channels() != 3 && image.channels() != 1) {
        throw InvalidArgument("8-bit export needs 1 or 3 channels");
    }
    const int type = image.channels() == 3 ? CV_8UC3 : CV_8UC1;
    cv::Mat mat(image.height(), image.width(), type);
    for (int y = 0; y < image.height(); ++y) {
        auto* row = mat.ptr<unsigned char>(y);
        for (int x = 0; x < image.width(); ++x) {
            if (image.channels() == 1) {
                row[x] = quantize_8bit(image.at(y, x));
                continue;
            }
            for (int c = 0; c < 3; ++c) {
                row[x * 3 + (2 - c)] = quantize_8bit(image.at(y, x, c));
            }
        }
    }
    if (!cv::imwrite(path, mat)) {
        throw RuntimeFailure("cannot write image: " + path);
    }
}

namespace {

// Overlap of output cell [o*ratio, (o+1)*ratio) with each source cell.
std::vector<std::vector<std::pair<int, double>>> area_weights(int src, int dst) {
    std::vector<std::vector<std::pair<int, double>>> weights(dst);
    const double ratio = static_cast<double>(src) / dst;
    for (int o = 0; o < dst; ++o) {
        const double lo = o * ratio;
        const double hi = (o + 1) * ratio;
        for (int s = static_cast<int>(std::floor(lo)); s < src && s < hi; ++s) {
            const double overlap = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
            if (overlap > 0.0) {
                weights[o].emplace_back(s, overlap / ratio);
            }
        }
    }
    return weights;
}

}  // namespace

Image resize_area(const Image& src, int height, int width) {
    if (height <= 0 || width <= 0 || src.empty()) {
        throw InvalidArgument("resize target must be positive and source non-empty");
    }
    const auto wy = area_weights(src.height(), height);
    const auto wx = area_weights(src.width(), width);
    Image out(height, width, src.channels());
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (const auto& [sy, ay] : wy[y]) {
                for (const auto& [sx, ax] : wx[x]) {
                    for (int c = 0; c < src.channels(); ++c) {
                        out.at(y, x, c) += ay * ax * src.at(sy, sx, c);
                    }
                }
            }
        }
    }
    return out;
}

Image resize_bilinear(const Image& src, int height, int width) {
    if (height <= 0 || width <= 0 || src.empty()) {
        throw InvalidArgument("resize target must be positive and source non-empty");
    }
    Image out(height, width, src.channels());
    const double sy = static_cast<double>(src.height()) / height;
    const double sx = static_cast<double>(src.width()) / width;
    for (int y = 0; y < height; ++y) {
        const double v = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height() - 1.0);
        const int y0 = static_cast<int>(v);
        const int y1 = std::min(y0 + 1, src.height() - 1);
        const double fy = v - y0;
        for (int x = 0; x < width; ++x) {
            const double u = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width() - 1.0);
            const int x0 = static_cast<int>(u);
            const int x1 = std::min(x0 + 1, src.width() - 1);
            const double fx = u - x0;
            for (int c = 0; c < src.channels(); ++c) {
                out.at(y, x, c) = (1 - fy) * ((1 - fx) * src.at(y0, x0, c) + fx * src.at(y0, x1, c)) +
                                  fy * ((1 - fx) * src.at(y1, x0, c) + fx * src.at(y1, x1, c));
            }
        }
    }
    return out;
}

}  // namespace patchbench
