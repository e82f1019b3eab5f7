#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace patchbench {

/// Dense row-major H x W x C image of doubles (HWC interleaved).
class Image {
public:
    Image() = default;
    Image(int height, int width, int channels = 3, double fill = 0.0);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(int y, int x, int c = 0) { return data_[index(y, x, c)]; }
    double at(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }

    std::size_t index(int y, int x, int c = 0) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Image& other) const {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

/// Reads an 8-bit image from disk as RGB in [0,1].
Image read_image(const std::string& path);

/// Writes an RGB [0,1] image as 8-bit, quantizing with round(v * 255) after
/// clamping.
void write_image_8bit(const Image& image, const std::string& path);

/// Quantizes one [0,1] value the same way the 8-bit writers do.
unsigned char quantize_8bit(double v);

/// Area-weighted resize. Each output pixel averages the source pixels its
/// footprint overlaps, so every source pixel contributes when shrinking.
Image resize_area(const Image& src, int height, int width);

/// Bilinear resize with half-pixel centers and edge clamping.
Image resize_bilinear(const Image& src, int height, int width);

}  // namespace patchbench
