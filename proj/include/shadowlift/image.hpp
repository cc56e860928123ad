#pragma once

#include <vector>

#include "shadowlift/tensor.hpp"

namespace shadowlift {

// H x W x C image, channels-last, nominal range [-1, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0);

    double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

    bool same_dims(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    bool operator==(const Image& o) const { return same_dims(o) && data == o.data; }
};

// Channels-last image to a {1,C,H,W} tensor and back.
Tensor to_tensor(const Image& image);
Image to_image(const Tensor& nchw, int n = 0);
Tensor to_batch(std::span<const Image> images);

}  // namespace shadowlift
