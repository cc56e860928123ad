#include "shadowlift/image.hpp"

#include "shadowlift/error.hpp"

namespace shadowlift {

Image::Image(int h, int w, int c, double fill)
    : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

Tensor to_tensor(const Image& image) {
    Tensor t({1, image.channels, image.height, image.width});
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < image.channels; ++c) t.at(0, c, y, x) = image.at(y, x, c);
    return t;
}

Image to_image(const Tensor& nchw, int n) {
    if (nchw.rank() != 4) throw Error(Errc::shape_mismatch, "to_image expects an NCHW tensor");
    Image image(nchw.dim(2), nchw.dim(3), nchw.dim(1));
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < image.channels; ++c) image.at(y, x, c) = nchw.at(n, c, y, x);
    return image;
}

Tensor to_batch(std::span<const Image> images) {
    std::vector<Tensor> parts;
    parts.reserve(images.size());
    for (const Image& im : images) parts.push_back(to_tensor(im));
    return stack_batch(parts);
}

}  // namespace shadowlift
