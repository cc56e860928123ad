#include "shadowlift/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "shadowlift/error.hpp"

namespace shadowlift {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw Error(Errc::invalid_range, "negative dimension in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, const std::vector<double>& values)
    : Tensor(std::move(shape), Buffer(values.begin(), values.end())) {}

Tensor::Tensor(Shape shape, Buffer values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_numel(shape_))
        throw Error(Errc::shape_mismatch, "tensor data size does not match shape " + shape_str(shape_));
}

int Tensor::dim(int axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw Error(Errc::out_of_range, "tensor axis out of range");
    return shape_[axis];
}

double& Tensor::at(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

double Tensor::at(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size())
        throw Error(Errc::shape_mismatch, "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::sample(int n) const {
    Shape s = shape_;
    s[0] = 1;
    const std::size_t stride = data_.size() / static_cast<std::size_t>(shape_[0]);
    Buffer v(data_.begin() + static_cast<std::ptrdiff_t>(n * stride),
                          data_.begin() + static_cast<std::ptrdiff_t>((n + 1) * stride));
    return Tensor(std::move(s), std::move(v));
}

Tensor randn(const Shape& shape, Rng& rng) {
    Tensor t(shape);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : t.values()) v = normal(rng);
    return t;
}

Tensor stack_batch(std::span<const Tensor> samples) {
    if (samples.empty()) throw Error(Errc::shape_mismatch, "cannot stack an empty batch");
    Shape s = samples.front().shape();
    const std::size_t per = samples.front().size() / static_cast<std::size_t>(s[0]);
    int total = 0;
    for (const Tensor& t : samples) {
        Shape a = t.shape(), b = s;
        a[0] = b[0] = 0;
        if (a != b) throw Error(Errc::shape_mismatch, "batch members differ in shape");
        total += t.dim(0);
    }
    s[0] = total;
    Buffer v;
    v.reserve(per * static_cast<std::size_t>(total));
    for (const Tensor& t : samples) v.insert(v.end(), t.values().begin(), t.values().end());
    return Tensor(std::move(s), std::move(v));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw Error(Errc::shape_mismatch,
                    std::string(what) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t hash_string(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace shadowlift
