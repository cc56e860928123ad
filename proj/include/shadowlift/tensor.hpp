#pragma once

#include <cstddef>
#include <cstdint>
#include <new>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace shadowlift {

using Shape = std::vector<int>;

// 64-byte aligned storage; vectorized kernels then see the same layout on every run.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};
    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;
using Rng = std::mt19937_64;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Network activations use NCHW; latents are
// NCHW with N = batch. Everything runs in 64-bit floating point.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, const std::vector<double>& values);
    Tensor(Shape shape, Buffer values);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int axis) const;
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int n, int c, int h, int w);
    double at(int n, int c, int h, int w) const;

    Tensor reshaped(Shape shape) const;
    void fill(double value);
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    // Sample n of an NCHW batch as a {1,C,H,W} tensor.
    Tensor sample(int n) const;

private:
    Shape shape_;
    Buffer data_;
};

Tensor randn(const Shape& shape, Rng& rng);
Tensor stack_batch(std::span<const Tensor> samples);
double max_abs_diff(const Tensor& a, const Tensor& b);

// Throws Errc::shape_mismatch naming `what` when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// splitmix64 finalizer; used to derive per-sample seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);
std::uint64_t hash_string(const std::string& text);

}  // namespace shadowlift
