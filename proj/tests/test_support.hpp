#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "shadowlift/autograd.hpp"
#include "shadowlift/image.hpp"
#include "shadowlift/tensor.hpp"

namespace sltest {

using shadowlift::Image;
using shadowlift::Shape;
using shadowlift::Tensor;
namespace ag = shadowlift::ag;

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(shape);
    for (auto& v : t.values()) v = u(rng);
    return t;
}

inline Image random_image(int h, int w, int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Image img(h, w, c);
    for (auto& v : img.data) v = u(rng);
    return img;
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    int checked = 0;
};

// Compares backward() against central differences on `count` scalars drawn
// at random from `params`. The relative error uses max(|a|, |n|, floor) as
// its denominator.
inline GradCheckResult grad_check(const std::function<ag::Var()>& loss, const std::vector<ag::Var>& params,
                                  int count, std::uint64_t seed, double step = 1e-3, double floor = 1e-8) {
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t i = 0; i < params[p].value().size(); ++i) coords.emplace_back(p, i);
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    if (static_cast<int>(coords.size()) > count) coords.resize(count);

    for (auto v : params) v.zero_grad();
    ag::backward(loss());
    std::vector<Tensor> grads;
    for (const auto& v : params) grads.push_back(v.grad());

    auto eval = [&] {
        ag::NoGradGuard guard;
        return loss().value()[0];
    };
    GradCheckResult r;
    for (auto [p, i] : coords) {
        ag::Var v = params[p];
        double& x = v.mutable_value()[i];
        const double orig = x;
        x = orig + step;
        const double up = eval();
        x = orig - step;
        const double down = eval();
        x = orig;
        const double numeric = (up - down) / (2.0 * step);
        const double analytic = grads[p][i];
        const double denom = std::max({std::abs(numeric), std::abs(analytic), floor});
        r.max_rel_error = std::max(r.max_rel_error, std::abs(numeric - analytic) / denom);
        ++r.checked;
    }
    return r;
}

}  // namespace sltest
