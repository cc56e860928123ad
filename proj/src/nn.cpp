#include "shadowlift/nn.hpp"

#include <cmath>

namespace shadowlift::nn {

namespace {

ag::Var uniform_param(const Shape& shape, double bound, Rng& rng) {
    Tensor t(shape);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : t.values()) v = u(rng);
    return ag::Var(std::move(t), true);
}

}  // namespace

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride_, Rng& rng)
    : stride(stride_), pad(kernel / 2) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
    weight = uniform_param({out_channels, in_channels, kernel, kernel}, bound, rng);
    bias = uniform_param({out_channels}, bound, rng);
}

void Conv2d::zero_init() {
    weight.mutable_value().fill(0.0);
    bias.mutable_value().fill(0.0);
}

Conv2d Conv2d::clone() const {
    Conv2d c;
    c.weight = weight.clone();
    c.bias = bias.clone();
    c.stride = stride;
    c.pad = pad;
    return c;
}

Linear::Linear(int in_features, int out_features, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
    weight = uniform_param({out_features, in_features}, bound, rng);
    bias = uniform_param({out_features}, bound, rng);
}

Linear Linear::clone() const {
    Linear l;
    l.weight = weight.clone();
    l.bias = bias.clone();
    return l;
}

void ParameterList::add(const std::string& prefix, const Conv2d& c) {
    add(prefix + ".weight", c.weight);
    add(prefix + ".bias", c.bias);
}

void ParameterList::add(const std::string& prefix, const Linear& l) {
    add(prefix + ".weight", l.weight);
    add(prefix + ".bias", l.bias);
}

void ParameterList::append(const std::string& prefix, const ParameterList& other) {
    for (const auto& [name, v] : other.items_) add(prefix + "." + name, v);
}

std::vector<ag::Var> ParameterList::vars() const {
    std::vector<ag::Var> out;
    out.reserve(items_.size());
    for (const auto& item : items_) out.push_back(item.second);
    return out;
}

std::size_t ParameterList::count() const {
    std::size_t n = 0;
    for (const auto& item : items_) n += item.second.value().size();
    return n;
}

void ParameterList::set_requires_grad(bool on) const {
    for (const auto& item : items_) {
        ag::Var v = item.second;
        v.set_requires_grad(on);
    }
}

void ParameterList::zero_grad() const {
    for (const auto& item : items_) {
        ag::Var v = item.second;
        v.zero_grad();
    }
}

Adam::Adam(std::vector<ag::Var> params, AdamOptions options) : params_(std::move(params)), opt_(options) {
    for (const ag::Var& p : params_) {
        m_.emplace_back(p.shape(), 0.0);
        v_.emplace_back(p.shape(), 0.0);
    }
}

void Adam::zero_grad() {
    for (ag::Var& p : params_) p.zero_grad();
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t j = 0; j < params_.size(); ++j) {
        ag::Var& p = params_[j];
        if (!p.has_grad()) continue;
        const Tensor& g = p.node()->grad;
        Tensor& w = p.mutable_value();
        Tensor& m = m_[j];
        Tensor& v = v_[j];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
            v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
            w[i] -= opt_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.eps);
        }
    }
}

}  // namespace shadowlift::nn
