#pragma once

#include <string>
#include <utility>
#include <vector>

#include "shadowlift/autograd.hpp"

namespace shadowlift::nn {

struct Conv2d {
    ag::Var weight;  // {Cout, Cin, k, k}
    ag::Var bias;    // {Cout}
    int stride = 1;
    int pad = 0;

    Conv2d() = default;
    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias; pad = k/2.
    Conv2d(int in_channels, int out_channels, int kernel, int stride, Rng& rng);

    ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, weight, bias, stride, pad); }

    int in_channels() const { return weight.dim(1); }
    int out_channels() const { return weight.dim(0); }
    int kernel() const { return weight.dim(2); }

    void zero_init();
    Conv2d clone() const;
};

struct Linear {
    ag::Var weight;  // {out, in}
    ag::Var bias;    // {out}

    Linear() = default;
    Linear(int in_features, int out_features, Rng& rng);

    ag::Var operator()(const ag::Var& x) const { return ag::linear(x, weight, bias); }
    Linear clone() const;
};

// Ordered name -> parameter handles. Order defines checkpoint layout.
class ParameterList {
public:
    void add(const std::string& name, const ag::Var& v) { items_.emplace_back(name, v); }
    void add(const std::string& prefix, const Conv2d& c);
    void add(const std::string& prefix, const Linear& l);
    void append(const std::string& prefix, const ParameterList& other);

    const std::vector<std::pair<std::string, ag::Var>>& items() const { return items_; }
    std::vector<ag::Var> vars() const;
    std::size_t count() const;  // total scalar parameters

    void set_requires_grad(bool on) const;
    void zero_grad() const;

private:
    std::vector<std::pair<std::string, ag::Var>> items_;
};

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(std::vector<ag::Var> params, AdamOptions options);

    void zero_grad();
    void step();
    long steps() const { return t_; }

private:
    std::vector<ag::Var> params_;
    std::vector<Tensor> m_, v_;
    AdamOptions opt_;
    long t_ = 0;
};

}  // namespace shadowlift::nn
