#pragma once

// Reverse-mode automatic differentiation over NCHW tensors.
//
// A Var is a shared handle to a graph node. Copying a Var aliases the same
// node, so a model holding Vars shares its weights with every copy of
// itself; use explicit cloning where independent weights are needed.
//
// Graph recording is skipped when no input requires a gradient or when a
// NoGradGuard is active on the current thread.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "shadowlift/tensor.hpp"

namespace shadowlift::ag {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    int dim(int axis) const { return node_->value.dim(axis); }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return !node_->grad.empty(); }
    // Gradient of the last backward pass; zeros if none reached this node.
    Tensor grad() const;
    void zero_grad() { node_->grad = Tensor(); }

    const std::shared_ptr<Node>& node() const { return node_; }

    // Independent copy of the value with the same requires_grad flag.
    Var clone() const;

private:
    std::shared_ptr<Node> node_;
};

// Accumulates d(loss)/d(node) into every reachable node that requires grad.
// `loss` must hold a single element.
void backward(const Var& loss);

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// ---- layers ----------------------------------------------------------------

// x {N,Cin,H,W}, w {Cout,Cin,k,k}, b {Cout} or undefined.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// x {N,F}, w {O,F}, b {O} or undefined.
Var linear(const Var& x, const Var& w, const Var& b);
// Single-head dot-product attention over the H*W positions of each sample.
Var attention(const Var& q, const Var& k, const Var& v);

// ---- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var silu(const Var& x);
Var leaky_relu(const Var& x, double slope);
// x {N,C,H,W} plus per-sample per-channel bias {N,C}.
Var add_channel_bias(const Var& x, const Var& bias);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

// ---- layout ----------------------------------------------------------------

Var concat_channels(std::span<const Var> parts);
Var slice_channels(const Var& x, int begin, int end);
Var reshape(const Var& x, Shape shape);
// Nearest-neighbour resampling: source index = floor(dst * in / out).
Var resize_nearest(const Var& x, int out_h, int out_w);
// {N,C*k*k,H,W} -> {N,C,H*k,W*k}; channel (dy*k+dx)*C + c feeds pixel (dy,dx).
Var depth_to_space(const Var& x, int k);
Var space_to_depth(const Var& x, int k);

// ---- reductions ------------------------------------------------------------

Var sum(const Var& x);
Var mean(const Var& x);
Var mse(const Var& a, const Var& b);
// mean |a - b|; the subgradient at a == b is 0.
Var l1(const Var& a, const Var& b);
// Divides each pixel's channel vector by (its L2 norm + eps).
Var channel_unit_normalize(const Var& x, double eps);

}  // namespace shadowlift::ag
