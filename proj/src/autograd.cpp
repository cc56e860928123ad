#include "shadowlift/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "shadowlift/error.hpp"

namespace shadowlift::ag {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

thread_local bool g_grad_enabled = true;

Tensor& grad_buffer(Node& n) {
    if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
}

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> bw) {
    bool needs = false;
    if (g_grad_enabled)
        for (const Var& v : inputs) needs = needs || v.requires_grad();
    Var out(std::move(value), false);
    if (!needs) return out;
    Node& node = *out.node();
    node.requires_grad = true;
    for (Var& v : inputs) node.inputs.push_back(v.node());
    node.backward = std::move(bw);
    return out;
}

void require_rank(const Var& x, int rank, const char* op) {
    if (x.value().rank() != rank)
        throw Error(Errc::shape_mismatch,
                    std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
}

void im2col(const double* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, double* col) {
    const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                double* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * plane;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    double* dst = row + static_cast<std::size_t>(oy) * Wo;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst, dst + Wo, 0.0);
                        continue;
                    }
                    const double* src = x + (static_cast<std::size_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[ox] = (ix >= 0 && ix < W) ? src[ix] : 0.0;
                    }
                }
            }
}

void col2im(const double* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, double* x) {
    const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const double* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * plane;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    const double* src = row + static_cast<std::size_t>(oy) * Wo;
                    double* dst = x + (static_cast<std::size_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) dst[ix] += src[ox];
                    }
                }
            }
}

template <class F>
Var unary(const Var& x, F f, std::function<double(double, double)> df) {
    Tensor out(x.shape());
    const Tensor& in = x.value();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return make_result(std::move(out), {x}, [df](Node& self) {
        Node& a = *self.inputs[0];
        if (!a.requires_grad) return;
        Tensor& g = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(a.value[i], self.value[i]);
    });
}

}  // namespace

// ---- Var -------------------------------------------------------------------

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
    if (node_->grad.empty()) return Tensor(node_->value.shape(), 0.0);
    return node_->grad;
}

Var Var::clone() const { return Var(node_->value, node_->requires_grad); }

void backward(const Var& loss) {
    if (loss.value().size() != 1) throw Error(Errc::shape_mismatch, "backward expects a scalar loss");
    if (!loss.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    grad_buffer(*loss.node())[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node& n = **it;
        if (n.backward && !n.grad.empty()) n.backward(n);
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---- layers ----------------------------------------------------------------

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    require_rank(x, 4, "conv2d");
    require_rank(w, 4, "conv2d weight");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(0), k = w.dim(2);
    if (w.dim(1) != C)
        throw Error(Errc::channel_mismatch, "conv2d: input has " + std::to_string(C) + " channels, weight expects " +
                                                std::to_string(w.dim(1)));
    if (b.defined() && (b.value().rank() != 1 || b.dim(0) != Co))
        throw Error(Errc::shape_mismatch, "conv2d: bias shape " + shape_str(b.shape()));
    const int Ho = (H + 2 * pad - k) / stride + 1;
    const int Wo = (W + 2 * pad - k) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw Error(Errc::shape_mismatch, "conv2d: input smaller than kernel");

    const bool direct = (k == 1 && stride == 1 && pad == 0);
    const int K = C * k * k;
    const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
    Tensor out({N, Co, Ho, Wo});
    Buffer col(direct ? 0 : static_cast<std::size_t>(K) * plane);
    CMapR wm(w.value().data(), Co, K);
    for (int n = 0; n < N; ++n) {
        const double* xn = x.value().data() + static_cast<std::size_t>(n) * C * H * W;
        if (!direct) im2col(xn, C, H, W, k, stride, pad, Ho, Wo, col.data());
        CMapR cm(direct ? xn : col.data(), K, static_cast<Eigen::Index>(plane));
        MapR om(out.data() + static_cast<std::size_t>(n) * Co * plane, Co, static_cast<Eigen::Index>(plane));
        om.noalias() = wm * cm;
        if (b.defined())
            for (int o = 0; o < Co; ++o) om.row(o).array() += b.value()[o];
    }

    std::vector<Var> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    return make_result(std::move(out), inputs, [=](Node& self) {
        Node& xi = *self.inputs[0];
        Node& wi = *self.inputs[1];
        Node* bi = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
        Buffer colb(direct ? 0 : static_cast<std::size_t>(K) * plane);
        Buffer dcol(direct ? 0 : static_cast<std::size_t>(K) * plane);
        CMapR wmat(wi.value.data(), Co, K);
        for (int n = 0; n < N; ++n) {
            CMapR gm(self.grad.data() + static_cast<std::size_t>(n) * Co * plane, Co,
                     static_cast<Eigen::Index>(plane));
            const double* xn = xi.value.data() + static_cast<std::size_t>(n) * C * H * W;
            if (wi.requires_grad) {
                if (!direct) im2col(xn, C, H, W, k, stride, pad, Ho, Wo, colb.data());
                CMapR cm(direct ? xn : colb.data(), K, static_cast<Eigen::Index>(plane));
                MapR gw(grad_buffer(wi).data(), Co, K);
                gw.noalias() += gm * cm.transpose();
            }
            if (bi && bi->requires_grad) {
                Tensor& gb = grad_buffer(*bi);
                for (int o = 0; o < Co; ++o) gb[o] += gm.row(o).sum();
            }
            if (xi.requires_grad) {
                double* gx = grad_buffer(xi).data() + static_cast<std::size_t>(n) * C * H * W;
                if (direct) {
                    MapR gxm(gx, K, static_cast<Eigen::Index>(plane));
                    gxm.noalias() += wmat.transpose() * gm;
                } else {
                    MapR dm(dcol.data(), K, static_cast<Eigen::Index>(plane));
                    dm.noalias() = wmat.transpose() * gm;
                    col2im(dcol.data(), C, H, W, k, stride, pad, Ho, Wo, gx);
                }
            }
        }
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    require_rank(x, 2, "linear");
    require_rank(w, 2, "linear weight");
    const int N = x.dim(0), F = x.dim(1), O = w.dim(0);
    if (w.dim(1) != F) throw Error(Errc::shape_mismatch, "linear: feature width mismatch");
    Tensor out({N, O});
    CMapR xm(x.value().data(), N, F);
    CMapR wm(w.value().data(), O, F);
    MapR om(out.data(), N, O);
    om.noalias() = xm * wm.transpose();
    if (b.defined())
        for (int n = 0; n < N; ++n)
            for (int o = 0; o < O; ++o) out[static_cast<std::size_t>(n) * O + o] += b.value()[o];
    std::vector<Var> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    return make_result(std::move(out), inputs, [=](Node& self) {
        Node& xi = *self.inputs[0];
        Node& wi = *self.inputs[1];
        CMapR gm(self.grad.data(), N, O);
        if (xi.requires_grad) {
            MapR gx(grad_buffer(xi).data(), N, F);
            gx.noalias() += gm * CMapR(wi.value.data(), O, F);
        }
        if (wi.requires_grad) {
            MapR gw(grad_buffer(wi).data(), O, F);
            gw.noalias() += gm.transpose() * CMapR(xi.value.data(), N, F);
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
            Tensor& gb = grad_buffer(*self.inputs[2]);
            for (int n = 0; n < N; ++n)
                for (int o = 0; o < O; ++o) gb[o] += self.grad[static_cast<std::size_t>(n) * O + o];
        }
    });
}

Var attention(const Var& q, const Var& k, const Var& v) {
    require_rank(q, 4, "attention");
    if (q.shape() != k.shape() || q.shape() != v.shape())
        throw Error(Errc::shape_mismatch, "attention: q, k, v shapes differ");
    const int N = q.dim(0), C = q.dim(1), L = q.dim(2) * q.dim(3);
    const double inv = 1.0 / std::sqrt(static_cast<double>(C));
    const std::size_t per = static_cast<std::size_t>(C) * L;
    Tensor out(q.shape());
    auto probs = std::make_shared<std::vector<MatR>>(N);
    for (int n = 0; n < N; ++n) {
        CMapR Q(q.value().data() + n * per, C, L), K(k.value().data() + n * per, C, L),
            V(v.value().data() + n * per, C, L);
        MatR S = (Q.transpose() * K) * inv;
        for (int i = 0; i < L; ++i) {
            const double m = S.row(i).maxCoeff();
            S.row(i) = (S.row(i).array() - m).exp();
            S.row(i) /= S.row(i).sum();
        }
        MapR O(out.data() + n * per, C, L);
        O.noalias() = V * S.transpose();
        (*probs)[n] = std::move(S);
    }
    return make_result(std::move(out), {q, k, v}, [=](Node& self) {
        Node& qi = *self.inputs[0];
        Node& ki = *self.inputs[1];
        Node& vi = *self.inputs[2];
        for (int n = 0; n < N; ++n) {
            const MatR& P = (*probs)[n];
            CMapR G(self.grad.data() + n * per, C, L);
            CMapR Q(qi.value.data() + n * per, C, L), K(ki.value.data() + n * per, C, L),
                V(vi.value.data() + n * per, C, L);
            if (vi.requires_grad) MapR(grad_buffer(vi).data() + n * per, C, L).noalias() += G * P;
            if (!qi.requires_grad && !ki.requires_grad) continue;
            MatR dP = G.transpose() * V;
            Eigen::VectorXd rows = (dP.array() * P.array()).rowwise().sum();
            MatR dS = P.array() * (dP.colwise() - rows).array();
            dS *= inv;
            if (qi.requires_grad) MapR(grad_buffer(qi).data() + n * per, C, L).noalias() += K * dS.transpose();
            if (ki.requires_grad) MapR(grad_buffer(ki).data() + n * per, C, L).noalias() += Q * dS;
        }
    });
}

// ---- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        for (auto& in : self.inputs)
            if (in->requires_grad) {
                Tensor& g = grad_buffer(*in);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        for (int j = 0; j < 2; ++j)
            if (self.inputs[j]->requires_grad) {
                Tensor& g = grad_buffer(*self.inputs[j]);
                const double s = j == 0 ? 1.0 : -1.0;
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
            }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& x = *self.inputs[0];
        Node& y = *self.inputs[1];
        if (x.requires_grad) {
            Tensor& g = grad_buffer(x);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
        }
        if (y.requires_grad) {
            Tensor& g = grad_buffer(y);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
        }
    });
}

Var scale(const Var& a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var silu(const Var& x) {
    return unary(
        x, [](double v) { return v / (1.0 + std::exp(-v)); },
        [](double v, double) {
            const double sg = 1.0 / (1.0 + std::exp(-v));
            return sg * (1.0 + v * (1.0 - sg));
        });
}

Var leaky_relu(const Var& x, double slope) {
    return unary(
        x, [slope](double v) { return v > 0 ? v : slope * v; },
        [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Var add_channel_bias(const Var& x, const Var& bias) {
    require_rank(x, 4, "add_channel_bias");
    const int N = x.dim(0), C = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    if (bias.shape() != Shape{N, C})
        throw Error(Errc::shape_mismatch, "add_channel_bias: bias " + shape_str(bias.shape()));
    Tensor out = x.value();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double* p = out.data() + (static_cast<std::size_t>(n) * C + c) * plane;
            const double bv = bias.value()[static_cast<std::size_t>(n) * C + c];
            for (std::size_t i = 0; i < plane; ++i) p[i] += bv;
        }
    return make_result(std::move(out), {x, bias}, [=](Node& self) {
        Node& xi = *self.inputs[0];
        Node& bi = *self.inputs[1];
        if (xi.requires_grad) {
            Tensor& g = grad_buffer(xi);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (bi.requires_grad) {
            Tensor& g = grad_buffer(bi);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const double* p = self.grad.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                    double s = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) s += p[i];
                    g[static_cast<std::size_t>(n) * C + c] += s;
                }
        }
    });
}

// ---- layout ----------------------------------------------------------------

Var concat_channels(std::span<const Var> parts) {
    if (parts.empty()) throw Error(Errc::shape_mismatch, "concat_channels: no inputs");
    const int N = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
    std::vector<int> offsets;
    int C = 0;
    for (const Var& p : parts) {
        require_rank(p, 4, "concat_channels");
        if (p.dim(0) != N || p.dim(2) != H || p.dim(3) != W)
            throw Error(Errc::shape_mismatch, "concat_channels: spatial/batch mismatch " + shape_str(p.shape()) +
                                                  " vs " + shape_str(parts[0].shape()));
        offsets.push_back(C);
        C += p.dim(1);
    }
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    Tensor out({N, C, H, W});
    for (std::size_t j = 0; j < parts.size(); ++j) {
        const int Cj = parts[j].dim(1);
        for (int n = 0; n < N; ++n)
            std::copy_n(parts[j].value().data() + static_cast<std::size_t>(n) * Cj * plane, Cj * plane,
                        out.data() + (static_cast<std::size_t>(n) * C + offsets[j]) * plane);
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return make_result(std::move(out), inputs, [=](Node& self) {
        for (std::size_t j = 0; j < self.inputs.size(); ++j) {
            Node& in = *self.inputs[j];
            if (!in.requires_grad) continue;
            const int Cj = in.value.dim(1);
            Tensor& g = grad_buffer(in);
            for (int n = 0; n < N; ++n) {
                const double* src = self.grad.data() + (static_cast<std::size_t>(n) * C + offsets[j]) * plane;
                double* dst = g.data() + static_cast<std::size_t>(n) * Cj * plane;
                for (std::size_t i = 0; i < Cj * plane; ++i) dst[i] += src[i];
            }
        }
    });
}

Var slice_channels(const Var& x, int begin, int end) {
    require_rank(x, 4, "slice_channels");
    const int N = x.dim(0), C = x.dim(1);
    if (begin < 0 || end > C || begin >= end) throw Error(Errc::out_of_range, "slice_channels: bad range");
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    const int Cs = end - begin;
    Tensor out({N, Cs, x.dim(2), x.dim(3)});
    for (int n = 0; n < N; ++n)
        std::copy_n(x.value().data() + (static_cast<std::size_t>(n) * C + begin) * plane, Cs * plane,
                    out.data() + static_cast<std::size_t>(n) * Cs * plane);
    return make_result(std::move(out), {x}, [=](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        Tensor& g = grad_buffer(in);
        for (int n = 0; n < N; ++n) {
            const double* src = self.grad.data() + static_cast<std::size_t>(n) * Cs * plane;
            double* dst = g.data() + (static_cast<std::size_t>(n) * C + begin) * plane;
            for (std::size_t i = 0; i < Cs * plane; ++i) dst[i] += src[i];
        }
    });
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return make_result(std::move(out), {x}, [](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        Tensor& g = grad_buffer(in);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Var resize_nearest(const Var& x, int out_h, int out_w) {
    require_rank(x, 4, "resize_nearest");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (out_h < 1 || out_w < 1) throw Error(Errc::invalid_range, "resize_nearest: empty output");
    std::vector<int> sy(out_h), sx(out_w);
    for (int y = 0; y < out_h; ++y) sy[y] = static_cast<int>(static_cast<long>(y) * H / out_h);
    for (int v = 0; v < out_w; ++v) sx[v] = static_cast<int>(static_cast<long>(v) * W / out_w);
    Tensor out({N, C, out_h, out_w});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < out_h; ++y)
                for (int v = 0; v < out_w; ++v) out.at(n, c, y, v) = x.value().at(n, c, sy[y], sx[v]);
    return make_result(std::move(out), {x}, [=](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        Tensor& g = grad_buffer(in);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < out_h; ++y)
                    for (int v = 0; v < out_w; ++v) g.at(n, c, sy[y], sx[v]) += self.grad.at(n, c, y, v);
    });
}

Var depth_to_space(const Var& x, int k) {
    require_rank(x, 4, "depth_to_space");
    const int N = x.dim(0), Ck = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (k < 1 || Ck % (k * k) != 0)
        throw Error(Errc::channel_mismatch, "depth_to_space: channels not divisible by k^2");
    const int C = Ck / (k * k);
    Tensor out({N, C, H * k, W * k});
    auto src_index = [=](int n, int c, int y, int v) {
        const int dy = y % k, dx = v % k;
        return ((static_cast<std::size_t>(n) * Ck + (dy * k + dx) * C + c) * H + y / k) * W + v / k;
    };
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H * k; ++y)
                for (int v = 0; v < W * k; ++v) out.at(n, c, y, v) = x.value()[src_index(n, c, y, v)];
    return make_result(std::move(out), {x}, [=](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        Tensor& g = grad_buffer(in);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H * k; ++y)
                    for (int v = 0; v < W * k; ++v) g[src_index(n, c, y, v)] += self.grad.at(n, c, y, v);
    });
}

Var space_to_depth(const Var& x, int k) {
    require_rank(x, 4, "space_to_depth");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (k < 1 || H % k != 0 || W % k != 0)
        throw Error(Errc::indivisible_dimension, "space_to_depth: spatial size not divisible by k");
    const int Ho = H / k, Wo = W / k, Ck = C * k * k;
    Tensor out({N, Ck, Ho, Wo});
    auto dst_index = [=](int n, int c, int y, int v) {
        const int dy = y % k, dx = v % k;
        return ((static_cast<std::size_t>(n) * Ck + (dy * k + dx) * C + c) * Ho + y / k) * Wo + v / k;
    };
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int v = 0; v < W; ++v) out[dst_index(n, c, y, v)] = x.value().at(n, c, y, v);
    return make_result(std::move(out), {x}, [=](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        Tensor& g = grad_buffer(in);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y)
                    for (int v = 0; v < W; ++v) g.at(n, c, y, v) += self.grad[dst_index(n, c, y, v)];
    });
}

// ---- reductions ------------------------------------------------------------

Var sum(const Var& x) {
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    return make_result(Tensor({1}, s), {x}, [](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        Tensor& g = grad_buffer(in);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
    });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var mse(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mse");
    const std::size_t n = a.value().size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a.value()[i] - b.value()[i];
        s += d * d;
    }
    return make_result(Tensor({1}, s / static_cast<double>(n)), {a, b}, [n](Node& self) {
        Node& x = *self.inputs[0];
        Node& y = *self.inputs[1];
        const double f = 2.0 * self.grad[0] / static_cast<double>(n);
        if (x.requires_grad) {
            Tensor& g = grad_buffer(x);
            for (std::size_t i = 0; i < n; ++i) g[i] += f * (x.value[i] - y.value[i]);
        }
        if (y.requires_grad) {
            Tensor& g = grad_buffer(y);
            for (std::size_t i = 0; i < n; ++i) g[i] -= f * (x.value[i] - y.value[i]);
        }
    });
}

Var l1(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "l1");
    const std::size_t n = a.value().size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::abs(a.value()[i] - b.value()[i]);
    return make_result(Tensor({1}, s / static_cast<double>(n)), {a, b}, [n](Node& self) {
        Node& x = *self.inputs[0];
        Node& y = *self.inputs[1];
        const double f = self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = x.value[i] - y.value[i];
            const double sg = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
            if (x.requires_grad) grad_buffer(x)[i] += f * sg;
            if (y.requires_grad) grad_buffer(y)[i] -= f * sg;
        }
    });
}

Var channel_unit_normalize(const Var& x, double eps) {
    require_rank(x, 4, "channel_unit_normalize");
    const int N = x.dim(0), C = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * plane);
    Tensor out(x.shape());
    const Tensor& in = x.value();
    for (int n = 0; n < N; ++n)
        for (std::size_t p = 0; p < plane; ++p) {
            double s = 0.0;
            for (int c = 0; c < C; ++c) {
                const double v = in[(static_cast<std::size_t>(n) * C + c) * plane + p];
                s += v * v;
            }
            const double r = std::sqrt(s);
            (*norms)[n * plane + p] = r;
            for (int c = 0; c < C; ++c) {
                const std::size_t i = (static_cast<std::size_t>(n) * C + c) * plane + p;
                out[i] = in[i] / (r + eps);
            }
        }
    return make_result(std::move(out), {x}, [=](Node& self) {
        Node& xi = *self.inputs[0];
        if (!xi.requires_grad) return;
        Tensor& g = grad_buffer(xi);
        for (int n = 0; n < N; ++n)
            for (std::size_t p = 0; p < plane; ++p) {
                const double r = (*norms)[n * plane + p];
                double dot = 0.0;
                for (int c = 0; c < C; ++c) {
                    const std::size_t i = (static_cast<std::size_t>(n) * C + c) * plane + p;
                    dot += self.grad[i] * xi.value[i];
                }
                const double a = 1.0 / (r + eps);
                const double b = r > 0 ? dot / (r * (r + eps) * (r + eps)) : 0.0;
                for (int c = 0; c < C; ++c) {
                    const std::size_t i = (static_cast<std::size_t>(n) * C + c) * plane + p;
                    g[i] += self.grad[i] * a - xi.value[i] * b;
                }
            }
    });
}

}  // namespace shadowlift::ag
