#include "shadowlift/denoiser.hpp"

#include <cmath>

#include "shadowlift/error.hpp"

namespace shadowlift {

const char* parameterization_name(Parameterization p) {
    return p == Parameterization::z0_pred ? "z0_pred" : "eps_pred";
}

Parameterization parse_parameterization(const std::string& name) {
    if (name == "z0_pred") return Parameterization::z0_pred;
    if (name == "eps_pred") return Parameterization::eps_pred;
    throw Error(Errc::config_error, "unknown parameterization '" + name + "'");
}

Tensor timestep_embedding(std::span<const int> t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw Error(Errc::invalid_range, "time embedding dim must be even and >= 2");
    const int n = static_cast<int>(t.size()), half = dim / 2;
    Tensor out({n, dim});
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < half; ++k) {
            const double freq = std::exp(-std::log(10000.0) * k / half);
            out[static_cast<std::size_t>(i) * dim + k] = std::sin(t[i] * freq);
            out[static_cast<std::size_t>(i) * dim + half + k] = std::cos(t[i] * freq);
        }
    return out;
}

Tensor eps_to_clean(const Tensor& z_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched) {
    require_same_shape(z_t, eps_hat, "eps_to_clean");
    const double ab = sched.alpha_bar(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Tensor out(z_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (z_t[i] - b * eps_hat[i]) / a;
    return out;
}

Tensor predict_clean(const Denoiser& denoiser, const Tensor& z_t, const Tensor& z_cond, int t) {
    require_same_shape(z_t, z_cond, "predict_clean");
    const NoiseSchedule& sched = denoiser.schedule();
    if (t < 1 || t > sched.T)
        throw Error(Errc::out_of_range, "t=" + std::to_string(t) + " outside [1, " + std::to_string(sched.T) + "]");
    ag::NoGradGuard guard;
    std::vector<int> ts(static_cast<std::size_t>(z_t.dim(0)), t);
    Tensor raw = denoiser.forward_raw(ag::Var(z_t), ag::Var(z_cond), ts).value();
    if (denoiser.parameterization() == Parameterization::z0_pred) return raw;
    return eps_to_clean(z_t, raw, t, sched);
}

PredictCleanFn clean_predictor(const Denoiser& denoiser) {
    return [&denoiser](const Tensor& z_t, const Tensor& z_cond, int t) {
        return predict_clean(denoiser, z_t, z_cond, t);
    };
}

nn::Conv2d expand_conditioning_channels(const nn::Conv2d& layer, int latent_channels) {
    if (layer.in_channels() != latent_channels)
        throw Error(Errc::already_expanded, "first layer takes " + std::to_string(layer.in_channels()) +
                                                " channels, expected " + std::to_string(latent_channels));
    const Tensor& w = layer.weight.value();
    const int co = w.dim(0), ci = w.dim(1), k = w.dim(2);
    Tensor nw({co, 2 * ci, k, k});
    for (int o = 0; o < co; ++o)
        for (int g = 0; g < 2; ++g)
            for (int c = 0; c < ci; ++c)
                for (int y = 0; y < k; ++y)
                    for (int x = 0; x < k; ++x) nw.at(o, g * ci + c, y, x) = 0.5 * w.at(o, c, y, x);
    nn::Conv2d out = layer.clone();
    out.weight = ag::Var(std::move(nw), layer.weight.requires_grad());
    return out;
}

// ---- UNet ------------------------------------------------------------------------

ag::Var UNetDenoiser::TimeBlock::operator()(const ag::Var& x, const ag::Var& temb) const {
    ag::Var h = a(ag::silu(x));
    h = ag::add_channel_bias(h, time(ag::silu(temb)));
    h = b(ag::silu(h));
    return x + h;
}

ag::Var UNetDenoiser::AttentionBlock::operator()(const ag::Var& x) const {
    return x + o(ag::attention(q(x), k(x), v(x)));
}

UNetDenoiser::TimeBlock UNetDenoiser::make_block(int width, Rng& rng) const {
    return {nn::Conv2d(width, width, 3, 1, rng), nn::Conv2d(width, width, 3, 1, rng),
            nn::Linear(config_.time_dim, width, rng)};
}

UNetDenoiser::UNetDenoiser(DenoiserConfig config, NoiseSchedule sched, Rng& rng)
    : config_(std::move(config)), sched_(std::move(sched)) {
    const int c = config_.latent_channels;
    if (c < 1) throw Error(Errc::invalid_range, "latent_channels must be positive");
    if (config_.widths.size() != 3) throw Error(Errc::invalid_range, "denoiser needs exactly 3 stage widths");
    if (config_.in_channels != c && config_.in_channels != 2 * c)
        throw Error(Errc::invalid_range, "in_channels must be latent_channels or twice that");
    const int w0 = config_.widths[0], w1 = config_.widths[1], w2 = config_.widths[2];
    const int td = config_.time_dim;

    time1_ = nn::Linear(td, td, rng);
    time2_ = nn::Linear(td, td, rng);
    conv_in_ = nn::Conv2d(c, w0, 3, 1, rng);
    block0_ = make_block(w0, rng);
    down1_ = nn::Conv2d(w0, w1, 3, 2, rng);
    block1_ = make_block(w1, rng);
    down2_ = nn::Conv2d(w1, w2, 3, 2, rng);
    block2_ = make_block(w2, rng);
    attn_ = {nn::Conv2d(w2, w2, 1, 1, rng), nn::Conv2d(w2, w2, 1, 1, rng), nn::Conv2d(w2, w2, 1, 1, rng),
             nn::Conv2d(w2, w2, 1, 1, rng)};
    block3_ = make_block(w2, rng);
    up1_ = nn::Conv2d(w2 + w1, w1, 3, 1, rng);
    block4_ = make_block(w1, rng);
    up0_ = nn::Conv2d(w1 + w0, w0, 3, 1, rng);
    block5_ = make_block(w0, rng);
    conv_out_ = nn::Conv2d(w0, c, 3, 1, rng);

    if (config_.in_channels == 2 * c) {
        config_.in_channels = c;
        expand_conditioning();
    }
}

void UNetDenoiser::expand_conditioning() {
    conv_in_ = expand_conditioning_channels(conv_in_, config_.latent_channels);
    config_.in_channels = 2 * config_.latent_channels;
}

ag::Var UNetDenoiser::forward_raw(const ag::Var& z_t, const ag::Var& z_cond, std::span<const int> t) const {
    const int c = config_.latent_channels;
    if (z_t.value().rank() != 4 || z_t.dim(1) != c)
        throw Error(Errc::channel_mismatch, "denoiser expects " + std::to_string(c) + " latent channels, got " +
                                                shape_str(z_t.shape()));
    if (z_t.dim(2) % 4 != 0 || z_t.dim(3) % 4 != 0)
        throw Error(Errc::indivisible_dimension, "latent size " + shape_str(z_t.shape()) + " not divisible by 4");
    if (static_cast<int>(t.size()) != z_t.dim(0)) throw Error(Errc::shape_mismatch, "one time step per sample");

    ag::Var x = z_t;
    if (config_.in_channels == 2 * c) {
        require_same_shape(z_t.value(), z_cond.value(), "denoiser conditioning");
        const ag::Var parts[] = {z_t, z_cond};
        x = ag::concat_channels(parts);
    }
    ag::Var temb(timestep_embedding(t, config_.time_dim));
    temb = time2_(ag::silu(time1_(temb)));

    ag::Var h = block0_(conv_in_(x), temb);
    const ag::Var s0 = h;
    h = block1_(down1_(h), temb);
    const ag::Var s1 = h;
    h = block2_(down2_(h), temb);
    h = block3_(attn_(h), temb);

    h = ag::resize_nearest(h, s1.dim(2), s1.dim(3));
    const ag::Var cat1[] = {h, s1};
    h = block4_(up1_(ag::concat_channels(cat1)), temb);
    h = ag::resize_nearest(h, s0.dim(2), s0.dim(3));
    const ag::Var cat0[] = {h, s0};
    h = block5_(up0_(ag::concat_channels(cat0)), temb);
    return conv_out_(ag::silu(h));
}

nn::ParameterList UNetDenoiser::parameters() const {
    nn::ParameterList p;
    p.add("time1", time1_);
    p.add("time2", time2_);
    p.add("conv_in", conv_in_);
    auto add_block = [&p](const std::string& name, const TimeBlock& b) {
        p.add(name + ".a", b.a);
        p.add(name + ".b", b.b);
        p.add(name + ".time", b.time);
    };
    add_block("block0", block0_);
    p.add("down1", down1_);
    add_block("block1", block1_);
    p.add("down2", down2_);
    add_block("block2", block2_);
    p.add("attn.q", attn_.q);
    p.add("attn.k", attn_.k);
    p.add("attn.v", attn_.v);
    p.add("attn.o", attn_.o);
    add_block("block3", block3_);
    p.add("up1", up1_);
    add_block("block4", block4_);
    p.add("up0", up0_);
    add_block("block5", block5_);
    p.add("conv_out", conv_out_);
    return p;
}

// ---- MLP ---------------------------------------------------------------------------

MlpDenoiser::MlpDenoiser(int dim, int hidden, int time_dim, Parameterization p, NoiseSchedule sched, Rng& rng)
    : dim_(dim), time_dim_(time_dim), param_(p), sched_(std::move(sched)) {
    l1_ = nn::Conv2d(2 * dim + time_dim, hidden, 1, 1, rng);
    l2_ = nn::Conv2d(hidden, hidden, 1, 1, rng);
    l3_ = nn::Conv2d(hidden, dim, 1, 1, rng);
}

ag::Var MlpDenoiser::forward_raw(const ag::Var& z_t, const ag::Var& z_cond, std::span<const int> t) const {
    const Shape expected{z_t.dim(0), dim_, 1, 1};
    if (z_t.shape() != expected) throw Error(Errc::shape_mismatch, "mlp denoiser expects {N," + std::to_string(dim_) + ",1,1}");
    require_same_shape(z_t.value(), z_cond.value(), "denoiser conditioning");
    if (static_cast<int>(t.size()) != z_t.dim(0)) throw Error(Errc::shape_mismatch, "one time step per sample");
    ag::Var temb(timestep_embedding(t, time_dim_).reshaped({z_t.dim(0), time_dim_, 1, 1}));
    const ag::Var parts[] = {z_t, z_cond, temb};
    ag::Var h = ag::silu(l1_(ag::concat_channels(parts)));
    h = ag::silu(l2_(h));
    return l3_(h);
}

nn::ParameterList MlpDenoiser::parameters() const {
    nn::ParameterList p;
    p.add("l1", l1_);
    p.add("l2", l2_);
    p.add("l3", l3_);
    return p;
}

}  // namespace shadowlift
