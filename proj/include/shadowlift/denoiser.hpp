#pragma once

#include <span>
#include <vector>

#include "shadowlift/autograd.hpp"
#include "shadowlift/nn.hpp"
#include "shadowlift/schedule.hpp"

namespace shadowlift {

enum class Parameterization { z0_pred, eps_pred };
const char* parameterization_name(Parameterization p);
Parameterization parse_parameterization(const std::string& name);

struct DenoiserConfig {
    int latent_channels = 4;
    // latent_channels before conditioning expansion, 2 * latent_channels after.
    int in_channels = 8;
    std::vector<int> widths{32, 48, 64};
    int time_dim = 32;
    Parameterization parameterization = Parameterization::z0_pred;
};

// Sinusoidal embedding of integer time steps, {N, dim}.
Tensor timestep_embedding(std::span<const int> t, int dim);

// f_theta(z_t, z_cond, t). The raw output is a clean-latent estimate for
// z0_pred and a noise estimate for eps_pred.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual ag::Var forward_raw(const ag::Var& z_t, const ag::Var& z_cond, std::span<const int> t) const = 0;
    virtual Parameterization parameterization() const = 0;
    virtual const NoiseSchedule& schedule() const = 0;
    virtual nn::ParameterList parameters() const = 0;
};

// (z_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t)
Tensor eps_to_clean(const Tensor& z_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched);

// Always returns a clean-sample prediction, converting eps_pred output.
// z_t and z_cond may be batches; every sample uses step t.
Tensor predict_clean(const Denoiser& denoiser, const Tensor& z_t, const Tensor& z_cond, int t);
PredictCleanFn clean_predictor(const Denoiser& denoiser);

// Doubles the input channels of a first layer that takes `latent_channels`
// inputs: both channel groups hold the original weights times 0.5.
nn::Conv2d expand_conditioning_channels(const nn::Conv2d& layer, int latent_channels);

// Small U-shaped latent denoiser: three resolution stages with time-
// conditioned residual blocks and one self-attention block at the
// bottleneck. Conditioning is by channel concatenation [z_t, z_cond].
class UNetDenoiser final : public Denoiser {
public:
    // Builds the network with latent_channels inputs, then expands the first
    // layer when config.in_channels == 2 * latent_channels.
    UNetDenoiser(DenoiserConfig config, NoiseSchedule sched, Rng& rng);

    ag::Var forward_raw(const ag::Var& z_t, const ag::Var& z_cond, std::span<const int> t) const override;
    Parameterization parameterization() const override { return config_.parameterization; }
    const NoiseSchedule& schedule() const override { return sched_; }
    nn::ParameterList parameters() const override;

    const DenoiserConfig& config() const { return config_; }
    const nn::Conv2d& first_layer() const { return conv_in_; }
    void expand_conditioning();

private:
    struct TimeBlock {
        nn::Conv2d a, b;
        nn::Linear time;
        ag::Var operator()(const ag::Var& x, const ag::Var& temb) const;
    };
    struct AttentionBlock {
        nn::Conv2d q, k, v, o;
        ag::Var operator()(const ag::Var& x) const;
    };
    TimeBlock make_block(int width, Rng& rng) const;

    DenoiserConfig config_;
    NoiseSchedule sched_;
    nn::Linear time1_, time2_;
    nn::Conv2d conv_in_;
    TimeBlock block0_, block1_, block2_, block3_, block4_, block5_;
    nn::Conv2d down1_, down2_, up1_, up0_;
    AttentionBlock attn_;
    nn::Conv2d conv_out_;
};

// Denoiser for vector-valued latents stored as {N, D, 1, 1}; a three-layer
// perceptron on [z_t, z_cond, time embedding].
class MlpDenoiser final : public Denoiser {
public:
    MlpDenoiser(int dim, int hidden, int time_dim, Parameterization p, NoiseSchedule sched, Rng& rng);

    ag::Var forward_raw(const ag::Var& z_t, const ag::Var& z_cond, std::span<const int> t) const override;
    Parameterization parameterization() const override { return param_; }
    const NoiseSchedule& schedule() const override { return sched_; }
    nn::ParameterList parameters() const override;

private:
    int dim_, time_dim_;
    Parameterization param_;
    NoiseSchedule sched_;
    nn::Conv2d l1_, l2_, l3_;
};

}  // namespace shadowlift
