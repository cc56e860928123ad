#pragma once

#include <cstdint>
#include <vector>

#include "shadowlift/autograd.hpp"
#include "shadowlift/nn.hpp"

namespace shadowlift {

// Frozen multi-layer feature network used by the perceptual term.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    // One NCHW feature map per tap layer.
    virtual std::vector<ag::Var> taps(const ag::Var& images) const = 0;
    // Per-tap weights, same length as taps().
    virtual std::vector<double> layer_weights() const = 0;
    // Whether tap features are unit-normalized along channels before comparison.
    virtual bool normalize() const { return true; }
};

// Randomly initialized 5-stage SiLU convolution pyramid; stage 1 keeps the
// resolution, later stages halve it. Weights never receive gradients.
class RandomConvPyramid final : public FeatureExtractor {
public:
    explicit RandomConvPyramid(std::uint64_t seed, std::vector<int> widths = {16, 24, 32, 48, 64},
                               bool normalize = true);

    std::vector<ag::Var> taps(const ag::Var& images) const override;
    std::vector<double> layer_weights() const override { return std::vector<double>(stages_.size(), 1.0); }
    bool normalize() const override { return normalize_; }

    // Multiplies every tap activation by s (test hook for scale invariance).
    void set_tap_scale(double s) { tap_scale_ = s; }
    nn::ParameterList parameters() const;

private:
    std::vector<nn::Conv2d> stages_;
    bool normalize_;
    double tap_scale_ = 1.0;
};

constexpr double kFeatureNormEps = 1e-10;
// Seed of the frozen perceptual network used for stage-two training.
constexpr std::uint64_t kDefaultPerceptualSeed = 20240917;

// Mean over all elements of (z_hat - z_y)^2.
ag::Var stage_one_loss(const ag::Var& z_hat, const ag::Var& z_y);
double stage_one_loss(const Tensor& z_hat, const Tensor& z_y);

// sum_l w_l * mean_{n,h,w} ||phi_l(a) - phi_l(b)||^2 over (optionally
// unit-normalized) channel vectors.
ag::Var perceptual_distance(const ag::Var& y_hat, const ag::Var& y, const FeatureExtractor& extractor);

// mean |y_hat - y| + lambda_p * perceptual_distance.
ag::Var stage_two_loss(const ag::Var& y_hat, const ag::Var& y, const FeatureExtractor& extractor, double lambda_p);

}  // namespace shadowlift
