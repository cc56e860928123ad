#include "shadowlift/losses.hpp"

#include "shadowlift/error.hpp"

namespace shadowlift {

RandomConvPyramid::RandomConvPyramid(std::uint64_t seed, std::vector<int> widths, bool normalize)
    : normalize_(normalize) {
    if (widths.empty()) throw Error(Errc::invalid_range, "pyramid needs at least one stage");
    Rng rng(seed);
    int in = 3;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        stages_.emplace_back(in, widths[i], 3, i == 0 ? 1 : 2, rng);
        in = widths[i];
    }
    parameters().set_requires_grad(false);
}

std::vector<ag::Var> RandomConvPyramid::taps(const ag::Var& images) const {
    if (images.value().rank() != 4 || images.dim(1) != 3)
        throw Error(Errc::channel_mismatch, "perceptual extractor expects NCHW RGB, got " + shape_str(images.shape()));
    std::vector<ag::Var> out;
    ag::Var h = images;
    for (const nn::Conv2d& stage : stages_) {
        h = ag::silu(stage(h));
        out.push_back(tap_scale_ == 1.0 ? h : ag::scale(h, tap_scale_));
    }
    return out;
}

nn::ParameterList RandomConvPyramid::parameters() const {
    nn::ParameterList p;
    for (std::size_t i = 0; i < stages_.size(); ++i) p.add("stage" + std::to_string(i + 1), stages_[i]);
    return p;
}

ag::Var stage_one_loss(const ag::Var& z_hat, const ag::Var& z_y) {
    require_same_shape(z_hat.value(), z_y.value(), "stage_one_loss");
    return ag::mse(z_hat, z_y);
}

double stage_one_loss(const Tensor& z_hat, const Tensor& z_y) {
    ag::NoGradGuard guard;
    return stage_one_loss(ag::Var(z_hat), ag::Var(z_y)).value()[0];
}

ag::Var perceptual_distance(const ag::Var& y_hat, const ag::Var& y, const FeatureExtractor& extractor) {
    require_same_shape(y_hat.value(), y.value(), "perceptual_distance");
    const std::vector<ag::Var> fa = extractor.taps(y_hat);
    const std::vector<ag::Var> fb = extractor.taps(y);
    const std::vector<double> w = extractor.layer_weights();
    if (fa.size() != w.size()) throw Error(Errc::shape_mismatch, "extractor tap and weight counts differ");
    ag::Var total(Tensor({1}, 0.0));
    for (std::size_t l = 0; l < fa.size(); ++l) {
        ag::Var a = fa[l], b = fb[l];
        if (extractor.normalize()) {
            a = ag::channel_unit_normalize(a, kFeatureNormEps);
            b = ag::channel_unit_normalize(b, kFeatureNormEps);
        }
        // mse averages over channels too; scale back to a per-pixel squared norm.
        total = total + ag::scale(ag::mse(a, b), w[l] * a.dim(1));
    }
    return total;
}

ag::Var stage_two_loss(const ag::Var& y_hat, const ag::Var& y, const FeatureExtractor& extractor, double lambda_p) {
    require_same_shape(y_hat.value(), y.value(), "stage_two_loss");
    ag::Var loss = ag::l1(y_hat, y);
    if (lambda_p != 0.0) loss = loss + ag::scale(perceptual_distance(y_hat, y, extractor), lambda_p);
    return loss;
}

}  // namespace shadowlift
