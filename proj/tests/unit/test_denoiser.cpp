#include <cmath>

#include "doctest.h"
#include "shadowlift/denoiser.hpp"
#include "shadowlift/error.hpp"
#include "shadowlift/losses.hpp"
#include "test_support.hpp"

using namespace shadowlift;
using sltest::random_tensor;

namespace {

NoiseSchedule default_schedule() { return make_noise_schedule(1000, 1e-4, 0.02); }

UNetDenoiser make_unet(Parameterization p = Parameterization::z0_pred, int in_channels = 8, std::uint64_t seed = 1) {
    Rng rng(seed);
    DenoiserConfig cfg;
    cfg.in_channels = in_channels;
    cfg.widths = {8, 12, 16};
    cfg.time_dim = 16;
    cfg.parameterization = p;
    return UNetDenoiser(cfg, default_schedule(), rng);
}

}  // namespace

TEST_CASE("parameterization names") {
    CHECK(parse_parameterization("z0_pred") == Parameterization::z0_pred);
    CHECK(parse_parameterization(parameterization_name(Parameterization::eps_pred)) == Parameterization::eps_pred);
    CHECK_THROWS_AS(parse_parameterization("v_pred"), Error);
}

TEST_CASE("timestep embedding") {
    int t[] = {1, 500};
    Tensor e = timestep_embedding(t, 16);
    CHECK(e.shape() == Shape{2, 16});
    CHECK(e[0] == doctest::Approx(std::sin(1.0)));
    CHECK(e[8] == doctest::Approx(std::cos(1.0)));
    CHECK(e[16] != e[0]);
}

TEST_CASE("denoiser output shape") {
    auto den = make_unet();
    Tensor z = random_tensor({1, 4, 32, 32}, 1), c = random_tensor({1, 4, 32, 32}, 2);
    Tensor out = predict_clean(den, z, c, 10);
    CHECK(out.shape() == z.shape());
    CHECK(max_abs_diff(out, predict_clean(den, z, c, 10)) == 0.0);
    CHECK(max_abs_diff(out, predict_clean(den, z, c, 900)) > 0.0);

    CHECK_THROWS_AS(predict_clean(den, z, c, 0), Error);
    CHECK_THROWS_AS(predict_clean(den, z, c, 1001), Error);
    CHECK_THROWS_AS(predict_clean(den, z, random_tensor({1, 4, 32, 28}, 3), 5), Error);
}

TEST_CASE("eps to clean conversion") {
    auto s = default_schedule();
    Tensor z_t = random_tensor({2, 4, 4, 4}, 4);
    Tensor zero({2, 4, 4, 4});
    Tensor c = eps_to_clean(z_t, zero, 300, s);
    for (std::size_t i = 0; i < z_t.size(); ++i) CHECK(c[i] == doctest::Approx(z_t[i] / std::sqrt(s.alpha_bar(300))).epsilon(1e-14));

    Tensor z_hat = random_tensor({2, 4, 4, 4}, 5);
    for (int t : {1, 250, 999}) {
        const double ab = s.alpha_bar(t);
        Tensor eps = z_t;
        for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = (z_t[i] - std::sqrt(ab) * z_hat[i]) / std::sqrt(1.0 - ab);
        CHECK(max_abs_diff(eps_to_clean(z_t, eps, t, s), z_hat) <= 1e-9);
    }
}

TEST_CASE("eps_pred wrapper converts the raw output") {
    auto den = make_unet(Parameterization::eps_pred);
    Tensor z = random_tensor({1, 4, 8, 8}, 6), c = random_tensor({1, 4, 8, 8}, 7);
    int t[] = {123};
    Tensor raw = den.forward_raw(ag::Var(z), ag::Var(c), t).value();
    CHECK(max_abs_diff(predict_clean(den, z, c, 123), eps_to_clean(z, raw, 123, den.schedule())) <= 1e-12);
}

TEST_CASE("conditioning expansion of the first layer") {
    auto plain = make_unet(Parameterization::z0_pred, 4, 3);
    const nn::Conv2d& layer = plain.first_layer();
    REQUIRE(layer.in_channels() == 4);
    nn::Conv2d wide = expand_conditioning_channels(layer, 4);
    CHECK(wide.in_channels() == 8);
    CHECK(wide.out_channels() == layer.out_channels());
    CHECK(wide.kernel() == layer.kernel());

    Tensor z = random_tensor({2, 4, 8, 8}, 8);
    ag::NoGradGuard guard;
    ag::Var zz[] = {ag::Var(z), ag::Var(z)};
    Tensor a = wide(ag::concat_channels(zz)).value();
    Tensor b = layer(ag::Var(z)).value();
    CHECK(max_abs_diff(a, b) <= 1e-6);

    ag::Var z0[] = {ag::Var(z), ag::Var(Tensor(z.shape()))};
    Tensor half = ag::conv2d(ag::concat_channels(z0), wide.weight, ag::Var(), 1, wide.pad).value();
    Tensor full = ag::conv2d(ag::Var(z), layer.weight, ag::Var(), 1, layer.pad).value();
    for (std::size_t i = 0; i < full.size(); ++i) CHECK(half[i] == doctest::Approx(0.5 * full[i]).epsilon(1e-12));

    CHECK_THROWS_AS(expand_conditioning_channels(wide, 4), Error);
    auto expanded = make_unet();
    CHECK_THROWS_AS(expanded.expand_conditioning(), Error);
    plain.expand_conditioning();
    CHECK(plain.config().in_channels == 8);
}

TEST_CASE("stage-one loss gradient matches finite differences") {
    auto den = make_unet(Parameterization::z0_pred, 8, 9);
    auto s = den.schedule();
    Tensor zy = random_tensor({2, 4, 8, 8}, 10), zx = random_tensor({2, 4, 8, 8}, 11);
    Rng rng(12);
    Tensor eps = randn(zy.shape(), rng);
    int t[] = {40, 700};
    Tensor zt = zy;
    for (int n = 0; n < 2; ++n) {
        Tensor part = forward_noise(zy.sample(n), t[n], eps.sample(n), s);
        std::copy(part.values().begin(), part.values().end(), zt.values().begin() + n * part.size());
    }
    auto params = den.parameters().vars();
    auto loss = [&] { return stage_one_loss(den.forward_raw(ag::Var(zt), ag::Var(zx), t), ag::Var(zy)); };
    auto r = sltest::grad_check(loss, params, 150, 13);
    CHECK(r.checked == 150);
    CHECK(r.max_rel_error <= 1e-4);
    MESSAGE("max relative error " << r.max_rel_error);
}

TEST_CASE("mlp denoiser") {
    Rng rng(14);
    MlpDenoiser den(2, 16, 8, Parameterization::z0_pred, default_schedule(), rng);
    Tensor z = random_tensor({5, 2, 1, 1}, 15), c = random_tensor({5, 2, 1, 1}, 16);
    CHECK(predict_clean(den, z, c, 10).shape() == z.shape());
    CHECK(den.parameters().count() > 0);
}
