#include <cmath>
#include <random>

#include "doctest.h"
#include "shadowlift/error.hpp"
#include "shadowlift/schedule.hpp"
#include "test_support.hpp"

using namespace shadowlift;

namespace {

Tensor scalar(double v) { return Tensor({1, 1, 1, 1}, v); }

}  // namespace

TEST_CASE("alpha_bar small schedules") {
    auto one = make_noise_schedule(1, 0.5, 0.5);
    REQUIRE(one.alpha_bars.size() == 1);
    CHECK(one.alpha_bars[0] == 0.5);

    auto three = make_noise_schedule(3, 0.1, 0.3);
    CHECK(three.beta(2) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(three.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-14));
    CHECK(three.alpha_bar(2) == doctest::Approx(0.72).epsilon(1e-14));
    CHECK(three.alpha_bar(3) == doctest::Approx(0.504).epsilon(1e-14));
    CHECK(three.alpha_bar(0) == 1.0);
    CHECK_THROWS_AS(three.alpha_bar(4), Error);
}

TEST_CASE("alpha_bar matches a loop product") {
    auto s = make_noise_schedule(1000, 1e-4, 0.02);
    for (int t = 1; t <= 1000; ++t) {
        double prod = 1.0;
        for (int u = 1; u <= t; ++u) prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (u - 1) / 999.0);
        CHECK(std::abs(s.alpha_bar(t) - prod) <= 1e-12);
        if (t > 1) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
        CHECK(s.alpha_bar(t) == doctest::Approx(s.alpha_bar(t - 1) * (1.0 - s.beta(t))).epsilon(1e-14));
    }
    for (double b : s.betas) CHECK((b > 0.0 && b < 1.0));
}

TEST_CASE("schedule preconditions") {
    CHECK_THROWS_AS(make_noise_schedule(0, 0.1, 0.2), Error);
    CHECK_THROWS_AS(make_noise_schedule(10, 0.0, 0.2), Error);
    CHECK_THROWS_AS(make_noise_schedule(10, 0.3, 0.2), Error);
    CHECK_THROWS_AS(make_noise_schedule(10, 0.1, 1.0), Error);
}

TEST_CASE("forward noise") {
    auto s = make_noise_schedule(1, 0.75, 0.75);  // abar_1 = 0.25
    Tensor out = forward_noise(scalar(1.0), 1, scalar(1.0), s);
    CHECK(out[0] == doctest::Approx(0.5 + std::sqrt(0.75)).epsilon(1e-14));
    CHECK(out[0] == doctest::Approx(1.36603).epsilon(1e-5));

    auto lin = make_noise_schedule(1000, 1e-4, 0.02);
    Tensor z = sltest::random_tensor({1, 4, 3, 3}, 1);
    Tensor zero({1, 4, 3, 3});
    Tensor clean = forward_noise(z, 500, zero, lin);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(clean[i] == std::sqrt(lin.alpha_bar(500)) * z[i]);

    Tensor e = sltest::random_tensor({1, 4, 3, 3}, 2);
    Tensor noisy = forward_noise(z, 1000, e, lin);
    const double bound = std::sqrt(lin.alpha_bar(1000)) * 1.0 + (1.0 - std::sqrt(1.0 - lin.alpha_bar(1000)));
    CHECK(max_abs_diff(noisy, e) <= bound);

    CHECK_THROWS_AS(forward_noise(z, 0, e, lin), Error);
    CHECK_THROWS_AS(forward_noise(z, 1001, e, lin), Error);
    CHECK_THROWS_AS(forward_noise(z, 3, Tensor({1, 4, 3, 2}), lin), Error);
}

TEST_CASE("forward noise Monte Carlo moments") {
    auto s = make_noise_schedule(1000, 1e-4, 0.02);
    const int n = 100000;
    const double z = 0.7;
    for (int t : {50, 400, 900}) {
        Rng rng(static_cast<std::uint64_t>(t));
        Tensor eps = randn({n, 1, 1, 1}, rng);
        Tensor out = forward_noise(Tensor({n, 1, 1, 1}, z), t, eps, s);
        double mean = 0.0;
        for (double v : out.values()) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : out.values()) var += (v - mean) * (v - mean);
        var /= n - 1;
        const double ab = s.alpha_bar(t);
        CHECK(std::abs(mean - std::sqrt(ab) * z) <= 3.0 * std::sqrt((1.0 - ab) / n));
        CHECK(std::abs(var / (1.0 - ab) - 1.0) <= 0.02);
    }
}

TEST_CASE("ddim plans") {
    auto s = make_noise_schedule(1000, 1e-4, 0.02);
    auto full = make_ddim_plan(s, 1000, 0.0);
    for (int j = 0; j < 1000; ++j) {
        CHECK(full.taus[j] == j + 1);
        CHECK(full.sigmas[j] == 0.0);
    }
    CHECK(make_ddim_plan(s, 1, 0.0).taus == std::vector<int>{1000});
    auto ten = make_ddim_plan(s, 10, 0.0);
    REQUIRE(ten.steps() == 10);
    CHECK(ten.taus.back() == 1000);
    for (int j = 1; j < 10; ++j) CHECK(ten.taus[j] > ten.taus[j - 1]);
    CHECK(ten.previous_tau(0) == 0);

    auto noisy = make_ddim_plan(s, 10, 1.0);
    for (double sg : noisy.sigmas) CHECK(sg >= 0.0);
    CHECK(noisy.sigmas.back() > 0.0);

    CHECK_THROWS_AS(make_ddim_plan(s, 0, 0.0), Error);
    CHECK_THROWS_AS(make_ddim_plan(s, 1001, 0.0), Error);
    CHECK_THROWS_AS(make_ddim_plan(s, 10, -0.1), Error);
}

TEST_CASE("ddim step scalar case") {
    // abar_1 = 0.64, abar_2 = 0.25
    auto s = make_noise_schedule(2, 0.36, 0.609375);
    REQUIRE(s.alpha_bar(1) == doctest::Approx(0.64).epsilon(1e-15));
    REQUIRE(s.alpha_bar(2) == doctest::Approx(0.25).epsilon(1e-15));
    auto plan = make_ddim_plan(s, 2, 0.0);
    Tensor out = ddim_step(scalar(1.0), scalar(0.8), 1, plan, s, Tensor());
    const double eps_hat = (1.0 - 0.5 * 0.8) / std::sqrt(0.75);
    CHECK(eps_hat == doctest::Approx(0.69282).epsilon(1e-5));
    CHECK(0.6 * eps_hat == doctest::Approx(0.41569).epsilon(1e-5));
    CHECK(std::abs(out[0] - (0.8 * 0.8 + 0.6 * eps_hat)) <= 1e-9);
    CHECK(out[0] == doctest::Approx(1.05569).epsilon(1e-5));
}

TEST_CASE("ddim final step returns the clean prediction") {
    auto s = make_noise_schedule(1000, 1e-4, 0.02);
    auto plan = make_ddim_plan(s, 10, 0.0);
    Tensor z = sltest::random_tensor({2, 4, 3, 3}, 3), zh = sltest::random_tensor({2, 4, 3, 3}, 4);
    CHECK(max_abs_diff(ddim_step(z, zh, 0, plan, s, Tensor()), zh) == 0.0);
    CHECK_THROWS_AS(ddim_step(z, zh, 10, plan, s, Tensor()), Error);
    CHECK_THROWS_AS(ddim_step(z, Tensor({2, 4, 3, 2}), 3, plan, s, Tensor()), Error);
}

TEST_CASE("ddim with eta 1 and S = T matches ancestral sampling") {
    auto s = make_noise_schedule(1000, 1e-4, 0.02);
    auto plan = make_ddim_plan(s, 1000, 1.0);
    Rng rng(9);
    std::normal_distribution<double> n01;
    double z = n01(rng);
    for (int j = 999; j >= 0; --j) {
        const int t = j + 1;
        const double x0 = 0.3 * z + 0.1;
        const double noise = n01(rng);
        const double ab = s.alpha_bar(t), ab_prev = s.alpha_bar(t - 1), beta = s.beta(t);
        const double mu = std::sqrt(ab_prev) * beta / (1.0 - ab) * x0 +
                          std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab) * z;
        const double sigma = std::sqrt((1.0 - ab_prev) / (1.0 - ab) * beta);
        const double ancestral = mu + sigma * noise;
        const double ddim = ddim_step(scalar(z), scalar(x0), j, plan, s, scalar(noise))[0];
        CHECK(std::abs(ddim - ancestral) <= 1e-9);
        z = ancestral;
    }
}

TEST_CASE("sampling") {
    auto s = make_noise_schedule(1000, 1e-4, 0.02);
    Tensor zc = sltest::random_tensor({1, 4, 4, 4}, 5);
    Tensor target = sltest::random_tensor({1, 4, 4, 4}, 6);
    PredictCleanFn constant = [&](const Tensor&, const Tensor&, int) { return target; };
    for (int S : {1, 7, 50})
        for (std::uint64_t seed : {1u, 2u}) CHECK(max_abs_diff(sample(constant, zc, make_ddim_plan(s, S, 0.0), s, seed), target) == 0.0);

    PredictCleanFn smooth = [](const Tensor& zt, const Tensor& c, int t) {
        Tensor out = zt;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * std::tanh(zt[i]) + 0.3 * c[i] + 1e-4 * t;
        return out;
    };
    auto plan = make_ddim_plan(s, 20, 0.0);
    Tensor a = sample(smooth, zc, plan, s, 42), b = sample(smooth, zc, plan, s, 42);
    CHECK(max_abs_diff(a, b) == 0.0);
    CHECK(max_abs_diff(a, sample(smooth, zc, plan, s, 43)) > 0.0);

    Tensor seen;
    int seen_t = 0;
    PredictCleanFn record = [&](const Tensor& zt, const Tensor& c, int t) {
        seen = zt;
        seen_t = t;
        return smooth(zt, c, t);
    };
    Tensor one = sample(record, zc, make_ddim_plan(s, 1, 0.0), s, 3);
    CHECK(seen_t == 1000);
    CHECK(max_abs_diff(one, smooth(seen, zc, 1000)) == 0.0);
}
