#include <cmath>

#include "doctest.h"
#include "shadowlift/autograd.hpp"
#include "shadowlift/error.hpp"
#include "shadowlift/nn.hpp"
#include "test_support.hpp"

using namespace shadowlift;
using sltest::grad_check;
using sltest::random_tensor;

namespace {

ag::Var param(const Shape& s, std::uint64_t seed) { return ag::Var(random_tensor(s, seed), true); }

void check(const std::function<ag::Var()>& f, const std::vector<ag::Var>& p, double tol = 1e-6) {
    auto r = grad_check(f, p, 60, 11, 1e-5);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error < tol);
}

}  // namespace

TEST_CASE("tensor basics") {
    Tensor t({2, 3, 4, 5}, 1.5);
    CHECK(t.size() == 120);
    CHECK(t.dim(-1) == 5);
    t.at(1, 2, 3, 4) = 7.0;
    CHECK(t[t.size() - 1] == 7.0);
    CHECK(t.sample(1).shape() == Shape{1, 3, 4, 5});
    CHECK(shape_str({1, 2}) == "[1,2]");
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), Error);

    Tensor a = random_tensor({1, 2, 2, 2}, 1), b = random_tensor({1, 2, 2, 2}, 2);
    Tensor parts[] = {a, b};
    Tensor s = stack_batch(parts);
    CHECK(s.shape() == Shape{2, 2, 2, 2});
    CHECK(max_abs_diff(s.sample(1), b) == 0.0);
}

TEST_CASE("seed mixing is deterministic and salt sensitive") {
    CHECK(mix_seed(1, 2) == mix_seed(1, 2));
    CHECK(mix_seed(1, 2) != mix_seed(1, 3));
    CHECK(hash_string("abc") == hash_string("abc"));
    CHECK(hash_string("abc") != hash_string("abd"));
}

TEST_CASE("conv2d gradients") {
    auto x = param({2, 3, 5, 6}, 1);
    auto w = param({4, 3, 3, 3}, 2);
    auto b = param({4}, 3);
    for (int stride : {1, 2}) {
        check([&] { return ag::sum(ag::mul(ag::conv2d(x, w, b, stride, 1), ag::conv2d(x, w, b, stride, 1))); },
              {x, w, b});
    }
    auto w1 = param({2, 3, 1, 1}, 4);
    check([&] { return ag::mean(ag::silu(ag::conv2d(x, w1, ag::Var(), 1, 0))); }, {x, w1});
}

TEST_CASE("conv2d matches a direct loop") {
    Tensor x = random_tensor({1, 2, 4, 4}, 5), w = random_tensor({3, 2, 3, 3}, 6), b = random_tensor({3}, 7);
    Tensor y = ag::conv2d(ag::Var(x), ag::Var(w), ag::Var(b), 2, 1).value();
    REQUIRE(y.shape() == Shape{1, 3, 2, 2});
    for (int o = 0; o < 3; ++o)
        for (int oy = 0; oy < 2; ++oy)
            for (int ox = 0; ox < 2; ++ox) {
                double acc = b[o];
                for (int c = 0; c < 2; ++c)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                            if (iy < 0 || ix < 0 || iy >= 4 || ix >= 4) continue;
                            acc += w.at(o, c, ky, kx) * x.at(0, c, iy, ix);
                        }
                CHECK(y.at(0, o, oy, ox) == doctest::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("linear, attention and elementwise gradients") {
    auto x = param({3, 5}, 1), w = param({4, 5}, 2), b = param({4}, 3);
    check([&] { return ag::sum(ag::silu(ag::linear(x, w, b))); }, {x, w, b});

    auto q = param({2, 3, 2, 3}, 4), k = param({2, 3, 2, 3}, 5), v = param({2, 3, 2, 3}, 6);
    check([&] { return ag::sum(ag::mul(ag::attention(q, k, v), v)); }, {q, k, v});

    auto a = param({2, 3, 2, 2}, 7), c = param({2, 3, 2, 2}, 8), bias = param({2, 3}, 9);
    check([&] { return ag::mean(ag::scale(ag::add_channel_bias(ag::sub(ag::mul(a, c), a), bias), 1.7)); },
          {a, c, bias});
    check([&] { return ag::sum(ag::leaky_relu(ag::add(a, c), 0.2)); }, {a, c});
}

TEST_CASE("layout ops") {
    auto a = param({1, 2, 4, 6}, 1), b = param({1, 3, 4, 6}, 2);
    ag::Var parts[] = {a, b};
    check([&] {
        auto cat = ag::concat_channels(parts);
        return ag::sum(ag::mul(ag::slice_channels(cat, 1, 4), ag::slice_channels(cat, 2, 5)));
    }, {a, b});
    check([&] { return ag::sum(ag::silu(ag::resize_nearest(a, 8, 9))); }, {a});
    check([&] { return ag::sum(ag::silu(ag::depth_to_space(ag::space_to_depth(a, 2), 2))); }, {a});
    check([&] { return ag::sum(ag::silu(ag::reshape(a, {2, 24}))); }, {a});

    Tensor x = random_tensor({2, 3, 6, 6}, 3);
    Tensor packed = ag::space_to_depth(ag::Var(x), 3).value();
    CHECK(packed.shape() == Shape{2, 27, 2, 2});
    CHECK(max_abs_diff(ag::depth_to_space(ag::Var(packed), 3).value(), x) == 0.0);
    // channel (dy*k+dx)*C + c holds pixel (dy, dx) of channel c
    CHECK(packed.at(1, (2 * 3 + 1) * 3 + 2, 1, 0) == x.at(1, 2, 3 + 2, 0 + 1));
}

TEST_CASE("reductions") {
    auto a = param({2, 3, 3, 3}, 1), b = param({2, 3, 3, 3}, 2);
    check([&] { return ag::mse(a, b); }, {a, b});
    check([&] { return ag::l1(a, b); }, {a, b});
    check([&] { return ag::sum(ag::mul(ag::channel_unit_normalize(a, 1e-10), b)); }, {a, b});

    Tensor n = ag::channel_unit_normalize(a, 1e-10).value();
    double norm = 0.0;
    for (int c = 0; c < 3; ++c) norm += n.at(1, c, 2, 1) * n.at(1, c, 2, 1);
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-9));

    ag::Var same(random_tensor({4}, 3), true);
    ag::backward(ag::l1(same, ag::Var(same.value())));
    const Tensor g = same.grad();
    for (double v : g.values()) CHECK(v == 0.0);
}

TEST_CASE("no-grad guard skips recording") {
    auto a = param({2, 2}, 1);
    {
        ag::NoGradGuard guard;
        CHECK_FALSE(ag::grad_enabled());
        auto y = ag::scale(a, 2.0);
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(ag::grad_enabled());
    CHECK(ag::scale(a, 2.0).requires_grad());
}

TEST_CASE("shape errors") {
    auto a = param({1, 2, 3, 3}, 1), b = param({1, 2, 3, 4}, 2);
    CHECK_THROWS_AS(ag::add(a, b), Error);
    CHECK_THROWS_AS(ag::mse(a, b), Error);
    auto w = param({2, 3, 3, 3}, 3);
    CHECK_THROWS_AS(ag::conv2d(a, w, ag::Var(), 1, 1), Error);
}

TEST_CASE("adam minimizes a quadratic") {
    ag::Var x(Tensor({3}, std::vector<double>{3.0, -2.0, 1.0}), true);
    Tensor target({3}, std::vector<double>{0.5, 0.5, 0.5});
    nn::Adam opt({x}, {.learning_rate = 0.05});
    for (int i = 0; i < 500; ++i) {
        opt.zero_grad();
        ag::backward(ag::mse(x, ag::Var(target)));
        opt.step();
    }
    CHECK(max_abs_diff(x.value(), target) < 1e-3);
    CHECK(opt.steps() == 500);
}

TEST_CASE("parameter list bookkeeping") {
    Rng rng(1);
    nn::Conv2d conv(3, 4, 3, 1, rng);
    nn::Linear lin(5, 2, rng);
    nn::ParameterList p;
    p.add("conv", conv);
    p.add("lin", lin);
    CHECK(p.count() == 4 * 3 * 9 + 4 + 10 + 2);
    CHECK(p.items().front().first == "conv.weight");
    p.set_requires_grad(false);
    CHECK_FALSE(conv.weight.requires_grad());
    auto copy = conv.clone();
    copy.weight.mutable_value()[0] += 1.0;
    CHECK(copy.weight.value()[0] != conv.weight.value()[0]);
}
