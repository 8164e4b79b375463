#include <catch2/catch_amalgamated.hpp>

#include "diffloss/core/nn.hpp"
#include "fd_check.hpp"

using namespace diffloss;
using diffloss::testing::input_gradient_error;
using diffloss::testing::param_gradient_error;

namespace {

// inputs kept away from kinks of |x| and relu
Tensor smooth_random(Shape shape, uint64_t seed, float offset = 0.f) {
    Rng rng(seed);
    Tensor t = Tensor::randn(std::move(shape), rng);
    for (int64_t i = 0; i < t.numel(); ++i) {
        float v = t[i];
        if (std::abs(v) < 0.2f) v = v < 0 ? v - 0.2f : v + 0.2f;
        t[i] = v + offset;
    }
    return t;
}

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
    Tensor x = smooth_random({2, 3, 4, 4}, 101);
    Tensor y = smooth_random({2, 3, 4, 4}, 102);

    auto check = [&](auto f) { REQUIRE(input_gradient_error(x, f) < 1e-3); };

    check([&](const Var& v) { return mean_all(axpby(0.7f, v, -1.3f, constant(y))); });
    check([&](const Var& v) { return mean_all(mul(v, constant(y))); });
    check([&](const Var& v) { return mean_all(square(v)); });
    check([&](const Var& v) { return mean_all(abs_val(v)); });
    check([&](const Var& v) { return mean_all(sigmoid(v)); });
    check([&](const Var& v) { return mean_all(silu(v)); });
    check([&](const Var& v) { return mean_all(relu(v)); });
    check([&](const Var& v) { return mean_all(scale_shift(v, -2.5f, 0.3f)); });
    check([&](const Var& v) { return mse_mean(v, constant(y)); });
    check([&](const Var& v) { return l1_mean(v, constant(y)); });
    check([&](const Var& v) { return mean_all(square(silu(mul(v, v)))); });
}

TEST_CASE("shape op gradients") {
    Tensor x = smooth_random({2, 4, 4, 4}, 103);
    Tensor y = smooth_random({2, 2, 4, 4}, 104);

    REQUIRE(input_gradient_error(x, [&](const Var& v) {
                return mean_all(square(reshape(v, {4, 32})));
            }) < 1e-3);
    REQUIRE(input_gradient_error(x, [&](const Var& v) {
                return mean_all(square(concat_channels(v, constant(y))));
            }) < 1e-3);
    REQUIRE(input_gradient_error(y, [&](const Var& v) {
                return mean_all(square(concat_channels(constant(x), v)));
            }) < 1e-3);
    REQUIRE(input_gradient_error(x, [&](const Var& v) {
                return mean_all(square(crop_center(v, 2, 2)));
            }) < 1e-3);
    REQUIRE(input_gradient_error(x, [&](const Var& v) {
                return mean_all(square(upsample_nearest2x(v)));
            }) < 1e-3);
    REQUIRE(input_gradient_error(x, [&](const Var& v) { return mean_all(square(avg_pool2x(v))); }) <
            1e-3);
    REQUIRE(input_gradient_error(x, [&](const Var& v) { return mean_all(square(spatial_mean(v))); }) <
            1e-3);
}

TEST_CASE("bias_channel gradients") {
    Tensor x = smooth_random({2, 3, 4, 4}, 105);
    Tensor b = smooth_random({3}, 106);
    REQUIRE(input_gradient_error(x, [&](const Var& v) {
                return mean_all(square(bias_channel(v, constant(b))));
            }) < 1e-3);
    Var bv = make_param(b.clone());
    REQUIRE(param_gradient_error(bv, [&](const Var& p) {
                return mean_all(square(bias_channel(constant(x), p)));
            }) < 1e-3);
}

TEST_CASE("conv2d gradients match finite differences") {
    Tensor x = smooth_random({2, 3, 6, 6}, 107);
    Rng rng(108);
    Tensor w = Tensor::randn({4, 3, 3, 3}, rng, 0.4f);
    Tensor b = Tensor::randn({4}, rng, 0.2f);

    SECTION("stride 1, input grad") {
        REQUIRE(input_gradient_error(x, [&](const Var& v) {
                    return mean_all(square(conv2d(v, constant(w), constant(b))));
                }) < 1e-3);
    }
    SECTION("stride 2, input grad") {
        REQUIRE(input_gradient_error(x, [&](const Var& v) {
                    return mean_all(square(conv2d(v, constant(w), constant(b), 2)));
                }) < 1e-3);
    }
    SECTION("weight grad") {
        Var wv = make_param(w.clone());
        REQUIRE(param_gradient_error(wv, [&](const Var& p) {
                    return mean_all(square(conv2d(constant(x), p, constant(b))));
                }) < 1e-3);
    }
    SECTION("bias grad") {
        Var bv = make_param(b.clone());
        REQUIRE(param_gradient_error(bv, [&](const Var& p) {
                    return mean_all(square(conv2d(constant(x), constant(w), p)));
                }) < 1e-3);
    }
    SECTION("channel mismatch rejected") {
        Tensor bad = Tensor::zeros({4, 5, 3, 3});
        REQUIRE_THROWS_AS(conv2d(constant(x), constant(bad), nullptr), ArgumentError);
    }
}

TEST_CASE("linear gradients match finite differences") {
    Tensor x = smooth_random({3, 5}, 109);
    Rng rng(110);
    Tensor w = Tensor::randn({4, 5}, rng, 0.5f);
    Tensor b = Tensor::randn({4}, rng, 0.2f);
    REQUIRE(input_gradient_error(x, [&](const Var& v) {
                return mean_all(square(linear(v, constant(w), constant(b))));
            }) < 1e-3);
    Var wv = make_param(w.clone());
    REQUIRE(param_gradient_error(wv, [&](const Var& p) {
                return mean_all(square(linear(constant(x), p, constant(b))));
            }) < 1e-3);
}

TEST_CASE("group_norm gradients match finite differences") {
    Tensor x = smooth_random({2, 4, 3, 3}, 111);
    Rng rng(112);
    Tensor gamma = Tensor::rand_uniform({4}, rng, 0.5f, 1.5f);
    Tensor beta = Tensor::randn({4}, rng, 0.2f);

    REQUIRE(input_gradient_error(x, [&](const Var& v) {
                return mean_all(square(group_norm(v, constant(gamma), constant(beta), 2)));
            }) < 1e-3);
    Var gv = make_param(gamma.clone());
    REQUIRE(param_gradient_error(gv, [&](const Var& p) {
                return mean_all(square(group_norm(constant(x), p, constant(beta), 2)));
            }) < 1e-3);
    Var bv = make_param(beta.clone());
    REQUIRE(param_gradient_error(bv, [&](const Var& p) {
                return mean_all(square(group_norm(constant(x), constant(gamma), p, 2)));
            }) < 1e-3);
    REQUIRE_THROWS_AS(group_norm(constant(x), constant(gamma), constant(beta), 3), ArgumentError);
}

TEST_CASE("cross entropy value and gradient") {
    // hand-computed softmax oracle
    Tensor logits = Tensor::from_vector({2, 3}, {1.f, 2.f, 0.5f, -1.f, 0.f, 3.f});
    std::vector<int> labels{1, 2};
    double expected = 0.0;
    for (int n = 0; n < 2; ++n) {
        double z = 0;
        for (int k = 0; k < 3; ++k) z += std::exp(static_cast<double>(logits[n * 3 + k]));
        expected += -std::log(std::exp(static_cast<double>(logits[n * 3 + labels[n]])) / z);
    }
    expected /= 2;
    Var l = cross_entropy_logits(constant(logits), labels);
    REQUIRE_THAT(static_cast<double>(l->value[0]),
                 Catch::Matchers::WithinRel(expected, 1e-5));

    REQUIRE(input_gradient_error(logits, [&](const Var& v) {
                return cross_entropy_logits(v, labels);
            }) < 1e-3);
    REQUIRE_THROWS_AS(cross_entropy_logits(constant(logits), std::vector<int>{0, 7}), ArgumentError);
}

TEST_CASE("gradient accumulates across branches and stops at detach") {
    Tensor x0 = smooth_random({2, 2}, 113);
    Var x = make_param(x0.clone());
    Var loss = add(mean_all(square(x)), mean_all(mul(x, detach(x))));
    backward(loss);
    // d/dx [mean(x^2) + mean(x * const(x))] = 2x/n + x/n
    for (int64_t i = 0; i < x0.numel(); ++i)
        REQUIRE_THAT(static_cast<double>(x->grad[i]),
                     Catch::Matchers::WithinRel(3.0 * x0[i] / x0.numel(), 1e-4));
}

TEST_CASE("ops are pure: repeated evaluation identical") {
    Tensor x = smooth_random({2, 3, 4, 4}, 114);
    Rng rng(115);
    Tensor w = Tensor::randn({4, 3, 3, 3}, rng, 0.4f);
    Var a = conv2d(constant(x), constant(w), nullptr);
    Var b = conv2d(constant(x), constant(w), nullptr);
    REQUIRE(a->value.checksum() == b->value.checksum());
}

TEST_CASE("backward requires scalar root and param dependence") {
    Var x = constant(Tensor::full({2}, 1.f));
    REQUIRE_THROWS_AS(backward(mean_all(square(x))), NumericError);
    Var p = make_param(Tensor::full({2}, 1.f));
    REQUIRE_THROWS_AS(backward(square(p)), ArgumentError);
}

TEST_CASE("adam reduces a quadratic") {
    Rng rng(116);
    Var p = make_param(Tensor::randn({8}, rng));
    Tensor target = Tensor::randn({8}, rng);
    Adam opt({p}, {.lr = 0.05});
    double first = 0;
    for (int it = 0; it < 200; ++it) {
        opt.zero_grad();
        Var loss = mse_mean(p, constant(target));
        if (it == 0) first = loss->value[0];
        backward(loss);
        opt.step();
    }
    Var final_loss = mse_mean(p, constant(target));
    REQUIRE(final_loss->value[0] < first * 0.01);
    REQUIRE(opt.param_scalar_count() == 8);
}
