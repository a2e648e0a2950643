#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "qpalf/adam.hpp"
#include "qpalf/gradcheck.hpp"
#include "qpalf/rng.hpp"
#include "qpalf/tensor.hpp"

using namespace qpalf;
using oracle::random_vec;

TEST_CASE("conv2d identity kernel passes input through") {
    auto x = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
    std::vector<float> kd(9, 0.0f);
    kd[4] = 1.0f;
    auto w = Tensor<float>::from_data({1, 1, 3, 3}, kd);
    auto b = Tensor<float>::zeros({1});
    auto y = conv2d(x, w, b, 1);
    REQUIRE(y.shape() == x.shape());
    for (float v : y.data()) CHECK(v == 1.0f);
}

TEST_CASE("conv2d zero padding arithmetic on all-ones") {
    auto x = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
    auto w = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
    auto b = Tensor<float>::zeros({1});
    auto y = conv2d(x, w, b, 1);
    const auto d = y.data();
    CHECK(d[4] == 9.0f);             // center sees the full window
    CHECK(d[0] == 4.0f);             // corners lose a five-tap border
    CHECK(d[2] == 4.0f);
    CHECK(d[6] == 4.0f);
    CHECK(d[8] == 4.0f);
    CHECK(d[1] == 6.0f);             // edges lose one row or column
}

TEST_CASE("conv2d channel mismatch throws") {
    auto x = Tensor<float>::zeros({1, 2, 4, 4});
    auto w = Tensor<float>::zeros({3, 3, 3, 3});
    auto b = Tensor<float>::zeros({3});
    CHECK_THROWS_AS((void)conv2d(x, w, b, 1), std::invalid_argument);
}

TEST_CASE("conv2d matches the naive loop oracle over a shape sweep") {
    Rng rng(42);
    for (int k : {1, 3}) {
        for (int n = 1; n <= 4; ++n) {
            for (int cin = 1; cin <= 4; ++cin) {
                for (int cout : {1, 3}) {
                    const int h = 1 + static_cast<int>(rng.below(8));
                    const int w = 1 + static_cast<int>(rng.below(8));
                    auto xd = random_vec<float>(rng, static_cast<std::size_t>(n) * cin * h * w);
                    auto wd =
                        random_vec<float>(rng, static_cast<std::size_t>(cout) * cin * k * k);
                    auto bd = random_vec<float>(rng, static_cast<std::size_t>(cout));
                    auto ref = oracle::conv2d(xd, n, cin, h, w, wd, cout, k, bd);

                    auto x = Tensor<float>::from_data({n, cin, h, w}, xd);
                    auto wt = Tensor<float>::from_data({cout, cin, k, k}, wd);
                    auto b = Tensor<float>::from_data({cout}, bd);
                    auto y = conv2d(x, wt, b, k / 2);
                    REQUIRE(y.data().size() == ref.size());
                    for (std::size_t i = 0; i < ref.size(); ++i) {
                        CHECK(std::abs(y.data()[i] - ref[i]) <= 1e-6f * (1.0f + std::abs(ref[i])));
                    }
                }
            }
        }
    }
}

TEST_CASE("conv2d backward matches the oracle gradient under finite differences") {
    Rng rng(7);
    auto xd = random_vec<double>(rng, 2 * 3 * 5 * 5);
    auto wd = random_vec<double>(rng, 4 * 3 * 3 * 3);
    auto bd = random_vec<double>(rng, 4);
    auto x = Tensor<double>::from_data({2, 3, 5, 5}, xd, true);
    auto w = Tensor<double>::from_data({4, 3, 3, 3}, wd, true);
    auto b = Tensor<double>::from_data({4}, bd, true);
    auto fn = [&]() { return mean_all(conv2d(x, w, b, 1) * conv2d(x, w, b, 1)); };
    auto res = finite_diff_check<double>(fn, {x, w, b});
    CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("prelu values and slope gradient") {
    auto slope = Tensor<float>::full({1}, 0.25f);
    auto x = Tensor<float>::from_data({1, 1, 1, 2}, {2.0f, -2.0f});
    auto y = prelu(x, slope);
    CHECK(y.data()[0] == 2.0f);
    CHECK(y.data()[1] == doctest::Approx(-0.5f));

    auto xs = Tensor<double>::from_data({1, 1, 1, 1}, {-2.0}, false);
    auto s = Tensor<double>::from_data({1}, {0.25}, true);
    auto loss = sum_all(prelu(xs, s));
    backward(loss);
    CHECK(s.grad()[0] == doctest::Approx(-2.0));
}

TEST_CASE("prelu slope length mismatch throws") {
    auto x = Tensor<float>::zeros({1, 3, 2, 2});
    auto slope = Tensor<float>::zeros({2});
    CHECK_THROWS_AS((void)prelu(x, slope), std::invalid_argument);
}

TEST_CASE("softplus pinned values and stability") {
    auto x = Tensor<double>::from_data({5}, {0.0, std::log(std::exp(1.0) - 1.0), 100.0, -100.0,
                                             10000.0});
    auto y = softplus(x);
    CHECK(y.data()[0] == doctest::Approx(std::log(2.0)));
    CHECK(y.data()[1] == doctest::Approx(1.0));
    CHECK(std::abs(y.data()[2] - 100.0) <= 1e-6);
    CHECK(y.data()[3] > 0.0);
    CHECK(y.data()[4] == 10000.0);

    // Strictly positive even where e^x underflows.
    auto deep = softplus(Tensor<float>::from_data({2}, {-1000.0f, -10000.0f}));
    CHECK(deep.data()[0] > 0.0f);
    CHECK(deep.data()[1] > 0.0f);
}

TEST_CASE("elementwise and broadcast primitives") {
    auto f = Tensor<float>::from_data({1, 1, 1, 1}, {2.0f});
    auto m = Tensor<float>::from_data({1}, {0.5f});
    CHECK(scale_channels(f, m).data()[0] == 1.0f);

    auto a = Tensor<float>::zeros({1, 2, 3, 3});
    auto b = Tensor<float>::zeros({1, 3, 3, 3});
    auto cat = concat_channels<float>({a, b});
    CHECK(cat.shape() == std::vector<std::int64_t>{1, 5, 3, 3});

    auto v = Tensor<float>::from_data({4}, {1.0f, 2.0f, 3.0f, 4.0f});
    CHECK(mean_all(v).item() == doctest::Approx(2.5f));
    CHECK(sum_all(v).item() == doctest::Approx(10.0f));

    auto bad = Tensor<float>::zeros({1, 2, 3, 4});
    CHECK_THROWS_AS((void)(a + bad), std::invalid_argument);
}

TEST_CASE("slice_channels inverts concat_channels") {
    Rng rng(3);
    auto a = Tensor<float>::from_data({2, 2, 3, 3}, random_vec<float>(rng, 2 * 2 * 3 * 3));
    auto b = Tensor<float>::from_data({2, 1, 3, 3}, random_vec<float>(rng, 2 * 1 * 3 * 3));
    auto cat = concat_channels<float>({a, b});
    auto back_a = slice_channels(cat, 0, 2);
    auto back_b = slice_channels(cat, 2, 1);
    CHECK(std::memcmp(back_a.data().data(), a.data().data(), a.data().size() * sizeof(float)) ==
          0);
    CHECK(std::memcmp(back_b.data().data(), b.data().data(), b.data().size() * sizeof(float)) ==
          0);
}

TEST_CASE("backward closed-form linear regression gradient") {
    // loss = mean((w*x - y)^2), d/dw = 2*mean(x*(w*x - y))
    auto w = Tensor<double>::from_data({1}, {0.7}, true);
    auto x = Tensor<double>::from_data({1, 1, 2, 2}, {1.0, 2.0, -1.0, 0.5});
    auto y = Tensor<double>::from_data({1, 1, 2, 2}, {0.9, 2.2, -0.4, 0.1});
    auto d = scale_channels(x, w) - y;
    auto loss = mean_all(d * d);
    backward(loss);
    double expect = 0.0;
    for (int i = 0; i < 4; ++i) {
        expect += 2.0 * x.data()[i] * (0.7 * x.data()[i] - y.data()[i]) / 4.0;
    }
    CHECK(w.grad()[0] == doctest::Approx(expect));
}

TEST_CASE("backward on a non-scalar throws and zero loss gives zero grads") {
    auto x = Tensor<float>::from_data({2}, {1.0f, 2.0f}, true);
    auto y = x * x;
    CHECK_THROWS_AS(backward(y), std::invalid_argument);

    auto zero = mul_scalar(sum_all(x), 0.0f);
    backward(zero);
    CHECK(x.grad()[0] == 0.0f);
    CHECK(x.grad()[1] == 0.0f);
}

TEST_CASE("backward accumulates across calls until zeroed") {
    auto x = Tensor<float>::from_data({1}, {3.0f}, true);
    auto loss1 = sum_all(x * x);
    backward(loss1);
    CHECK(x.grad()[0] == doctest::Approx(6.0f));
    auto loss2 = sum_all(x * x);
    backward(loss2);
    CHECK(x.grad()[0] == doctest::Approx(12.0f));
    x.zero_grad();
    CHECK(x.grad()[0] == 0.0f);
}

TEST_CASE("no-grad mode records no graph") {
    auto x = Tensor<float>::from_data({1}, {2.0f}, true);
    NoGradGuard guard;
    auto y = x * x;
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("adam first step moves by about lr against the gradient sign") {
    auto p = Tensor<float>::from_data({2}, {1.0f, -1.0f}, true);
    Adam<float>::Options opt;
    opt.lr = 0.1;
    Adam<float> adam({p}, opt);
    auto loss = sum_all(p * Tensor<float>::from_data({2}, {3.0f, -0.5f}));
    backward(loss);
    adam.step();
    // Bias corrections cancel at t=1 so the delta is lr * g/(|g| + eps').
    CHECK(p.data()[0] == doctest::Approx(1.0f - 0.1f).epsilon(1e-4));
    CHECK(p.data()[1] == doctest::Approx(-1.0f + 0.1f).epsilon(1e-4));
    CHECK(adam.step_count() == 1);
}

TEST_CASE("adam leaves parameters with zero gradient unchanged") {
    auto p = Tensor<float>::from_data({1}, {0.5f}, true);
    Adam<float> adam({p}, {});
    p.zero_grad();
    adam.step();
    CHECK(p.data()[0] == 0.5f);
}

TEST_CASE("adam is deterministic given identical state") {
    auto run = [] {
        auto p = Tensor<float>::from_data({3}, {0.3f, -0.2f, 0.9f}, true);
        Adam<float>::Options opt;
        opt.lr = 0.01;
        Adam<float> adam({p}, opt);
        for (int i = 0; i < 5; ++i) {
            adam.zero_grad();
            auto loss = sum_all(p * p);
            backward(loss);
            adam.step();
        }
        return std::vector<float>(p.data().begin(), p.data().end());
    };
    CHECK(run() == run());
}

TEST_CASE("finite_diff_check pinned examples") {
    auto x = Tensor<double>::from_data({1}, {0.3}, true);
    auto res = finite_diff_check<double>([&] { return sum_all(softplus(x)); }, {x});
    CHECK(res.max_rel_err <= 1e-6);
    backward(sum_all(softplus(x)));

    auto lin = Tensor<double>::from_data({3}, {1.0, -2.0, 0.5}, true);
    auto res2 = finite_diff_check<double>(
        [&] { return sum_all(mul_scalar(lin, 3.0)); }, {lin});
    CHECK(res2.max_rel_err <= 1e-10);
}

TEST_CASE("gradient check covers every differentiable op") {
    Rng rng(99);
    const double tol = 1e-4;

    auto x = Tensor<double>::from_data({2, 3, 4, 4}, random_vec<double>(rng, 2 * 3 * 4 * 4), true);
    auto w3 = Tensor<double>::from_data({2, 3, 3, 3},
                                        random_vec<double>(rng, 2 * 3 * 3 * 3, 0.4), true);
    auto b3 = Tensor<double>::from_data({2}, random_vec<double>(rng, 2, 0.2), true);

    SUBCASE("conv2d k=3") {
        auto res = finite_diff_check<double>(
            [&] { return mean_all(conv2d(x, w3, b3, 1)); }, {x, w3, b3});
        CHECK(res.max_rel_err <= tol);
    }
    SUBCASE("conv2d k=1") {
        auto w1 = Tensor<double>::from_data({2, 3, 1, 1}, random_vec<double>(rng, 6, 0.5), true);
        auto b1 = Tensor<double>::from_data({2}, random_vec<double>(rng, 2, 0.2), true);
        auto res = finite_diff_check<double>(
            [&] { return mean_all(conv2d(x, w1, b1, 0)); }, {x, w1, b1});
        CHECK(res.max_rel_err <= tol);
    }
    SUBCASE("prelu away from the kink") {
        // Inputs within 1e-3 of zero sit on the non-smooth point; keep clear.
        std::vector<double> xd = random_vec<double>(rng, 2 * 3 * 4 * 4);
        for (auto& v : xd) {
            if (std::abs(v) < 1e-2) v = v < 0 ? v - 1e-2 : v + 1e-2;
        }
        auto xs = Tensor<double>::from_data({2, 3, 4, 4}, xd, true);
        auto slope = Tensor<double>::from_data({3}, {0.25, 0.1, 0.5}, true);
        auto res = finite_diff_check<double>(
            [&] { return mean_all(prelu(xs, slope)); }, {xs, slope});
        CHECK(res.max_rel_err <= tol);
    }
    SUBCASE("softplus") {
        auto res = finite_diff_check<double>([&] { return mean_all(softplus(x)); }, {x});
        CHECK(res.max_rel_err <= tol);
    }
    SUBCASE("add sub mul") {
        auto y = Tensor<double>::from_data({2, 3, 4, 4},
                                           random_vec<double>(rng, 2 * 3 * 4 * 4), true);
        auto res = finite_diff_check<double>(
            [&] { return mean_all((x + y) * (x - y)); }, {x, y});
        CHECK(res.max_rel_err <= tol);
    }
    SUBCASE("scalar ops") {
        auto res = finite_diff_check<double>(
            [&] { return mean_all(add_scalar(mul_scalar(x, 1.7), -0.3)); }, {x});
        CHECK(res.max_rel_err <= tol);
    }
    SUBCASE("scale_channels per channel") {
        auto m = Tensor<double>::from_data({3}, {0.5, 1.5, 2.0}, true);
        auto res = finite_diff_check<double>(
            [&] { return mean_all(scale_channels(x, m)); }, {x, m});
        CHECK(res.max_rel_err <= tol);
    }
    SUBCASE("scale_channels per sample") {
        auto m = Tensor<double>::from_data({2, 3}, random_vec<double>(rng, 6, 0.5), true);
        auto res = finite_diff_check<double>(
            [&] { return mean_all(scale_channels(x, m)); }, {x, m});
        CHECK(res.max_rel_err <= tol);
    }
    SUBCASE("concat and slice") {
        auto y = Tensor<double>::from_data({2, 2, 4, 4},
                                           random_vec<double>(rng, 2 * 2 * 4 * 4), true);
        auto res = finite_diff_check<double>(
            [&] {
                auto cat = concat_channels<double>({x, y});
                return mean_all(slice_channels(cat, 1, 3) * slice_channels(cat, 2, 3));
            },
            {x, y});
        CHECK(res.max_rel_err <= tol);
    }
    SUBCASE("reductions") {
        auto res = finite_diff_check<double>(
            [&] { return mean_all(mean_per_sample(x * x)); }, {x});
        CHECK(res.max_rel_err <= tol);
        auto res2 = finite_diff_check<double>([&] { return sum_all(x * x); }, {x});
        CHECK(res2.max_rel_err <= tol);
    }
    SUBCASE("gather_columns with softplus") {
        auto u = Tensor<double>::from_data({3, 4}, random_vec<double>(rng, 12), true);
        const std::vector<int> idx = {0, 2};
        auto res = finite_diff_check<double>(
            [&] { return mean_all(scale_channels(x, softplus(gather_columns(u, idx)))); },
            {x, u});
        CHECK(res.max_rel_err <= tol);
    }
    SUBCASE("pow_scalar") {
        auto pos = Tensor<double>::from_data({6}, {0.3, 1.2, 0.7, 2.5, 0.05, 1.0}, true);
        auto res = finite_diff_check<double>(
            [&] { return mean_all(pow_scalar(pos, 2.0)); }, {pos});
        CHECK(res.max_rel_err <= tol);
    }
}

TEST_CASE("forward ops are pure and finite") {
    Rng rng(5);
    auto xd = random_vec<float>(rng, 1 * 2 * 6 * 6);
    auto wd = random_vec<float>(rng, 3 * 2 * 3 * 3);
    auto bd = random_vec<float>(rng, 3);
    auto run = [&] {
        auto x = Tensor<float>::from_data({1, 2, 6, 6}, xd);
        auto w = Tensor<float>::from_data({3, 2, 3, 3}, wd);
        auto b = Tensor<float>::from_data({3}, bd);
        auto y = softplus(conv2d(x, w, b, 1));
        return std::vector<float>(y.data().begin(), y.data().end());
    };
    auto a = run();
    auto b2 = run();
    CHECK(std::memcmp(a.data(), b2.data(), a.size() * sizeof(float)) == 0);
    for (float v : a) CHECK(std::isfinite(v));
}
