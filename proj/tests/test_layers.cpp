#include <doctest.h>

#include <cmath>

#include "crowdsca/layers.hpp"
#include "crowdsca/rng.hpp"
#include "oracles.hpp"

using namespace crowdsca;

namespace {

Tensor<double> randn(Shape s, Rng& rng, double scale = 1.0) {
    Tensor<double> t(s);
    for (auto& v : t.storage()) v = scale * rng.normal();
    return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

/// Central-difference check of a single layer under the scalar loss sum(y * g).
template <typename L>
void check_layer(L layer, Shape in, std::uint64_t seed, double tol = 1e-6) {
    Rng rng(seed);
    auto x = randn(in, rng);
    typename L::Cache cache;
    const auto y = layer.forward(x, Mode::train, &cache);
    const auto g = randn(y.shape(), rng);
    layer.for_each_param([](Param<double>& p) { p.grad = Tensor<double>(p.value.shape()); });
    const auto dx = layer.backward(g, cache, true);
    REQUIRE(dx.shape() == x.shape());

    auto loss = [&](L& l) {
        L copy = l;
        return dot(copy.forward(x, Mode::train, nullptr), g);
    };
    const double h = 1e-6;
    for (int k = 0; k < 12; ++k) {
        const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(x.size()) - 1));
        const double keep = x[i];
        x[i] = keep + h;
        const double up = loss(layer);
        x[i] = keep - h;
        const double dn = loss(layer);
        x[i] = keep;
        CHECK(rel(dx[i], (up - dn) / (2 * h)) < tol);
    }
    std::vector<Param<double>*> params;
    layer.for_each_param([&](Param<double>& p) {
        if (p.trainable) params.push_back(&p);
    });
    for (auto* p : params) {
        for (int k = 0; k < 6; ++k) {
            const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(p->value.size()) - 1));
            const double keep = p->value[i];
            p->value[i] = keep + h;
            const double up = loss(layer);
            p->value[i] = keep - h;
            const double dn = loss(layer);
            p->value[i] = keep;
            CHECK_MESSAGE(rel(p->grad[i], (up - dn) / (2 * h)) < tol, p->name);
        }
    }
}

template <typename T>
void fill_random(Conv2d<T>& c, Rng& rng) {
    for (auto& v : c.weight.value.storage()) v = static_cast<T>(0.3 * rng.normal());
    if (c.has_bias()) {
        for (auto& v : c.bias.value.storage()) v = static_cast<T>(0.3 * rng.normal());
    }
}

}  // namespace

TEST_CASE("convolution matches the direct oracle") {
    Rng rng(1);
    struct Case {
        int in, out, k, stride, pad, h, w;
        bool bias;
    };
    for (const Case c : {Case{3, 4, 3, 1, 1, 9, 7, true}, Case{2, 5, 4, 2, 1, 16, 12, true},
                         Case{4, 2, 1, 1, 0, 5, 5, true}, Case{3, 3, 3, 1, 1, 8, 8, false},
                         Case{2, 3, 3, 2, 0, 11, 10, true}}) {
        Conv2d<double> conv("c", c.in, c.out, c.k, c.stride, c.pad, c.bias);
        fill_random(conv, rng);
        const auto x = randn({2, c.in, c.h, c.w}, rng);
        const auto y = conv.forward(x, Mode::eval, nullptr);
        const auto ref = oracle::conv(x, conv.weight.value, c.bias ? &conv.bias.value : nullptr, c.stride, c.pad);
        REQUIRE(y.shape() == ref.shape());
        for (std::size_t i = 0; i < y.size(); ++i) REQUIRE(std::abs(y[i] - ref[i]) < 1e-12);
    }
}

TEST_CASE("convolution gradients") {
    Rng rng(2);
    Conv2d<double> a("a", 3, 4, 3, 1, 1);
    fill_random(a, rng);
    check_layer(a, {2, 3, 7, 6}, 10);
    Conv2d<double> b("b", 2, 3, 4, 2, 1);
    fill_random(b, rng);
    check_layer(b, {2, 2, 8, 8}, 11);
    Conv2d<double> c("c", 4, 2, 1, 1, 0, false);
    fill_random(c, rng);
    check_layer(c, {1, 4, 5, 3}, 12);
}

TEST_CASE("batch norm gradients and statistics") {
    BatchNorm2d<double> bn("bn", 3);
    Rng rng(3);
    for (auto& v : bn.gamma.value.storage()) v = 1.0 + 0.2 * rng.normal();
    for (auto& v : bn.beta.value.storage()) v = 0.2 * rng.normal();
    check_layer(bn, {3, 3, 4, 5}, 13, 1e-5);

    auto x = randn({4, 3, 6, 6}, rng, 2.0);
    BatchNorm2d<double> fresh("bn", 3);
    const auto y = fresh.forward(x, Mode::train, nullptr);
    for (int c = 0; c < 3; ++c) {
        double m = 0.0;
        double v = 0.0;
        for (int n = 0; n < 4; ++n)
            for (int i = 0; i < 36; ++i) m += y.plane(n, c)[i];
        m /= 144.0;
        for (int n = 0; n < 4; ++n)
            for (int i = 0; i < 36; ++i) v += (y.plane(n, c)[i] - m) * (y.plane(n, c)[i] - m);
        v /= 144.0;
        CHECK(std::abs(m) < 1e-12);
        CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
    }
    CHECK_FALSE(fresh.running_mean.trainable);
    CHECK(fresh.running_mean.value[0] != 0.0);
}

TEST_CASE("activation gradients") {
    check_layer(Activation<double>(ActivationKind::leaky_relu, 0.2), {2, 2, 5, 5}, 14);
    check_layer(Activation<double>(ActivationKind::sigmoid), {2, 2, 5, 5}, 15);
    check_layer(Activation<double>(ActivationKind::relu), {2, 2, 5, 5}, 16);
}

TEST_CASE("pooling and resampling gradients") {
    check_layer(MaxPool2<double>(), {2, 2, 8, 6}, 17);
    check_layer(BilinearResize<double>(2), {2, 2, 4, 3}, 18);
    check_layer(BilinearResize<double>(8), {1, 1, 3, 2}, 19);
    check_layer(BilinearResize<double>(7, 5), {1, 2, 3, 4}, 20);
    check_layer(AdaptiveAvgPool<double>(3), {2, 2, 7, 8}, 21);
    check_layer(AdaptiveAvgPool<double>(1), {1, 3, 5, 5}, 22);
}

TEST_CASE("bilinear upsampling known values") {
    Tensor<double> x(1, 1, 1, 2);
    x[0] = 1.0;
    x[1] = 2.0;
    BilinearResize<double> up(2);
    const auto y = up.forward(x, Mode::eval, nullptr);
    REQUIRE(y.shape() == Shape{1, 1, 2, 4});
    const double expect[4] = {1.0, 1.25, 1.75, 2.0};
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 4; ++c) CHECK(y(0, 0, r, c) == doctest::Approx(expect[c]).epsilon(1e-15));

    Tensor<double> k(1, 1, 3, 3, 0.7);
    const auto ky = BilinearResize<double>(8).forward(k, Mode::eval, nullptr);
    for (double v : ky.storage()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("adaptive pooling on evenly divisible input is block averaging") {
    Tensor<double> x(1, 1, 4, 4);
    for (int i = 0; i < 16; ++i) x[i] = i;
    const auto y = AdaptiveAvgPool<double>(2).forward(x, Mode::eval, nullptr);
    CHECK(y(0, 0, 0, 0) == doctest::Approx(2.5));
    CHECK(y(0, 0, 0, 1) == doctest::Approx(4.5));
    CHECK(y(0, 0, 1, 0) == doctest::Approx(10.5));
    CHECK(y(0, 0, 1, 1) == doctest::Approx(12.5));
    CHECK_THROWS_AS(AdaptiveAvgPool<double>(6).forward(x, Mode::eval, nullptr), ShapeError);
}

TEST_CASE("max pooling picks window maxima") {
    Tensor<double> x(1, 1, 2, 4);
    const double v[8] = {1, 5, 2, 0, 3, 4, 9, -1};
    for (int i = 0; i < 8; ++i) x[i] = v[i];
    const auto y = MaxPool2<double>().forward(x, Mode::eval, nullptr);
    REQUIRE(y.shape() == Shape{1, 1, 1, 2});
    CHECK(y[0] == 5.0);
    CHECK(y[1] == 9.0);
}

TEST_CASE("probability clamp") {
    Tensor<double> x(1, 1, 1, 4);
    x[0] = 0.0;
    x[1] = 0.3;
    x[2] = 1.0;
    x[3] = 0.9999999999;
    ProbClamp<double> clamp(1e-7);
    ProbClamp<double>::Cache cache;
    const auto y = clamp.forward(x, Mode::train, &cache);
    CHECK(y[0] == 1e-7);
    CHECK(y[1] == 0.3);
    CHECK(y[2] == 1.0 - 1e-7);
    CHECK(y[3] == 1.0 - 1e-7);
    const auto dx = clamp.backward(Tensor<double>(1, 1, 1, 4, 2.0), cache, true);
    CHECK(dx[0] == 0.0);
    CHECK(dx[1] == 2.0);
    CHECK(dx[2] == 0.0);
    CHECK(dx[3] == 0.0);
}

TEST_CASE("sequential stack gradient and trace reuse") {
    Rng rng(5);
    Sequential<double> net;
    fill_random(net.add(Conv2d<double>("c1", 2, 3, 3, 1, 1, false)), rng);
    net.add(BatchNorm2d<double>("bn", 3));
    net.add(Activation<double>(ActivationKind::leaky_relu, 0.2));
    net.add(MaxPool2<double>());
    fill_random(net.add(Conv2d<double>("c2", 3, 1, 1, 1, 0)), rng);
    net.add(BilinearResize<double>(2));

    auto x1 = randn({2, 2, 6, 6}, rng);
    const auto x2 = randn({2, 2, 6, 6}, rng);
    Sequential<double>::Trace t1;
    Sequential<double>::Trace t2;
    const auto y1 = net.forward(x1, Mode::train, &t1);
    (void)net.forward(x2, Mode::train, &t2);
    const auto g = randn(y1.shape(), rng);
    net.for_each_param([](Param<double>& p) { p.grad = Tensor<double>(p.value.shape()); });
    const auto dx = net.backward(g, t1, true);

    const double h = 1e-6;
    for (int k = 0; k < 10; ++k) {
        const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(x1.size()) - 1));
        const double keep = x1[i];
        auto copy = net;
        x1[i] = keep + h;
        const double up = dot(copy.forward(x1, Mode::train, nullptr), g);
        copy = net;
        x1[i] = keep - h;
        const double dn = dot(copy.forward(x1, Mode::train, nullptr), g);
        x1[i] = keep;
        CHECK(rel(dx[i], (up - dn) / (2 * h)) < 1e-5);
    }
}

TEST_CASE("channel concat and slice are inverse") {
    Rng rng(6);
    const auto a = randn({2, 3, 4, 4}, rng);
    const auto b = randn({2, 2, 4, 4}, rng);
    const auto ab = concat_channels<double>({&a, &b});
    REQUIRE(ab.shape() == Shape{2, 5, 4, 4});
    CHECK(channel_slice(ab, 0, 3) == a);
    CHECK(channel_slice(ab, 3, 2) == b);
}

TEST_CASE("float and double paths agree") {
    Rng rng(7);
    Conv2d<double> cd("c", 3, 4, 3, 1, 1);
    fill_random(cd, rng);
    Conv2d<float> cf("c", 3, 4, 3, 1, 1);
    cf.weight.value = cd.weight.value.cast<float>();
    cf.bias.value = cd.bias.value.cast<float>();
    const auto x = randn({1, 3, 8, 8}, rng);
    const auto yd = cd.forward(x, Mode::eval, nullptr);
    const auto yf = cf.forward(x.cast<float>(), Mode::eval, nullptr);
    for (std::size_t i = 0; i < yd.size(); ++i) CHECK(yf[i] == doctest::Approx(yd[i]).epsilon(1e-4));
}
