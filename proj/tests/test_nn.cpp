#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>

#include "tgaf/nn.hpp"
#include "tgaf/rng.hpp"
#include "tgaf/tensor.hpp"

using namespace tgaf;

namespace {

// Central finite differences against an analytic gradient. `loss` must be a
// pure function of the tensors currently reachable from the module under test.
double max_rel_error(const std::vector<nn::ParamRef<double>>& params,
                     const std::function<double()>& loss,
                     const std::function<void()>& run_backward) {
    for (auto& p : params) p.grad->fill(0.0);
    run_backward();
    double worst = 0.0;
    const double eps = 1e-5;
    for (const auto& p : params) {
        for (std::size_t i = 0; i < p.value->size(); ++i) {
            const double orig = (*p.value)[i];
            (*p.value)[i] = orig + eps;
            const double up = loss();
            (*p.value)[i] = orig - eps;
            const double dn = loss();
            (*p.value)[i] = orig;
            const double fd = (up - dn) / (2.0 * eps);
            const double an = (*p.grad)[i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
            worst = std::max(worst, std::abs(fd - an) / denom);
        }
    }
    return worst;
}

double tensor_sq_mean(const Tensor<double>& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
    return s / static_cast<double>(t.size());
}

// dL/dy for L = mean(y^2)
Tensor<double> sq_mean_grad(const Tensor<double>& y) {
    Tensor<double> g(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) g[i] = 2.0 * y[i] / static_cast<double>(y.size());
    return g;
}

}  // namespace

TEST_CASE("conv2d gradients match finite differences") {
    RngStream rng(42);
    nn::Conv2d<double> conv(3, 5, 3, 2, 1, rng);
    Tensor<double> x({2, 3, 6, 6});
    x.fill_normal(rng);

    std::vector<nn::ParamRef<double>> params;
    conv.params(params, "conv");
    auto loss = [&] { return tensor_sq_mean(conv.forward(x)); };
    auto backward = [&] {
        Tensor<double> y = conv.forward(x);
        conv.backward(sq_mean_grad(y));
    };
    CHECK(max_rel_error(params, loss, backward) < 1e-6);
}

TEST_CASE("conv2d input gradient matches finite differences") {
    RngStream rng(7);
    nn::Conv2d<double> conv(2, 3, 3, 1, 1, rng);
    Tensor<double> x({1, 2, 5, 5});
    x.fill_normal(rng);

    Tensor<double> y = conv.forward(x);
    Tensor<double> gx = conv.backward(sq_mean_grad(y));
    const double eps = 1e-5;
    for (std::size_t i = 0; i < x.size(); i += 3) {
        const double orig = x[i];
        x[i] = orig + eps;
        const double up = tensor_sq_mean(conv.forward(x));
        x[i] = orig - eps;
        const double dn = tensor_sq_mean(conv.forward(x));
        x[i] = orig;
        conv.forward(x);  // restore caches
        const double fd = (up - dn) / (2 * eps);
        CHECK(std::abs(fd - gx[i]) < 1e-6 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("conv transpose doubles spatial extent and matches finite differences") {
    RngStream rng(3);
    nn::ConvTranspose2d<double> deconv(4, 3, 4, 2, 1, rng);
    Tensor<double> x({2, 4, 5, 5});
    x.fill_normal(rng);
    Tensor<double> y = deconv.forward(x);
    CHECK(y.dim(2) == 10);
    CHECK(y.dim(3) == 10);

    std::vector<nn::ParamRef<double>> params;
    deconv.params(params, "deconv");
    auto loss = [&] { return tensor_sq_mean(deconv.forward(x)); };
    auto backward = [&] {
        Tensor<double> out = deconv.forward(x);
        deconv.backward(sq_mean_grad(out));
    };
    CHECK(max_rel_error(params, loss, backward) < 1e-6);
}

TEST_CASE("instance norm normalizes per channel and instance") {
    RngStream rng(11);
    nn::InstanceNorm2d<double> norm(3);
    Tensor<double> x({2, 3, 4, 4});
    x.fill_normal(rng, 5.0, 2.0);
    Tensor<double> y = norm.forward(x);
    for (std::size_t n = 0; n < 2; ++n) {
        for (std::size_t c = 0; c < 3; ++c) {
            double mean = 0.0, var = 0.0;
            for (std::size_t h = 0; h < 4; ++h)
                for (std::size_t w = 0; w < 4; ++w) mean += y.at4(n, c, h, w);
            mean /= 16.0;
            for (std::size_t h = 0; h < 4; ++h)
                for (std::size_t w = 0; w < 4; ++w) {
                    const double d = y.at4(n, c, h, w) - mean;
                    var += d * d;
                }
            var /= 16.0;
            CHECK(std::abs(mean) < 1e-10);
            CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
        }
    }
}

TEST_CASE("instance norm gradients match finite differences") {
    RngStream rng(13);
    nn::InstanceNorm2d<double> norm(2);
    Tensor<double> x({1, 2, 3, 3});
    x.fill_normal(rng);

    std::vector<nn::ParamRef<double>> params;
    norm.params(params, "norm");
    auto loss = [&] {
        Tensor<double> y = norm.forward(x);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += std::sin(static_cast<double>(i)) * y[i];
        return s;
    };
    auto backward = [&] {
        Tensor<double> y = norm.forward(x);
        Tensor<double> g(y.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::sin(static_cast<double>(i));
        norm.backward(g);
    };

    for (auto& p : params) p.grad->fill(0.0);
    backward();
    // also check the input gradient
    Tensor<double> y0 = norm.forward(x);
    Tensor<double> g0(y0.shape());
    for (std::size_t i = 0; i < g0.size(); ++i) g0[i] = std::sin(static_cast<double>(i));
    Tensor<double> gx = norm.backward(g0);
    const double eps = 1e-6;
    for (std::size_t i = 0; i < x.size(); i += 2) {
        const double orig = x[i];
        x[i] = orig + eps;
        const double up = loss();
        x[i] = orig - eps;
        const double dn = loss();
        x[i] = orig;
        const double fd = (up - dn) / (2 * eps);
        CHECK(std::abs(fd - gx[i]) < 1e-5 * std::max(1.0, std::abs(fd)));
    }
    CHECK(max_rel_error(params, loss, backward) < 1e-6);
}

TEST_CASE("linear and channel attention gradients") {
    RngStream rng(5);
    nn::ChannelAttention<double> cha(8, 4, rng);
    Tensor<double> x({2, 8, 3, 3});
    x.fill_normal(rng);

    std::vector<nn::ParamRef<double>> params;
    cha.params(params, "cha");
    auto loss = [&] { return tensor_sq_mean(cha.forward(x)); };
    auto backward = [&] {
        Tensor<double> y = cha.forward(x);
        cha.backward(sq_mean_grad(y));
    };
    CHECK(max_rel_error(params, loss, backward) < 1e-6);
}

TEST_CASE("channel attention gate bounds output") {
    RngStream rng(17);
    nn::ChannelAttention<double> cha(8, 4, rng);
    Tensor<double> x({1, 8, 4, 4});
    x.fill_normal(rng, 0.0, 3.0);
    Tensor<double> y = cha.forward(x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i]) <= std::abs(x[i]));
}

TEST_CASE("channel attention with zero fc2 halves the input") {
    RngStream rng(19);
    nn::ChannelAttention<double> cha(8, 4, rng);
    cha.fc2().weight().value.fill(0.0);
    cha.fc2().bias().value.fill(0.0);
    Tensor<double> x({1, 8, 2, 2});
    x.fill_normal(rng);
    Tensor<double> y = cha.forward(x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(x[i] / 2.0));
}

TEST_CASE("attention gradients match finite differences") {
    RngStream rng(23);
    nn::Attention<double> attn(6, 6, rng);
    // Zero-initialized output projection would hide most gradient paths from a
    // squared-loss probe, so give it values.
    attn.wo().value.fill_normal(rng, 0.0, 0.5);

    Tensor<double> xq({5, 6});
    Tensor<double> xkv({4, 6});
    xq.fill_normal(rng);
    xkv.fill_normal(rng);

    std::vector<nn::ParamRef<double>> params;
    attn.params(params, "attn");
    nn::AttentionCache<double> cache;
    auto loss = [&] {
        nn::AttentionCache<double> c;
        return tensor_sq_mean(attn.forward(xq, xkv, c));
    };
    auto backward = [&] {
        Tensor<double> y = attn.forward(xq, xkv, cache);
        attn.backward(cache, sq_mean_grad(y));
    };
    CHECK(max_rel_error(params, loss, backward) < 1e-6);

    // input gradients
    for (auto& p : params) p.grad->fill(0.0);
    Tensor<double> y = attn.forward(xq, xkv, cache);
    auto [gxq, gxkv] = attn.backward(cache, sq_mean_grad(y));
    const double eps = 1e-6;
    for (std::size_t i = 0; i < xq.size(); i += 2) {
        const double orig = xq[i];
        xq[i] = orig + eps;
        const double up = loss();
        xq[i] = orig - eps;
        const double dn = loss();
        xq[i] = orig;
        CHECK(std::abs((up - dn) / (2 * eps) - gxq[i]) < 1e-5);
    }
    for (std::size_t i = 0; i < xkv.size(); i += 2) {
        const double orig = xkv[i];
        xkv[i] = orig + eps;
        const double up = loss();
        xkv[i] = orig - eps;
        const double dn = loss();
        xkv[i] = orig;
        CHECK(std::abs((up - dn) / (2 * eps) - gxkv[i]) < 1e-5);
    }
}

TEST_CASE("attention rows are a probability distribution") {
    RngStream rng(29);
    nn::Attention<double> attn(4, 4, rng);
    Tensor<double> xq({7, 4});
    Tensor<double> xkv({3, 4});
    xq.fill_normal(rng);
    xkv.fill_normal(rng);
    nn::AttentionCache<double> cache;
    attn.forward(xq, xkv, cache);
    for (std::size_t r = 0; r < 7; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < 3; ++j) s += cache.attn[r * 3 + j];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("adaptive average pooling preserves constants and distributes gradient") {
    nn::AdaptiveAvgPool2d<double> pool(3, 5);
    Tensor<double> x({1, 2, 8, 8});
    x.fill(3.25);
    Tensor<double> y = pool.forward(x);
    CHECK(y.dim(2) == 3);
    CHECK(y.dim(3) == 5);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(3.25));

    Tensor<double> g(y.shape());
    g.fill(1.0);
    Tensor<double> gx = pool.backward(g);
    // Every input pixel belongs to at least one region, and the total
    // gradient mass is conserved per region row/col coverage.
    double total = 0.0;
    for (std::size_t i = 0; i < gx.size(); ++i) total += gx[i];
    CHECK(total == doctest::Approx(static_cast<double>(y.size())));
}

TEST_CASE("adam converges on a quadratic") {
    Tensor<double> w({4});
    Tensor<double> g({4});
    w.fill(5.0);
    std::vector<nn::ParamRef<double>> params{{"w", &w, &g}};
    nn::Adam<double> adam(0.1);
    adam.attach(params);
    for (int i = 0; i < 500; ++i) {
        for (std::size_t j = 0; j < 4; ++j) g[j] = 2.0 * w[j];
        adam.step();
    }
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(w[j]) < 1e-2);
}

TEST_CASE("cross entropy of uniform logits is ln L") {
    Tensor<double> logits({3, 10});
    logits.fill(0.7);
    const double loss = nn::cross_entropy_with_logits(logits, {1, 5, 9});
    CHECK(loss == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy gradient matches finite differences") {
    RngStream rng(31);
    Tensor<double> logits({2, 5});
    logits.fill_normal(rng);
    Tensor<double> grad;
    nn::cross_entropy_with_logits(logits, {3, 0}, &grad);
    const double eps = 1e-6;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double orig = logits[i];
        logits[i] = orig + eps;
        const double up = nn::cross_entropy_with_logits(logits, {3, 0});
        logits[i] = orig - eps;
        const double dn = nn::cross_entropy_with_logits(logits, {3, 0});
        logits[i] = orig;
        CHECK(std::abs((up - dn) / (2 * eps) - grad[i]) < 1e-8);
    }
}
