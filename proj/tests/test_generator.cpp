#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "tgaf/generator.hpp"
#include "tgaf/latent.hpp"
#include "tgaf/nn.hpp"
#include "tgaf/rng.hpp"

using namespace tgaf;

namespace {

gen::GeneratorConfig tiny_config(std::size_t h = 8, std::size_t w = 8, std::size_t cp = 8) {
    gen::GeneratorConfig cfg;
    cfg.base_channels = cp;
    cfg.reduction = 4;
    cfg.in_channels = 3;
    cfg.height = h;
    cfg.width = w;
    cfg.epsilon = 16.0 / 255.0;
    return cfg;
}

template <typename T>
Tensor<T> random_image_batch(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                             RngStream& rng) {
    Tensor<T> x({n, c, h, w});
    x.fill_uniform(rng, T(0), T(1));
    return x;
}

template <typename T>
Tensor<T> random_latent(RngStream& rng) {
    Tensor<T> z({latent::kChannels, latent::kSize, latent::kSize});
    z.fill_normal(rng);
    return z;
}

}  // namespace

TEST_CASE("encoder downsamples exactly 4x") {
    RngStream rng(1);
    gen::Generator<float> g(tiny_config(224, 224, 16), rng);
    Tensor<float> x = random_image_batch<float>(1, 3, 224, 224, rng);
    Tensor<float> f = g.encode_image(x);
    CHECK(f.shape() == std::vector<std::size_t>{1, 16, 56, 56});

    gen::Generator<float> g2(tiny_config(32, 32, 16), rng);
    Tensor<float> x2 = random_image_batch<float>(2, 3, 32, 32, rng);
    CHECK(g2.encode_image(x2).shape() == std::vector<std::size_t>{2, 16, 8, 8});
}

TEST_CASE("encoder rejects sizes not divisible by 4") {
    RngStream rng(2);
    gen::Generator<float> g(tiny_config(32, 32, 16), rng);
    Tensor<float> x({1, 3, 30, 30});
    CHECK_THROWS_AS(g.encode_image(x), std::invalid_argument);
}

TEST_CASE("config invariants are enforced") {
    RngStream rng(3);
    auto cfg = tiny_config();
    cfg.height = 30;
    CHECK_THROWS_AS(gen::Generator<float>(cfg, rng), ConfigError);
    cfg = tiny_config();
    cfg.base_channels = 4;
    CHECK_THROWS_AS(gen::Generator<float>(cfg, rng), ConfigError);
    cfg = tiny_config();
    cfg.reduction = 3;
    CHECK_THROWS_AS(gen::Generator<float>(cfg, rng), ConfigError);
    cfg = tiny_config();
    cfg.epsilon = 0.0;
    CHECK_THROWS_AS(gen::Generator<float>(cfg, rng), ConfigError);
}

TEST_CASE("cbf with identity image weights embeds x unchanged") {
    RngStream rng(4);
    gen::Generator<double> g(tiny_config(8, 8, 8), rng);
    auto& conv = g.cbf_conv();
    conv.weight().value.fill(0.0);
    conv.bias().value.fill(0.0);
    // weight [8, 12, 1, 1]: identity on the 8 image channels, zero on latent.
    for (std::size_t c = 0; c < 8; ++c) conv.weight().value[c * 12 + c] = 1.0;

    Tensor<double> x({1, 8, 2, 2});
    x.fill_normal(rng);
    Tensor<double> z({4, 2, 2});
    z.fill_normal(rng);
    Tensor<double> y = g.fuse_cbf(x, z);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(x[i]));

    conv.weight().value.fill(0.0);
    Tensor<double> y0 = g.fuse_cbf(x, z);
    for (std::size_t i = 0; i < y0.size(); ++i) CHECK(y0[i] == 0.0);
}

TEST_CASE("cbf parameter count reflects the 68->64 projection") {
    RngStream rng(5);
    auto cfg = tiny_config(32, 32, 64);
    gen::Generator<float> g(cfg, rng);
    bool found = false;
    for (auto& p : g.param_refs()) {
        if (p.name == "cbf.conv.weight") {
            CHECK(p.value->shape() == std::vector<std::size_t>{64, 68, 1, 1});
            CHECK(p.value->size() == 64u * 68u);
            found = true;
        }
    }
    CHECK(found);
}

TEST_CASE("self attention reduces to the value path on a single token") {
    RngStream rng(6);
    gen::Generator<double> g(tiny_config(4, 4, 8), rng);
    g.sa().wo().value.fill_normal(rng, 0.0, 0.5);

    Tensor<double> x({1, 8, 1, 1});
    x.fill_normal(rng);
    Tensor<double> y = g.self_attention(x);

    // With one token the attention weight is exactly 1, so the output is the
    // input pushed through the V and O projections.
    Tensor<double> tok = nn::to_tokens(x, 0);
    Tensor<double> v({1, 8});
    nn::matmul(tok.data(), g.sa().wv().value.data(), v.data(), 1, 8, 8);
    Tensor<double> expect({1, 8});
    nn::matmul(v.data(), g.sa().wo().value.data(), expect.data(), 1, 8, 8);
    for (std::size_t i = 0; i < 8; ++i) CHECK(y[i] == doctest::Approx(expect[i]));

    CHECK(g.sa_caches()[0].attn.size() == 1);
    CHECK(g.sa_caches()[0].attn[0] == doctest::Approx(1.0));
}

TEST_CASE("attention softmax rows sum to one in SA and CA") {
    RngStream rng(7);
    gen::Generator<double> g(tiny_config(16, 16, 8), rng);
    Tensor<double> x = random_image_batch<double>(2, 3, 16, 16, rng);
    Tensor<double> z = random_latent<double>(rng);
    g.forward(x, z);
    for (const auto& cache : {g.sa_caches(), g.ca_caches()}) {
        for (const auto& c : cache) {
            const std::size_t tq = c.attn.dim(0), tk = c.attn.dim(1);
            for (std::size_t r = 0; r < tq; ++r) {
                double s = 0.0;
                for (std::size_t j = 0; j < tk; ++j) s += c.attn[r * tk + j];
                CHECK(std::abs(s - 1.0) < 1e-5);
            }
        }
    }
}

TEST_CASE("zero value projection zeroes the attention output") {
    RngStream rng(8);
    gen::Generator<double> g(tiny_config(8, 8, 8), rng);
    g.sa().wv().value.fill(0.0);
    Tensor<double> x({1, 8, 2, 2});
    x.fill_normal(rng);
    Tensor<double> y = g.self_attention(x);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("spatially constant z_t gives spatially constant cross attention") {
    RngStream rng(9);
    gen::Generator<double> g(tiny_config(8, 8, 8), rng);
    g.ca().wo().value.fill_normal(rng, 0.0, 0.5);
    Tensor<double> x_sa({1, 8, 2, 2});
    x_sa.fill_normal(rng);
    Tensor<double> z_t({1, 8, 2, 2});
    for (std::size_t c = 0; c < 8; ++c) {
        const double v = rng.next_normal();
        for (std::size_t i = 0; i < 4; ++i) z_t[c * 4 + i] = v;
    }
    Tensor<double> y = g.cross_attention(x_sa, z_t);
    for (std::size_t c = 0; c < 8; ++c) {
        for (std::size_t i = 1; i < 4; ++i) {
            CHECK(y[c * 4 + i] == doctest::Approx(y[c * 4]));
        }
    }
}

TEST_CASE("fuse_tbf equals the manual chain of its components") {
    RngStream rng(10);
    gen::Generator<double> g(tiny_config(8, 8, 8), rng);
    g.sa().wo().value.fill_normal(rng, 0.0, 0.5);
    g.ca().wo().value.fill_normal(rng, 0.0, 0.5);

    Tensor<double> x_c({2, 8, 2, 2});
    x_c.fill_normal(rng);
    Tensor<double> z_c({4, 2, 2});
    z_c.fill_normal(rng);

    Tensor<double> fused = g.fuse_tbf(x_c, z_c);

    Tensor<double> z_batched({1, 4, 2, 2});
    for (std::size_t i = 0; i < z_c.size(); ++i) z_batched[i] = z_c[i];
    Tensor<double> z_t = g.tbf_align().forward(z_batched);
    Tensor<double> manual = g.cross_attention(g.self_attention(g.channel_attention(x_c)), z_t);

    REQUIRE(fused.shape() == manual.shape());
    for (std::size_t i = 0; i < fused.size(); ++i) {
        CHECK(fused[i] == doctest::Approx(manual[i]).epsilon(1e-12));
    }
}

TEST_CASE("fuse_tbf output shape equals input shape over random configs") {
    RngStream rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t cp = 8 + 4 * rng.next_below(3);        // 8, 12, 16
        const std::size_t hw = 4 * (1 + rng.next_below(3));      // 4, 8, 12
        auto cfg = tiny_config(hw, hw, cp);
        cfg.reduction = 4;
        gen::Generator<double> g(cfg, rng);
        Tensor<double> x_c({1, cp, hw / 4, hw / 4});
        x_c.fill_normal(rng);
        Tensor<double> z_c({4, hw / 4, hw / 4});
        z_c.fill_normal(rng);
        CHECK(g.fuse_tbf(x_c, z_c).shape() == x_c.shape());
    }
}

TEST_CASE("decoder upsamples exactly 4x") {
    RngStream rng(12);
    gen::Generator<float> g(tiny_config(224, 224, 8), rng);
    Tensor<float> f({1, 8, 56, 56});
    f.fill_normal(rng);
    CHECK(g.decode(f).shape() == std::vector<std::size_t>{1, 3, 224, 224});

    gen::Generator<float> g2(tiny_config(32, 32, 8), rng);
    Tensor<float> f2({2, 8, 8, 8});
    f2.fill_normal(rng);
    CHECK(g2.decode(f2).shape() == std::vector<std::size_t>{2, 3, 32, 32});
}

TEST_CASE("decoder with zero weights emits zero") {
    RngStream rng(13);
    gen::Generator<double> g(tiny_config(8, 8, 8), rng);
    for (auto& p : g.param_refs()) {
        if (p.name.rfind("decoder.", 0) == 0) p.value->fill(0.0);
    }
    Tensor<double> f({1, 8, 2, 2});
    f.fill_normal(rng);
    Tensor<double> o = g.decode(f);
    for (std::size_t i = 0; i < o.size(); ++i) CHECK(o[i] == 0.0);
}

TEST_CASE("budget projection bounds and symmetry") {
    Tensor<double> o({1, 2, 2, 2});

    o.fill(0.0);
    Tensor<double> d0 = gen::Generator<double>::project_budget(o, 16.0 / 255.0);
    for (std::size_t i = 0; i < d0.size(); ++i) CHECK(d0[i] == 0.0);

    o.fill(1e6);
    Tensor<double> dBig = gen::Generator<double>::project_budget(o, 16.0 / 255.0);
    for (std::size_t i = 0; i < dBig.size(); ++i) {
        CHECK(dBig[i] <= 16.0 / 255.0);
        CHECK(dBig[i] == doctest::Approx(16.0 / 255.0));
    }

    RngStream rng(14);
    o.fill_normal(rng);
    Tensor<double> neg(o.shape());
    for (std::size_t i = 0; i < o.size(); ++i) neg[i] = -o[i];
    Tensor<double> dp = gen::Generator<double>::project_budget(o, 0.1);
    Tensor<double> dn = gen::Generator<double>::project_budget(neg, 0.1);
    for (std::size_t i = 0; i < dp.size(); ++i) CHECK(dn[i] == doctest::Approx(-dp[i]));

    CHECK_THROWS_AS(gen::Generator<double>::project_budget(o, 0.0), std::invalid_argument);
}

TEST_CASE("forward preserves shape, respects budget, and is deterministic") {
    RngStream rng(15);
    for (int trial = 0; trial < 20; ++trial) {
        RngStream init(100 + trial);
        auto cfg = tiny_config(8 + 4 * (trial % 3) * 0, 8, 8);
        gen::Generator<float> g(cfg, rng);
        Tensor<float> x = random_image_batch<float>(2, 3, cfg.height, cfg.width, rng);
        Tensor<float> z = random_latent<float>(rng);
        Tensor<float> d1 = g.forward(x, z);
        CHECK(d1.shape() == x.shape());
        CHECK(d1.abs_max() <= static_cast<float>(cfg.epsilon));
        Tensor<float> d2 = g.forward(x, z);
        for (std::size_t i = 0; i < d1.size(); ++i) CHECK(d1[i] == d2[i]);
    }
}

TEST_CASE("ablated pipelines stay well-typed") {
    RngStream rng(16);
    Tensor<float> z = random_latent<float>(rng);

    auto cfg = tiny_config(16, 16, 8);
    cfg.use_cbf = false;
    gen::Generator<float> no_cbf(cfg, rng);
    Tensor<float> x = random_image_batch<float>(2, 3, 16, 16, rng);
    CHECK(no_cbf.forward(x, z).shape() == x.shape());

    cfg = tiny_config(16, 16, 8);
    cfg.use_tbf = false;
    gen::Generator<float> no_tbf(cfg, rng);
    CHECK(no_tbf.forward(x, z).shape() == x.shape());
    for (auto& p : no_tbf.param_refs()) CHECK(p.name.rfind("tbf.", 0) != 0);
}

TEST_CASE("full pipeline gradients match finite differences on sampled entries") {
    // The loss has ReLU kinks; pick an input whose pre-activations all sit
    // safely away from zero so central differences do not straddle one.
    auto cfg = tiny_config(8, 8, 8);
    gen::Generator<double> g;
    Tensor<double> x, z;
    for (std::uint64_t seed = 17;; ++seed) {
        RngStream rng(seed);
        g = gen::Generator<double>(cfg, rng);
        // Zero-initialized output projections park the decoder at an all-zero
        // input, which is exactly the degenerate point instance norm cannot
        // be probed at; evaluate at a generic point instead.
        g.sa().wo().value.fill_normal(rng, 0.0, 0.3);
        g.ca().wo().value.fill_normal(rng, 0.0, 0.3);
        x = random_image_batch<double>(2, 3, 8, 8, rng);
        z = random_latent<double>(rng);
        g.forward(x, z);
        if (g.min_pre_relu() > 1e-4) break;
        REQUIRE(seed < 117);  // a clean point should show up quickly
    }

    auto loss = [&] {
        Tensor<double> d = g.forward(x, z);
        double s = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) s += d[i] * d[i];
        return s / static_cast<double>(d.size());
    };

    g.zero_grad();
    Tensor<double> d = g.forward(x, z);
    Tensor<double> gd(d.shape());
    for (std::size_t i = 0; i < d.size(); ++i) gd[i] = 2.0 * d[i] / static_cast<double>(d.size());
    g.backward(gd);

    const double fd_eps = 1e-6;
    RngStream pick(99);
    for (auto& p : g.param_refs()) {
        // A handful of entries per parameter tensor keeps this fast; the
        // acceptance suite sweeps every entry.
        const std::size_t samples = std::min<std::size_t>(4, p.value->size());
        for (std::size_t s = 0; s < samples; ++s) {
            const std::size_t i = pick.next_below(p.value->size());
            const double orig = (*p.value)[i];
            (*p.value)[i] = orig + fd_eps;
            const double up = loss();
            (*p.value)[i] = orig - fd_eps;
            const double dn = loss();
            (*p.value)[i] = orig;
            const double fd = (up - dn) / (2 * fd_eps);
            const double an = (*p.grad)[i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
            INFO(p.name << "[" << i << "] fd=" << fd << " an=" << an);
            CHECK(std::abs(fd - an) / denom < 1e-3);
        }
    }
}
