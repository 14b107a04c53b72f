#pragma once

// Conditional perturbation generator: image encoder, convolution-based fusion
// (channel concat + 1x1 conv), transformer-based fusion (channel attention,
// self-attention, cross-attention against the projected target latent), an
// upsampling decoder, and the eps*tanh budget projection.

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "tgaf/errors.hpp"
#include "tgaf/latent.hpp"
#include "tgaf/nn.hpp"
#include "tgaf/tensor.hpp"

namespace tgaf::gen {

struct GeneratorConfig {
    std::size_t base_channels = 64;  // C'
    std::size_t attention_dim = 0;   // d_k; 0 means "same as base_channels"
    std::size_t reduction = 4;       // channel-attention bottleneck ratio
    double epsilon = 16.0 / 255.0;
    std::size_t in_channels = 3;
    std::size_t height = 224;
    std::size_t width = 224;
    bool use_cbf = true;  // TGAF-Conv ablation turns this off
    bool use_tbf = true;  // TGAF-CA ablation turns this off

    std::size_t dk() const { return attention_dim == 0 ? base_channels : attention_dim; }
    std::size_t feat_h() const { return height / 4; }
    std::size_t feat_w() const { return width / 4; }

    void validate() const {
        if (in_channels != 1 && in_channels != 3) {
            throw ConfigError("generator config: in_channels must be 1 or 3");
        }
        if (height % 4 != 0 || width % 4 != 0) {
            throw ConfigError("generator config: height and width must be divisible by 4");
        }
        if (base_channels < 8) throw ConfigError("generator config: base_channels must be >= 8");
        if (reduction == 0 || base_channels % reduction != 0) {
            throw ConfigError("generator config: reduction must divide base_channels");
        }
        if (!(epsilon > 0.0 && epsilon <= 1.0)) {
            throw ConfigError("generator config: epsilon must be in (0, 1]");
        }
    }
};

template <typename T>
class Generator {
public:
    Generator() = default;

    Generator(const GeneratorConfig& cfg, RngStream& init_rng) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t c = cfg_.in_channels, cp = cfg_.base_channels;
        enc_conv1_ = nn::Conv2d<T>(c, cp, 3, 1, 1, init_rng);
        enc_norm1_ = nn::InstanceNorm2d<T>(cp);
        enc_conv2_ = nn::Conv2d<T>(cp, cp, 3, 2, 1, init_rng);
        enc_norm2_ = nn::InstanceNorm2d<T>(cp);
        enc_conv3_ = nn::Conv2d<T>(cp, cp, 3, 2, 1, init_rng);
        enc_norm3_ = nn::InstanceNorm2d<T>(cp);

        proj_conv_ = nn::Conv2d<T>(latent::kChannels, latent::kChannels, 3, 1, 1, init_rng);
        proj_pool_ = nn::AdaptiveAvgPool2d<T>(cfg_.feat_h(), cfg_.feat_w());

        if (cfg_.use_cbf) {
            cbf_conv_ = nn::Conv2d<T>(cp + latent::kChannels, cp, 1, 1, 0, init_rng);
        } else {
            cbf_conv_ = nn::Conv2d<T>(cp, cp, 1, 1, 0, init_rng);
        }

        tbf_align_ = nn::Conv2d<T>(latent::kChannels, cp, 1, 1, 0, init_rng);
        tbf_cha_ = nn::ChannelAttention<T>(cp, cfg_.reduction, init_rng);
        tbf_sa_ = nn::Attention<T>(cp, cfg_.dk(), init_rng);
        tbf_ca_ = nn::Attention<T>(cp, cfg_.dk(), init_rng);

        dec_deconv1_ = nn::ConvTranspose2d<T>(cp, cp, 4, 2, 1, init_rng);
        dec_norm1_ = nn::InstanceNorm2d<T>(cp);
        dec_deconv2_ = nn::ConvTranspose2d<T>(cp, cp, 4, 2, 1, init_rng);
        dec_norm2_ = nn::InstanceNorm2d<T>(cp);
        dec_out_ = nn::Conv2d<T>(cp, c, 3, 1, 1, init_rng);
    }

    const GeneratorConfig& config() const { return cfg_; }

    // --- spec operations ---------------------------------------------------

    // [N,C,H,W] -> [N,C',H/4,W/4]
    Tensor<T> encode_image(const Tensor<T>& x) {
        if (x.rank() != 4 || x.dim(1) != cfg_.in_channels) {
            throw std::invalid_argument("encode_image: expected NCHW with " +
                                        std::to_string(cfg_.in_channels) + " channels");
        }
        if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0) {
            throw std::invalid_argument("encode_image: height and width must be divisible by 4");
        }
        Tensor<T> h = enc_relu1_.forward(enc_norm1_.forward(enc_conv1_.forward(x)));
        h = enc_relu2_.forward(enc_norm2_.forward(enc_conv2_.forward(h)));
        return enc_relu3_.forward(enc_norm3_.forward(enc_conv3_.forward(h)));
    }

    // [4,64,64] -> [4,th,tw]: trainable 3x3 conv, then adaptive average pool.
    Tensor<T> project_latent(const Tensor<T>& raw, std::size_t target_h, std::size_t target_w) {
        if (raw.rank() != 3) throw std::invalid_argument("project_latent: expected CHW latent");
        if (target_h < 1 || target_w < 1) {
            throw std::invalid_argument("project_latent: target size must be >= 1");
        }
        if (!raw.all_finite()) throw NumericalError("project_latent: non-finite latent entries");
        Tensor<T> batched({1, raw.dim(0), raw.dim(1), raw.dim(2)});
        for (std::size_t i = 0; i < raw.size(); ++i) batched[i] = raw[i];
        proj_pool_ = nn::AdaptiveAvgPool2d<T>(target_h, target_w);
        Tensor<T> pooled = proj_pool_.forward(proj_conv_.forward(batched));
        Tensor<T> out({pooled.dim(1), pooled.dim(2), pooled.dim(3)});
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = pooled[i];
        return out;
    }

    // Concatenate z_c onto x along channels and project back to C' channels.
    // With CbF disabled the 1x1 conv adapts x alone and the latent is unused.
    Tensor<T> fuse_cbf(const Tensor<T>& x, const Tensor<T>& z_c) {
        if (cfg_.use_cbf) {
            if (z_c.dim(1) != x.dim(2) || z_c.dim(2) != x.dim(3)) {
                throw std::invalid_argument("fuse_cbf: latent/feature spatial mismatch");
            }
            return cbf_conv_.forward(concat_latent(x, z_c));
        }
        return cbf_conv_.forward(x);
    }

    Tensor<T> channel_attention(const Tensor<T>& x_c) { return tbf_cha_.forward(x_c); }

    Tensor<T> self_attention(const Tensor<T>& x_ca) {
        const std::size_t n = x_ca.dim(0);
        sa_caches_.assign(n, {});
        Tensor<T> out(x_ca.shape());
        for (std::size_t i = 0; i < n; ++i) {
            Tensor<T> tokens = nn::to_tokens(x_ca, i);
            Tensor<T> y = tbf_sa_.forward(tokens, tokens, sa_caches_[i]);
            nn::from_tokens(y, out, i);
        }
        return out;
    }

    Tensor<T> cross_attention(const Tensor<T>& x_sa, const Tensor<T>& z_t) {
        if (z_t.dim(1) != cfg_.base_channels) {
            throw std::invalid_argument("cross_attention: z_t channel mismatch");
        }
        const std::size_t n = x_sa.dim(0);
        ca_caches_.assign(n, {});
        Tensor<T> zt_tokens = nn::to_tokens(z_t, 0);
        Tensor<T> out(x_sa.shape());
        for (std::size_t i = 0; i < n; ++i) {
            Tensor<T> tokens = nn::to_tokens(x_sa, i);
            Tensor<T> y = tbf_ca_.forward(tokens, zt_tokens, ca_caches_[i]);
            nn::from_tokens(y, out, i);
        }
        return out;
    }

    // z_t = Conv1x1(z_c); CA(SA(CHA(x_c)), z_t). Identity when TbF is disabled.
    Tensor<T> fuse_tbf(const Tensor<T>& x_c, const Tensor<T>& z_c) {
        if (!cfg_.use_tbf) return x_c;
        if (z_c.dim(1) != x_c.dim(2) || z_c.dim(2) != x_c.dim(3)) {
            throw std::invalid_argument("fuse_tbf: latent/feature spatial mismatch");
        }
        Tensor<T> z_batched({1, z_c.dim(0), z_c.dim(1), z_c.dim(2)});
        for (std::size_t i = 0; i < z_c.size(); ++i) z_batched[i] = z_c[i];
        z_t_ = tbf_align_.forward(z_batched);
        return cross_attention(self_attention(channel_attention(x_c)), z_t_);
    }

    // [N,C',H/4,W/4] -> [N,C,H,W], unbounded values.
    Tensor<T> decode(const Tensor<T>& f_t) {
        Tensor<T> h = dec_relu1_.forward(dec_norm1_.forward(dec_deconv1_.forward(f_t)));
        h = dec_relu2_.forward(dec_norm2_.forward(dec_deconv2_.forward(h)));
        return dec_out_.forward(h);
    }

    static Tensor<T> project_budget(const Tensor<T>& raw, double epsilon) {
        if (!(epsilon > 0.0)) throw std::invalid_argument("project_budget: epsilon must be > 0");
        Tensor<T> delta(raw.shape());
        const T eps = static_cast<T>(epsilon);
        for (std::size_t i = 0; i < raw.size(); ++i) delta[i] = eps * std::tanh(raw[i]);
        return delta;
    }

    // Full pipeline. `raw_latent` is the 4x64x64 class tensor; the projection
    // is recomputed here because its conv is trained jointly.
    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& raw_latent) {
        Tensor<T> feats = encode_image(x);
        z_c_ = project_latent(raw_latent, feats.dim(2), feats.dim(3));
        Tensor<T> x_c = fuse_cbf(feats, z_c_);
        Tensor<T> f_t = fuse_tbf(x_c, z_c_);
        raw_out_ = decode(f_t);
        tanh_out_ = Tensor<T>(raw_out_.shape());
        for (std::size_t i = 0; i < raw_out_.size(); ++i) tanh_out_[i] = std::tanh(raw_out_[i]);
        Tensor<T> delta(raw_out_.shape());
        const T eps = static_cast<T>(cfg_.epsilon);
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = eps * tanh_out_[i];
        return delta;
    }

    // Backward through the whole pipeline given dL/d(delta). Parameter
    // gradients accumulate into the refs returned by param_refs(). Returns
    // dL/dx for completeness.
    Tensor<T> backward(const Tensor<T>& gdelta) {
        const T eps = static_cast<T>(cfg_.epsilon);
        Tensor<T> graw(gdelta.shape());
        for (std::size_t i = 0; i < gdelta.size(); ++i) {
            const T th = tanh_out_[i];
            graw[i] = gdelta[i] * eps * (T(1) - th * th);
        }

        // decoder
        Tensor<T> g = dec_out_.backward(graw);
        g = dec_deconv2_.backward(dec_norm2_.backward(dec_relu2_.backward(g)));
        Tensor<T> g_ft = dec_deconv1_.backward(dec_norm1_.backward(dec_relu1_.backward(g)));

        // TbF
        Tensor<T> g_xc;
        Tensor<T> g_zc(z_c_.shape());
        if (cfg_.use_tbf) {
            const std::size_t n = g_ft.dim(0);
            Tensor<T> g_xsa(g_ft.shape());
            Tensor<T> g_zt_tokens;
            for (std::size_t i = 0; i < n; ++i) {
                Tensor<T> gy = nn::to_tokens(g_ft, i);
                auto [gxq, gxkv] = tbf_ca_.backward(ca_caches_[i], gy);
                nn::from_tokens(gxq, g_xsa, i);
                if (g_zt_tokens.empty()) {
                    g_zt_tokens = std::move(gxkv);
                } else {
                    for (std::size_t j = 0; j < g_zt_tokens.size(); ++j) g_zt_tokens[j] += gxkv[j];
                }
            }
            Tensor<T> g_xca(g_xsa.shape());
            for (std::size_t i = 0; i < n; ++i) {
                Tensor<T> gy = nn::to_tokens(g_xsa, i);
                auto [gxq, gxkv] = tbf_sa_.backward(sa_caches_[i], gy);
                for (std::size_t j = 0; j < gxq.size(); ++j) gxq[j] += gxkv[j];
                nn::from_tokens(gxq, g_xca, i);
            }
            g_xc = tbf_cha_.backward(g_xca);

            Tensor<T> g_zt(z_t_.shape());
            nn::from_tokens(g_zt_tokens, g_zt, 0);
            Tensor<T> g_zbatched = tbf_align_.backward(g_zt);
            for (std::size_t i = 0; i < g_zc.size(); ++i) g_zc[i] = g_zbatched[i];
        } else {
            g_xc = std::move(g_ft);
        }

        // CbF
        Tensor<T> g_feats;
        if (cfg_.use_cbf) {
            Tensor<T> g_concat = cbf_conv_.backward(g_xc);
            g_feats = Tensor<T>({g_concat.dim(0), cfg_.base_channels, g_concat.dim(2), g_concat.dim(3)});
            split_latent_grad(g_concat, g_feats, g_zc);
        } else {
            g_feats = cbf_conv_.backward(g_xc);
        }

        // projector (latent itself gets no gradient; it is an input)
        Tensor<T> g_zc_batched({1, g_zc.dim(0), g_zc.dim(1), g_zc.dim(2)});
        for (std::size_t i = 0; i < g_zc.size(); ++i) g_zc_batched[i] = g_zc[i];
        proj_conv_.backward(proj_pool_.backward(g_zc_batched));

        // encoder
        Tensor<T> ge = enc_conv3_.backward(enc_norm3_.backward(enc_relu3_.backward(g_feats)));
        ge = enc_conv2_.backward(enc_norm2_.backward(enc_relu2_.backward(ge)));
        return enc_conv1_.backward(enc_norm1_.backward(enc_relu1_.backward(ge)));
    }

    std::vector<nn::ParamRef<T>> param_refs() {
        std::vector<nn::ParamRef<T>> out;
        enc_conv1_.params(out, "encoder.conv1");
        enc_norm1_.params(out, "encoder.norm1");
        enc_conv2_.params(out, "encoder.conv2");
        enc_norm2_.params(out, "encoder.norm2");
        enc_conv3_.params(out, "encoder.conv3");
        enc_norm3_.params(out, "encoder.norm3");
        proj_conv_.params(out, "projector.conv");
        cbf_conv_.params(out, cfg_.use_cbf ? "cbf.conv" : "cbf.adapt");
        if (cfg_.use_tbf) {
            tbf_align_.params(out, "tbf.align");
            tbf_cha_.params(out, "tbf.cha");
            tbf_sa_.params(out, "tbf.sa");
            tbf_ca_.params(out, "tbf.ca");
        }
        dec_deconv1_.params(out, "decoder.deconv1");
        dec_norm1_.params(out, "decoder.norm1");
        dec_deconv2_.params(out, "decoder.deconv2");
        dec_norm2_.params(out, "decoder.norm2");
        dec_out_.params(out, "decoder.out");
        return out;
    }

    void zero_grad() {
        for (auto& p : param_refs()) p.grad->fill(T(0));
    }

    // Smallest |pre-activation| seen by any ReLU in the last forward; lets
    // finite-difference tests reject evaluation points next to a kink.
    double min_pre_relu() const {
        double m = std::min({enc_relu1_.min_abs_input(), enc_relu2_.min_abs_input(),
                             enc_relu3_.min_abs_input(), dec_relu1_.min_abs_input(),
                             dec_relu2_.min_abs_input()});
        if (cfg_.use_tbf) m = std::min(m, tbf_cha_.min_pre_relu());
        return m;
    }

    // Component access for unit tests and composition checks.
    nn::Conv2d<T>& cbf_conv() { return cbf_conv_; }
    nn::Conv2d<T>& tbf_align() { return tbf_align_; }
    nn::ChannelAttention<T>& cha() { return tbf_cha_; }
    nn::Attention<T>& sa() { return tbf_sa_; }
    nn::Attention<T>& ca() { return tbf_ca_; }
    const std::vector<nn::AttentionCache<T>>& sa_caches() const { return sa_caches_; }
    const std::vector<nn::AttentionCache<T>>& ca_caches() const { return ca_caches_; }

private:
    Tensor<T> concat_latent(const Tensor<T>& x, const Tensor<T>& z_c) const {
        const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const std::size_t zc = z_c.dim(0);
        Tensor<T> out({n, c + zc, h, w});
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                const T* src = &x.at4(ni, ci, 0, 0);
                T* dst = &out.at4(ni, ci, 0, 0);
                std::copy(src, src + h * w, dst);
            }
            for (std::size_t ci = 0; ci < zc; ++ci) {
                const T* src = &z_c.at3(ci, 0, 0);
                T* dst = &out.at4(ni, c + ci, 0, 0);
                std::copy(src, src + h * w, dst);
            }
        }
        return out;
    }

    // Split the concat gradient: image channels pass through, latent channels
    // accumulate across the batch (the latent was broadcast).
    void split_latent_grad(const Tensor<T>& g_concat, Tensor<T>& g_x, Tensor<T>& g_z) const {
        const std::size_t n = g_concat.dim(0), c = g_x.dim(1), h = g_concat.dim(2),
                          w = g_concat.dim(3);
        const std::size_t zc = g_z.dim(0);
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                const T* src = &g_concat.at4(ni, ci, 0, 0);
                T* dst = &g_x.at4(ni, ci, 0, 0);
                std::copy(src, src + h * w, dst);
            }
            for (std::size_t ci = 0; ci < zc; ++ci) {
                const T* src = &g_concat.at4(ni, c + ci, 0, 0);
                T* dst = &g_z.at3(ci, 0, 0);
                for (std::size_t i = 0; i < h * w; ++i) dst[i] += src[i];
            }
        }
    }

    GeneratorConfig cfg_;

    nn::Conv2d<T> enc_conv1_, enc_conv2_, enc_conv3_;
    nn::InstanceNorm2d<T> enc_norm1_, enc_norm2_, enc_norm3_;
    nn::ReLU<T> enc_relu1_, enc_relu2_, enc_relu3_;

    nn::Conv2d<T> proj_conv_;
    nn::AdaptiveAvgPool2d<T> proj_pool_;

    nn::Conv2d<T> cbf_conv_;

    nn::Conv2d<T> tbf_align_;
    nn::ChannelAttention<T> tbf_cha_;
    nn::Attention<T> tbf_sa_, tbf_ca_;
    std::vector<nn::AttentionCache<T>> sa_caches_, ca_caches_;

    nn::ConvTranspose2d<T> dec_deconv1_, dec_deconv2_;
    nn::InstanceNorm2d<T> dec_norm1_, dec_norm2_;
    nn::ReLU<T> dec_relu1_, dec_relu2_;

    nn::Conv2d<T> dec_out_;

    Tensor<T> z_c_, z_t_, raw_out_, tanh_out_;
};

}  // namespace tgaf::gen
