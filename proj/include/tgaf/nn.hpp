#pragma once

// Minimal NCHW layer library with explicit backward passes. Layers cache the
// activations they need during forward and accumulate parameter gradients in
// backward; zero_grad() resets them between steps. Everything is deterministic:
// initialization draws from a caller-supplied RngStream and math is plain
// sequential loops.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "tgaf/tensor.hpp"

namespace tgaf::nn {

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* value;
    Tensor<T>* grad;
};

template <typename T>
struct Param {
    Tensor<T> value;
    Tensor<T> grad;

    explicit Param(std::vector<std::size_t> shape) : value(shape), grad(shape) {}
    Param() = default;

    void ref(std::vector<ParamRef<T>>& out, const std::string& name) {
        out.push_back({name, &value, &grad});
    }
};

template <typename T>
inline void fan_in_uniform(Tensor<T>& t, std::size_t fan_in, RngStream& rng) {
    const T bound = T(1) / std::sqrt(static_cast<T>(fan_in));
    t.fill_uniform(rng, -bound, bound);
}

// ---------------------------------------------------------------------------
// Dense matrix helpers (row-major, shapes checked by the caller).

template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] = T(0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            if (av == T(0)) continue;
            const T* brow = b + p * n;
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,n] = a[m,k] * b[n,k]^T
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T acc = T(0);
            const T* arow = a + i * k;
            const T* brow = b + j * k;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] = acc;
        }
    }
}

// c[k,n] = a[m,k]^T * b[m,n]
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < k * n; ++i) c[i] = T(0);
    for (std::size_t r = 0; r < m; ++r) {
        const T* arow = a + r * k;
        const T* brow = b + r * n;
        for (std::size_t i = 0; i < k; ++i) {
            const T av = arow[i];
            if (av == T(0)) continue;
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// ---------------------------------------------------------------------------

template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t stride,
           std::size_t pad, RngStream& rng)
        : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad),
          weight_({out_c, in_c, k, k}), bias_({out_c}) {
        fan_in_uniform(weight_.value, in_c * k * k, rng);
        fan_in_uniform(bias_.value, in_c * k * k, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::size_t ho = out_extent(h), wo = out_extent(w);
        input_ = x;
        Tensor<T> y({n, out_c_, ho, wo});
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t oc = 0; oc < out_c_; ++oc) {
                T* yplane = &y.at4(ni, oc, 0, 0);
                const T bv = bias_.value[oc];
                for (std::size_t i = 0; i < ho * wo; ++i) yplane[i] = bv;
                for (std::size_t ic = 0; ic < in_c_; ++ic) {
                    const T* xplane = &x.at4(ni, ic, 0, 0);
                    const T* wk = &weight_.value[((oc * in_c_ + ic) * k_) * k_];
                    accumulate_plane(xplane, wk, yplane, h, w, ho, wo);
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        const std::size_t n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
        const std::size_t ho = gy.dim(2), wo = gy.dim(3);
        Tensor<T> gx(input_.shape());
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t oc = 0; oc < out_c_; ++oc) {
                const T* gplane = &gy.at4(ni, oc, 0, 0);
                T bacc = T(0);
                for (std::size_t i = 0; i < ho * wo; ++i) bacc += gplane[i];
                bias_.grad[oc] += bacc;
                for (std::size_t ic = 0; ic < in_c_; ++ic) {
                    const T* xplane = &input_.at4(ni, ic, 0, 0);
                    T* gxplane = &gx.at4(ni, ic, 0, 0);
                    T* wg = &weight_.grad[((oc * in_c_ + ic) * k_) * k_];
                    const T* wk = &weight_.value[((oc * in_c_ + ic) * k_) * k_];
                    backward_plane(xplane, wk, gplane, gxplane, wg, h, w, ho, wo);
                }
            }
        }
        return gx;
    }

    void params(std::vector<ParamRef<T>>& out, const std::string& prefix) {
        weight_.ref(out, prefix + ".weight");
        bias_.ref(out, prefix + ".bias");
    }

    std::size_t out_extent(std::size_t in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

    Param<T>& weight() { return weight_; }
    Param<T>& bias() { return bias_; }
    std::size_t in_channels() const { return in_c_; }
    std::size_t out_channels() const { return out_c_; }

private:
    // Valid output range [lo, hi) for one kernel offset: positions whose input
    // index  o*stride + koff - pad  stays inside [0, in).
    static void valid_range(std::size_t koff, std::size_t stride, std::size_t pad, std::size_t in,
                            std::size_t out, std::size_t& lo, std::size_t& hi) {
        const long shift = static_cast<long>(koff) - static_cast<long>(pad);
        long l = 0;
        if (shift < 0) l = (-shift + static_cast<long>(stride) - 1) / static_cast<long>(stride);
        long hlim = (static_cast<long>(in) - 1 - shift) / static_cast<long>(stride);
        hlim = std::min(hlim, static_cast<long>(out) - 1);
        lo = static_cast<std::size_t>(std::max(0l, l));
        hi = static_cast<std::size_t>(std::max(-1l, hlim) + 1);
    }

    void accumulate_plane(const T* x, const T* wk, T* y, std::size_t h, std::size_t w,
                          std::size_t ho, std::size_t wo) const {
        for (std::size_t kh = 0; kh < k_; ++kh) {
            std::size_t oh_lo, oh_hi;
            valid_range(kh, stride_, pad_, h, ho, oh_lo, oh_hi);
            for (std::size_t kw = 0; kw < k_; ++kw) {
                const T wv = wk[kh * k_ + kw];
                if (wv == T(0)) continue;
                std::size_t ow_lo, ow_hi;
                valid_range(kw, stride_, pad_, w, wo, ow_lo, ow_hi);
                const long wshift = static_cast<long>(kw) - static_cast<long>(pad_);
                for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                    const std::size_t ih = oh * stride_ + kh - pad_;
                    const T* xrow = x + ih * w + ow_lo * stride_ + wshift;
                    T* yrow = y + oh * wo;
                    if (stride_ == 1) {
                        for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                            yrow[ow] += wv * xrow[ow - ow_lo];
                        }
                    } else {
                        for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                            yrow[ow] += wv * xrow[(ow - ow_lo) * stride_];
                        }
                    }
                }
            }
        }
    }

    void backward_plane(const T* x, const T* wk, const T* gy, T* gx, T* wg, std::size_t h,
                        std::size_t w, std::size_t ho, std::size_t wo) const {
        for (std::size_t kh = 0; kh < k_; ++kh) {
            std::size_t oh_lo, oh_hi;
            valid_range(kh, stride_, pad_, h, ho, oh_lo, oh_hi);
            for (std::size_t kw = 0; kw < k_; ++kw) {
                const T wv = wk[kh * k_ + kw];
                std::size_t ow_lo, ow_hi;
                valid_range(kw, stride_, pad_, w, wo, ow_lo, ow_hi);
                const long wshift = static_cast<long>(kw) - static_cast<long>(pad_);
                T wacc = T(0);
                for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                    const std::size_t ih = oh * stride_ + kh - pad_;
                    const T* xrow = x + ih * w + ow_lo * stride_ + wshift;
                    T* gxrow = gx + ih * w + ow_lo * stride_ + wshift;
                    const T* gyrow = gy + oh * wo;
                    if (stride_ == 1) {
                        for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                            wacc += gyrow[ow] * xrow[ow - ow_lo];
                            gxrow[ow - ow_lo] += wv * gyrow[ow];
                        }
                    } else {
                        for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                            wacc += gyrow[ow] * xrow[(ow - ow_lo) * stride_];
                            gxrow[(ow - ow_lo) * stride_] += wv * gyrow[ow];
                        }
                    }
                }
                wg[kh * k_ + kw] += wacc;
            }
        }
    }

    std::size_t in_c_ = 0, out_c_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
    Param<T> weight_, bias_;
    Tensor<T> input_;
};

// Transposed convolution; weight layout [in_c, out_c, k, k].
template <typename T>
class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t stride,
                    std::size_t pad, RngStream& rng)
        : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad),
          weight_({in_c, out_c, k, k}), bias_({out_c}) {
        fan_in_uniform(weight_.value, in_c * k * k, rng);
        fan_in_uniform(bias_.value, in_c * k * k, rng);
    }

    std::size_t out_extent(std::size_t in) const { return (in - 1) * stride_ + k_ - 2 * pad_; }

    Tensor<T> forward(const Tensor<T>& x) {
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::size_t ho = out_extent(h), wo = out_extent(w);
        input_ = x;
        Tensor<T> y({n, out_c_, ho, wo});
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t oc = 0; oc < out_c_; ++oc) {
                T* yplane = &y.at4(ni, oc, 0, 0);
                const T bv = bias_.value[oc];
                for (std::size_t i = 0; i < ho * wo; ++i) yplane[i] = bv;
                for (std::size_t ic = 0; ic < in_c_; ++ic) {
                    const T* xplane = &x.at4(ni, ic, 0, 0);
                    const T* wk = &weight_.value[((ic * out_c_ + oc) * k_) * k_];
                    scatter_plane(xplane, wk, yplane, h, w, ho, wo);
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        const std::size_t n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
        const std::size_t ho = gy.dim(2), wo = gy.dim(3);
        Tensor<T> gx(input_.shape());
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t oc = 0; oc < out_c_; ++oc) {
                const T* gplane = &gy.at4(ni, oc, 0, 0);
                T bacc = T(0);
                for (std::size_t i = 0; i < ho * wo; ++i) bacc += gplane[i];
                bias_.grad[oc] += bacc;
                for (std::size_t ic = 0; ic < in_c_; ++ic) {
                    const T* xplane = &input_.at4(ni, ic, 0, 0);
                    T* gxplane = &gx.at4(ni, ic, 0, 0);
                    const T* wk = &weight_.value[((ic * out_c_ + oc) * k_) * k_];
                    T* wg = &weight_.grad[((ic * out_c_ + oc) * k_) * k_];
                    gather_plane(xplane, wk, gplane, gxplane, wg, h, w, ho, wo);
                }
            }
        }
        return gx;
    }

    void params(std::vector<ParamRef<T>>& out, const std::string& prefix) {
        weight_.ref(out, prefix + ".weight");
        bias_.ref(out, prefix + ".bias");
    }

    Param<T>& weight() { return weight_; }
    Param<T>& bias() { return bias_; }

private:
    // Input positions whose target index  i*stride + koff - pad  lands in
    // [0, out_extent); mirrors Conv2d::valid_range with roles swapped.
    static void valid_range(std::size_t koff, std::size_t stride, std::size_t pad,
                            std::size_t target, std::size_t domain, std::size_t& lo,
                            std::size_t& hi) {
        const long shift = static_cast<long>(koff) - static_cast<long>(pad);
        long l = 0;
        if (shift < 0) l = (-shift + static_cast<long>(stride) - 1) / static_cast<long>(stride);
        long hlim = (static_cast<long>(target) - 1 - shift) / static_cast<long>(stride);
        hlim = std::min(hlim, static_cast<long>(domain) - 1);
        lo = static_cast<std::size_t>(std::max(0l, l));
        hi = static_cast<std::size_t>(std::max(-1l, hlim) + 1);
    }

    void scatter_plane(const T* x, const T* wk, T* y, std::size_t h, std::size_t w,
                       std::size_t ho, std::size_t wo) const {
        for (std::size_t kh = 0; kh < k_; ++kh) {
            std::size_t ih_lo, ih_hi;
            valid_range(kh, stride_, pad_, ho, h, ih_lo, ih_hi);
            for (std::size_t kw = 0; kw < k_; ++kw) {
                const T wv = wk[kh * k_ + kw];
                if (wv == T(0)) continue;
                std::size_t iw_lo, iw_hi;
                valid_range(kw, stride_, pad_, wo, w, iw_lo, iw_hi);
                const long wshift = static_cast<long>(kw) - static_cast<long>(pad_);
                for (std::size_t ih = ih_lo; ih < ih_hi; ++ih) {
                    const std::size_t oh = ih * stride_ + kh - pad_;
                    const T* xrow = x + ih * w;
                    T* yrow = y + oh * wo + iw_lo * stride_ + wshift;
                    for (std::size_t iw = iw_lo; iw < iw_hi; ++iw) {
                        yrow[(iw - iw_lo) * stride_] += wv * xrow[iw];
                    }
                }
            }
        }
    }

    void gather_plane(const T* x, const T* wk, const T* gy, T* gx, T* wg, std::size_t h,
                      std::size_t w, std::size_t ho, std::size_t wo) const {
        for (std::size_t kh = 0; kh < k_; ++kh) {
            std::size_t ih_lo, ih_hi;
            valid_range(kh, stride_, pad_, ho, h, ih_lo, ih_hi);
            for (std::size_t kw = 0; kw < k_; ++kw) {
                const T wv = wk[kh * k_ + kw];
                std::size_t iw_lo, iw_hi;
                valid_range(kw, stride_, pad_, wo, w, iw_lo, iw_hi);
                const long wshift = static_cast<long>(kw) - static_cast<long>(pad_);
                T wacc = T(0);
                for (std::size_t ih = ih_lo; ih < ih_hi; ++ih) {
                    const std::size_t oh = ih * stride_ + kh - pad_;
                    const T* xrow = x + ih * w;
                    T* gxrow = gx + ih * w;
                    const T* gyrow = gy + oh * wo + iw_lo * stride_ + wshift;
                    for (std::size_t iw = iw_lo; iw < iw_hi; ++iw) {
                        wacc += xrow[iw] * gyrow[(iw - iw_lo) * stride_];
                        gxrow[iw] += wv * gyrow[(iw - iw_lo) * stride_];
                    }
                }
                wg[kh * k_ + kw] += wacc;
            }
        }
    }

    std::size_t in_c_ = 0, out_c_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
    Param<T> weight_, bias_;
    Tensor<T> input_;
};

template <typename T>
class InstanceNorm2d {
public:
    InstanceNorm2d() = default;
    explicit InstanceNorm2d(std::size_t channels)
        : channels_(channels), gamma_({channels}), beta_({channels}) {
        gamma_.value.fill(T(1));
    }

    Tensor<T> forward(const Tensor<T>& x) {
        const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
        xhat_ = Tensor<T>(x.shape());
        inv_std_ = Tensor<T>({n, c});
        Tensor<T> y(x.shape());
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                const T* xp = &x.at4(ni, ci, 0, 0);
                T* xh = &xhat_.at4(ni, ci, 0, 0);
                T* yp = &y.at4(ni, ci, 0, 0);
                T mean = T(0);
                for (std::size_t i = 0; i < hw; ++i) mean += xp[i];
                mean /= static_cast<T>(hw);
                T var = T(0);
                for (std::size_t i = 0; i < hw; ++i) {
                    const T d = xp[i] - mean;
                    var += d * d;
                }
                var /= static_cast<T>(hw);
                const T istd = T(1) / std::sqrt(var + eps_);
                inv_std_[ni * c + ci] = istd;
                const T g = gamma_.value[ci], b = beta_.value[ci];
                for (std::size_t i = 0; i < hw; ++i) {
                    xh[i] = (xp[i] - mean) * istd;
                    yp[i] = g * xh[i] + b;
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        const std::size_t n = gy.dim(0), c = gy.dim(1), hw = gy.dim(2) * gy.dim(3);
        Tensor<T> gx(gy.shape());
        const T m = static_cast<T>(hw);
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                const T* gp = &gy.at4(ni, ci, 0, 0);
                const T* xh = &xhat_.at4(ni, ci, 0, 0);
                T* gxp = &gx.at4(ni, ci, 0, 0);
                const T g = gamma_.value[ci];
                const T istd = inv_std_[ni * c + ci];
                T sum_g = T(0), sum_gx = T(0);
                for (std::size_t i = 0; i < hw; ++i) {
                    sum_g += gp[i];
                    sum_gx += gp[i] * xh[i];
                }
                gamma_.grad[ci] += sum_gx;
                beta_.grad[ci] += sum_g;
                const T a = g * istd / m;
                for (std::size_t i = 0; i < hw; ++i) {
                    gxp[i] = a * (m * gp[i] - sum_g - xh[i] * sum_gx);
                }
            }
        }
        return gx;
    }

    void params(std::vector<ParamRef<T>>& out, const std::string& prefix) {
        gamma_.ref(out, prefix + ".gamma");
        beta_.ref(out, prefix + ".beta");
    }

private:
    std::size_t channels_ = 0;
    T eps_ = static_cast<T>(1e-5);
    Param<T> gamma_, beta_;
    Tensor<T> xhat_, inv_std_;
};

template <typename T>
class ReLU {
public:
    Tensor<T> forward(const Tensor<T>& x) {
        mask_ = Tensor<T>(x.shape());
        Tensor<T> y(x.shape());
        min_abs_input_ = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const bool pos = x[i] > T(0);
            mask_[i] = pos ? T(1) : T(0);
            y[i] = pos ? x[i] : T(0);
            min_abs_input_ = std::min(min_abs_input_, std::abs(static_cast<double>(x[i])));
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx(gy.shape());
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * mask_[i];
        return gx;
    }

    // Distance of the closest pre-activation to the kink in the last forward.
    // Finite-difference tests use it to reject evaluation points where the
    // loss is locally non-smooth.
    double min_abs_input() const { return min_abs_input_; }

private:
    Tensor<T> mask_;
    double min_abs_input_ = std::numeric_limits<double>::infinity();
};

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(std::size_t in, std::size_t out, RngStream& rng)
        : in_(in), out_(out), weight_({in, out}), bias_({out}) {
        fan_in_uniform(weight_.value, in, rng);
        fan_in_uniform(bias_.value, in, rng);
    }

    // x: [rows, in] -> [rows, out]
    Tensor<T> forward(const Tensor<T>& x) {
        input_ = x;
        const std::size_t rows = x.dim(0);
        Tensor<T> y({rows, out_});
        matmul(x.data(), weight_.value.data(), y.data(), rows, in_, out_);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < out_; ++j) y[r * out_ + j] += bias_.value[j];
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        const std::size_t rows = input_.dim(0);
        Tensor<T> gx({rows, in_});
        matmul_nt(gy.data(), weight_.value.data(), gx.data(), rows, out_, in_);
        Tensor<T> wg({in_, out_});
        matmul_tn(input_.data(), gy.data(), wg.data(), rows, in_, out_);
        for (std::size_t i = 0; i < wg.size(); ++i) weight_.grad[i] += wg[i];
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < out_; ++j) bias_.grad[j] += gy[r * out_ + j];
        }
        return gx;
    }

    void params(std::vector<ParamRef<T>>& out, const std::string& prefix) {
        weight_.ref(out, prefix + ".weight");
        bias_.ref(out, prefix + ".bias");
    }

    Param<T>& weight() { return weight_; }
    Param<T>& bias() { return bias_; }

private:
    std::size_t in_ = 0, out_ = 0;
    Param<T> weight_, bias_;
    Tensor<T> input_;
};

// Spec'd bucket convention: output cell (i,j) averages the input region
// [floor(i*H/h), ceil((i+1)*H/h)) x [floor(j*W/w), ceil((j+1)*W/w)).
template <typename T>
class AdaptiveAvgPool2d {
public:
    AdaptiveAvgPool2d() = default;
    AdaptiveAvgPool2d(std::size_t out_h, std::size_t out_w) : out_h_(out_h), out_w_(out_w) {}

    static std::size_t region_lo(std::size_t i, std::size_t in, std::size_t out) {
        return (i * in) / out;
    }
    static std::size_t region_hi(std::size_t i, std::size_t in, std::size_t out) {
        return ((i + 1) * in + out - 1) / out;
    }

    Tensor<T> forward(const Tensor<T>& x) {
        in_shape_ = x.shape();
        const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        Tensor<T> y({n, c, out_h_, out_w_});
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                for (std::size_t i = 0; i < out_h_; ++i) {
                    const std::size_t h0 = region_lo(i, h, out_h_), h1 = region_hi(i, h, out_h_);
                    for (std::size_t j = 0; j < out_w_; ++j) {
                        const std::size_t w0 = region_lo(j, w, out_w_), w1 = region_hi(j, w, out_w_);
                        T acc = T(0);
                        for (std::size_t r = h0; r < h1; ++r) {
                            for (std::size_t s = w0; s < w1; ++s) acc += x.at4(ni, ci, r, s);
                        }
                        y.at4(ni, ci, i, j) = acc / static_cast<T>((h1 - h0) * (w1 - w0));
                    }
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx(in_shape_);
        const std::size_t n = gx.dim(0), c = gx.dim(1), h = gx.dim(2), w = gx.dim(3);
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                for (std::size_t i = 0; i < out_h_; ++i) {
                    const std::size_t h0 = region_lo(i, h, out_h_), h1 = region_hi(i, h, out_h_);
                    for (std::size_t j = 0; j < out_w_; ++j) {
                        const std::size_t w0 = region_lo(j, w, out_w_), w1 = region_hi(j, w, out_w_);
                        const T share = gy.at4(ni, ci, i, j) / static_cast<T>((h1 - h0) * (w1 - w0));
                        for (std::size_t r = h0; r < h1; ++r) {
                            for (std::size_t s = w0; s < w1; ++s) gx.at4(ni, ci, r, s) += share;
                        }
                    }
                }
            }
        }
        return gx;
    }

private:
    std::size_t out_h_ = 1, out_w_ = 1;
    std::vector<std::size_t> in_shape_;
};

// SE-style gate: sigmoid(W2 * relu(W1 * GlobalAvgPool(x))) applied per channel.
template <typename T>
class ChannelAttention {
public:
    ChannelAttention() = default;
    ChannelAttention(std::size_t channels, std::size_t reduction, RngStream& rng)
        : channels_(channels),
          fc1_(channels, channels / reduction, rng),
          fc2_(channels / reduction, channels, rng) {}

    Tensor<T> forward(const Tensor<T>& x) {
        input_ = x;
        const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
        Tensor<T> pooled({n, c});
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                const T* xp = &x.at4(ni, ci, 0, 0);
                T acc = T(0);
                for (std::size_t i = 0; i < hw; ++i) acc += xp[i];
                pooled[ni * c + ci] = acc / static_cast<T>(hw);
            }
        }
        Tensor<T> hidden = relu_.forward(fc1_.forward(pooled));
        Tensor<T> z = fc2_.forward(hidden);
        gate_ = Tensor<T>({n, c});
        for (std::size_t i = 0; i < z.size(); ++i) gate_[i] = T(1) / (T(1) + std::exp(-z[i]));
        Tensor<T> y(x.shape());
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                const T g = gate_[ni * c + ci];
                const T* xp = &x.at4(ni, ci, 0, 0);
                T* yp = &y.at4(ni, ci, 0, 0);
                for (std::size_t i = 0; i < hw; ++i) yp[i] = g * xp[i];
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        const std::size_t n = gy.dim(0), c = gy.dim(1), hw = gy.dim(2) * gy.dim(3);
        Tensor<T> gx(gy.shape());
        Tensor<T> ggate({n, c});
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                const T g = gate_[ni * c + ci];
                const T* gp = &gy.at4(ni, ci, 0, 0);
                const T* xp = &input_.at4(ni, ci, 0, 0);
                T* gxp = &gx.at4(ni, ci, 0, 0);
                T acc = T(0);
                for (std::size_t i = 0; i < hw; ++i) {
                    gxp[i] = g * gp[i];
                    acc += gp[i] * xp[i];
                }
                ggate[ni * c + ci] = acc;
            }
        }
        // Through the sigmoid, the two linears, and the average pool.
        Tensor<T> gz({n, c});
        for (std::size_t i = 0; i < gz.size(); ++i) {
            gz[i] = ggate[i] * gate_[i] * (T(1) - gate_[i]);
        }
        Tensor<T> gpool = fc1_.backward(relu_.backward(fc2_.backward(gz)));
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                const T share = gpool[ni * c + ci] / static_cast<T>(hw);
                T* gxp = &gx.at4(ni, ci, 0, 0);
                for (std::size_t i = 0; i < hw; ++i) gxp[i] += share;
            }
        }
        return gx;
    }

    void params(std::vector<ParamRef<T>>& out, const std::string& prefix) {
        fc1_.params(out, prefix + ".fc1");
        fc2_.params(out, prefix + ".fc2");
    }

    Linear<T>& fc2() { return fc2_; }
    const Tensor<T>& last_gate() const { return gate_; }
    double min_pre_relu() const { return relu_.min_abs_input(); }

private:
    std::size_t channels_ = 0;
    Linear<T> fc1_, fc2_;
    ReLU<T> relu_;
    Tensor<T> input_, gate_;
};

// Single-head scaled dot-product attention over flattened spatial tokens.
// Query tokens come from the first argument; keys/values from the second.
// The output projection is zero-initialized. Activations live in an explicit
// cache so one parameter set can serve every image of a batch.
template <typename T>
struct AttentionCache {
    Tensor<T> xq, xkv, q, k, v, attn, mixed;
};

template <typename T>
class Attention {
public:
    Attention() = default;
    Attention(std::size_t dim, std::size_t dk, RngStream& rng)
        : dim_(dim), dk_(dk), wq_({dim, dk}), wk_({dim, dk}), wv_({dim, dk}), wo_({dk, dim}) {
        fan_in_uniform(wq_.value, dim, rng);
        fan_in_uniform(wk_.value, dim, rng);
        fan_in_uniform(wv_.value, dim, rng);
    }

    // xq: [tq, dim], xkv: [tk, dim] -> [tq, dim]
    Tensor<T> forward(const Tensor<T>& xq, const Tensor<T>& xkv, AttentionCache<T>& cache) const {
        cache.xq = xq;
        cache.xkv = xkv;
        const std::size_t tq = xq.dim(0), tk = xkv.dim(0);
        cache.q = Tensor<T>({tq, dk_});
        cache.k = Tensor<T>({tk, dk_});
        cache.v = Tensor<T>({tk, dk_});
        matmul(xq.data(), wq_.value.data(), cache.q.data(), tq, dim_, dk_);
        matmul(xkv.data(), wk_.value.data(), cache.k.data(), tk, dim_, dk_);
        matmul(xkv.data(), wv_.value.data(), cache.v.data(), tk, dim_, dk_);

        cache.attn = Tensor<T>({tq, tk});
        matmul_nt(cache.q.data(), cache.k.data(), cache.attn.data(), tq, dk_, tk);
        const T scale = T(1) / std::sqrt(static_cast<T>(dk_));
        for (std::size_t r = 0; r < tq; ++r) {
            T* row = cache.attn.data() + r * tk;
            T mx = row[0] * scale;
            for (std::size_t j = 0; j < tk; ++j) {
                row[j] *= scale;
                mx = std::max(mx, row[j]);
            }
            T sum = T(0);
            for (std::size_t j = 0; j < tk; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            for (std::size_t j = 0; j < tk; ++j) row[j] /= sum;
        }

        cache.mixed = Tensor<T>({tq, dk_});
        matmul(cache.attn.data(), cache.v.data(), cache.mixed.data(), tq, tk, dk_);
        Tensor<T> y({tq, dim_});
        matmul(cache.mixed.data(), wo_.value.data(), y.data(), tq, dk_, dim_);
        return y;
    }

    // Returns (grad wrt xq, grad wrt xkv).
    std::pair<Tensor<T>, Tensor<T>> backward(const AttentionCache<T>& cache, const Tensor<T>& gy) {
        const std::size_t tq = cache.xq.dim(0), tk = cache.xkv.dim(0);
        const T scale = T(1) / std::sqrt(static_cast<T>(dk_));

        Tensor<T> gmixed({tq, dk_});
        matmul_nt(gy.data(), wo_.value.data(), gmixed.data(), tq, dim_, dk_);
        Tensor<T> wo_g({dk_, dim_});
        matmul_tn(cache.mixed.data(), gy.data(), wo_g.data(), tq, dk_, dim_);
        for (std::size_t i = 0; i < wo_g.size(); ++i) wo_.grad[i] += wo_g[i];

        Tensor<T> gattn({tq, tk});
        matmul_nt(gmixed.data(), cache.v.data(), gattn.data(), tq, dk_, tk);
        Tensor<T> gv({tk, dk_});
        matmul_tn(cache.attn.data(), gmixed.data(), gv.data(), tq, tk, dk_);

        // Softmax backward per row, then the 1/sqrt(dk) scale.
        Tensor<T> gscores({tq, tk});
        for (std::size_t r = 0; r < tq; ++r) {
            const T* arow = cache.attn.data() + r * tk;
            const T* grow = gattn.data() + r * tk;
            T dot = T(0);
            for (std::size_t j = 0; j < tk; ++j) dot += arow[j] * grow[j];
            T* out = gscores.data() + r * tk;
            for (std::size_t j = 0; j < tk; ++j) out[j] = arow[j] * (grow[j] - dot) * scale;
        }

        Tensor<T> gq({tq, dk_});
        matmul(gscores.data(), cache.k.data(), gq.data(), tq, tk, dk_);
        Tensor<T> gk({tk, dk_});
        matmul_tn(gscores.data(), cache.q.data(), gk.data(), tq, tk, dk_);

        Tensor<T> gxq({tq, dim_});
        matmul_nt(gq.data(), wq_.value.data(), gxq.data(), tq, dk_, dim_);
        Tensor<T> gxkv({tk, dim_});
        matmul_nt(gk.data(), wk_.value.data(), gxkv.data(), tk, dk_, dim_);
        Tensor<T> gv_in({tk, dim_});
        matmul_nt(gv.data(), wv_.value.data(), gv_in.data(), tk, dk_, dim_);
        for (std::size_t i = 0; i < gxkv.size(); ++i) gxkv[i] += gv_in[i];

        Tensor<T> wq_g({dim_, dk_});
        matmul_tn(cache.xq.data(), gq.data(), wq_g.data(), tq, dim_, dk_);
        Tensor<T> wk_g({dim_, dk_});
        matmul_tn(cache.xkv.data(), gk.data(), wk_g.data(), tk, dim_, dk_);
        Tensor<T> wv_g({dim_, dk_});
        matmul_tn(cache.xkv.data(), gv.data(), wv_g.data(), tk, dim_, dk_);
        for (std::size_t i = 0; i < wq_g.size(); ++i) wq_.grad[i] += wq_g[i];
        for (std::size_t i = 0; i < wk_g.size(); ++i) wk_.grad[i] += wk_g[i];
        for (std::size_t i = 0; i < wv_g.size(); ++i) wv_.grad[i] += wv_g[i];

        return {std::move(gxq), std::move(gxkv)};
    }

    void params(std::vector<ParamRef<T>>& out, const std::string& prefix) {
        wq_.ref(out, prefix + ".wq");
        wk_.ref(out, prefix + ".wk");
        wv_.ref(out, prefix + ".wv");
        wo_.ref(out, prefix + ".wo");
    }

    Param<T>& wv() { return wv_; }
    Param<T>& wo() { return wo_; }

private:
    std::size_t dim_ = 0, dk_ = 0;
    Param<T> wq_, wk_, wv_, wo_;
};

// ---------------------------------------------------------------------------

// Flatten NCHW plane n into a [H*W, C] token matrix and back.
template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x, std::size_t n) {
    const std::size_t c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> tokens({hw, c});
    for (std::size_t ci = 0; ci < c; ++ci) {
        const T* xp = &x.at4(n, ci, 0, 0);
        for (std::size_t i = 0; i < hw; ++i) tokens[i * c + ci] = xp[i];
    }
    return tokens;
}

template <typename T>
void from_tokens(const Tensor<T>& tokens, Tensor<T>& x, std::size_t n) {
    const std::size_t c = x.dim(1), hw = x.dim(2) * x.dim(3);
    for (std::size_t ci = 0; ci < c; ++ci) {
        T* xp = &x.at4(n, ci, 0, 0);
        for (std::size_t i = 0; i < hw; ++i) xp[i] = tokens[i * c + ci];
    }
}

template <typename T>
void add_from_tokens(const Tensor<T>& tokens, Tensor<T>& x, std::size_t n) {
    const std::size_t c = x.dim(1), hw = x.dim(2) * x.dim(3);
    for (std::size_t ci = 0; ci < c; ++ci) {
        T* xp = &x.at4(n, ci, 0, 0);
        for (std::size_t i = 0; i < hw; ++i) xp[i] += tokens[i * c + ci];
    }
}

// ---------------------------------------------------------------------------

template <typename T>
class Adam {
public:
    Adam() = default;
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void attach(const std::vector<ParamRef<T>>& params) {
        params_ = params;
        m_.clear();
        v_.clear();
        for (const auto& p : params_) {
            m_.emplace_back(p.value->shape());
            v_.emplace_back(p.value->shape());
        }
        step_ = 0;
    }

    void step() {
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            Tensor<T>& val = *params_[pi].value;
            Tensor<T>& grad = *params_[pi].grad;
            Tensor<T>& m = m_[pi];
            Tensor<T>& v = v_[pi];
            for (std::size_t i = 0; i < val.size(); ++i) {
                const double g = static_cast<double>(grad[i]);
                const double mi = beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * g;
                const double vi = beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * g * g;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                val[i] = static_cast<T>(static_cast<double>(val[i]) -
                                        lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.grad->fill(T(0));
    }

    std::uint64_t step_count() const { return step_; }
    void set_step_count(std::uint64_t s) { step_ = s; }
    std::vector<Tensor<T>>& moments_m() { return m_; }
    std::vector<Tensor<T>>& moments_v() { return v_; }
    double learning_rate() const { return lr_; }

private:
    double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::vector<ParamRef<T>> params_;
    std::vector<Tensor<T>> m_, v_;
    std::uint64_t step_ = 0;
};

// Mean cross-entropy over the batch; returns loss and writes dL/dlogits.
template <typename T>
double cross_entropy_with_logits(const Tensor<T>& logits, const std::vector<int>& targets,
                                 Tensor<T>* grad = nullptr) {
    const std::size_t n = logits.dim(0), l = logits.dim(1);
    if (targets.size() != n) throw std::invalid_argument("cross_entropy: batch size mismatch");
    if (grad) *grad = Tensor<T>(logits.shape());
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = logits.data() + i * l;
        double mx = static_cast<double>(row[0]);
        for (std::size_t j = 0; j < l; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double sum = 0.0;
        for (std::size_t j = 0; j < l; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
        const double log_z = std::log(sum) + mx;
        loss += log_z - static_cast<double>(row[targets[i]]);
        if (grad) {
            T* grow = grad->data() + i * l;
            for (std::size_t j = 0; j < l; ++j) {
                const double p = std::exp(static_cast<double>(row[j]) - log_z);
                grow[j] = static_cast<T>((p - (static_cast<int>(j) == targets[i] ? 1.0 : 0.0)) /
                                         static_cast<double>(n));
            }
        }
    }
    return loss / static_cast<double>(n);
}

}  // namespace tgaf::nn
