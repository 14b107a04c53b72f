#pragma once

// Desk-scale classifiers used as surrogate and victim models. Each is a stack
// of conv+ReLU stages followed by global average pooling and a linear head
// (or a plain MLP), with full backward support: the trainer needs input
// gradients, the metric suite needs penultimate features and Grad-CAM pairs.

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tgaf/checkpoint.hpp"
#include "tgaf/errors.hpp"
#include "tgaf/nn.hpp"
#include "tgaf/tensor.hpp"

namespace tgaf::cls {

struct ConvSpec {
    std::size_t out_c, k, stride, pad;
};

struct ArchSpec {
    std::string name;
    std::vector<ConvSpec> convs;   // empty for MLPs
    std::size_t mlp_hidden = 0;    // nonzero for MLPs
};

// Known architectures: toy_cnn_a, toy_cnn_b, toy_mlp.
const ArchSpec& arch_by_name(const std::string& name);

template <typename T>
class ToyClassifier {
public:
    ToyClassifier() = default;

    ToyClassifier(const std::string& arch, std::size_t n_classes, std::size_t in_c,
                  std::size_t in_h, std::size_t in_w, RngStream& rng)
        : arch_(arch_by_name(arch)), n_classes_(n_classes), in_c_(in_c), in_h_(in_h), in_w_(in_w) {
        if (arch_.mlp_hidden > 0) {
            hidden_ = nn::Linear<T>(in_c * in_h * in_w, arch_.mlp_hidden, rng);
            head_ = nn::Linear<T>(arch_.mlp_hidden, n_classes, rng);
            feat_dim_ = arch_.mlp_hidden;
        } else {
            std::size_t c = in_c;
            for (const auto& spec : arch_.convs) {
                stages_.emplace_back();
                stages_.back().conv = nn::Conv2d<T>(c, spec.out_c, spec.k, spec.stride, spec.pad, rng);
                c = spec.out_c;
            }
            head_ = nn::Linear<T>(c, n_classes, rng);
            feat_dim_ = c;
        }
    }

    // x: [N,C,H,W] in [0,1] after preprocessing normalization -> [N,L]
    Tensor<T> logits(const Tensor<T>& x) {
        if (x.dim(1) != in_c_ || x.dim(2) != in_h_ || x.dim(3) != in_w_) {
            throw std::invalid_argument("classifier: input shape mismatch");
        }
        const std::size_t n = x.dim(0);
        if (arch_.mlp_hidden > 0) {
            Tensor<T> flat({n, in_c_ * in_h_ * in_w_});
            std::copy(x.data(), x.data() + x.size(), flat.data());
            mlp_in_ = flat;
            features_ = mlp_relu_.forward(hidden_.forward(flat));
            return head_.forward(features_);
        }
        Tensor<T> h = x;
        for (auto& stage : stages_) {
            h = stage.relu.forward(stage.conv.forward(h));
            stage.act = h;
        }
        gap_in_shape_ = h.shape();
        features_ = global_avg_pool(h);
        return head_.forward(features_);
    }

    // dL/dlogits -> dL/dx; parameter gradients accumulate. Also records the
    // gradient at each conv stage's activation for Grad-CAM.
    Tensor<T> backward(const Tensor<T>& glogits) {
        Tensor<T> g = head_.backward(glogits);
        if (arch_.mlp_hidden > 0) {
            g = hidden_.backward(mlp_relu_.backward(g));
            Tensor<T> gx({g.dim(0), in_c_, in_h_, in_w_});
            std::copy(g.data(), g.data() + g.size(), gx.data());
            return gx;
        }
        Tensor<T> gh = global_avg_pool_backward(g);
        for (std::size_t i = stages_.size(); i-- > 0;) {
            stages_[i].grad_act = gh;
            gh = stages_[i].conv.backward(stages_[i].relu.backward(gh));
        }
        return gh;
    }

    std::vector<nn::ParamRef<T>> param_refs() {
        std::vector<nn::ParamRef<T>> out;
        if (arch_.mlp_hidden > 0) {
            hidden_.params(out, "hidden");
        } else {
            for (std::size_t i = 0; i < stages_.size(); ++i) {
                stages_[i].conv.params(out, "conv" + std::to_string(i + 1));
            }
        }
        head_.params(out, "head");
        return out;
    }

    void zero_grad() {
        for (auto& p : param_refs()) p.grad->fill(T(0));
    }

    // Penultimate (pre-logit) features of the last forward: [N, feat_dim].
    const Tensor<T>& features() const { return features_; }
    std::size_t feature_dim() const { return feat_dim_; }

    std::vector<std::string> spatial_layers() const {
        std::vector<std::string> names;
        for (std::size_t i = 0; i < stages_.size(); ++i) names.push_back("conv" + std::to_string(i + 1));
        return names;
    }

    std::string last_spatial_layer() const {
        if (stages_.empty()) return "";
        return "conv" + std::to_string(stages_.size());
    }

    // Activation and gradient of the target logit at `layer`, for one image.
    // Gradient is of logits[class_id] (not the loss).
    std::pair<Tensor<T>, Tensor<T>> grad_cam_pair(const Tensor<T>& x, int class_id,
                                                  const std::string& layer) {
        std::size_t idx = stages_.size();
        for (std::size_t i = 0; i < stages_.size(); ++i) {
            if ("conv" + std::to_string(i + 1) == layer) idx = i;
        }
        if (idx == stages_.size()) {
            throw std::invalid_argument("grad_cam: no spatial layer named '" + layer + "'");
        }
        Tensor<T> out = logits(x);
        if (class_id < 0 || static_cast<std::size_t>(class_id) >= n_classes_) {
            throw std::invalid_argument("grad_cam: class id out of range");
        }
        Tensor<T> gl(out.shape());
        for (std::size_t n = 0; n < out.dim(0); ++n) {
            gl[n * n_classes_ + static_cast<std::size_t>(class_id)] = T(1);
        }
        zero_grad();
        backward(gl);
        return {stages_[idx].act, stages_[idx].grad_act};
    }

    const std::string& arch_name() const { return arch_.name; }
    std::size_t n_classes() const { return n_classes_; }
    std::size_t input_channels() const { return in_c_; }
    std::size_t input_height() const { return in_h_; }
    std::size_t input_width() const { return in_w_; }

private:
    struct Stage {
        nn::Conv2d<T> conv;
        nn::ReLU<T> relu;
        Tensor<T> act;       // post-ReLU activation of the last forward
        Tensor<T> grad_act;  // gradient at that activation, from the last backward
    };

    Tensor<T> global_avg_pool(const Tensor<T>& x) {
        const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
        Tensor<T> y({n, c});
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                const T* xp = &x.at4(ni, ci, 0, 0);
                T acc = T(0);
                for (std::size_t i = 0; i < hw; ++i) acc += xp[i];
                y[ni * c + ci] = acc / static_cast<T>(hw);
            }
        }
        return y;
    }

    Tensor<T> global_avg_pool_backward(const Tensor<T>& gy) {
        Tensor<T> gx(gap_in_shape_);
        const std::size_t n = gx.dim(0), c = gx.dim(1), hw = gx.dim(2) * gx.dim(3);
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                const T share = gy[ni * c + ci] / static_cast<T>(hw);
                T* gxp = &gx.at4(ni, ci, 0, 0);
                for (std::size_t i = 0; i < hw; ++i) gxp[i] = share;
            }
        }
        return gx;
    }

    ArchSpec arch_;
    std::size_t n_classes_ = 0, in_c_ = 0, in_h_ = 0, in_w_ = 0, feat_dim_ = 0;
    std::vector<Stage> stages_;
    nn::Linear<T> hidden_, head_;
    nn::ReLU<T> mlp_relu_;
    Tensor<T> mlp_in_, features_;
    std::vector<std::size_t> gap_in_shape_;
};

// --- model files and the registry -------------------------------------------

struct Preprocess {
    std::size_t channels = 3, height = 32, width = 32;
    std::vector<double> mean = {0.5, 0.5, 0.5};
    std::vector<double> stdev = {0.5, 0.5, 0.5};
};

// `.mdl` file: magic TGAFMDL1, JSON header {arch, n_classes, input}, then the
// named float32 parameter block.
void save_model(ToyClassifier<float>& model, const std::filesystem::path& path);
ToyClassifier<float> load_model(const std::filesystem::path& path);

// A classifier plus the preprocessing registered for it. All evaluation-side
// code talks to models through this wrapper.
class Model {
public:
    Model() = default;
    Model(std::string id, ToyClassifier<float> net, Preprocess prep)
        : id_(std::move(id)), net_(std::move(net)), prep_(std::move(prep)) {}

    const std::string& id() const { return id_; }
    const Preprocess& preprocess() const { return prep_; }
    ToyClassifier<float>& net() { return net_; }

    // images: [N,C,H,W] in [0,1] at native resolution; resized (bilinear) to
    // the registered input size and normalized before the net runs.
    Tensor<float> logits_for_images(const Tensor<float>& images);

    // argmax with ties broken by lowest index
    std::vector<int> predict(const Tensor<float>& images);

    // Normalization only (no resize); linear, so gradients pass through as
    // grad / stdev. The trainer uses this pair on same-size inputs.
    Tensor<float> normalize(const Tensor<float>& images) const;
    Tensor<float> normalize_backward(const Tensor<float>& grad) const;

private:
    std::string id_;
    ToyClassifier<float> net_;
    Preprocess prep_;
};

// JSON registry mapping model ids to weight paths and preprocessing; paths are
// resolved relative to the registry file.
class ModelRegistry {
public:
    struct Entry {
        std::filesystem::path path;
        Preprocess prep;
    };

    static ModelRegistry load(const std::filesystem::path& path);
    static void write(const std::filesystem::path& path,
                      const std::map<std::string, Entry>& entries);

    bool contains(const std::string& id) const { return entries_.count(id) != 0; }
    std::vector<std::string> ids() const;
    Model load_model(const std::string& id) const;
    const Entry& entry(const std::string& id) const;

private:
    std::map<std::string, Entry> entries_;
};

}  // namespace tgaf::cls
