#include "tgaf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tgaf/image_io.hpp"

namespace tgaf::train {

namespace {

constexpr std::uint64_t kInitDomain = 0x696e6974ull;
constexpr std::uint64_t kDataDomain = 0x64617461ull;
constexpr std::uint64_t kClassDomain = 0x636c6173ull;
constexpr std::uint64_t kMaskDomain = 0x6d61736bull;

}  // namespace

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw ConfigError("train config: learning_rate must be > 0");
    if (!(epsilon > 0.0 && epsilon <= 1.0)) {
        throw ConfigError("train config: epsilon must be in (0, 1]");
    }
    if (mask_prob < 0.0 || mask_prob > 1.0) {
        throw ConfigError("train config: mask_prob must be in [0,1]");
    }
    if (batch_size == 0) throw ConfigError("train config: batch_size must be positive");
    if (grid_n < 2) throw ConfigError("train config: grid_n must be >= 2");
    if (target_classes.empty()) throw ConfigError("train config: target_classes is empty");
    if (surrogate_id.empty()) throw ConfigError("train config: surrogate_id is empty");
}

Dataset Dataset::load_dir(const std::filesystem::path& dir, std::size_t channels,
                          std::size_t height, std::size_t width) {
    if (!std::filesystem::is_directory(dir)) {
        throw DataError("dataset: not a directory: " + dir.string());
    }
    std::vector<std::filesystem::path> files;
    const auto manifest = dir / "manifest.txt";
    if (std::filesystem::exists(manifest)) {
        std::ifstream is(manifest);
        std::string line;
        while (std::getline(is, line)) {
            std::istringstream ls(line);
            std::string name;
            if (ls >> name) files.push_back(dir / name);
        }
    } else {
        for (const auto& entry : std::filesystem::directory_iterator(dir)) {
            if (entry.is_regular_file() && io::is_image_file(entry.path())) {
                files.push_back(entry.path());
            }
        }
        std::sort(files.begin(), files.end());
    }
    if (files.empty()) throw DataError("dataset: no images in " + dir.string());

    Dataset out;
    out.images_.reserve(files.size());
    for (const auto& f : files) {
        Tensor<float> img = io::load_image(f);
        io::validate_image(img, "dataset image " + f.string());
        if (img.dim(0) != channels) {
            if (channels == 3 && img.dim(0) == 1) {
                Tensor<float> rgb({3, img.dim(1), img.dim(2)});
                for (std::size_t c = 0; c < 3; ++c) {
                    std::copy(img.data(), img.data() + img.dim(1) * img.dim(2),
                              &rgb.at3(c, 0, 0));
                }
                img = std::move(rgb);
            } else {
                throw DataError("dataset: channel mismatch for " + f.string());
            }
        }
        if (img.dim(1) != height || img.dim(2) != width) {
            img = io::bilinear_resize(img, height, width);
        }
        out.images_.push_back(std::move(img));
    }
    return out;
}

Dataset Dataset::from_images(std::vector<Tensor<float>> images) {
    Dataset out;
    out.images_ = std::move(images);
    return out;
}

Tensor<float> Dataset::gather(const std::vector<std::size_t>& idx) const {
    if (idx.empty()) throw std::invalid_argument("dataset: empty batch");
    const auto& first = images_[idx[0]];
    Tensor<float> batch({idx.size(), first.dim(0), first.dim(1), first.dim(2)});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& img = images_[idx.at(i)];
        float* dst = &batch.at4(i, 0, 0, 0);
        std::copy(img.data(), img.data() + img.size(), dst);
    }
    return batch;
}

Tensor<float> make_adversarial(const Tensor<float>& x, const Tensor<float>& delta) {
    if (!x.same_shape(delta)) throw std::invalid_argument("make_adversarial: shape mismatch");
    Tensor<float> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::min(1.0f, std::max(0.0f, x[i] + delta[i]));
    }
    return out;
}

Trainer::Trainer(const TrainConfig& cfg, cls::Model surrogate)
    : cfg_(cfg), surrogate_(std::move(surrogate)) {
    cfg_.validate();
    gen::GeneratorConfig gcfg;
    gcfg.base_channels = cfg_.base_channels;
    gcfg.reduction = cfg_.reduction;
    gcfg.epsilon = cfg_.epsilon;
    gcfg.in_channels = surrogate_.preprocess().channels;
    gcfg.height = surrogate_.preprocess().height;
    gcfg.width = surrogate_.preprocess().width;
    gcfg.use_cbf = cfg_.use_cbf;
    gcfg.use_tbf = cfg_.use_tbf;

    RngStream init_rng = RngStream::keyed(cfg_.seed, kInitDomain);
    generator_ = gen::Generator<float>(gcfg, init_rng);
    data_rng_ = RngStream::keyed(cfg_.seed, kDataDomain);
    class_rng_ = RngStream::keyed(cfg_.seed, kClassDomain);
    mask_rng_ = RngStream::keyed(cfg_.seed, kMaskDomain);
    attach_optimizer();
}

Trainer::Trainer(const TrainConfig& cfg, cls::Model surrogate, const ckpt::Checkpoint& resume_from)
    : Trainer(cfg, std::move(surrogate)) {
    ckpt::restore_params(generator_, resume_from.params);
    if (resume_from.has_optimizer) {
        auto& m = adam_.moments_m();
        auto& v = adam_.moments_v();
        if (m.size() != resume_from.adam_m.size()) {
            throw DataError("resume: optimizer state count mismatch");
        }
        for (std::size_t i = 0; i < m.size(); ++i) {
            for (std::size_t j = 0; j < m[i].size(); ++j) {
                m[i][j] = resume_from.adam_m[i].data[j];
                v[i][j] = resume_from.adam_v[i].data[j];
            }
        }
        adam_.set_step_count(resume_from.adam_step);
    }
    data_rng_.set_counter(resume_from.data_rng_counter);
    class_rng_.set_counter(resume_from.class_rng_counter);
    mask_rng_.set_counter(resume_from.mask_rng_counter);
    epochs_done_ = resume_from.epochs_done;
    global_step_ = resume_from.global_step;
}

void Trainer::attach_optimizer() {
    adam_ = nn::Adam<float>(cfg_.learning_rate);
    adam_.attach(generator_.param_refs());
}

double Trainer::training_step(const Tensor<float>& batch, const latent::TargetClass& target,
                              const latent::TargetLatent& lat) {
    if (lat.class_id != target.class_id) {
        throw DataError("training_step: latent class " + std::to_string(lat.class_id) +
                        " does not match target " + std::to_string(target.class_id));
    }
    if (batch.rank() != 4 || batch.dim(0) == 0) {
        throw std::invalid_argument("training_step: batch must be nonempty NCHW");
    }

    Tensor<float> raw_latent = latent::as_tensor<float>(lat);
    Tensor<float> delta = generator_.forward(batch, raw_latent);

    const std::size_t h = delta.dim(2), w = delta.dim(3);
    mask::MaskSpec spec = mask::sample_partition(cfg_.grid_n, h, w, mask_rng_);
    const bool masked = mask_rng_.next_double() < cfg_.mask_prob;
    Tensor<float> keep;
    Tensor<float> delta_m = delta;
    if (masked) {
        keep = mask::keep_plane<float>(spec);
        for (std::size_t p = 0; p < delta.size() / (h * w); ++p) {
            float* plane = delta_m.data() + p * h * w;
            for (std::size_t i = 0; i < h * w; ++i) {
                if (keep[i] == 0.0f) plane[i] = 0.0f;
            }
        }
    }

    // Budget and range invariants on everything the surrogate sees.
    const float eps_f = static_cast<float>(cfg_.epsilon);
    if (delta_m.abs_max() > eps_f * (1.0f + 1e-5f)) {
        throw NumericalError("training_step: perturbation left the budget");
    }

    Tensor<float> x_adv = make_adversarial(batch, delta_m);
    Tensor<float> x_norm = surrogate_.normalize(x_adv);
    Tensor<float> logits = surrogate_.net().logits(x_norm);

    std::vector<int> targets(batch.dim(0), target.class_id);
    Tensor<float> glogits;
    const double loss = nn::cross_entropy_with_logits(logits, targets, &glogits);
    if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "training_step: non-finite loss at step " << global_step_ << " (epoch "
            << epochs_done_ << ", target " << target.class_id << ")";
        throw NumericalError(msg.str());
    }

    surrogate_.net().zero_grad();  // surrogate weights are frozen; only dL/dx matters
    Tensor<float> gx_norm = surrogate_.net().backward(glogits);
    Tensor<float> gx_adv = surrogate_.normalize_backward(gx_norm);

    // clamp backward: zero where x + delta left [0,1]
    Tensor<float> gdelta(gx_adv.shape());
    for (std::size_t i = 0; i < gdelta.size(); ++i) {
        const float pre = batch[i] + delta_m[i];
        gdelta[i] = (pre >= 0.0f && pre <= 1.0f) ? gx_adv[i] : 0.0f;
    }
    // mask backward: masked pixels received no gradient
    if (masked) {
        for (std::size_t p = 0; p < gdelta.size() / (h * w); ++p) {
            float* plane = gdelta.data() + p * h * w;
            for (std::size_t i = 0; i < h * w; ++i) {
                if (keep[i] == 0.0f) plane[i] = 0.0f;
            }
        }
    }

    adam_.zero_grad();
    generator_.backward(gdelta);
    adam_.step();
    ++global_step_;
    return loss;
}

ckpt::Checkpoint Trainer::train(const Dataset& data, const latent::LatentCache& latents,
                                const std::optional<std::filesystem::path>& out_dir,
                                std::vector<StepLog>* log) {
    if (data.empty()) throw DataError("train: empty dataset");
    for (const auto& cls : cfg_.target_classes) {
        if (!latents.contains(cls.class_id)) {
            throw DataError("train: missing latent for target class " +
                            std::to_string(cls.class_id));
        }
    }
    if (out_dir) std::filesystem::create_directories(*out_dir);

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    while (epochs_done_ < cfg_.epochs) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[data_rng_.next_below(i)]);
        }
        for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
            const std::size_t end = std::min(start + cfg_.batch_size, order.size());
            std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
            const std::size_t pick = class_rng_.next_below(cfg_.target_classes.size());
            const latent::TargetClass& target = cfg_.target_classes[pick];
            const double loss = training_step(data.gather(idx), target,
                                              latents.get(target.class_id));
            if (log) log->push_back({global_step_, epochs_done_, target.class_id, loss});
        }
        ++epochs_done_;
        if (out_dir && (epochs_done_ % cfg_.checkpoint_every == 0 || epochs_done_ == cfg_.epochs)) {
            ckpt::save(snapshot(), *out_dir / ("ckpt_epoch_" + std::to_string(epochs_done_) +
                                               ".ckpt"));
        }
    }
    return snapshot();
}

ckpt::Checkpoint Trainer::snapshot() {
    ckpt::Checkpoint out;
    auto& self = *this;
    out.config = generator_.config();
    out.surrogate_id = cfg_.surrogate_id;
    out.seed = cfg_.seed;
    out.epochs_done = epochs_done_;
    out.global_step = global_step_;
    out.params = ckpt::snapshot_params(self.generator_);
    out.has_optimizer = true;
    out.adam_step = self.adam_.step_count();
    auto refs = self.generator_.param_refs();
    auto& m = self.adam_.moments_m();
    auto& v = self.adam_.moments_v();
    for (std::size_t i = 0; i < refs.size(); ++i) {
        ckpt::NamedTensor tm, tv;
        tm.name = tv.name = refs[i].name;
        tm.shape = tv.shape = refs[i].value->shape();
        tm.data.assign(m[i].data(), m[i].data() + m[i].size());
        tv.data.assign(v[i].data(), v[i].data() + v[i].size());
        out.adam_m.push_back(std::move(tm));
        out.adam_v.push_back(std::move(tv));
    }
    out.data_rng_counter = data_rng_.counter();
    out.class_rng_counter = class_rng_.counter();
    out.mask_rng_counter = mask_rng_.counter();
    return out;
}

}  // namespace tgaf::train
