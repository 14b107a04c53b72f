#pragma once

// End-to-end optimization of the generator against a surrogate classifier:
// delta -> block mask -> clamp(x+delta) -> normalize -> surrogate -> CE toward
// the target class, with Adam on every generator parameter and deterministic,
// checkpointable RNG streams.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tgaf/checkpoint.hpp"
#include "tgaf/classifier.hpp"
#include "tgaf/generator.hpp"
#include "tgaf/latent.hpp"
#include "tgaf/mask.hpp"
#include "tgaf/tensor.hpp"

namespace tgaf::train {

struct TrainConfig {
    std::size_t epochs = 10;
    double learning_rate = 2e-4;
    std::size_t batch_size = 16;
    double epsilon = 16.0 / 255.0;
    std::size_t grid_n = 3;
    double mask_prob = 1.0;
    std::vector<latent::TargetClass> target_classes;
    std::string surrogate_id;
    std::uint64_t seed = 0;

    // generator architecture
    std::size_t base_channels = 64;
    std::size_t reduction = 4;
    bool use_cbf = true;
    bool use_tbf = true;

    std::size_t checkpoint_every = 1;  // epochs between periodic checkpoints

    void validate() const;
};

// A directory of images (or an in-memory list), resized at load time to the
// surrogate's input size and held in [0,1]. Unlabeled: the trainer never
// reads labels even when the manifest carries them.
class Dataset {
public:
    static Dataset load_dir(const std::filesystem::path& dir, std::size_t channels,
                            std::size_t height, std::size_t width);
    static Dataset from_images(std::vector<Tensor<float>> images);

    std::size_t size() const { return images_.size(); }
    bool empty() const { return images_.empty(); }
    const Tensor<float>& image(std::size_t i) const { return images_[i]; }
    Tensor<float> gather(const std::vector<std::size_t>& idx) const;  // [n,C,H,W]

private:
    std::vector<Tensor<float>> images_;
};

// clamp(x + delta, 0, 1) batchwise.
Tensor<float> make_adversarial(const Tensor<float>& x, const Tensor<float>& delta);

struct StepLog {
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    int target_class = 0;
    double loss = 0.0;
};

class Trainer {
public:
    Trainer(const TrainConfig& cfg, cls::Model surrogate);

    // Restores parameters, optimizer moments, and RNG positions.
    Trainer(const TrainConfig& cfg, cls::Model surrogate, const ckpt::Checkpoint& resume_from);

    // One optimizer step on one batch conditioned on one target class.
    // Returns the batch loss; throws NumericalError when it is not finite.
    double training_step(const Tensor<float>& batch, const latent::TargetClass& target,
                         const latent::TargetLatent& lat);

    // Full loop; writes periodic checkpoints into out_dir (when given) and
    // returns the final checkpoint.
    ckpt::Checkpoint train(const Dataset& data, const latent::LatentCache& latents,
                           const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                           std::vector<StepLog>* log = nullptr);

    ckpt::Checkpoint snapshot();
    gen::Generator<float>& generator() { return generator_; }
    cls::Model& surrogate() { return surrogate_; }

private:
    void attach_optimizer();

    TrainConfig cfg_;
    cls::Model surrogate_;
    gen::Generator<float> generator_;
    nn::Adam<float> adam_;
    RngStream data_rng_, class_rng_, mask_rng_;
    std::uint64_t epochs_done_ = 0;
    std::uint64_t global_step_ = 0;
};

}  // namespace tgaf::train
