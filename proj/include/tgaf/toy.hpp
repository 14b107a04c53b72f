#pragma once

// Desk-scale synthetic data: eight classes of colored shapes on noisy
// backgrounds, 3x32x32, plus helpers to train the small classifiers used as
// surrogate and victim models.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tgaf/classifier.hpp"
#include "tgaf/tensor.hpp"

namespace tgaf::toy {

inline constexpr std::size_t kNumClasses = 8;
inline constexpr std::size_t kImageSize = 32;

struct Dataset {
    std::vector<Tensor<float>> images;  // [3,32,32] each
    std::vector<int> labels;
};

Tensor<float> render_image(int class_id, RngStream& rng);
Dataset make_dataset(std::size_t per_class, std::uint64_t seed);

// Writes `img_<idx>.ppm` files plus `manifest.txt` lines of
// `<filename> <label>`; loadable by the training dataset reader.
void write_dataset(const Dataset& data, const std::filesystem::path& dir);

// Adam + cross entropy on (x-mean)/std inputs; returns accuracy on `test`.
double train_classifier(cls::ToyClassifier<float>& model, const cls::Preprocess& prep,
                        const Dataset& train, const Dataset& test, std::size_t epochs, double lr,
                        std::size_t batch_size, std::uint64_t seed);

double accuracy(cls::Model& model, const Dataset& data);

// Fraction of `data` images predicted as `class_id` (the clean base rate an
// attack must beat).
double clean_target_rate(cls::Model& model, const Dataset& data, int class_id);

// Builds a trained model, wraps it with 0.5/0.5 preprocessing, and returns it
// together with the achieved test accuracy.
struct BuiltModel {
    cls::Model model;
    double test_accuracy;
};
BuiltModel build_toy_model(const std::string& arch, const Dataset& train, const Dataset& test,
                           std::size_t epochs, std::uint64_t seed, const std::string& id);

}  // namespace tgaf::toy
