#include "tgaf/toy.hpp"

#include <cmath>
#include <fstream>

#include "tgaf/errors.hpp"
#include "tgaf/image_io.hpp"

namespace tgaf::toy {

namespace {

struct Rgb {
    float r, g, b;
};

// One distinct hue per class; shape varies too so no single cue carries all
// the signal.
constexpr Rgb kClassColor[kNumClasses] = {
    {0.95f, 0.15f, 0.10f},  // 0 red circle
    {0.15f, 0.90f, 0.20f},  // 1 green square
    {0.20f, 0.35f, 0.95f},  // 2 blue triangle
    {0.95f, 0.90f, 0.15f},  // 3 yellow cross
    {0.90f, 0.20f, 0.90f},  // 4 magenta ring
    {0.15f, 0.90f, 0.90f},  // 5 cyan bars
    {0.92f, 0.92f, 0.92f},  // 6 white diamond
    {0.95f, 0.55f, 0.10f},  // 7 orange checker
};

void put_pixel(Tensor<float>& img, long x, long y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= static_cast<long>(kImageSize) || y >= static_cast<long>(kImageSize))
        return;
    img.at3(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = c.r;
    img.at3(1, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = c.g;
    img.at3(2, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = c.b;
}

}  // namespace

Tensor<float> render_image(int class_id, RngStream& rng) {
    if (class_id < 0 || class_id >= static_cast<int>(kNumClasses)) {
        throw std::invalid_argument("render_image: class id out of range");
    }
    const std::size_t s = kImageSize;
    Tensor<float> img({3, s, s});

    // Dim background gradient plus pixel noise.
    const float b0 = static_cast<float>(rng.next_uniform(0.05, 0.20));
    const float gx = static_cast<float>(rng.next_uniform(-0.08, 0.08));
    const float gy = static_cast<float>(rng.next_uniform(-0.08, 0.08));
    for (std::size_t c = 0; c < 3; ++c) {
        const float tint = static_cast<float>(rng.next_uniform(-0.03, 0.03));
        for (std::size_t y = 0; y < s; ++y) {
            for (std::size_t x = 0; x < s; ++x) {
                float v = b0 + tint + gx * static_cast<float>(x) / s + gy * static_cast<float>(y) / s;
                v += static_cast<float>(rng.next_uniform(-0.03, 0.03));
                img.at3(c, y, x) = std::min(1.0f, std::max(0.0f, v));
            }
        }
    }

    Rgb col = kClassColor[class_id];
    col.r = std::min(1.0f, std::max(0.0f, col.r + static_cast<float>(rng.next_uniform(-0.08, 0.08))));
    col.g = std::min(1.0f, std::max(0.0f, col.g + static_cast<float>(rng.next_uniform(-0.08, 0.08))));
    col.b = std::min(1.0f, std::max(0.0f, col.b + static_cast<float>(rng.next_uniform(-0.08, 0.08))));

    const long cx = static_cast<long>(rng.next_below(10)) + 11;
    const long cy = static_cast<long>(rng.next_below(10)) + 11;
    const long r = static_cast<long>(rng.next_below(4)) + 6;

    switch (class_id) {
        case 0:  // filled circle
            for (long y = -r; y <= r; ++y)
                for (long x = -r; x <= r; ++x)
                    if (x * x + y * y <= r * r) put_pixel(img, cx + x, cy + y, col);
            break;
        case 1:  // filled square
            for (long y = -r; y <= r; ++y)
                for (long x = -r; x <= r; ++x) put_pixel(img, cx + x, cy + y, col);
            break;
        case 2:  // triangle
            for (long y = -r; y <= r; ++y) {
                const long half = ((y + r) * r) / (2 * r);
                for (long x = -half; x <= half; ++x) put_pixel(img, cx + x, cy + y, col);
            }
            break;
        case 3:  // cross
            for (long t = -r; t <= r; ++t)
                for (long u = -2; u <= 2; ++u) {
                    put_pixel(img, cx + t, cy + u, col);
                    put_pixel(img, cx + u, cy + t, col);
                }
            break;
        case 4:  // ring
            for (long y = -r; y <= r; ++y)
                for (long x = -r; x <= r; ++x) {
                    const long d2 = x * x + y * y;
                    if (d2 <= r * r && d2 >= (r - 3) * (r - 3)) put_pixel(img, cx + x, cy + y, col);
                }
            break;
        case 5:  // horizontal bars
            for (long y = -r; y <= r; ++y) {
                if (((y + r) / 2) % 2 == 0) {
                    for (long x = -r; x <= r; ++x) put_pixel(img, cx + x, cy + y, col);
                }
            }
            break;
        case 6:  // diamond
            for (long y = -r; y <= r; ++y)
                for (long x = -r; x <= r; ++x)
                    if (std::abs(x) + std::abs(y) <= r) put_pixel(img, cx + x, cy + y, col);
            break;
        case 7:  // checkerboard
            for (long y = -r; y <= r; ++y)
                for (long x = -r; x <= r; ++x)
                    if ((((x + r) / 3) + ((y + r) / 3)) % 2 == 0) put_pixel(img, cx + x, cy + y, col);
            break;
        default:
            break;
    }
    return img;
}

Dataset make_dataset(std::size_t per_class, std::uint64_t seed) {
    Dataset data;
    RngStream rng = RngStream::keyed(seed, 0x746f79ull);
    data.images.reserve(per_class * kNumClasses);
    for (std::size_t i = 0; i < per_class; ++i) {
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            data.images.push_back(render_image(static_cast<int>(c), rng));
            data.labels.push_back(static_cast<int>(c));
        }
    }
    return data;
}

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.txt");
    if (!manifest) throw DataError("write_dataset: cannot write manifest in " + dir.string());
    char name[32];
    for (std::size_t i = 0; i < data.images.size(); ++i) {
        std::snprintf(name, sizeof(name), "img_%05zu.ppm", i);
        io::save_ppm(data.images[i], dir / name);
        manifest << name << " " << data.labels[i] << "\n";
    }
}

namespace {

Tensor<float> normalized_batch(const Dataset& data, const std::vector<std::size_t>& idx,
                               const cls::Preprocess& prep) {
    const std::size_t n = idx.size();
    const auto& first = data.images[idx[0]];
    Tensor<float> batch({n, first.dim(0), first.dim(1), first.dim(2)});
    for (std::size_t i = 0; i < n; ++i) {
        const auto& img = data.images[idx[i]];
        float* dst = &batch.at4(i, 0, 0, 0);
        for (std::size_t j = 0; j < img.size(); ++j) dst[j] = img[j];
    }
    const std::size_t c = batch.dim(1), hw = batch.dim(2) * batch.dim(3);
    for (std::size_t ni = 0; ni < n; ++ni) {
        for (std::size_t ci = 0; ci < c; ++ci) {
            const float m = static_cast<float>(prep.mean[ci]);
            const float s = static_cast<float>(prep.stdev[ci]);
            float* p = &batch.at4(ni, ci, 0, 0);
            for (std::size_t i = 0; i < hw; ++i) p[i] = (p[i] - m) / s;
        }
    }
    return batch;
}

}  // namespace

double train_classifier(cls::ToyClassifier<float>& model, const cls::Preprocess& prep,
                        const Dataset& train, const Dataset& test, std::size_t epochs, double lr,
                        std::size_t batch_size, std::uint64_t seed) {
    if (train.images.empty()) throw DataError("train_classifier: empty training set");
    nn::Adam<float> adam(lr);
    adam.attach(model.param_refs());
    RngStream shuffle_rng = RngStream::keyed(seed, 0x736866ull);

    std::vector<std::size_t> order(train.images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
        }
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(start + batch_size, order.size());
            std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
            std::vector<int> labels(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train.labels[idx[i]];
            Tensor<float> batch = normalized_batch(train, idx, prep);
            adam.zero_grad();
            Tensor<float> logits = model.logits(batch);
            Tensor<float> grad;
            nn::cross_entropy_with_logits(logits, labels, &grad);
            model.backward(grad);
            adam.step();
        }
    }

    // test accuracy
    std::size_t correct = 0;
    const std::size_t eval_batch = 64;
    for (std::size_t start = 0; start < test.images.size(); start += eval_batch) {
        const std::size_t end = std::min(start + eval_batch, test.images.size());
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < end; ++i) idx.push_back(i);
        Tensor<float> logits = model.logits(normalized_batch(test, idx, prep));
        const std::size_t l = logits.dim(1);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const float* row = logits.data() + i * l;
            std::size_t best = 0;
            for (std::size_t j = 1; j < l; ++j)
                if (row[j] > row[best]) best = j;
            if (static_cast<int>(best) == test.labels[idx[i]]) ++correct;
        }
    }
    return test.images.empty() ? 0.0
                               : static_cast<double>(correct) / static_cast<double>(test.images.size());
}

double accuracy(cls::Model& model, const Dataset& data) {
    std::size_t correct = 0;
    const std::size_t bs = 64;
    for (std::size_t start = 0; start < data.images.size(); start += bs) {
        const std::size_t end = std::min(start + bs, data.images.size());
        const auto& first = data.images[start];
        Tensor<float> batch({end - start, first.dim(0), first.dim(1), first.dim(2)});
        for (std::size_t i = start; i < end; ++i) {
            float* dst = &batch.at4(i - start, 0, 0, 0);
            for (std::size_t j = 0; j < first.size(); ++j) dst[j] = data.images[i][j];
        }
        auto preds = model.predict(batch);
        for (std::size_t i = 0; i < preds.size(); ++i) {
            if (preds[i] == data.labels[start + i]) ++correct;
        }
    }
    return data.images.empty() ? 0.0
                               : static_cast<double>(correct) / static_cast<double>(data.images.size());
}

double clean_target_rate(cls::Model& model, const Dataset& data, int class_id) {
    std::size_t hits = 0;
    const std::size_t bs = 64;
    for (std::size_t start = 0; start < data.images.size(); start += bs) {
        const std::size_t end = std::min(start + bs, data.images.size());
        const auto& first = data.images[start];
        Tensor<float> batch({end - start, first.dim(0), first.dim(1), first.dim(2)});
        for (std::size_t i = start; i < end; ++i) {
            float* dst = &batch.at4(i - start, 0, 0, 0);
            for (std::size_t j = 0; j < first.size(); ++j) dst[j] = data.images[i][j];
        }
        for (int p : model.predict(batch)) {
            if (p == class_id) ++hits;
        }
    }
    return data.images.empty() ? 0.0
                               : static_cast<double>(hits) / static_cast<double>(data.images.size());
}

BuiltModel build_toy_model(const std::string& arch, const Dataset& train, const Dataset& test,
                           std::size_t epochs, std::uint64_t seed, const std::string& id) {
    RngStream init = RngStream::keyed(seed, 0x636c73ull);
    cls::Preprocess prep;
    cls::ToyClassifier<float> net(arch, kNumClasses, 3, kImageSize, kImageSize, init);
    const double acc = train_classifier(net, prep, train, test, epochs, 1e-3, 32, seed);
    return {cls::Model(id, std::move(net), prep), acc};
}

}  // namespace tgaf::toy
