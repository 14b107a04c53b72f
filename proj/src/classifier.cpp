#include "tgaf/classifier.hpp"

#include <fstream>

#include "json.hpp"

#include "tgaf/image_io.hpp"

namespace tgaf::cls {

const ArchSpec& arch_by_name(const std::string& name) {
    static const std::vector<ArchSpec> kArchs = {
        {"toy_cnn_a", {{16, 3, 1, 1}, {32, 3, 2, 1}, {32, 3, 2, 1}}, 0},
        {"toy_cnn_b", {{12, 5, 2, 2}, {24, 3, 2, 1}}, 0},
        {"toy_mlp", {}, 64},
    };
    for (const auto& a : kArchs) {
        if (a.name == name) return a;
    }
    throw ConfigError("unknown classifier architecture: " + name);
}

void save_model(ToyClassifier<float>& model, const std::filesystem::path& path) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw DataError("save_model: cannot open for writing: " + path.string());
        os.write("TGAFMDL1", 8);
        nlohmann::json header = {{"arch", model.arch_name()},
                                 {"n_classes", model.n_classes()},
                                 {"in_c", model.input_channels()},
                                 {"in_h", model.input_height()},
                                 {"in_w", model.input_width()}};
        const std::string hs = header.dump();
        const std::uint32_t len = static_cast<std::uint32_t>(hs.size());
        unsigned char b[4] = {static_cast<unsigned char>(len), static_cast<unsigned char>(len >> 8),
                              static_cast<unsigned char>(len >> 16),
                              static_cast<unsigned char>(len >> 24)};
        os.write(reinterpret_cast<const char*>(b), 4);
        os.write(hs.data(), static_cast<std::streamsize>(hs.size()));

        std::vector<ckpt::NamedTensor> tensors;
        for (auto& p : model.param_refs()) {
            ckpt::NamedTensor t;
            t.name = p.name;
            t.shape = p.value->shape();
            t.data.assign(p.value->data(), p.value->data() + p.value->size());
            tensors.push_back(std::move(t));
        }
        ckpt::write_named_tensors(os, tensors);
        if (!os) throw DataError("save_model: write failed: " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

ToyClassifier<float> load_model(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_model: no such file: " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != "TGAFMDL1") {
        throw DataError("load_model: bad magic in " + path.string());
    }
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    const std::uint32_t len = static_cast<std::uint32_t>(b[0]) |
                              (static_cast<std::uint32_t>(b[1]) << 8) |
                              (static_cast<std::uint32_t>(b[2]) << 16) |
                              (static_cast<std::uint32_t>(b[3]) << 24);
    std::string hs(len, '\0');
    is.read(hs.data(), len);
    if (!is) throw DataError("load_model: truncated header in " + path.string());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("load_model: corrupt header: " + std::string(e.what()));
    }

    RngStream rng(0);  // weights are overwritten below
    ToyClassifier<float> model(header.at("arch").get<std::string>(),
                               header.at("n_classes").get<std::size_t>(),
                               header.at("in_c").get<std::size_t>(),
                               header.at("in_h").get<std::size_t>(),
                               header.at("in_w").get<std::size_t>(), rng);
    auto tensors = ckpt::read_named_tensors(is, "load_model");
    auto refs = model.param_refs();
    if (refs.size() != tensors.size()) {
        throw DataError("load_model: parameter count mismatch in " + path.string());
    }
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (refs[i].name != tensors[i].name || refs[i].value->shape() != tensors[i].shape) {
            throw DataError("load_model: parameter layout mismatch at " + tensors[i].name);
        }
        std::copy(tensors[i].data.begin(), tensors[i].data.end(), refs[i].value->data());
    }
    return model;
}

Tensor<float> Model::normalize(const Tensor<float>& images) const {
    Tensor<float> out = images;
    const std::size_t n = images.dim(0), c = images.dim(1), hw = images.dim(2) * images.dim(3);
    for (std::size_t ni = 0; ni < n; ++ni) {
        for (std::size_t ci = 0; ci < c; ++ci) {
            const float m = static_cast<float>(prep_.mean[ci]);
            const float s = static_cast<float>(prep_.stdev[ci]);
            float* p = &out.at4(ni, ci, 0, 0);
            for (std::size_t i = 0; i < hw; ++i) p[i] = (p[i] - m) / s;
        }
    }
    return out;
}

Tensor<float> Model::normalize_backward(const Tensor<float>& grad) const {
    Tensor<float> out = grad;
    const std::size_t n = grad.dim(0), c = grad.dim(1), hw = grad.dim(2) * grad.dim(3);
    for (std::size_t ni = 0; ni < n; ++ni) {
        for (std::size_t ci = 0; ci < c; ++ci) {
            const float s = static_cast<float>(prep_.stdev[ci]);
            float* p = &out.at4(ni, ci, 0, 0);
            for (std::size_t i = 0; i < hw; ++i) p[i] /= s;
        }
    }
    return out;
}

Tensor<float> Model::logits_for_images(const Tensor<float>& images) {
    const std::size_t n = images.dim(0);
    Tensor<float> batch({n, prep_.channels, prep_.height, prep_.width});
    const bool needs_resize =
        images.dim(2) != prep_.height || images.dim(3) != prep_.width;
    for (std::size_t ni = 0; ni < n; ++ni) {
        Tensor<float> img({images.dim(1), images.dim(2), images.dim(3)});
        const float* src = &images.at4(ni, 0, 0, 0);
        std::copy(src, src + img.size(), img.data());
        if (needs_resize) img = io::bilinear_resize(img, prep_.height, prep_.width);
        std::copy(img.data(), img.data() + img.size(), &batch.at4(ni, 0, 0, 0));
    }
    return net_.logits(normalize(batch));
}

std::vector<int> Model::predict(const Tensor<float>& images) {
    Tensor<float> out = logits_for_images(images);
    const std::size_t n = out.dim(0), l = out.dim(1);
    std::vector<int> preds(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float* row = out.data() + i * l;
        std::size_t best = 0;
        for (std::size_t j = 1; j < l; ++j) {
            if (row[j] > row[best]) best = j;  // ties keep the lowest index
        }
        preds[i] = static_cast<int>(best);
    }
    return preds;
}

ModelRegistry ModelRegistry::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("model registry: cannot open " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("model registry: parse error: " + std::string(e.what()));
    }
    ModelRegistry reg;
    const auto base = path.parent_path();
    for (const auto& [id, ej] : j.at("models").items()) {
        Entry e;
        std::filesystem::path p = ej.at("path").get<std::string>();
        e.path = p.is_absolute() ? p : base / p;
        if (ej.contains("input")) {
            const auto in = ej.at("input");
            e.prep.channels = in.at(0).get<std::size_t>();
            e.prep.height = in.at(1).get<std::size_t>();
            e.prep.width = in.at(2).get<std::size_t>();
        }
        if (ej.contains("mean")) e.prep.mean = ej.at("mean").get<std::vector<double>>();
        if (ej.contains("std")) e.prep.stdev = ej.at("std").get<std::vector<double>>();
        if (e.prep.mean.size() != e.prep.channels || e.prep.stdev.size() != e.prep.channels) {
            throw ConfigError("model registry: mean/std arity mismatch for '" + id + "'");
        }
        reg.entries_[id] = std::move(e);
    }
    return reg;
}

void ModelRegistry::write(const std::filesystem::path& path,
                          const std::map<std::string, Entry>& entries) {
    nlohmann::json models = nlohmann::json::object();
    for (const auto& [id, e] : entries) {
        models[id] = {{"path", e.path.string()},
                      {"input", {e.prep.channels, e.prep.height, e.prep.width}},
                      {"mean", e.prep.mean},
                      {"std", e.prep.stdev}};
    }
    nlohmann::json j = {{"models", models}};
    std::ofstream os(path);
    if (!os) throw DataError("model registry: cannot write " + path.string());
    os << j.dump(2) << "\n";
}

std::vector<std::string> ModelRegistry::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : entries_) out.push_back(id);
    return out;
}

const ModelRegistry::Entry& ModelRegistry::entry(const std::string& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw DataError("model registry: unknown model id '" + id + "'");
    return it->second;
}

Model ModelRegistry::load_model(const std::string& id) const {
    const Entry& e = entry(id);
    return Model(id, cls::load_model(e.path), e.prep);
}

}  // namespace tgaf::cls
