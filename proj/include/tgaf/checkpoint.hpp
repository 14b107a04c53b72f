#pragma once

// Versioned checkpoint container: a JSON header (config + progress counters)
// followed by named float32 tensors, with optional Adam moments for exact
// training resume. Byte layout is documented in docs/FORMATS.md.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tgaf/errors.hpp"
#include "tgaf/generator.hpp"
#include "tgaf/nn.hpp"
#include "tgaf/tensor.hpp"

namespace tgaf::ckpt {

struct NamedTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> data;
};

struct Checkpoint {
    gen::GeneratorConfig config;
    std::string surrogate_id;
    std::uint64_t seed = 0;
    std::uint64_t epochs_done = 0;
    std::uint64_t global_step = 0;

    std::vector<NamedTensor> params;

    bool has_optimizer = false;
    std::uint64_t adam_step = 0;
    std::vector<NamedTensor> adam_m, adam_v;

    // RNG stream positions for deterministic resume.
    std::uint64_t data_rng_counter = 0;
    std::uint64_t class_rng_counter = 0;
    std::uint64_t mask_rng_counter = 0;
};

void save(const Checkpoint& ckpt, const std::filesystem::path& path);  // write-temp-then-rename
Checkpoint load(const std::filesystem::path& path);

// FNV-1a 64 over the file bytes, as a lowercase hex string; reports use it to
// pin which checkpoint produced them.
std::string file_hash(const std::filesystem::path& path);

// Low-level blocks shared with the classifier model format.
void write_named_tensors(std::ostream& os, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_named_tensors(std::istream& is, const std::string& what);

// --- generator <-> checkpoint bridges --------------------------------------

template <typename T>
std::vector<NamedTensor> snapshot_params(gen::Generator<T>& g) {
    std::vector<NamedTensor> out;
    for (auto& p : g.param_refs()) {
        NamedTensor t;
        t.name = p.name;
        t.shape = p.value->shape();
        t.data.resize(p.value->size());
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            t.data[i] = static_cast<float>((*p.value)[i]);
        }
        out.push_back(std::move(t));
    }
    return out;
}

template <typename T>
void restore_params(gen::Generator<T>& g, const std::vector<NamedTensor>& params) {
    auto refs = g.param_refs();
    if (refs.size() != params.size()) {
        throw DataError("checkpoint: parameter count mismatch (" + std::to_string(params.size()) +
                        " stored, model has " + std::to_string(refs.size()) + ")");
    }
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (refs[i].name != params[i].name) {
            throw DataError("checkpoint: parameter name mismatch: " + params[i].name + " vs " +
                            refs[i].name);
        }
        if (refs[i].value->shape() != params[i].shape) {
            throw DataError("checkpoint: shape mismatch for " + params[i].name);
        }
        for (std::size_t j = 0; j < params[i].data.size(); ++j) {
            (*refs[i].value)[j] = static_cast<T>(params[i].data[j]);
        }
    }
}

}  // namespace tgaf::ckpt
