#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tgaf/tensor.hpp"

namespace tgaf::latent {

inline constexpr std::size_t kChannels = 4;
inline constexpr std::size_t kSize = 64;

struct TargetClass {
    int class_id = 0;
    std::string prompt;
};

enum class Provenance { kExternalDiffusion, kPseudo, kImported };

const char* provenance_name(Provenance p);

// Raw 4x64x64 conditioning tensor for one target class. Files produced by an
// external diffusion pipeline are treated as opaque ground truth; the pseudo
// provider below is the desk-scale stand-in.
struct TargetLatent {
    Tensor<float> data;  // [4, 64, 64]
    int class_id = 0;
    Provenance provenance = Provenance::kPseudo;
};

// Deterministic stand-in for the external diffusion latent: a standard-normal
// field keyed by (class_id, seed). Same key, same bits, every time.
TargetLatent make_pseudo_latent(const TargetClass& cls, std::uint64_t seed);

// Latent file format (one file per class, `<class_id>.lat`):
//   bytes 0..6   "TGAFLAT"
//   byte  7      format version (1)
//   bytes 8..11  class_id, int32 LE
//   bytes 12..23 shape c,h,w, uint32 LE each
//   then c*h*w float32 LE, row-major
void export_latent(const TargetLatent& latent, const std::filesystem::path& path);
TargetLatent import_latent(const std::filesystem::path& path, int expected_class_id = -1);

// Read-mostly store: filled once via generate/import, then shared by the
// trainer and the attack bench.
class LatentCache {
public:
    void put(TargetLatent latent);
    const TargetLatent& get(int class_id) const;  // throws DataError when absent
    bool contains(int class_id) const;
    std::size_t size() const { return latents_.size(); }
    std::vector<int> class_ids() const;

    // Loads every `<id>.lat` file in the directory.
    static LatentCache load_dir(const std::filesystem::path& dir);

private:
    std::map<int, TargetLatent> latents_;
};

// Parses a classes file: one `<class_id> <prompt...>` entry per line,
// '#' starts a comment.
std::vector<TargetClass> parse_classes_file(const std::filesystem::path& path);

template <typename T>
Tensor<T> as_tensor(const TargetLatent& latent) {
    return latent.data.template cast<T>();
}

}  // namespace tgaf::latent
