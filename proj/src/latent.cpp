#include "tgaf/latent.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tgaf/errors.hpp"
#include "tgaf/rng.hpp"

namespace tgaf::latent {

namespace {

constexpr char kMagic[7] = {'T', 'G', 'A', 'F', 'L', 'A', 'T'};
constexpr std::uint8_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

const char* provenance_name(Provenance p) {
    switch (p) {
        case Provenance::kExternalDiffusion: return "external-diffusion";
        case Provenance::kPseudo: return "pseudo";
        case Provenance::kImported: return "imported";
    }
    return "unknown";
}

TargetLatent make_pseudo_latent(const TargetClass& cls, std::uint64_t seed) {
    TargetLatent out;
    out.class_id = cls.class_id;
    out.provenance = Provenance::kPseudo;
    out.data = Tensor<float>({kChannels, kSize, kSize});
    RngStream rng = RngStream::keyed(seed, 0x6c61746e74ull ^ static_cast<std::uint64_t>(
                                               static_cast<std::uint32_t>(cls.class_id)));
    out.data.fill_normal(rng);
    return out;
}

void export_latent(const TargetLatent& latent, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("export_latent: cannot open for writing: " + path.string());
    os.write(kMagic, sizeof(kMagic));
    os.put(static_cast<char>(kVersion));
    put_u32(os, static_cast<std::uint32_t>(latent.class_id));
    const auto& shape = latent.data.shape();
    for (std::size_t d : shape) put_u32(os, static_cast<std::uint32_t>(d));
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(latent.data.data()),
             static_cast<std::streamsize>(latent.data.size() * sizeof(float)));
    if (!os) throw DataError("export_latent: write failed: " + path.string());
}

TargetLatent import_latent(const std::filesystem::path& path, int expected_class_id) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("import_latent: no such file: " + path.string());
    char magic[7];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw DataError("import_latent: bad magic in " + path.string());
    }
    const int version = is.get();
    if (version != kVersion) {
        throw DataError("import_latent: unsupported version " + std::to_string(version) + " in " +
                        path.string());
    }
    TargetLatent out;
    out.class_id = static_cast<std::int32_t>(get_u32(is));
    const std::size_t c = get_u32(is), h = get_u32(is), w = get_u32(is);
    if (!is) throw DataError("import_latent: truncated header in " + path.string());
    if (c != kChannels || h != kSize || w != kSize) {
        std::ostringstream msg;
        msg << "import_latent: shape mismatch in " << path.string() << ": got " << c << "x" << h
            << "x" << w << ", expected " << kChannels << "x" << kSize << "x" << kSize;
        throw DataError(msg.str());
    }
    out.data = Tensor<float>({c, h, w});
    is.read(reinterpret_cast<char*>(out.data.data()),
            static_cast<std::streamsize>(out.data.size() * sizeof(float)));
    if (is.gcount() != static_cast<std::streamsize>(out.data.size() * sizeof(float))) {
        throw DataError("import_latent: truncated payload in " + path.string());
    }
    if (!out.data.all_finite()) {
        throw DataError("import_latent: non-finite entries in " + path.string());
    }
    if (expected_class_id >= 0 && out.class_id != expected_class_id) {
        throw DataError("import_latent: file declares class " + std::to_string(out.class_id) +
                        ", expected " + std::to_string(expected_class_id));
    }
    out.provenance = Provenance::kImported;
    return out;
}

void LatentCache::put(TargetLatent latent) { latents_[latent.class_id] = std::move(latent); }

const TargetLatent& LatentCache::get(int class_id) const {
    auto it = latents_.find(class_id);
    if (it == latents_.end()) {
        throw DataError("latent cache: no latent for class " + std::to_string(class_id));
    }
    return it->second;
}

bool LatentCache::contains(int class_id) const { return latents_.count(class_id) != 0; }

std::vector<int> LatentCache::class_ids() const {
    std::vector<int> ids;
    ids.reserve(latents_.size());
    for (const auto& [id, _] : latents_) ids.push_back(id);
    return ids;
}

LatentCache LatentCache::load_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw DataError("latent cache: not a directory: " + dir.string());
    }
    LatentCache cache;
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".lat") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) cache.put(import_latent(f));
    return cache;
}

std::vector<TargetClass> parse_classes_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("classes file: cannot open " + path.string());
    std::vector<TargetClass> classes;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        int id;
        if (!(ls >> id)) {
            throw DataError("classes file: bad class id at line " + std::to_string(lineno));
        }
        if (id < 0) throw DataError("classes file: negative class id at line " + std::to_string(lineno));
        TargetClass cls;
        cls.class_id = id;
        std::string prompt;
        std::getline(ls, prompt);
        const auto start = prompt.find_first_not_of(" \t");
        const auto end = prompt.find_last_not_of(" \t\r");
        cls.prompt = (start == std::string::npos) ? "" : prompt.substr(start, end - start + 1);
        for (const auto& existing : classes) {
            if (existing.class_id == id) {
                throw DataError("classes file: duplicate class id " + std::to_string(id));
            }
        }
        classes.push_back(std::move(cls));
    }
    return classes;
}

}  // namespace tgaf::latent
