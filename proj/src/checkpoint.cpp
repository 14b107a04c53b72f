#include "tgaf/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace tgaf::ckpt {

namespace {

constexpr char kMagic[8] = {'T', 'G', 'A', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw DataError(what + ": truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

nlohmann::json config_to_json(const gen::GeneratorConfig& c) {
    return {{"base_channels", c.base_channels}, {"attention_dim", c.attention_dim},
            {"reduction", c.reduction},         {"epsilon", c.epsilon},
            {"in_channels", c.in_channels},     {"height", c.height},
            {"width", c.width},                 {"use_cbf", c.use_cbf},
            {"use_tbf", c.use_tbf}};
}

gen::GeneratorConfig config_from_json(const nlohmann::json& j) {
    gen::GeneratorConfig c;
    c.base_channels = j.at("base_channels").get<std::size_t>();
    c.attention_dim = j.at("attention_dim").get<std::size_t>();
    c.reduction = j.at("reduction").get<std::size_t>();
    c.epsilon = j.at("epsilon").get<double>();
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.height = j.at("height").get<std::size_t>();
    c.width = j.at("width").get<std::size_t>();
    c.use_cbf = j.at("use_cbf").get<bool>();
    c.use_tbf = j.at("use_tbf").get<bool>();
    return c;
}

}  // namespace

void write_named_tensors(std::ostream& os, const std::vector<NamedTensor>& tensors) {
    put_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        put_u32(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
}

std::vector<NamedTensor> read_named_tensors(std::istream& is, const std::string& what) {
    const std::uint32_t count = get_u32(is, what);
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const std::uint32_t name_len = get_u32(is, what);
        t.name.resize(name_len);
        is.read(t.name.data(), name_len);
        const std::uint32_t ndim = get_u32(is, what);
        std::size_t total = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            t.shape.push_back(get_u32(is, what));
            total *= t.shape.back();
        }
        t.data.resize(total);
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(total * sizeof(float)));
        if (!is) throw DataError(what + ": truncated tensor payload for " + t.name);
        out.push_back(std::move(t));
    }
    return out;
}

void save(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw DataError("checkpoint: cannot open for writing: " + path.string());
        os.write(kMagic, sizeof(kMagic));
        put_u32(os, kVersion);

        nlohmann::json header = {{"config", config_to_json(ckpt.config)},
                                 {"surrogate_id", ckpt.surrogate_id},
                                 {"seed", ckpt.seed},
                                 {"epochs_done", ckpt.epochs_done},
                                 {"global_step", ckpt.global_step},
                                 {"has_optimizer", ckpt.has_optimizer},
                                 {"adam_step", ckpt.adam_step},
                                 {"data_rng_counter", ckpt.data_rng_counter},
                                 {"class_rng_counter", ckpt.class_rng_counter},
                                 {"mask_rng_counter", ckpt.mask_rng_counter}};
        const std::string hs = header.dump();
        put_u32(os, static_cast<std::uint32_t>(hs.size()));
        os.write(hs.data(), static_cast<std::streamsize>(hs.size()));

        write_named_tensors(os, ckpt.params);
        if (ckpt.has_optimizer) {
            write_named_tensors(os, ckpt.adam_m);
            write_named_tensors(os, ckpt.adam_v);
        }
        if (!os) throw DataError("checkpoint: write failed: " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: no such file: " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::string(magic, 8) != std::string(kMagic, 8)) {
        throw DataError("checkpoint: bad magic in " + path.string());
    }
    const std::uint32_t version = get_u32(is, "checkpoint");
    if (version != kVersion) {
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::uint32_t hlen = get_u32(is, "checkpoint");
    std::string hs(hlen, '\0');
    is.read(hs.data(), hlen);
    if (!is) throw DataError("checkpoint: truncated header in " + path.string());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint: corrupt header: " + std::string(e.what()));
    }

    Checkpoint ckpt;
    ckpt.config = config_from_json(header.at("config"));
    ckpt.surrogate_id = header.at("surrogate_id").get<std::string>();
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.epochs_done = header.at("epochs_done").get<std::uint64_t>();
    ckpt.global_step = header.at("global_step").get<std::uint64_t>();
    ckpt.has_optimizer = header.at("has_optimizer").get<bool>();
    ckpt.adam_step = header.at("adam_step").get<std::uint64_t>();
    ckpt.data_rng_counter = header.at("data_rng_counter").get<std::uint64_t>();
    ckpt.class_rng_counter = header.at("class_rng_counter").get<std::uint64_t>();
    ckpt.mask_rng_counter = header.at("mask_rng_counter").get<std::uint64_t>();

    ckpt.params = read_named_tensors(is, "checkpoint");
    if (ckpt.has_optimizer) {
        ckpt.adam_m = read_named_tensors(is, "checkpoint");
        ckpt.adam_v = read_named_tensors(is, "checkpoint");
    }
    return ckpt;
}

std::string file_hash(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("file_hash: no such file: " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        const std::streamsize n = is.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
        if (!is) break;
    }
    std::ostringstream os;
    os << std::hex;
    for (int shift = 60; shift >= 0; shift -= 4) os << ((h >> shift) & 0xf);
    return os.str();
}

}  // namespace tgaf::ckpt
