#include "tgaf/mask.hpp"

#include <sstream>
#include <stdexcept>

namespace tgaf::mask {

MaskSpec sample_partition(std::size_t n, std::size_t h, std::size_t w, RngStream& rng) {
    if (n < 2) throw std::invalid_argument("sample_partition: n must be >= 2");
    if (h < n || w < n) {
        throw std::invalid_argument("sample_partition: image too small for " + std::to_string(n) +
                                    "x" + std::to_string(n) + " blocks of >= 1 pixel");
    }
    MaskSpec spec;
    spec.grid_n = n;
    auto bounds = [&](std::size_t extent) {
        std::vector<std::size_t> b;
        b.push_back(0);
        for (std::uint64_t cut : rng.sample_without_replacement(1, extent - 1, n - 1)) {
            b.push_back(static_cast<std::size_t>(cut));
        }
        b.push_back(extent);
        return b;
    };
    spec.row_bounds = bounds(h);
    spec.col_bounds = bounds(w);

    const std::uint64_t total = static_cast<std::uint64_t>(n) * n;
    auto picks = rng.sample_without_replacement(0, total - 1, 2);
    for (std::size_t i = 0; i < 2; ++i) {
        spec.masked_blocks[i] = {static_cast<std::size_t>(picks[i] / n),
                                 static_cast<std::size_t>(picks[i] % n)};
    }
    return spec;
}

std::string MaskSpec::describe() const {
    std::ostringstream os;
    os << "grid=" << grid_n << " rows=";
    for (std::size_t i = 0; i < row_bounds.size(); ++i) os << (i ? "," : "") << row_bounds[i];
    os << " cols=";
    for (std::size_t i = 0; i < col_bounds.size(); ++i) os << (i ? "," : "") << col_bounds[i];
    os << " masked=(" << masked_blocks[0].first << "," << masked_blocks[0].second << "),("
       << masked_blocks[1].first << "," << masked_blocks[1].second << ")";
    return os.str();
}

}  // namespace tgaf::mask
