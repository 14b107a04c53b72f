#pragma once

// Block-wise training mask: partition the H x W plane into an N x N grid with
// random cut points and zero two randomly chosen blocks of the generated
// noise. Training-only; inference emits the unmasked perturbation.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tgaf/rng.hpp"
#include "tgaf/tensor.hpp"

namespace tgaf::mask {

struct MaskSpec {
    std::size_t grid_n = 0;
    std::vector<std::size_t> row_bounds;  // N+1 ascending, 0..H
    std::vector<std::size_t> col_bounds;  // N+1 ascending, 0..W
    std::array<std::pair<std::size_t, std::size_t>, 2> masked_blocks;  // distinct (i,j)

    std::string describe() const;
};

// Cut points are drawn uniformly without replacement from {1..H-1} x {1..W-1},
// so every block is at least one pixel in each dimension; the two masked
// blocks are drawn uniformly without replacement from the N^2 grid.
MaskSpec sample_partition(std::size_t n, std::size_t h, std::size_t w, RngStream& rng);

inline MaskSpec sample_partition(std::size_t n, std::size_t h, std::size_t w,
                                 std::uint64_t rng_seed) {
    RngStream rng = RngStream::keyed(rng_seed, 0x6d61736bull);
    return sample_partition(n, h, w, rng);
}

// With probability `prob` zero all channels inside the two masked blocks and
// leave everything else bit-identical; otherwise return the input unchanged.
// `delta` is [C,H,W] or [N,C,H,W]; the spec must tile its spatial dims.
template <typename T>
Tensor<T> apply_mask(const Tensor<T>& delta, const MaskSpec& spec, double prob, RngStream& rng);

template <typename T>
Tensor<T> apply_mask(const Tensor<T>& delta, const MaskSpec& spec, double prob,
                     std::uint64_t rng_seed) {
    RngStream rng = RngStream::keyed(rng_seed, 0x636f696eull);
    return apply_mask(delta, spec, prob, rng);
}

// Binary keep-mask (1 outside the masked blocks, 0 inside) over H x W.
// Shared by apply_mask and the trainer's backward pass.
template <typename T>
Tensor<T> keep_plane(const MaskSpec& spec);

// --- implementation --------------------------------------------------------

template <typename T>
Tensor<T> keep_plane(const MaskSpec& spec) {
    const std::size_t h = spec.row_bounds.back(), w = spec.col_bounds.back();
    Tensor<T> keep({h, w});
    keep.fill(T(1));
    for (const auto& [bi, bj] : spec.masked_blocks) {
        for (std::size_t r = spec.row_bounds[bi]; r < spec.row_bounds[bi + 1]; ++r) {
            for (std::size_t c = spec.col_bounds[bj]; c < spec.col_bounds[bj + 1]; ++c) {
                keep[r * w + c] = T(0);
            }
        }
    }
    return keep;
}

template <typename T>
Tensor<T> apply_mask(const Tensor<T>& delta, const MaskSpec& spec, double prob, RngStream& rng) {
    if (prob < 0.0 || prob > 1.0) {
        throw std::invalid_argument("apply_mask: prob must be in [0,1]");
    }
    const std::size_t rank = delta.rank();
    if (rank != 3 && rank != 4) {
        throw std::invalid_argument("apply_mask: expected CHW or NCHW perturbation");
    }
    const std::size_t h = delta.dim(rank - 2), w = delta.dim(rank - 1);
    if (spec.row_bounds.empty() || spec.row_bounds.back() != h || spec.col_bounds.back() != w) {
        throw std::invalid_argument("apply_mask: mask spec does not tile the perturbation");
    }
    const bool act = rng.next_double() < prob;
    Tensor<T> out = delta;
    if (!act) return out;
    const Tensor<T> keep = keep_plane<T>(spec);
    const std::size_t planes = delta.size() / (h * w);
    for (std::size_t p = 0; p < planes; ++p) {
        T* plane = out.data() + p * h * w;
        for (std::size_t i = 0; i < h * w; ++i) {
            if (keep[i] == T(0)) plane[i] = T(0);
        }
    }
    return out;
}

}  // namespace tgaf::mask
