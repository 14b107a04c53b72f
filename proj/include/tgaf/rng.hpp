#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace tgaf {

// Counter-based splitmix64 stream. State is (key, counter), so a stream can be
// checkpointed and resumed exactly, and the same key always replays the same
// sequence regardless of platform or standard library.
class RngStream {
public:
    RngStream() : RngStream(0) {}
    explicit RngStream(std::uint64_t key) : key_(key), counter_(0) {}

    static RngStream keyed(std::uint64_t seed, std::uint64_t domain) {
        // Mix the domain tag into the seed so independent streams derived from
        // one master seed do not overlap.
        return RngStream(mix(seed ^ mix(domain ^ 0x9e3779b97f4a7c15ull)));
    }

    std::uint64_t next_u64() { return mix(key_ + (++counter_) * 0x9e3779b97f4a7c15ull); }

    // Uniform in [0,1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be positive.
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("RngStream::next_below: n must be positive");
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller. Two uniforms are drawn per sample so the
    // stream position is a pure function of the number of calls.
    double next_normal() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();  // log(0) guard, astronomically rare
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // k distinct values from {lo, ..., hi}, ascending.
    std::vector<std::uint64_t> sample_without_replacement(std::uint64_t lo, std::uint64_t hi,
                                                          std::size_t k) {
        const std::uint64_t n = hi - lo + 1;
        if (k > n) throw std::invalid_argument("sample_without_replacement: k exceeds range");
        // Floyd's algorithm keeps the draw count at exactly k.
        std::vector<std::uint64_t> out;
        out.reserve(k);
        for (std::uint64_t j = n - k; j < n; ++j) {
            std::uint64_t t = lo + next_below(j + 1);
            bool seen = false;
            for (std::uint64_t v : out) {
                if (v == t) { seen = true; break; }
            }
            out.push_back(seen ? lo + j : t);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }
    void set_counter(std::uint64_t c) { counter_ = c; }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_;
};

}  // namespace tgaf
