#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "tgaf/mask.hpp"
#include "tgaf/rng.hpp"

using namespace tgaf;

TEST_CASE("partition tiles the plane with exactly two masked blocks") {
    RngStream rng(0);
    for (int trial = 0; trial < 200; ++trial) {
        auto spec = mask::sample_partition(3, 224, 224, rng);
        REQUIRE(spec.row_bounds.size() == 4);
        REQUIRE(spec.col_bounds.size() == 4);
        CHECK(spec.row_bounds.front() == 0);
        CHECK(spec.row_bounds.back() == 224);
        for (std::size_t i = 1; i < spec.row_bounds.size(); ++i) {
            CHECK(spec.row_bounds[i] > spec.row_bounds[i - 1]);
            CHECK(spec.col_bounds[i] > spec.col_bounds[i - 1]);
        }
        std::size_t area = 0;
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 3; ++j) {
                area += (spec.row_bounds[i + 1] - spec.row_bounds[i]) *
                        (spec.col_bounds[j + 1] - spec.col_bounds[j]);
            }
        }
        CHECK(area == 224u * 224u);
        CHECK(spec.masked_blocks[0] != spec.masked_blocks[1]);
    }
}

TEST_CASE("n=2 on a 2x2 image forces unit blocks") {
    RngStream rng(1);
    auto spec = mask::sample_partition(2, 2, 2, rng);
    CHECK(spec.row_bounds == std::vector<std::size_t>{0, 1, 2});
    CHECK(spec.col_bounds == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("image smaller than the grid is rejected") {
    RngStream rng(2);
    CHECK_THROWS_AS(mask::sample_partition(3, 2, 224, rng), std::invalid_argument);
    CHECK_THROWS_AS(mask::sample_partition(1, 8, 8, rng), std::invalid_argument);
}

TEST_CASE("identical seeds give identical specs") {
    auto a = mask::sample_partition(3, 64, 48, std::uint64_t{77});
    auto b = mask::sample_partition(3, 64, 48, std::uint64_t{77});
    CHECK(a.row_bounds == b.row_bounds);
    CHECK(a.col_bounds == b.col_bounds);
    CHECK(a.masked_blocks == b.masked_blocks);
    auto c = mask::sample_partition(3, 64, 48, std::uint64_t{78});
    const bool same = a.row_bounds == c.row_bounds && a.col_bounds == c.col_bounds &&
                      a.masked_blocks == c.masked_blocks;
    CHECK_FALSE(same);
}

TEST_CASE("prob=0 returns the input bit-identically") {
    RngStream rng(3);
    Tensor<float> delta({3, 9, 9});
    delta.fill_uniform(rng, -0.05f, 0.05f);
    auto spec = mask::sample_partition(3, 9, 9, rng);
    auto out = mask::apply_mask(delta, spec, 0.0, std::uint64_t{0});
    for (std::size_t i = 0; i < delta.size(); ++i) CHECK(out[i] == delta[i]);
}

TEST_CASE("prob=1 zeroes exactly the two masked blocks") {
    // Unit bounds on a 9x9 plane, masking blocks (0,0) and (2,2) of a 3x3 grid
    // whose blocks are 3x3 pixels each.
    mask::MaskSpec spec;
    spec.grid_n = 3;
    spec.row_bounds = {0, 3, 6, 9};
    spec.col_bounds = {0, 3, 6, 9};
    spec.masked_blocks = {{{0, 0}, {2, 2}}};

    Tensor<float> delta({1, 9, 9});
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = 1.0f + static_cast<float>(i);
    auto out = mask::apply_mask(delta, spec, 1.0, std::uint64_t{0});

    // Independent enumeration of which pixels the bounds cover.
    std::size_t zeroed = 0;
    for (std::size_t r = 0; r < 9; ++r) {
        for (std::size_t c = 0; c < 9; ++c) {
            const bool in00 = r < 3 && c < 3;
            const bool in22 = r >= 6 && c >= 6;
            if (in00 || in22) {
                CHECK(out.at3(0, r, c) == 0.0f);
                ++zeroed;
            } else {
                CHECK(out.at3(0, r, c) == delta.at3(0, r, c));
            }
        }
    }
    CHECK(zeroed == 18);
}

TEST_CASE("masking never increases the infinity norm") {
    RngStream rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor<float> delta({3, 16, 16});
        delta.fill_uniform(rng, -0.0627f, 0.0627f);
        auto spec = mask::sample_partition(3, 16, 16, rng);
        auto out = mask::apply_mask(delta, spec, 1.0, rng);
        CHECK(out.abs_max() <= delta.abs_max());
    }
}

TEST_CASE("mean masked-area fraction approaches 2/9 at n=3") {
    RngStream rng(5);
    double total_fraction = 0.0;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
        auto spec = mask::sample_partition(3, 224, 224, rng);
        std::size_t masked = 0;
        for (const auto& [bi, bj] : spec.masked_blocks) {
            masked += (spec.row_bounds[bi + 1] - spec.row_bounds[bi]) *
                      (spec.col_bounds[bj + 1] - spec.col_bounds[bj]);
        }
        total_fraction += static_cast<double>(masked) / (224.0 * 224.0);
    }
    const double mean = total_fraction / trials;
    CHECK(mean == doctest::Approx(2.0 / 9.0).epsilon(0.09));
}

TEST_CASE("dimension mismatch is rejected") {
    RngStream rng(6);
    Tensor<float> delta({3, 8, 8});
    auto spec = mask::sample_partition(2, 16, 16, rng);
    CHECK_THROWS_AS(mask::apply_mask(delta, spec, 1.0, rng), std::invalid_argument);
}
