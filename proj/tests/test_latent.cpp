#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tgaf/errors.hpp"
#include "tgaf/generator.hpp"
#include "tgaf/latent.hpp"

using namespace tgaf;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto dir = fs::temp_directory_path() / "tgaf_latent_test";
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("pseudo latent is deterministic in (class_id, seed)") {
    latent::TargetClass cls{7, "a barometer"};
    auto a = latent::make_pseudo_latent(cls, 0);
    auto b = latent::make_pseudo_latent(cls, 0);
    REQUIRE(a.data.size() == b.data.size());
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
    CHECK(a.provenance == latent::Provenance::kPseudo);
}

TEST_CASE("pseudo latent shape is 4x64x64") {
    auto l = latent::make_pseudo_latent({3, "fig"}, 1);
    CHECK(l.data.shape() == std::vector<std::size_t>{4, 64, 64});
    CHECK(l.data.all_finite());
}

TEST_CASE("different class ids give different latents") {
    auto a = latent::make_pseudo_latent({7, ""}, 0);
    auto b = latent::make_pseudo_latent({8, ""}, 0);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        if (a.data[i] != b.data[i]) {
            any_diff = true;
            break;
        }
    }
    CHECK(any_diff);
}

TEST_CASE("different seeds give different latents") {
    auto a = latent::make_pseudo_latent({7, ""}, 0);
    auto b = latent::make_pseudo_latent({7, ""}, 1);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        if (a.data[i] != b.data[i]) {
            any_diff = true;
            break;
        }
    }
    CHECK(any_diff);
}

TEST_CASE("export/import round-trips bit-exactly") {
    auto dir = temp_dir();
    auto l = latent::make_pseudo_latent({12, "sea lion"}, 5);
    const auto path = dir / "12.lat";
    latent::export_latent(l, path);
    auto back = latent::import_latent(path);
    CHECK(back.class_id == 12);
    CHECK(back.provenance == latent::Provenance::kImported);
    REQUIRE(back.data.shape() == l.data.shape());
    for (std::size_t i = 0; i < l.data.size(); ++i) CHECK(back.data[i] == l.data[i]);
}

TEST_CASE("two exports of the same latent are byte-identical") {
    auto dir = temp_dir();
    auto l = latent::make_pseudo_latent({4, ""}, 9);
    latent::export_latent(l, dir / "a.lat");
    latent::export_latent(l, dir / "b.lat");
    std::ifstream fa(dir / "a.lat", std::ios::binary);
    std::ifstream fb(dir / "b.lat", std::ios::binary);
    std::string da((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string db((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(da == db);
}

TEST_CASE("import errors are reported distinctly") {
    auto dir = temp_dir();

    SUBCASE("missing file") {
        CHECK_THROWS_WITH_AS(latent::import_latent(dir / "nope.lat"),
                             doctest::Contains("no such file"), DataError);
    }

    SUBCASE("bad magic") {
        const auto path = dir / "bad.lat";
        std::ofstream(path, std::ios::binary) << "NOTALATENTFILE____________";
        CHECK_THROWS_WITH_AS(latent::import_latent(path), doctest::Contains("bad magic"),
                             DataError);
    }

    SUBCASE("wrong shape header") {
        // Forge a 4x32x32 header.
        const auto path = dir / "shape.lat";
        auto l = latent::make_pseudo_latent({1, ""}, 0);
        latent::export_latent(l, path);
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(16);
        const unsigned char dims[8] = {32, 0, 0, 0, 32, 0, 0, 0};
        f.write(reinterpret_cast<const char*>(dims), 8);
        f.close();
        CHECK_THROWS_WITH_AS(latent::import_latent(path), doctest::Contains("shape mismatch"),
                             DataError);
    }

    SUBCASE("truncated payload") {
        const auto path = dir / "trunc.lat";
        auto l = latent::make_pseudo_latent({1, ""}, 0);
        latent::export_latent(l, path);
        fs::resize_file(path, 200);
        CHECK_THROWS_WITH_AS(latent::import_latent(path), doctest::Contains("truncated"),
                             DataError);
    }

    SUBCASE("class id mismatch") {
        const auto path = dir / "cls.lat";
        latent::export_latent(latent::make_pseudo_latent({3, ""}, 0), path);
        CHECK_THROWS_AS(latent::import_latent(path, 4), DataError);
    }
}

TEST_CASE("export to unwritable location fails") {
    auto l = latent::make_pseudo_latent({1, ""}, 0);
    CHECK_THROWS_AS(latent::export_latent(l, "/nonexistent-dir/x.lat"), DataError);
}

TEST_CASE("latent cache loads a directory and reports missing classes") {
    auto dir = temp_dir() / "cache";
    fs::create_directories(dir);
    for (int id : {2, 5, 9}) {
        latent::export_latent(latent::make_pseudo_latent({id, ""}, 0),
                              dir / (std::to_string(id) + ".lat"));
    }
    auto cache = latent::LatentCache::load_dir(dir);
    CHECK(cache.size() == 3);
    CHECK(cache.contains(5));
    CHECK_FALSE(cache.contains(6));
    CHECK(cache.get(2).class_id == 2);
    CHECK_THROWS_AS(cache.get(6), DataError);
    CHECK(cache.class_ids() == std::vector<int>{2, 5, 9});
}

TEST_CASE("projection with identity conv preserves constants at any size") {
    RngStream rng(1);
    gen::GeneratorConfig cfg;
    cfg.base_channels = 8;
    cfg.in_channels = 3;
    cfg.height = 32;
    cfg.width = 32;
    gen::Generator<double> g(cfg, rng);

    // Identity 3x3 conv on 4 channels: center tap 1 on the diagonal.
    auto params = g.param_refs();
    for (auto& p : params) {
        if (p.name == "projector.conv.weight") {
            p.value->fill(0.0);
            for (std::size_t c = 0; c < 4; ++c) (*p.value)[((c * 4 + c) * 3 + 1) * 3 + 1] = 1.0;
        }
        if (p.name == "projector.conv.bias") p.value->fill(0.0);
    }

    Tensor<double> latent_t({4, 64, 64});
    latent_t.fill(0.37);
    for (std::size_t th : {1ul, 3ul, 8ul, 64ul}) {
        Tensor<double> z = g.project_latent(latent_t, th, th);
        CHECK(z.shape() == std::vector<std::size_t>{4, th, th});
        for (std::size_t i = 0; i < z.size(); ++i) {
            CHECK(z[i] == doctest::Approx(0.37).epsilon(1e-12));
        }
    }
}

TEST_CASE("projection at 64x64 with identity conv is the identity") {
    RngStream rng(2);
    gen::GeneratorConfig cfg;
    cfg.base_channels = 8;
    cfg.height = 256;
    cfg.width = 256;
    gen::Generator<double> g(cfg, rng);
    auto params = g.param_refs();
    for (auto& p : params) {
        if (p.name == "projector.conv.weight") {
            p.value->fill(0.0);
            for (std::size_t c = 0; c < 4; ++c) (*p.value)[((c * 4 + c) * 3 + 1) * 3 + 1] = 1.0;
        }
        if (p.name == "projector.conv.bias") p.value->fill(0.0);
    }
    Tensor<double> latent_t({4, 64, 64});
    latent_t.fill_normal(rng);
    Tensor<double> z = g.project_latent(latent_t, 64, 64);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == doctest::Approx(latent_t[i]));
}

TEST_CASE("projection to 56x56 gives 4x56x56") {
    RngStream rng(3);
    gen::GeneratorConfig cfg;
    cfg.base_channels = 8;
    cfg.height = 224;
    cfg.width = 224;
    gen::Generator<double> g(cfg, rng);
    Tensor<double> latent_t({4, 64, 64});
    latent_t.fill_normal(rng);
    Tensor<double> z = g.project_latent(latent_t, 56, 56);
    CHECK(z.shape() == std::vector<std::size_t>{4, 56, 56});
}

TEST_CASE("classes file parsing") {
    auto dir = temp_dir();
    const auto path = dir / "classes.txt";
    std::ofstream(path) << "# target classes\n"
                           "24 a photo of a great grey owl\n"
                           "99 goose\n"
                           "\n"
                           "245 french bulldog # inline comment\n";
    auto classes = latent::parse_classes_file(path);
    REQUIRE(classes.size() == 3);
    CHECK(classes[0].class_id == 24);
    CHECK(classes[0].prompt == "a photo of a great grey owl");
    CHECK(classes[2].class_id == 245);
    CHECK(classes[2].prompt == "french bulldog");

    std::ofstream(path, std::ios::app) << "24 duplicate\n";
    CHECK_THROWS_AS(latent::parse_classes_file(path), DataError);
}
