#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "scope/semantics.hpp"

using scope::Rng;
namespace sem = scope::semantics;
namespace fs = std::filesystem;

namespace {

struct OwnedCrop {
    int h, w;
    std::vector<float> rgb, normals;
    sem::CropView view() const { return {h, w, rgb.data(), normals.data()}; }
};

OwnedCrop uniform_crop(int h, int w, float r, float g, float b) {
    OwnedCrop c{h, w, {}, {}};
    c.rgb.resize(static_cast<size_t>(h) * w * 3);
    c.normals.resize(static_cast<size_t>(h) * w * 3);
    for (int i = 0; i < h * w; ++i) {
        c.rgb[i * 3 + 0] = r;
        c.rgb[i * 3 + 1] = g;
        c.rgb[i * 3 + 2] = b;
        c.normals[i * 3 + 2] = -1.0f;  // flat, facing the camera
    }
    return c;
}

fs::path temp_dir() {
    auto dir = fs::temp_directory_path() / "scope_semantics_test";
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("uniform crop yields identical patch tokens and CLS equals any patch token") {
    auto crop = uniform_crop(16, 16, 0.4f, 0.5f, 0.6f);
    auto emb = sem::toy_patch_embedder(crop.view(), 4, 32);
    CHECK(emb.n_patches == 16);
    CHECK(emb.patch_rows == 4);
    for (int p = 2; p <= emb.n_patches; ++p)
        for (int k = 0; k < emb.dim; ++k)
            CHECK(emb.row(p)[k] == doctest::Approx(emb.row(1)[k]).epsilon(1e-7));
    for (int k = 0; k < emb.dim; ++k)
        CHECK(emb.cls()[k] == doctest::Approx(emb.row(1)[k]).epsilon(1e-5));
}

TEST_CASE("token rows are unit length") {
    Rng rng(5);
    OwnedCrop crop{16, 16, {}, {}};
    crop.rgb.resize(16 * 16 * 3);
    crop.normals.resize(16 * 16 * 3);
    for (auto& v : crop.rgb) v = static_cast<float>(rng.uniform());
    for (auto& v : crop.normals) v = static_cast<float>(rng.uniform(-1, 1));
    auto emb = sem::toy_patch_embedder(crop.view(), 4, 24);
    for (int p = 0; p < emb.token_count(); ++p) {
        double norm = 0;
        for (int k = 0; k < emb.dim; ++k) norm += static_cast<double>(emb.row(p)[k]) * emb.row(p)[k];
        CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-6);
    }
}

TEST_CASE("embedder is deterministic") {
    auto crop = uniform_crop(8, 8, 0.2f, 0.3f, 0.1f);
    crop.rgb[5 * 3] = 0.9f;
    auto a = sem::toy_patch_embedder(crop.view(), 4, 16);
    auto b = sem::toy_patch_embedder(crop.view(), 4, 16);
    CHECK(a.tokens == b.tokens);
}

TEST_CASE("patch permutation permutes tokens and leaves CLS unchanged") {
    Rng rng(9);
    OwnedCrop crop{8, 8, {}, {}};
    crop.rgb.resize(8 * 8 * 3);
    crop.normals.resize(8 * 8 * 3);
    for (auto& v : crop.rgb) v = static_cast<float>(rng.uniform());
    for (auto& v : crop.normals) v = static_cast<float>(rng.uniform(-1, 1));

    // swap the two 4x4 patches of the top row (patch grid is 2x2)
    OwnedCrop swapped = crop;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            for (int c = 0; c < 3; ++c) {
                std::swap(swapped.rgb[(i * 8 + j) * 3 + c], swapped.rgb[(i * 8 + j + 4) * 3 + c]);
                std::swap(swapped.normals[(i * 8 + j) * 3 + c], swapped.normals[(i * 8 + j + 4) * 3 + c]);
            }

    auto a = sem::toy_patch_embedder(crop.view(), 4, 16);
    auto b = sem::toy_patch_embedder(swapped.view(), 4, 16);
    for (int k = 0; k < 16; ++k) {
        CHECK(b.row(1)[k] == doctest::Approx(a.row(2)[k]).epsilon(1e-7));
        CHECK(b.row(2)[k] == doctest::Approx(a.row(1)[k]).epsilon(1e-7));
        CHECK(b.row(3)[k] == doctest::Approx(a.row(3)[k]).epsilon(1e-7));
        CHECK(b.cls()[k] == doctest::Approx(a.cls()[k]).epsilon(1e-6));
    }
}

TEST_CASE("descriptor statistics match a hand-computed per-patch oracle") {
    // 2x2 patch grid over a 4x4 crop with known block statistics
    OwnedCrop crop{4, 4, {}, {}};
    crop.rgb.assign(4 * 4 * 3, 0.0f);
    crop.normals.assign(4 * 4 * 3, 0.0f);
    // top-left patch: constant red 0.8; top-right: red alternating 0.2/0.6
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            crop.rgb[(i * 4 + j) * 3 + 0] = 0.8f;
            crop.rgb[(i * 4 + j + 2) * 3 + 0] = ((i + j) % 2 == 0) ? 0.2f : 0.6f;
            crop.normals[(i * 4 + j) * 3 + 2] = -1.0f;
        }
    auto emb = sem::toy_patch_embedder(crop.view(), 2, 21);

    // oracle: patch(0,0) descriptor = [0.8,0,0, 0,0,0, 0,0,-1, 0,0,0, hist..., 1]
    // project and normalize by hand with the same fixed projection
    const auto& proj = sem::detail::projection(21);
    std::vector<double> desc(21, 0.0);
    desc[0] = 0.8;
    desc[8] = -1.0;
    desc[20] = 1.0;
    std::vector<double> tok(21, 0.0);
    double norm = 0;
    for (int k = 0; k < 21; ++k) {
        for (int q = 0; q < 21; ++q) tok[k] += desc[q] * proj[q * 21 + k];
        norm += tok[k] * tok[k];
    }
    norm = std::sqrt(norm);
    for (int k = 0; k < 21; ++k)
        CHECK(emb.row(1)[k] == doctest::Approx(tok[k] / norm).epsilon(1e-5));

    // top-right patch variance: mean 0.4, deviations +/-0.2 -> var 0.04
    // (verifies the second-moment path through a distinct token)
    double diff = 0;
    for (int k = 0; k < 21; ++k) diff += std::abs(emb.row(2)[k] - emb.row(1)[k]);
    CHECK(diff > 1e-3);
}

TEST_CASE("indivisible patch grid is rejected") {
    auto crop = uniform_crop(10, 10, 0.5f, 0.5f, 0.5f);
    CHECK_THROWS_AS(sem::toy_patch_embedder(crop.view(), 4, 16), scope::ConfigError);
}

TEST_CASE("embedding file round trip is bit-identical") {
    Rng rng(17);
    OwnedCrop crop{8, 8, {}, {}};
    crop.rgb.resize(8 * 8 * 3);
    crop.normals.resize(8 * 8 * 3);
    for (auto& v : crop.rgb) v = static_cast<float>(rng.uniform());
    for (auto& v : crop.normals) v = static_cast<float>(rng.uniform(-1, 1));
    auto emb = sem::toy_patch_embedder(crop.view(), 2, 32);

    auto path = temp_dir() / "roundtrip.semb";
    sem::save_embedding(path, emb);
    auto loaded = sem::load_embedding(path, 32);
    CHECK(loaded.tokens == emb.tokens);
    CHECK(loaded.n_patches == emb.n_patches);
    CHECK(loaded.patch_rows == emb.patch_rows);
    CHECK(loaded.source == "precomputed");
}

TEST_CASE("corrupt token count raises a format error") {
    auto crop = uniform_crop(8, 8, 0.1f, 0.2f, 0.3f);
    auto emb = sem::toy_patch_embedder(crop.view(), 4, 16);
    auto path = temp_dir() / "truncated.semb";
    sem::save_embedding(path, emb);
    // truncate one row from the payload
    auto bytes = fs::file_size(path);
    fs::resize_file(path, bytes - 16 * sizeof(float));
    CHECK_THROWS_AS(sem::load_embedding(path, 16), scope::FormatError);
}

TEST_CASE("dim mismatch with model config fails before any network call") {
    auto crop = uniform_crop(8, 8, 0.1f, 0.2f, 0.3f);
    auto emb = sem::toy_patch_embedder(crop.view(), 4, 16);
    auto path = temp_dir() / "dim.semb";
    sem::save_embedding(path, emb);
    CHECK_THROWS_AS(sem::load_embedding(path, 32), scope::ConfigError);
}

TEST_CASE("embedding distance identities") {
    auto crop = uniform_crop(8, 8, 0.3f, 0.6f, 0.2f);
    auto a = sem::toy_patch_embedder(crop.view(), 4, 16);
    CHECK(sem::embedding_distance(a, a) == doctest::Approx(0.0).epsilon(1e-12));

    auto b = a;
    for (int k = 0; k < b.dim; ++k) b.tokens[k] = -b.tokens[k];  // negate CLS
    CHECK(sem::embedding_distance(a, b) == doctest::Approx(2.0).epsilon(1e-12));

    auto c = a;
    c.dim = 8;
    c.tokens.resize(static_cast<size_t>(c.token_count()) * 8);
    CHECK_THROWS_AS(sem::embedding_distance(a, c), scope::ShapeError);
}

TEST_CASE("constant embedding rows are uniform and unit length") {
    auto emb = sem::constant_embedding(4, 4, 16);
    CHECK(emb.token_count() == 17);
    double norm = 0;
    for (int k = 0; k < 16; ++k) norm += static_cast<double>(emb.cls()[k]) * emb.cls()[k];
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-6);
}
