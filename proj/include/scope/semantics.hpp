#pragma once

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scope/tensor.hpp"

namespace scope::semantics {

// ============================================================================
// Conditioning tokens. Row 0 is the CLS summary token; rows 1.. are patch
// tokens in row-major patch order. The cross-attention pathway consumes these
// as frozen constants.
// ============================================================================

struct SemanticEmbedding {
    int n_patches = 0;
    int dim = 0;
    int patch_rows = 0;
    int patch_cols = 0;
    std::string source;          // "toy" | "precomputed" | "constant"
    std::vector<float> tokens;   // (n_patches+1) x dim, row-major, CLS first

    int token_count() const { return n_patches + 1; }
    const float* row(int i) const { return tokens.data() + static_cast<size_t>(i) * dim; }
    const float* cls() const { return row(0); }

    template <class T>
    scope::nn::Tensor<T> as_tensor() const {
        auto t = scope::nn::Tensor<T>::zeros({token_count(), dim});
        for (size_t i = 0; i < tokens.size(); ++i) (*t.data)[i] = static_cast<T>(tokens[i]);
        return t;
    }

    void validate() const {
        if (n_patches != patch_rows * patch_cols)
            throw FormatError("embedding: patch count " + std::to_string(n_patches) +
                              " != grid " + std::to_string(patch_rows) + "x" + std::to_string(patch_cols));
        if (tokens.size() != static_cast<size_t>(token_count()) * dim)
            throw FormatError("embedding: token buffer size mismatch");
        for (float v : tokens)
            if (!std::isfinite(v)) throw DataError("embedding: non-finite token entry");
    }
};

inline void l2_normalize_rows(std::vector<float>& tokens, int rows, int dim) {
    for (int r = 0; r < rows; ++r) {
        float* p = tokens.data() + static_cast<size_t>(r) * dim;
        double norm = 0;
        for (int j = 0; j < dim; ++j) norm += static_cast<double>(p[j]) * p[j];
        norm = std::sqrt(norm);
        if (norm > 0)
            for (int j = 0; j < dim; ++j) p[j] = static_cast<float>(p[j] / norm);
    }
}

// ============================================================================
// Toy patch embedder: a deterministic, handcrafted stand-in for a frozen
// vision encoder. Per patch: color statistics, normal statistics, and a
// gradient-orientation histogram, linearly mapped to the token dim.
// ============================================================================

struct CropView {
    int height = 0, width = 0;
    const float* rgb = nullptr;      // HWC, 3 channels, [0,1]
    const float* normals = nullptr;  // HWC, 3 channels, camera frame
};

namespace detail {

inline constexpr int kDescriptorDim = 21;  // 3+3+3+3+8 statistics plus bias
inline constexpr int kOrientationBins = 8;

// Fixed projection from descriptor space to token space; a constant matrix
// seeded once so the embedder is a pure function of crop content.
inline const std::vector<float>& projection(int dim) {
    static std::vector<float> cache;
    static int cached_dim = -1;
    if (cached_dim != dim) {
        Rng rng(0x7a11b0a7);
        cache.resize(static_cast<size_t>(kDescriptorDim) * dim);
        for (auto& v : cache) v = static_cast<float>(rng.normal() / std::sqrt(kDescriptorDim));
        cached_dim = dim;
    }
    return cache;
}

}  // namespace detail

inline SemanticEmbedding toy_patch_embedder(const CropView& crop, int patch, int dim) {
    if (patch < 1 || crop.height % patch != 0 || crop.width % patch != 0)
        throw ConfigError("toy embedder: crop " + std::to_string(crop.height) + "x" +
                          std::to_string(crop.width) + " not divisible by patch " + std::to_string(patch));
    const int rows = crop.height / patch, cols = crop.width / patch;
    SemanticEmbedding emb;
    emb.n_patches = rows * cols;
    emb.dim = dim;
    emb.patch_rows = rows;
    emb.patch_cols = cols;
    emb.source = "toy";
    emb.tokens.assign(static_cast<size_t>(emb.token_count()) * dim, 0.0f);

    const auto& proj = detail::projection(dim);
    std::vector<double> desc(detail::kDescriptorDim);

    for (int pr = 0; pr < rows; ++pr) {
        for (int pc = 0; pc < cols; ++pc) {
            std::fill(desc.begin(), desc.end(), 0.0);
            const int n = patch * patch;
            // first and second color / normal moments
            double mean_rgb[3] = {0, 0, 0}, var_rgb[3] = {0, 0, 0};
            double mean_nrm[3] = {0, 0, 0}, var_nrm[3] = {0, 0, 0};
            for (int i = 0; i < patch; ++i) {
                for (int j = 0; j < patch; ++j) {
                    const int y = pr * patch + i, x = pc * patch + j;
                    const size_t idx = (static_cast<size_t>(y) * crop.width + x) * 3;
                    for (int c = 0; c < 3; ++c) {
                        mean_rgb[c] += crop.rgb[idx + c];
                        mean_nrm[c] += crop.normals[idx + c];
                    }
                }
            }
            for (int c = 0; c < 3; ++c) {
                mean_rgb[c] /= n;
                mean_nrm[c] /= n;
            }
            // orientation histogram of the intensity gradient, confined to
            // the patch so statistics depend on patch content alone
            double hist[detail::kOrientationBins] = {0};
            auto intensity = [&](int y, int x) {
                const size_t idx = (static_cast<size_t>(y) * crop.width + x) * 3;
                return (crop.rgb[idx] + crop.rgb[idx + 1] + crop.rgb[idx + 2]) / 3.0;
            };
            for (int i = 0; i < patch; ++i) {
                for (int j = 0; j < patch; ++j) {
                    const int y = pr * patch + i, x = pc * patch + j;
                    const size_t idx = (static_cast<size_t>(y) * crop.width + x) * 3;
                    for (int c = 0; c < 3; ++c) {
                        const double dr = crop.rgb[idx + c] - mean_rgb[c];
                        const double dn = crop.normals[idx + c] - mean_nrm[c];
                        var_rgb[c] += dr * dr;
                        var_nrm[c] += dn * dn;
                    }
                    const int y0 = std::max(pr * patch, y - 1), y1 = std::min((pr + 1) * patch - 1, y + 1);
                    const int x0 = std::max(pc * patch, x - 1), x1 = std::min((pc + 1) * patch - 1, x + 1);
                    const double gy = intensity(y1, x) - intensity(y0, x);
                    const double gx = intensity(y, x1) - intensity(y, x0);
                    const double mag = std::sqrt(gx * gx + gy * gy);
                    if (mag > 1e-12) {
                        double angle = std::atan2(gy, gx);  // [-pi, pi]
                        int bin = static_cast<int>((angle + 3.14159265358979323846) /
                                                   (2 * 3.14159265358979323846) * detail::kOrientationBins);
                        bin = std::clamp(bin, 0, detail::kOrientationBins - 1);
                        hist[bin] += mag;
                    }
                }
            }
            int d = 0;
            for (int c = 0; c < 3; ++c) desc[d++] = mean_rgb[c];
            for (int c = 0; c < 3; ++c) desc[d++] = var_rgb[c] / n;
            for (int c = 0; c < 3; ++c) desc[d++] = mean_nrm[c];
            for (int c = 0; c < 3; ++c) desc[d++] = var_nrm[c] / n;
            for (int b = 0; b < detail::kOrientationBins; ++b) desc[d++] = hist[b] / n;
            desc[d++] = 1.0;  // bias term keeps tokens off the zero vector

            float* token = emb.tokens.data() + static_cast<size_t>(1 + pr * cols + pc) * dim;
            for (int k = 0; k < dim; ++k) {
                double acc = 0;
                for (int q = 0; q < detail::kDescriptorDim; ++q)
                    acc += desc[static_cast<size_t>(q)] * proj[static_cast<size_t>(q) * dim + k];
                token[k] = static_cast<float>(acc);
            }
        }
    }
    l2_normalize_rows(emb.tokens, emb.token_count(), dim);

    // CLS: normalized mean of the patch tokens
    float* cls = emb.tokens.data();
    for (int p = 1; p < emb.token_count(); ++p)
        for (int k = 0; k < dim; ++k) cls[k] += emb.row(p)[k];
    for (int k = 0; k < dim; ++k) cls[k] /= emb.n_patches;
    l2_normalize_rows(emb.tokens, 1, dim);
    emb.validate();
    return emb;
}

// Constant conditioning tokens (ablation baseline).
inline SemanticEmbedding constant_embedding(int patch_rows, int patch_cols, int dim) {
    SemanticEmbedding emb;
    emb.n_patches = patch_rows * patch_cols;
    emb.dim = dim;
    emb.patch_rows = patch_rows;
    emb.patch_cols = patch_cols;
    emb.source = "constant";
    emb.tokens.assign(static_cast<size_t>(emb.token_count()) * dim,
                      1.0f / std::sqrt(static_cast<float>(dim)));
    emb.validate();
    return emb;
}

// ============================================================================
// Embedding container: one JSON header line, then a little-endian float32
// payload of token_count x dim values, row-major, CLS first.
// ============================================================================

namespace fs = std::filesystem;

inline void save_embedding(const fs::path& path, const SemanticEmbedding& emb) {
    emb.validate();
    nlohmann::json header{{"token_count", emb.token_count()},
                          {"dim", emb.dim},
                          {"normalized", true},
                          {"patch_rows", emb.patch_rows},
                          {"patch_cols", emb.patch_cols}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write embedding file: " + path.string());
    out << header.dump() << "\n";
    out.write(reinterpret_cast<const char*>(emb.tokens.data()),
              static_cast<std::streamsize>(emb.tokens.size() * sizeof(float)));
    if (!out) throw DataError("short write: " + path.string());
}

inline SemanticEmbedding load_embedding(const fs::path& path, int expected_dim) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open embedding file: " + path.string());
    std::string header_line;
    if (!std::getline(in, header_line)) throw FormatError("embedding file missing header: " + path.string());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("embedding header is not valid JSON: " + std::string(e.what()));
    }
    SemanticEmbedding emb;
    const int token_count = header.at("token_count").get<int>();
    emb.dim = header.at("dim").get<int>();
    emb.patch_rows = header.at("patch_rows").get<int>();
    emb.patch_cols = header.at("patch_cols").get<int>();
    emb.n_patches = token_count - 1;
    emb.source = "precomputed";
    if (token_count < 1 || emb.dim < 1)
        throw FormatError("embedding header declares empty token matrix");
    if (emb.dim != expected_dim)
        throw ConfigError("embedding dim " + std::to_string(emb.dim) + " does not match configured dim " +
                          std::to_string(expected_dim));
    emb.tokens.resize(static_cast<size_t>(token_count) * emb.dim);
    in.read(reinterpret_cast<char*>(emb.tokens.data()),
            static_cast<std::streamsize>(emb.tokens.size() * sizeof(float)));
    if (static_cast<size_t>(in.gcount()) != emb.tokens.size() * sizeof(float))
        throw FormatError("embedding file declares " + std::to_string(token_count) + " tokens but payload holds " +
                          std::to_string(in.gcount() / (emb.dim * sizeof(float))) + " rows");
    char extra;
    if (in.read(&extra, 1))
        throw FormatError("embedding file has trailing bytes beyond declared payload");
    if (!header.value("normalized", false)) l2_normalize_rows(emb.tokens, token_count, emb.dim);
    emb.validate();
    return emb;
}

// Cosine distance between CLS tokens: 1 - cos in [0, 2].
inline double embedding_distance(const SemanticEmbedding& a, const SemanticEmbedding& b) {
    if (a.dim != b.dim)
        throw ShapeError("embedding_distance: dim mismatch " + std::to_string(a.dim) + " vs " +
                         std::to_string(b.dim));
    double dot = 0, na = 0, nb = 0;
    for (int i = 0; i < a.dim; ++i) {
        dot += static_cast<double>(a.cls()[i]) * b.cls()[i];
        na += static_cast<double>(a.cls()[i]) * a.cls()[i];
        nb += static_cast<double>(b.cls()[i]) * b.cls()[i];
    }
    if (na <= 0 || nb <= 0) throw DataError("embedding_distance: zero CLS token");
    return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace scope::semantics
