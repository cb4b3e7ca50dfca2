#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "scope/tensor.hpp"

namespace scope::nn {

// Weight checkpoint: a directory holding manifest.json plus one little-endian
// float32 binary blob per named tensor, row-major.

namespace fs = std::filesystem;

inline void write_f32_blob(const fs::path& path, const std::vector<float>& values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open blob for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!out) throw DataError("short write: " + path.string());
}

inline std::vector<float> read_f32_blob(const fs::path& path, size_t expected) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw DataError("cannot open blob: " + path.string());
    const auto bytes = static_cast<size_t>(in.tellg());
    if (bytes != expected * sizeof(float))
        throw DataError("blob " + path.string() + " holds " + std::to_string(bytes / sizeof(float)) +
                        " floats, expected " + std::to_string(expected));
    std::vector<float> values(expected);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw DataError("short read: " + path.string());
    return values;
}

struct NamedBlob {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;
};

inline void save_checkpoint(const fs::path& dir, const std::vector<NamedBlob>& blobs,
                            const nlohmann::json& meta = {}) {
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = "scope-checkpoint";
    manifest["version"] = kVersion;
    manifest["meta"] = meta;
    auto& tensors = manifest["tensors"] = nlohmann::json::array();
    int idx = 0;
    for (const auto& blob : blobs) {
        const std::string file = "t" + std::to_string(idx++) + ".bin";
        tensors.push_back({{"name", blob.name}, {"shape", blob.shape}, {"file", file}});
        write_f32_blob(dir / file, blob.values);
    }
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << "\n";
    if (!out) throw DataError("cannot write manifest: " + (dir / "manifest.json").string());
}

struct Checkpoint {
    std::vector<NamedBlob> blobs;
    nlohmann::json meta;

    const NamedBlob* find(const std::string& name) const {
        for (const auto& b : blobs)
            if (b.name == name) return &b;
        return nullptr;
    }
};

inline Checkpoint load_checkpoint(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DataError("cannot open checkpoint manifest: " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed checkpoint manifest: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "scope-checkpoint")
        throw FormatError("not a scope checkpoint: " + dir.string());
    Checkpoint ckpt;
    ckpt.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& entry : manifest.at("tensors")) {
        NamedBlob blob;
        blob.name = entry.at("name").get<std::string>();
        blob.shape = entry.at("shape").get<std::vector<int>>();
        size_t n = 1;
        for (int d : blob.shape) n *= static_cast<size_t>(d);
        blob.values = read_f32_blob(dir / entry.at("file").get<std::string>(), n);
        ckpt.blobs.push_back(std::move(blob));
    }
    return ckpt;
}

// --------------- model parameter <-> blob adapters ---------------

template <class T>
std::vector<NamedBlob> blobs_from_params(ParamList<T> params) {
    std::vector<NamedBlob> out;
    for (auto& p : params) {
        NamedBlob blob;
        blob.name = p.name;
        blob.shape = p.tensor->shape;
        blob.values.resize(p.tensor->numel());
        for (size_t i = 0; i < blob.values.size(); ++i)
            blob.values[i] = static_cast<float>((*p.tensor->data)[i]);
        out.push_back(std::move(blob));
    }
    return out;
}

template <class T>
void load_params_from_checkpoint(ParamList<T> params, const Checkpoint& ckpt) {
    for (auto& p : params) {
        const NamedBlob* blob = ckpt.find(p.name);
        if (!blob) throw DataError("checkpoint missing tensor '" + p.name + "'");
        if (blob->shape != p.tensor->shape)
            throw ShapeError("checkpoint tensor '" + p.name + "' has shape " + shape_str(blob->shape) +
                             ", model expects " + shape_str(p.tensor->shape));
        for (size_t i = 0; i < blob->values.size(); ++i)
            (*p.tensor->data)[i] = static_cast<T>(blob->values[i]);
    }
}

}  // namespace scope::nn
