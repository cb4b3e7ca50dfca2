#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scope/scenegen.hpp"

namespace scope::scenegen {

namespace fs = std::filesystem;

// ============================================================================
// Scene assembly
// ============================================================================

struct DatagenConfig {
    uint64_t seed = 1;
    int scenes = 100;
    int resolution = 32;
    int min_objects = 1;
    int max_objects = 3;
    double min_visibility = 0.5;
    std::vector<std::string> category_set = categories();
};

struct SceneRecord {
    int scene_id = 0;
    std::vector<PlacedObject> objects;
    std::vector<InputCrop> crops;  // post visibility filtering
};

// One scene: several objects in a shared camera frame, one fitted crop
// camera per object, every other object acting as a potential occluder.
inline SceneRecord generate_scene(const DatagenConfig& cfg, int scene_id) {
    Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(scene_id), 0xe5cead));
    SceneRecord record;
    record.scene_id = scene_id;

    const int n_objects =
        cfg.min_objects + static_cast<int>(rng.uniform_index(
                              static_cast<uint64_t>(cfg.max_objects - cfg.min_objects + 1)));
    for (int i = 0; i < n_objects; ++i) {
        PlacedObject obj;
        const auto& cat = cfg.category_set[rng.uniform_index(cfg.category_set.size())];
        obj.shape = sample_shape(cat, rng);
        obj.pose.rotation = geo::random_rotation(rng);
        const double tz = rng.uniform(0.8, 1.3);
        obj.pose.translation = {rng.uniform(-0.18, 0.18) * tz, rng.uniform(-0.18, 0.18) * tz, tz};
        obj.pose.scale = rng.uniform(0.8, 1.2);
        obj.base_color = detail::category_color(cat, rng);
        record.objects.push_back(obj);
    }

    for (int i = 0; i < n_objects; ++i) {
        const PlacedObject& target = record.objects[static_cast<size_t>(i)];
        const Vec3 center = target.pose.apply(target.shape.box_center());
        const double bound_radius = 0.5 * target.pose.scale * target.shape.nocs_diag();
        const double margin = rng.uniform(1.15, 1.5);
        const double f = cfg.resolution * center[2] / (2.0 * margin * bound_radius);
        const double jitter_u = rng.uniform(-0.06, 0.06) * cfg.resolution;
        const double jitter_v = rng.uniform(-0.06, 0.06) * cfg.resolution;
        const double cx = cfg.resolution / 2.0 + jitter_u - f * center[0] / center[2];
        const double cy = cfg.resolution / 2.0 + jitter_v - f * center[1] / center[2];
        const std::array<double, 9> intrinsics{f, 0, cx, 0, f, cy, 0, 0, 1};

        std::vector<PlacedObject> occluders;
        for (int j = 0; j < n_objects; ++j)
            if (j != i) occluders.push_back(record.objects[static_cast<size_t>(j)]);

        InputCrop crop = render_crop(target, occluders, intrinsics, cfg.resolution);
        crop.normals = depth_to_normals(crop.depth, crop.height, crop.width, crop.intrinsics);
        crop.scene_id = scene_id;
        crop.id = "s" + std::to_string(scene_id) + "_o" + std::to_string(i);
        record.crops.push_back(std::move(crop));
    }
    record.crops = visibility_filter(std::move(record.crops));
    return record;
}

inline std::vector<SceneRecord> generate_scenes(const DatagenConfig& cfg) {
    std::vector<SceneRecord> records;
    records.reserve(static_cast<size_t>(cfg.scenes));
    for (int s = 0; s < cfg.scenes; ++s) records.push_back(generate_scene(cfg, s));
    return records;
}

// ============================================================================
// Dataset container: manifest.json plus one binary blob per sample holding
// rgb (u8), depth (f32), normals (f32), nocs (f32), mask (u8),
// pose (f32, 9 R row-major + 3 t + 1 s), intrinsics (f32, 9); all
// little-endian, row-major, offsets and checksums recorded in the manifest.
// ============================================================================

namespace detail {

struct ArraySpec {
    std::string name;
    const void* data;
    size_t bytes;
    std::string dtype;
    std::vector<int> shape;
};

inline nlohmann::json shape_to_json(const ShapeInstance& s) {
    return {{"category", s.category},
            {"params", s.params},
            {"box_min", s.box_min.v},
            {"box_max", s.box_max.v},
            {"symmetry", s.symmetry}};
}

inline ShapeInstance shape_from_json(const nlohmann::json& j) {
    ShapeInstance s;
    s.category = j.at("category").get<std::string>();
    s.params = j.at("params").get<std::array<double, 3>>();
    s.box_min.v = j.at("box_min").get<std::array<double, 3>>();
    s.box_max.v = j.at("box_max").get<std::array<double, 3>>();
    s.symmetry = j.at("symmetry").get<std::string>();
    return s;
}

}  // namespace detail

inline void write_dataset(const std::vector<SceneRecord>& records, const fs::path& dir,
                          const DatagenConfig& cfg, const std::string& split) {
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = "scope-dataset";
    manifest["version"] = kVersion;
    manifest["generator_version"] = kVersion;
    manifest["seed"] = cfg.seed;
    manifest["split"] = split;
    manifest["resolution"] = cfg.resolution;
    manifest["categories"] = cfg.category_set;
    {
        // per-scene generator streams; split disjointness is checkable here
        std::vector<uint64_t> scene_seeds;
        for (const auto& record : records)
            scene_seeds.push_back(derive_seed(cfg.seed, static_cast<uint64_t>(record.scene_id), 0xe5cead));
        manifest["scene_seeds"] = scene_seeds;
    }
    auto& samples = manifest["samples"] = nlohmann::json::array();

    for (const auto& record : records) {
        for (const auto& crop : record.crops) {
            std::vector<uint8_t> rgb_u8(crop.pixel_count() * 3);
            for (size_t i = 0; i < rgb_u8.size(); ++i)
                rgb_u8[i] = static_cast<uint8_t>(std::lround(crop.rgb[i] * 255.0f));
            std::vector<float> pose_f32(13);
            for (int i = 0; i < 9; ++i) pose_f32[static_cast<size_t>(i)] =
                static_cast<float>(crop.gt_pose.rotation.m[static_cast<size_t>(i)]);
            for (int i = 0; i < 3; ++i) pose_f32[static_cast<size_t>(9 + i)] =
                static_cast<float>(crop.gt_pose.translation[static_cast<size_t>(i)]);
            pose_f32[12] = static_cast<float>(crop.gt_pose.scale);
            std::vector<float> intr_f32(9);
            for (int i = 0; i < 9; ++i) intr_f32[static_cast<size_t>(i)] =
                static_cast<float>(crop.intrinsics[static_cast<size_t>(i)]);

            const int h = crop.height, w = crop.width;
            const std::vector<detail::ArraySpec> arrays{
                {"rgb", rgb_u8.data(), rgb_u8.size(), "u8", {h, w, 3}},
                {"depth", crop.depth.data(), crop.depth.size() * 4, "f32", {h, w}},
                {"normals", crop.normals.data(), crop.normals.size() * 4, "f32", {h, w, 3}},
                {"nocs", crop.nocs.data(), crop.nocs.size() * 4, "f32", {h, w, 3}},
                {"mask", crop.mask.data(), crop.mask.size(), "u8", {h, w}},
                {"pose", pose_f32.data(), pose_f32.size() * 4, "f32", {13}},
                {"intrinsics", intr_f32.data(), intr_f32.size() * 4, "f32", {9}},
            };

            const std::string file = crop.id + ".bin";
            std::ofstream blob(dir / file, std::ios::binary);
            if (!blob) throw DataError("cannot write sample blob: " + (dir / file).string());
            nlohmann::json sample;
            sample["id"] = crop.id;
            sample["file"] = file;
            sample["scene"] = crop.scene_id;
            sample["category"] = crop.category;
            sample["symmetry"] = crop.symmetry;
            sample["visibility"] = crop.visibility;
            sample["shape"] = detail::shape_to_json(crop.shape);
            size_t offset = 0;
            for (const auto& arr : arrays) {
                blob.write(static_cast<const char*>(arr.data), static_cast<std::streamsize>(arr.bytes));
                sample["arrays"][arr.name] = {{"dtype", arr.dtype},
                                              {"shape", arr.shape},
                                              {"offset", offset},
                                              {"bytes", arr.bytes},
                                              {"crc32", crc32(arr.data, arr.bytes)}};
                offset += arr.bytes;
            }
            if (!blob) throw DataError("short write on sample blob: " + (dir / file).string());
            samples.push_back(std::move(sample));
        }
    }
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(1) << "\n";
    if (!out) throw DataError("cannot write dataset manifest");
}

inline std::vector<InputCrop> read_dataset(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DataError("cannot open dataset manifest: " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed dataset manifest: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "scope-dataset")
        throw FormatError("not a scope dataset: " + dir.string());

    std::vector<InputCrop> crops;
    for (const auto& sample : manifest.at("samples")) {
        const std::string id = sample.at("id").get<std::string>();
        const fs::path file = dir / sample.at("file").get<std::string>();
        std::ifstream blob(file, std::ios::binary);
        if (!blob) throw DataError("sample " + id + ": missing blob " + file.string());
        std::vector<char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());

        auto read_array = [&](const std::string& name) {
            const auto& spec = sample.at("arrays").at(name);
            const size_t offset = spec.at("offset").get<size_t>();
            const size_t nbytes = spec.at("bytes").get<size_t>();
            if (offset + nbytes > bytes.size())
                throw DataError("sample " + id + ": array '" + name + "' is truncated");
            const uint32_t expect = spec.at("crc32").get<uint32_t>();
            if (crc32(bytes.data() + offset, nbytes) != expect)
                throw DataError("sample " + id + ": checksum mismatch on array '" + name + "'");
            return std::pair<const char*, size_t>{bytes.data() + offset, nbytes};
        };

        InputCrop crop;
        const auto& rgb_spec = sample.at("arrays").at("rgb").at("shape");
        crop.height = rgb_spec[0].get<int>();
        crop.width = rgb_spec[1].get<int>();
        crop.id = id;
        crop.scene_id = sample.at("scene").get<int>();
        crop.category = sample.at("category").get<std::string>();
        crop.symmetry = sample.at("symmetry").get<std::string>();
        crop.visibility = sample.at("visibility").get<double>();
        crop.shape = detail::shape_from_json(sample.at("shape"));

        {
            auto [p, nb] = read_array("rgb");
            crop.rgb.resize(nb);
            for (size_t i = 0; i < nb; ++i)
                crop.rgb[i] = static_cast<float>(static_cast<uint8_t>(p[i])) / 255.0f;
        }
        auto read_f32 = [&](const std::string& name, std::vector<float>& dst) {
            auto [p, nb] = read_array(name);
            dst.resize(nb / 4);
            std::memcpy(dst.data(), p, nb);
        };
        read_f32("depth", crop.depth);
        read_f32("normals", crop.normals);
        read_f32("nocs", crop.nocs);
        {
            auto [p, nb] = read_array("mask");
            crop.mask.resize(nb);
            std::memcpy(crop.mask.data(), p, nb);
        }
        std::vector<float> pose_f32, intr_f32;
        read_f32("pose", pose_f32);
        read_f32("intrinsics", intr_f32);
        if (pose_f32.size() != 13 || intr_f32.size() != 9)
            throw DataError("sample " + id + ": pose/intrinsics arrays have wrong size");
        for (int i = 0; i < 9; ++i) crop.gt_pose.rotation.m[static_cast<size_t>(i)] = pose_f32[static_cast<size_t>(i)];
        // float32 storage leaves ~1e-7 orthogonality defect; polish it away
        crop.gt_pose.rotation = geo::orthonormalized(crop.gt_pose.rotation);
        for (int i = 0; i < 3; ++i) crop.gt_pose.translation[static_cast<size_t>(i)] = pose_f32[static_cast<size_t>(9 + i)];
        crop.gt_pose.scale = pose_f32[12];
        for (int i = 0; i < 9; ++i) crop.intrinsics[static_cast<size_t>(i)] = intr_f32[static_cast<size_t>(i)];
        crops.push_back(std::move(crop));
    }
    return crops;
}

}  // namespace scope::scenegen
