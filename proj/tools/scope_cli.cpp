// Command-line front end: data generation, training, inference, evaluation,
// and the ablation harness.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "scope/pipeline.hpp"

namespace fs = std::filesystem;
using scope::pipeline::RunConfig;

namespace {

RunConfig load_config(const std::string& config_path) {
    if (config_path.empty()) return RunConfig{};
    std::ifstream in(config_path);
    if (!in) throw scope::ConfigError("cannot open config file: " + config_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw scope::FormatError("config is not valid JSON: " + std::string(e.what()));
    }
    return RunConfig::from_json(j);
}

std::vector<scope::scenegen::InputCrop> load_split(const RunConfig& cfg, const std::string& split) {
    return scope::scenegen::read_dataset(fs::path(cfg.dataset_root) / split);
}

int cmd_datagen(const RunConfig& cfg) {
    const fs::path out(cfg.out_dir);
    scope::pipeline::write_run_manifest(out, cfg, "datagen");
    const std::vector<std::pair<std::string, int>> splits{
        {"train", cfg.scenes}, {"val", std::max(1, cfg.scenes / 5)}, {"test", std::max(1, cfg.scenes / 5)}};
    int split_index = 0;
    for (const auto& [name, scenes] : splits) {
        scope::scenegen::DatagenConfig gen;
        gen.seed = scope::derive_seed(cfg.seed, static_cast<uint64_t>(split_index++), 0xda7a);
        gen.scenes = scenes;
        gen.resolution = cfg.resolution;
        auto records = scope::scenegen::generate_scenes(gen);
        scope::scenegen::write_dataset(records, out / name, gen, name);
        size_t crops = 0;
        for (const auto& r : records) crops += r.crops.size();
        std::cout << "wrote " << name << ": " << scenes << " scenes, " << crops << " crops\n";
    }
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& resume) {
    scope::pipeline::write_run_manifest(cfg.out_dir, cfg, "train");
    auto crops = load_split(cfg, "train");
    std::cout << "training on " << crops.size() << " crops for " << cfg.epochs << " epochs\n";
    scope::IncidentLog incidents;
    auto result = scope::pipeline::train<float>(cfg, crops, &incidents,
                                                resume.empty() ? fs::path{} : fs::path(resume));
    if (incidents.size() > 0) {
        std::ofstream log(fs::path(cfg.out_dir) / "incidents.log");
        for (const auto& line : incidents.entries()) log << line << "\n";
        std::cerr << incidents.size() << " incidents recorded\n";
    }
    for (size_t e = 0; e < result.epoch_losses.size(); ++e)
        std::cout << "epoch " << e << " loss " << result.epoch_losses[e] << "\n";
    std::cout << "checkpoints: " << result.last_checkpoint << " (last), " << result.best_checkpoint
              << " (best)\n";
    return 0;
}

std::optional<scope::nn::UNet<float>> load_model(const RunConfig& cfg, const std::string& checkpoint) {
    if (checkpoint.empty()) return std::nullopt;
    scope::Rng rng(1);
    scope::nn::UNetConfig unet_cfg = cfg.unet;
    unet_cfg.num_timesteps = cfg.schedule_timesteps;
    scope::nn::UNet<float> model(unet_cfg, rng);
    scope::pipeline::load_train_checkpoint<float>(checkpoint, model, nullptr, nullptr);
    return model;
}

int cmd_infer(const RunConfig& cfg, const std::string& checkpoint, const std::string& split,
              const scope::pipeline::InferOptions& opt, int limit) {
    scope::pipeline::write_run_manifest(cfg.out_dir, cfg, "infer");
    auto crops = load_split(cfg, split);
    if (limit > 0 && static_cast<size_t>(limit) < crops.size()) crops.resize(static_cast<size_t>(limit));
    auto model = load_model(cfg, checkpoint);
    if (!model && !opt.oracle_nocs)
        throw scope::ConfigError("infer: provide --checkpoint or --oracle-nocs");

    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    nlohmann::json results = nlohmann::json::array();
    int failures = 0;
    for (const auto& crop : crops) {
        scope::Rng rng(scope::derive_seed(cfg.seed, 0xeb41, std::hash<std::string>{}(crop.id)));
        auto result = scope::pipeline::infer_crop<float>(model ? &*model : nullptr, crop, cfg, opt, rng);
        nlohmann::json entry{{"id", crop.id}, {"ok", result.ok}};
        if (result.ok) {
            entry["rotation"] = result.pose.rotation.m;
            entry["translation"] = result.pose.translation.v;
            entry["scale"] = result.pose.scale;
            entry["extents"] = result.extents.v;
            entry["residual"] = result.residual;
            entry["inliers"] = result.inliers;
            entry["time_nocs_s"] = result.nocs_seconds;
            entry["time_registration_s"] = result.registration_seconds;

            scope::imageio::save_nocs_png(out / (crop.id + "_nocs.png"), result.nocs, crop.width,
                                          crop.height);
            auto canvas =
                scope::imageio::Canvas::from_float_rgb(crop.rgb, crop.width, crop.height, 4);
            scope::metrics::OrientedBox pred_box{result.pose.rotation, result.pose.translation,
                                                 result.extents};
            // ground truth in blue, estimate in green
            scope::imageio::draw_box_wireframe(canvas, scope::pipeline::gt_box(crop),
                                               crop.intrinsics, 4, 40, 90, 255);
            if (result.extents[0] > 0)
                scope::imageio::draw_box_wireframe(canvas, pred_box, crop.intrinsics, 4, 40, 230, 70);
            canvas.save(out / (crop.id + "_overlay.png"));
        } else {
            entry["error"] = result.error;
            ++failures;
            std::cerr << "crop failed: " << result.error << "\n";
        }
        results.push_back(entry);
    }
    std::ofstream rj(out / "inference.json");
    rj << results.dump(1) << "\n";
    std::cout << crops.size() - failures << "/" << crops.size() << " crops registered\n";
    return failures == static_cast<int>(crops.size()) && !crops.empty() ? 1 : 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& split,
             const scope::pipeline::InferOptions& opt, int limit) {
    scope::pipeline::write_run_manifest(cfg.out_dir, cfg, "eval");
    auto crops = load_split(cfg, split);
    auto model = load_model(cfg, checkpoint);
    if (!model && !opt.oracle_nocs)
        throw scope::ConfigError("eval: provide --checkpoint or --oracle-nocs");
    auto outcome =
        scope::pipeline::evaluate<float>(model ? &*model : nullptr, crops, cfg, opt, limit);
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    std::ofstream rj(out / "report.json");
    rj << scope::metrics::report_to_json(outcome.report).dump(1) << "\n";
    const std::string table = scope::metrics::report_to_table(outcome.report);
    std::ofstream rt(out / "report.txt");
    rt << table;
    std::cout << table;
    return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::string& checkpoint, const std::string& split,
               int limit) {
    scope::pipeline::write_run_manifest(cfg.out_dir, cfg, "ablate");
    auto crops = load_split(cfg, split);
    auto model = load_model(cfg, checkpoint);
    if (!model) throw scope::ConfigError("ablate: a trained --checkpoint is required");
    auto cells = scope::pipeline::ablate<float>(&*model, crops, cfg, limit);
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    std::ofstream aj(out / "ablation.json");
    aj << scope::pipeline::ablation_to_json(cells).dump(1) << "\n";
    const std::string table = scope::pipeline::ablation_to_table(cells);
    std::ofstream at(out / "ablation.txt");
    at << table;
    std::cout << table;
    for (const auto& cell : cells)
        if (!cell.ok) std::cerr << "cell " << cell.axis << "=" << cell.value << " failed: " << cell.error << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"category-level object pose: NOCS diffusion + robust registration"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    std::string config_path, out_dir, dataset_root, checkpoint, split = "test", resume;
    uint64_t seed = 0;
    bool has_seed = false;
    int scenes = 0, res = 0, epochs = 0, steps = 0, points = 0, refine = 0, limit = 0;
    bool oracle_nocs = false;

    app.add_option("--config", config_path, "JSON config file")->capture_default_str();
    app.add_option("--seed", seed, "run seed")->each([&](const std::string&) { has_seed = true; });
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--dataset", dataset_root, "dataset root directory");

    auto* datagen = app.add_subcommand("datagen", "generate train/val/test splits");
    datagen->add_option("--scenes", scenes, "training scene count");
    datagen->add_option("--res", res, "crop resolution");

    auto* train = app.add_subcommand("train", "train the noise predictor");
    train->add_option("--epochs", epochs, "training epochs");
    train->add_option("--res", res, "crop resolution");
    train->add_option("--resume", resume, "checkpoint directory to resume from");

    auto* infer = app.add_subcommand("infer", "run inference and write overlays");
    infer->add_option("--checkpoint", checkpoint, "checkpoint directory");
    infer->add_option("--split", split, "dataset split");
    infer->add_option("--steps", steps, "denoising steps");
    infer->add_option("--points", points, "sampled correspondence points");
    infer->add_option("--refine", refine, "refinement samples");
    infer->add_option("--limit", limit, "max crops");
    infer->add_flag("--oracle-nocs", oracle_nocs, "register ground-truth NOCS");

    auto* eval = app.add_subcommand("eval", "evaluate a split and emit metric reports");
    eval->add_option("--checkpoint", checkpoint, "checkpoint directory");
    eval->add_option("--split", split, "dataset split");
    eval->add_option("--steps", steps, "denoising steps");
    eval->add_option("--points", points, "sampled correspondence points");
    eval->add_option("--refine", refine, "refinement samples");
    eval->add_option("--limit", limit, "max crops");
    eval->add_flag("--oracle-nocs", oracle_nocs, "register ground-truth NOCS");

    auto* ablate = app.add_subcommand("ablate", "sweep points/steps/refinement grids");
    ablate->add_option("--checkpoint", checkpoint, "checkpoint directory");
    ablate->add_option("--split", split, "dataset split");
    ablate->add_option("--limit", limit, "crops per cell");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = load_config(config_path);
        if (has_seed) cfg.seed = seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (!dataset_root.empty()) cfg.dataset_root = dataset_root;
        if (scenes > 0) cfg.scenes = scenes;
        if (res > 0) cfg.resolution = res;
        if (epochs > 0) cfg.epochs = epochs;

        scope::pipeline::InferOptions opt;
        opt.sampler_steps = steps > 0 ? steps : cfg.sampler_steps;
        opt.sampled_points = points > 0 ? points : cfg.sampled_points;
        opt.refinement_samples = refine > 0 ? refine : cfg.refinement_samples;
        opt.oracle_nocs = oracle_nocs;
        if (steps > 0) cfg.sampler_steps = steps;
        if (points > 0) cfg.sampled_points = points;
        if (refine > 0) cfg.refinement_samples = refine;

        if (datagen->parsed()) return cmd_datagen(cfg);
        if (train->parsed()) return cmd_train(cfg, resume);
        if (infer->parsed()) return cmd_infer(cfg, checkpoint, split, opt, limit);
        if (eval->parsed()) return cmd_eval(cfg, checkpoint, split, opt, limit);
        if (ablate->parsed()) return cmd_ablate(cfg, checkpoint, split, limit);
    } catch (const scope::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
