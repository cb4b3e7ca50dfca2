#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scope/adam.hpp"
#include "scope/checkpoint.hpp"
#include "scope/dataset.hpp"
#include "scope/diffusion.hpp"
#include "scope/image_io.hpp"
#include "scope/metrics.hpp"
#include "scope/registration.hpp"
#include "scope/semantics.hpp"
#include "scope/unet.hpp"

namespace scope::pipeline {

namespace fs = std::filesystem;
using nn::Tensor;
using scenegen::InputCrop;

// ============================================================================
// Run configuration. Defaults follow the reference training and inference
// settings; every override lands in the run manifest.
// ============================================================================

struct RunConfig {
    uint64_t seed = 1;
    std::string out_dir = "runs/default";
    std::string dataset_root = "data";
    int resolution = 32;
    int epochs = 50;
    int batch_size = 8;
    int scenes = 100;

    nn::UNetConfig unet;
    int schedule_timesteps = 1000;
    double beta_min = 1e-4;
    double beta_max = 0.02;
    nn::AdamConfig optimizer;  // lr 1e-4, betas 0.9/0.999, eps 1e-8, warmup 1000

    int sampler_steps = 5;
    int sampled_points = 500;
    int refinement_samples = 1;
    registration::RobustParams robust;  // 0.02 / 1000 / 1e-12

    std::string conditioning = "toy";  // toy | constant | file:<path>
    int patch_size = 8;
    double ema_decay = 0.999;  // 0 disables weight averaging

    double perlin_amplitude = 0.005;   // meters
    double perlin_frequency = 0.05;    // cycles per pixel
    bool normals_dropout = true;

    nlohmann::json to_json() const {
        return {
            {"seed", seed},
            {"out", out_dir},
            {"dataset", dataset_root},
            {"resolution", resolution},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"scenes", scenes},
            {"unet",
             {{"base_width", unet.base_width},
              {"depth", unet.depth},
              {"embed_dim", unet.embed_dim},
              {"time_embed_dim", unet.time_embed_dim}}},
            {"schedule",
             {{"timesteps", schedule_timesteps}, {"beta_min", beta_min}, {"beta_max", beta_max}}},
            {"optimizer",
             {{"lr", optimizer.lr},
              {"beta1", optimizer.beta1},
              {"beta2", optimizer.beta2},
              {"eps", optimizer.eps},
              {"warmup_steps", optimizer.warmup_steps}}},
            {"sampler_steps", sampler_steps},
            {"sampled_points", sampled_points},
            {"refinement_samples", refinement_samples},
            {"robust",
             {{"noise_bound", robust.noise_bound},
              {"max_rotation_iters", robust.max_rotation_iters},
              {"rotation_cost_threshold", robust.rotation_cost_threshold},
              {"pair_degree", robust.pair_degree}}},
            {"conditioning", conditioning},
            {"patch_size", patch_size},
            {"ema_decay", ema_decay},
            {"augment",
             {{"perlin_amplitude", perlin_amplitude},
              {"perlin_frequency", perlin_frequency},
              {"normals_dropout", normals_dropout}}},
        };
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig cfg;
        cfg.seed = j.value("seed", cfg.seed);
        cfg.out_dir = j.value("out", cfg.out_dir);
        cfg.dataset_root = j.value("dataset", cfg.dataset_root);
        cfg.resolution = j.value("resolution", cfg.resolution);
        cfg.epochs = j.value("epochs", cfg.epochs);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.scenes = j.value("scenes", cfg.scenes);
        if (j.contains("unet")) {
            const auto& u = j.at("unet");
            cfg.unet.base_width = u.value("base_width", cfg.unet.base_width);
            cfg.unet.depth = u.value("depth", cfg.unet.depth);
            cfg.unet.attn_down_index = cfg.unet.depth - 1;
            cfg.unet.attn_up_index = std::min(1, cfg.unet.depth - 1);
            cfg.unet.embed_dim = u.value("embed_dim", cfg.unet.embed_dim);
            cfg.unet.time_embed_dim = u.value("time_embed_dim", cfg.unet.time_embed_dim);
        }
        if (j.contains("schedule")) {
            const auto& s = j.at("schedule");
            cfg.schedule_timesteps = s.value("timesteps", cfg.schedule_timesteps);
            cfg.beta_min = s.value("beta_min", cfg.beta_min);
            cfg.beta_max = s.value("beta_max", cfg.beta_max);
        }
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            cfg.optimizer.lr = o.value("lr", cfg.optimizer.lr);
            cfg.optimizer.beta1 = o.value("beta1", cfg.optimizer.beta1);
            cfg.optimizer.beta2 = o.value("beta2", cfg.optimizer.beta2);
            cfg.optimizer.eps = o.value("eps", cfg.optimizer.eps);
            cfg.optimizer.warmup_steps = o.value("warmup_steps", cfg.optimizer.warmup_steps);
        }
        cfg.sampler_steps = j.value("sampler_steps", cfg.sampler_steps);
        cfg.sampled_points = j.value("sampled_points", cfg.sampled_points);
        cfg.refinement_samples = j.value("refinement_samples", cfg.refinement_samples);
        if (j.contains("robust")) {
            const auto& r = j.at("robust");
            cfg.robust.noise_bound = r.value("noise_bound", cfg.robust.noise_bound);
            cfg.robust.max_rotation_iters = r.value("max_rotation_iters", cfg.robust.max_rotation_iters);
            cfg.robust.rotation_cost_threshold =
                r.value("rotation_cost_threshold", cfg.robust.rotation_cost_threshold);
            cfg.robust.pair_degree = r.value("pair_degree", cfg.robust.pair_degree);
        }
        cfg.conditioning = j.value("conditioning", cfg.conditioning);
        cfg.patch_size = j.value("patch_size", cfg.patch_size);
        cfg.ema_decay = j.value("ema_decay", cfg.ema_decay);
        if (j.contains("augment")) {
            const auto& a = j.at("augment");
            cfg.perlin_amplitude = a.value("perlin_amplitude", cfg.perlin_amplitude);
            cfg.perlin_frequency = a.value("perlin_frequency", cfg.perlin_frequency);
            cfg.normals_dropout = a.value("normals_dropout", cfg.normals_dropout);
        }
        cfg.unet.num_timesteps = cfg.schedule_timesteps;
        return cfg;
    }

    uint32_t config_hash() const {
        const std::string dump = to_json().dump();
        return crc32(dump.data(), dump.size());
    }
};

inline void write_run_manifest(const fs::path& dir, const RunConfig& cfg, const std::string& command) {
    fs::create_directories(dir);
    nlohmann::json manifest{{"command", command},
                            {"version", kVersion},
                            {"seed", cfg.seed},
                            {"config_hash", cfg.config_hash()},
                            {"config", cfg.to_json()}};
    std::ofstream out(dir / "run_manifest.json");
    out << manifest.dump(2) << "\n";
    if (!out) throw DataError("cannot write run manifest in " + dir.string());
}

// ============================================================================
// Conditioning and model input assembly
// ============================================================================

struct ConditioningProvider {
    std::string mode = "toy";
    int patch_size = 8;
    int dim = 32;
    std::optional<semantics::SemanticEmbedding> fixed;  // constant or file mode

    static ConditioningProvider from_config(const RunConfig& cfg) {
        ConditioningProvider p;
        p.patch_size = cfg.patch_size;
        p.dim = cfg.unet.embed_dim;
        if (cfg.conditioning == "toy") {
            p.mode = "toy";
        } else if (cfg.conditioning == "constant") {
            p.mode = "constant";
            const int grid = cfg.resolution / cfg.patch_size;
            p.fixed = semantics::constant_embedding(grid, grid, p.dim);
        } else if (cfg.conditioning.rfind("file:", 0) == 0) {
            p.mode = "file";
            p.fixed = semantics::load_embedding(cfg.conditioning.substr(5), p.dim);
        } else {
            throw ConfigError("unknown conditioning mode '" + cfg.conditioning + "'");
        }
        return p;
    }

    semantics::SemanticEmbedding embed(const InputCrop& crop, const std::vector<float>& normals) const {
        if (fixed) return *fixed;
        semantics::CropView view{crop.height, crop.width, crop.rgb.data(), normals.data()};
        return semantics::toy_patch_embedder(view, patch_size, dim);
    }
};

namespace detail {

// HWC float image plane(s) -> CHW tensor channels appended to dst
template <class T>
void append_chw(std::vector<T>& dst, const std::vector<float>& hwc, int h, int w, int channels) {
    for (int c = 0; c < channels; ++c)
        for (int i = 0; i < h * w; ++i)
            dst.push_back(static_cast<T>(hwc[static_cast<size_t>(i) * channels + c]));
}

}  // namespace detail

// I = concat(rgb, normals): 6-channel CHW conditioning image.
template <class T>
Tensor<T> conditioning_image(const InputCrop& crop, const std::vector<float>& normals) {
    std::vector<T> data;
    data.reserve(crop.pixel_count() * 6);
    detail::append_chw(data, crop.rgb, crop.height, crop.width, 3);
    detail::append_chw(data, normals, crop.height, crop.width, 3);
    return Tensor<T>::from({6, crop.height, crop.width}, std::move(data));
}

template <class T>
Tensor<T> nocs_target(const InputCrop& crop) {
    std::vector<T> data;
    data.reserve(crop.pixel_count() * 3);
    detail::append_chw(data, crop.nocs, crop.height, crop.width, 3);
    return Tensor<T>::from({3, crop.height, crop.width}, std::move(data));
}

// Online augmentation: Perlin depth noise, normals recomputed from the noisy
// depth, then rectangular plus pixel dropout.
inline std::vector<float> augmented_normals(const InputCrop& crop, const RunConfig& cfg, Rng& rng) {
    auto depth = scenegen::perlin_depth_noise(crop.depth, crop.height, crop.width,
                                              cfg.perlin_amplitude, cfg.perlin_frequency, rng);
    auto normals = scenegen::depth_to_normals(depth, crop.height, crop.width, crop.intrinsics);
    if (cfg.normals_dropout) normals = scenegen::augment_normals(normals, crop.height, crop.width, rng);
    return normals;
}

// ============================================================================
// Training
// ============================================================================

struct TrainResult {
    std::vector<double> epoch_losses;
    fs::path last_checkpoint;
    fs::path best_checkpoint;
    int epochs_run = 0;
};

template <class T>
void save_train_checkpoint(const fs::path& dir, nn::UNet<T>& model, nn::Adam<T>& opt, int epoch,
                           const std::vector<double>& losses, const RunConfig& cfg,
                           const std::vector<std::vector<T>>* ema = nullptr) {
    auto blobs = nn::blobs_from_params(model.params());
    for (auto& [name, buf] : opt.moments()) {
        nn::NamedBlob blob;
        blob.name = name;
        blob.shape = {static_cast<int>(buf->size())};
        blob.values.assign(buf->begin(), buf->end());
        blobs.push_back(std::move(blob));
    }
    if (ema) {
        auto params = model.params();
        for (size_t i = 0; i < params.size(); ++i) {
            nn::NamedBlob blob;
            blob.name = "ema." + params[i].name;
            blob.shape = {static_cast<int>((*ema)[i].size())};
            blob.values.assign((*ema)[i].begin(), (*ema)[i].end());
            blobs.push_back(std::move(blob));
        }
    }
    nlohmann::json meta{{"epoch", epoch},
                        {"adam_steps", opt.step_count()},
                        {"loss_history", losses},
                        {"seed", cfg.seed},
                        {"config_hash", cfg.config_hash()}};
    nn::save_checkpoint(dir, blobs, meta);
}

template <class T>
int load_train_checkpoint(const fs::path& dir, nn::UNet<T>& model, nn::Adam<T>* opt,
                          std::vector<double>* losses,
                          std::vector<std::vector<T>>* ema = nullptr) {
    const auto ckpt = nn::load_checkpoint(dir);
    nn::load_params_from_checkpoint(model.params(), ckpt);
    if (ema) {
        auto params = model.params();
        ema->resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            const nn::NamedBlob* blob = ckpt.find("ema." + params[i].name);
            auto& dst = (*ema)[i];
            dst.resize(params[i].tensor->numel());
            if (blob && blob->values.size() == dst.size()) {
                for (size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(blob->values[k]);
            } else {
                for (size_t k = 0; k < dst.size(); ++k) dst[k] = (*params[i].tensor->data)[k];
            }
        }
    }
    if (opt) {
        for (auto& [name, buf] : opt->moments()) {
            const nn::NamedBlob* blob = ckpt.find(name);
            if (!blob) throw DataError("checkpoint missing optimizer state '" + name + "'");
            if (blob->values.size() != buf->size())
                throw ShapeError("optimizer state '" + name + "' has wrong size");
            for (size_t i = 0; i < buf->size(); ++i) (*buf)[i] = static_cast<T>(blob->values[i]);
        }
        opt->set_step_count(ckpt.meta.value("adam_steps", int64_t{0}));
    }
    if (losses && ckpt.meta.contains("loss_history"))
        *losses = ckpt.meta.at("loss_history").get<std::vector<double>>();
    return ckpt.meta.value("epoch", 0);
}

// Wraps the model for the diffusion API with conditioning bound per call.
template <class T>
struct UNetAdapter {
    const nn::UNet<T>* net;
    Tensor<T> predict_eps(const Tensor<T>& xt, int t, const Tensor<T>& cond_image,
                          const Tensor<T>& cond_tokens) const {
        return net->forward(xt, t, cond_image, cond_tokens);
    }
};

// Trains the noise predictor. All randomness derives from (seed, epoch,
// batch), so resuming from the last checkpoint replays the exact trajectory.
template <class T>
TrainResult train(const RunConfig& cfg, const std::vector<InputCrop>& crops, IncidentLog* incidents,
                  const fs::path& resume_from = {}) {
    if (crops.empty()) throw DataError("train: dataset is empty");
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);

    Rng init_rng(derive_seed(cfg.seed, 0x1417));
    nn::UNetConfig unet_cfg = cfg.unet;
    unet_cfg.num_timesteps = cfg.schedule_timesteps;
    nn::UNet<T> model(unet_cfg, init_rng);
    nn::Adam<T> opt(model.params(), cfg.optimizer, incidents);
    const auto sched = diffusion::make_schedule(cfg.schedule_timesteps, diffusion::ScheduleKind::Linear,
                                                cfg.beta_min, cfg.beta_max);
    const auto provider = ConditioningProvider::from_config(cfg);

    std::vector<double> losses;
    // EMA shadow weights; sampling quality of averaged weights is much less
    // sensitive to late-training oscillation
    std::vector<std::vector<T>> ema;
    const bool use_ema = cfg.ema_decay > 0.0;
    {
        auto params = model.params();
        ema.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i)
            ema[i].assign(params[i].tensor->data->begin(), params[i].tensor->data->end());
    }
    int start_epoch = 0;
    if (!resume_from.empty())
        start_epoch = load_train_checkpoint(resume_from, model, &opt, &losses,
                                            use_ema ? &ema : nullptr) + 1;

    TrainResult result;
    result.epoch_losses = losses;
    double best_loss = losses.empty() ? 1e300 : *std::min_element(losses.begin(), losses.end());
    UNetAdapter<T> adapter{&model};
    int consecutive_bad = 0;

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        Rng order_rng(derive_seed(cfg.seed, 0x0bde4, static_cast<uint64_t>(epoch)));
        std::vector<size_t> order(crops.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (size_t i = 0; i + 1 < order.size(); ++i) {
            const size_t j = i + order_rng.uniform_index(order.size() - i);
            std::swap(order[i], order[j]);
        }

        double epoch_loss = 0;
        int batches = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            Rng batch_rng(derive_seed(cfg.seed, 0xba7c4, static_cast<uint64_t>(epoch),
                                      static_cast<uint64_t>(start)));
            std::vector<diffusion::BatchItem<T>> batch;
            for (size_t k = start; k < stop; ++k) {
                const InputCrop& crop = crops[order[k]];
                auto normals = augmented_normals(crop, cfg, batch_rng);
                auto tokens = provider.embed(crop, normals);
                batch.push_back({nocs_target<T>(crop), conditioning_image<T>(crop, normals),
                                 tokens.template as_tensor<T>()});
            }
            opt.zero_grad();
            Tensor<T> loss = diffusion::ddpm_loss(adapter, batch, sched, batch_rng);
            const double value = static_cast<double>((*loss.data)[0]);
            if (!std::isfinite(value)) {
                if (incidents)
                    incidents->record("train: non-finite loss at epoch " + std::to_string(epoch) +
                                      " batch " + std::to_string(start / cfg.batch_size) +
                                      "; step rejected");
                if (++consecutive_bad >= 3)
                    throw DataError("train: aborted after 3 consecutive non-finite losses");
                continue;
            }
            consecutive_bad = 0;
            loss.backward();
            opt.step();
            if (use_ema) {
                auto params = model.params();
                const T d = static_cast<T>(cfg.ema_decay);
                for (size_t i = 0; i < params.size(); ++i) {
                    const auto& src = *params[i].tensor->data;
                    auto& shadow = ema[i];
                    for (size_t k = 0; k < shadow.size(); ++k)
                        shadow[k] = d * shadow[k] + (T(1) - d) * src[k];
                }
            }
            epoch_loss += value;
            ++batches;
        }
        epoch_loss /= std::max(1, batches);
        losses.push_back(epoch_loss);
        result.epoch_losses = losses;

        save_train_checkpoint(out / "checkpoint_last", model, opt, epoch, losses, cfg,
                              use_ema ? &ema : nullptr);
        if (epoch_loss < best_loss) {
            best_loss = epoch_loss;
            save_train_checkpoint(out / "checkpoint_best", model, opt, epoch, losses, cfg);
        }
        if (use_ema) {
            // averaged weights as a directly loadable model checkpoint
            auto params = model.params();
            std::vector<nn::NamedBlob> blobs;
            for (size_t i = 0; i < params.size(); ++i) {
                nn::NamedBlob blob;
                blob.name = params[i].name;
                blob.shape = params[i].tensor->shape;
                blob.values.resize(ema[i].size());
                for (size_t k = 0; k < ema[i].size(); ++k)
                    blob.values[k] = static_cast<float>(ema[i][k]);
                blobs.push_back(std::move(blob));
            }
            nn::save_checkpoint(out / "checkpoint_ema", blobs,
                                {{"epoch", epoch}, {"ema_decay", cfg.ema_decay}});
        }
        result.epochs_run = epoch + 1;
    }
    result.last_checkpoint = out / "checkpoint_last";
    result.best_checkpoint = out / "checkpoint_best";

    std::ofstream loss_log(out / "loss_curve.json");
    loss_log << nlohmann::json(losses).dump(1) << "\n";
    return result;
}

// ============================================================================
// Inference and evaluation
// ============================================================================

struct CropResult {
    bool ok = false;
    std::string error;
    geo::PoseSim3 pose;
    geo::Vec3 extents{0, 0, 0};
    std::vector<float> nocs;  // HWC
    double nocs_seconds = 0.0;
    double registration_seconds = 0.0;
    double residual = 0.0;
    int inliers = 0;
};

struct InferOptions {
    int sampler_steps = 5;
    int sampled_points = 500;
    int refinement_samples = 1;
    bool oracle_nocs = false;  // bypass the model, register ground truth
};

// Registers one crop, optionally running the diffusion model first.
template <class T>
CropResult infer_crop(const nn::UNet<T>* model, const InputCrop& crop, const RunConfig& cfg,
                      const InferOptions& opt, Rng& rng) {
    CropResult result;
    try {
        const auto provider = ConditioningProvider::from_config(cfg);
        std::vector<float> nocs_hwc;
        double nocs_seconds = 0.0;
        if (opt.oracle_nocs) {
            nocs_hwc = crop.nocs;
        } else {
            if (!model) throw ConfigError("infer: no model loaded and oracle mode off");
            Timer nocs_timer;
            const auto sched = diffusion::make_schedule(
                cfg.schedule_timesteps, diffusion::ScheduleKind::Linear, cfg.beta_min, cfg.beta_max);
            auto tokens = provider.embed(crop, crop.normals).template as_tensor<T>();
            auto cond = conditioning_image<T>(crop, crop.normals);
            UNetAdapter<T> adapter{model};

            registration::NocsDepthView view{crop.height, crop.width, nullptr, crop.depth.data(),
                                             crop.mask.data(), crop.intrinsics};
            std::vector<float> best_nocs;
            registration::PoseEstimate best_est;
            double reg_seconds = 0.0;
            auto registrar = [&](const Tensor<T>& x0, int sample_index) -> diffusion::RegistrarVerdict {
                std::vector<float> hwc(crop.pixel_count() * 3);
                for (int c = 0; c < 3; ++c)
                    for (size_t i = 0; i < crop.pixel_count(); ++i)
                        hwc[i * 3 + static_cast<size_t>(c)] =
                            static_cast<float>((*x0.data)[static_cast<size_t>(c) * crop.pixel_count() + i]);
                registration::NocsDepthView v = view;
                v.nocs = hwc.data();
                Timer reg_timer;
                try {
                    Rng reg_rng(derive_seed(cfg.seed, 0x9e91, static_cast<uint64_t>(sample_index),
                                            std::hash<std::string>{}(crop.id)));
                    auto est = registration::pose_from_nocs(v, opt.sampled_points, cfg.robust, reg_rng);
                    reg_seconds += reg_timer.seconds();
                    const double residual = est.registration.rms_residual;
                    if (best_est.registration.inliers.empty() || residual < best_est.registration.rms_residual) {
                        best_est = est;
                        best_nocs = hwc;
                    }
                    return {true, residual, ""};
                } catch (const Error& e) {
                    reg_seconds += reg_timer.seconds();
                    return {false, 0.0, e.what()};
                }
            };
            auto refined = diffusion::refine(adapter, cond, tokens, sched, opt.sampler_steps,
                                             opt.refinement_samples, registrar, rng);
            nocs_seconds = refined.nocs_seconds;
            result.nocs = best_nocs;
            result.pose = best_est.pose;
            result.extents = best_est.extents;
            result.residual = best_est.registration.rms_residual;
            result.inliers = static_cast<int>(best_est.registration.inliers.size());
            result.nocs_seconds = nocs_seconds;
            result.registration_seconds = reg_seconds;
            result.ok = true;
            return result;
        }
        // oracle path: single registration of the ground-truth NOCS
        Timer reg_timer;
        registration::NocsDepthView view{crop.height, crop.width, nocs_hwc.data(), crop.depth.data(),
                                         crop.mask.data(), crop.intrinsics};
        Rng reg_rng(derive_seed(cfg.seed, 0x9e91, 0, std::hash<std::string>{}(crop.id)));
        auto est = registration::pose_from_nocs(view, opt.sampled_points, cfg.robust, reg_rng);
        result.pose = est.pose;
        result.extents = est.extents;
        result.nocs = nocs_hwc;
        result.registration_seconds = reg_timer.seconds();
        result.nocs_seconds = nocs_seconds;
        result.residual = est.registration.rms_residual;
        result.inliers = static_cast<int>(est.registration.inliers.size());
        result.ok = true;
    } catch (const Error& e) {
        result.ok = false;
        result.error = crop.id + ": " + e.what();
    }
    return result;
}

// Ground-truth oriented box of a crop in the camera frame.
inline metrics::OrientedBox gt_box(const InputCrop& crop) {
    metrics::OrientedBox box;
    box.rotation = crop.gt_pose.rotation;
    box.center = crop.gt_pose.translation;
    const double inv_diag = 1.0 / crop.shape.nocs_diag();
    box.extents = (crop.gt_pose.scale * inv_diag) * (crop.shape.box_max - crop.shape.box_min);
    return box;
}

inline metrics::SymmetrySpec crop_symmetry(const InputCrop& crop) {
    return metrics::symmetry_from_tag(crop.symmetry);
}

// Scores one crop result against ground truth.
inline metrics::SampleMetrics score_crop(const InputCrop& crop, const CropResult& result) {
    metrics::SampleMetrics s;
    s.category = crop.category;
    s.range = geo::norm(crop.gt_pose.translation);
    if (!result.ok) {
        s.failed = true;
        return s;
    }
    const auto sym = crop_symmetry(crop);
    s.rot_err_deg = metrics::rotation_error_deg(result.pose.rotation, crop.gt_pose.rotation, sym);
    s.rot_err_raw_deg = metrics::rotation_error_deg(result.pose.rotation, crop.gt_pose.rotation,
                                                    metrics::SymmetrySpec::none());
    s.trans_err = metrics::translation_error(result.pose.translation, crop.gt_pose.translation);

    metrics::OrientedBox pred_box;
    pred_box.rotation = result.pose.rotation;
    pred_box.center = result.pose.translation;
    pred_box.extents = result.extents;
    bool box_ok = result.extents[0] > 0 && result.extents[1] > 0 && result.extents[2] > 0;
    s.iou = box_ok ? metrics::iou3d(pred_box, gt_box(crop), sym) : 0.0;

    Rng pts_rng(derive_seed(0x9087, std::hash<std::string>{}(crop.id)));
    const auto canon = scenegen::surface_points(crop.shape, 500, pts_rng);
    std::vector<geo::Vec3> model_points;
    model_points.reserve(canon.size());
    for (const auto& p : canon) model_points.push_back(crop.shape.centered_nocs(p));
    double nocs_diam = 0;
    for (size_t i = 0; i < model_points.size(); i += 7)
        for (size_t j = i + 1; j < model_points.size(); j += 7)
            nocs_diam = std::max(nocs_diam, geo::norm(model_points[i] - model_points[j]));
    s.diameter = crop.gt_pose.scale * nocs_diam;
    const auto add = metrics::add_metrics(result.pose, crop.gt_pose, model_points, sym, s.diameter);
    s.add_s = add.add_s;
    s.add_sel = add.add_sel;
    s.nocs_seconds = result.nocs_seconds;
    s.registration_seconds = result.registration_seconds;
    return s;
}

struct EvalOutcome {
    metrics::MetricReport report;
    std::vector<metrics::SampleMetrics> samples;
    int attempted = 0;
};

template <class T>
EvalOutcome evaluate(const nn::UNet<T>* model, const std::vector<InputCrop>& crops,
                     const RunConfig& cfg, const InferOptions& opt, int limit = 0) {
    if (crops.empty()) throw DataError("eval: empty split");
    EvalOutcome outcome;
    const size_t n = limit > 0 ? std::min<size_t>(crops.size(), static_cast<size_t>(limit)) : crops.size();
    for (size_t i = 0; i < n; ++i) {
        const InputCrop& crop = crops[i];
        Rng rng(derive_seed(cfg.seed, 0xeb41, std::hash<std::string>{}(crop.id)));
        const CropResult result = infer_crop(model, crop, cfg, opt, rng);
        outcome.samples.push_back(score_crop(crop, result));
        ++outcome.attempted;
    }
    outcome.report = metrics::aggregate(outcome.samples);
    return outcome;
}

// ============================================================================
// Ablation harness: sweep sampled points, denoising steps, and refinement
// counts around the defaults, one axis at a time.
// ============================================================================

struct AblationCell {
    std::string axis;
    int value = 0;
    bool ok = false;
    std::string error;
    double iou75 = 0, r5d5 = 0, r10d5 = 0, r15d5 = 0;
    double nocs_s = 0, registration_s = 0, total_s = 0;
};

template <class T>
std::vector<AblationCell> ablate(const nn::UNet<T>* model, const std::vector<InputCrop>& crops,
                                 const RunConfig& cfg, int crops_per_cell) {
    const std::vector<int> point_grid{50, 100, 200, 500, 1000};
    const std::vector<int> step_grid{1, 3, 5, 7, 10};
    const std::vector<int> refine_grid{1, 3, 6, 10};

    std::vector<AblationCell> cells;
    auto run_cell = [&](const std::string& axis, int value, const InferOptions& opt) {
        AblationCell cell;
        cell.axis = axis;
        cell.value = value;
        try {
            const auto outcome = evaluate(model, crops, cfg, opt, crops_per_cell);
            cell.iou75 = outcome.report.overall("IoU75");
            cell.r5d5 = outcome.report.overall("5d5cm");
            cell.r10d5 = outcome.report.overall("10d5cm");
            cell.r15d5 = outcome.report.overall("15d5cm");
            cell.nocs_s = outcome.report.nocs_seconds_mean;
            cell.registration_s = outcome.report.registration_seconds_mean;
            cell.total_s = outcome.report.total_seconds_mean;
            cell.ok = true;
        } catch (const Error& e) {
            cell.ok = false;
            cell.error = e.what();
        }
        cells.push_back(cell);
    };

    for (int points : point_grid) {
        InferOptions opt{cfg.sampler_steps, points, 1, false};
        run_cell("sampled_points", points, opt);
    }
    for (int steps : step_grid) {
        InferOptions opt{steps, cfg.sampled_points, 1, false};
        run_cell("denoising_steps", steps, opt);
    }
    for (int refinement : refine_grid) {
        InferOptions opt{cfg.sampler_steps, cfg.sampled_points, refinement, false};
        run_cell("refinement_steps", refinement, opt);
    }
    return cells;
}

inline nlohmann::json ablation_to_json(const std::vector<AblationCell>& cells) {
    nlohmann::json j;
    for (const auto& cell : cells) {
        nlohmann::json c{{"ok", cell.ok}};
        if (cell.ok) {
            c["IoU75"] = cell.iou75;
            c["5d5cm"] = cell.r5d5;
            c["10d5cm"] = cell.r10d5;
            c["15d5cm"] = cell.r15d5;
            c["time_nocs_s"] = cell.nocs_s;
            c["time_registration_s"] = cell.registration_s;
            c["time_total_s"] = cell.total_s;
        } else {
            c["error"] = cell.error;
        }
        j[cell.axis][std::to_string(cell.value)] = c;
    }
    return j;
}

inline std::string ablation_to_table(const std::vector<AblationCell>& cells) {
    std::string out;
    std::string current_axis;
    char buf[160];
    for (const auto& cell : cells) {
        if (cell.axis != current_axis) {
            current_axis = cell.axis;
            std::snprintf(buf, sizeof(buf), "\n%-18s %8s %8s %8s %8s %8s %10s %10s %10s\n",
                          current_axis.c_str(), "value", "IoU75", "5d5cm", "10d5cm", "15d5cm",
                          "t_nocs", "t_reg", "t_total");
            out += buf;
        }
        if (cell.ok) {
            std::snprintf(buf, sizeof(buf), "%-18s %8d %8.3f %8.3f %8.3f %8.3f %10.4f %10.4f %10.4f\n",
                          "", cell.value, cell.iou75, cell.r5d5, cell.r10d5, cell.r15d5, cell.nocs_s,
                          cell.registration_s, cell.total_s);
        } else {
            std::snprintf(buf, sizeof(buf), "%-18s %8d FAILED: %s\n", "", cell.value, cell.error.c_str());
        }
        out += buf;
    }
    return out;
}

}  // namespace scope::pipeline
