// Acceptance suite: end-to-end checks of registration exactness, robustness,
// diffusion marginals, gradient fidelity, metric oracles, the registration
// ceiling, desk-scale learning, symmetry handling, and ablation trends.
// Prints one pass/fail line per criterion; exits nonzero on any failure.

#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "scope/pipeline.hpp"
#include "../support/gradcheck.hpp"

namespace fs = std::filesystem;
using scope::Rng;
using scope::Timer;
namespace geo = scope::geo;
namespace reg = scope::registration;
namespace met = scope::metrics;
namespace sg = scope::scenegen;
namespace diff = scope::diffusion;
namespace pl = scope::pipeline;
namespace nn = scope::nn;
namespace ts = scope::testsupport;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what, const std::string& detail) {
    std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, what.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. Registration exactness
// ---------------------------------------------------------------------------
void criterion_1() {
    Timer timer;
    Rng rng(0xacc1);
    int pass_count = 0;
    double worst_rot = 0, worst_t = 0, worst_s = 0;
    const int trials = 1000;
    for (int trial = 0; trial < trials; ++trial) {
        geo::PoseSim3 pose;
        pose.rotation = geo::random_rotation(rng);
        pose.translation = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        pose.scale = rng.uniform(0.5, 2.0);
        reg::CorrespondenceSet corr;
        for (int i = 0; i < 100; ++i) {
            geo::Vec3 p{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
            corr.src.push_back(p);
            corr.dst.push_back(pose.apply(p));
        }
        const auto res = reg::umeyama(corr);
        const double rot = geo::rotation_angle_deg_between(res.pose.rotation, pose.rotation);
        const double t = geo::norm(res.pose.translation - pose.translation);
        const double s = std::abs(res.pose.scale - pose.scale) / pose.scale;
        worst_rot = std::max(worst_rot, rot);
        worst_t = std::max(worst_t, t);
        worst_s = std::max(worst_s, s);
        if (rot < 1e-6 && t < 1e-9 && s < 1e-9) ++pass_count;
    }
    const double seconds = timer.seconds();
    report(1, pass_count == trials && seconds < 5.0, "closed-form similarity exactness",
           fmt("%d/%d exact, worst rot %.2e deg / t %.2e m / s %.2e rel, %.2f s", pass_count, trials,
               worst_rot, worst_t, worst_s, seconds));
}

// ---------------------------------------------------------------------------
// 2. Robustness at 50% outliers with reference parameters
// ---------------------------------------------------------------------------
void criterion_2() {
    Timer timer;
    Rng rng(0xacc2);
    reg::RobustParams params;  // 0.02 / 1000 / 1e-12
    const double sigma = params.noise_bound / 3.0;
    const int trials = 200;
    int good = 0;
    for (int trial = 0; trial < trials; ++trial) {
        geo::PoseSim3 pose;
        pose.rotation = geo::random_rotation(rng);
        pose.translation = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 2.0)};
        pose.scale = rng.uniform(0.5, 2.0);
        reg::CorrespondenceSet corr;
        for (int i = 0; i < 100; ++i) {
            geo::Vec3 p{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
            corr.src.push_back(p);
            corr.dst.push_back(pose.apply(p) +
                               geo::Vec3{sigma * rng.normal(), sigma * rng.normal(), sigma * rng.normal()});
        }
        for (int i = 0; i < 50; ++i)
            corr.dst[static_cast<size_t>(i)] = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
        try {
            const auto res = reg::robust_register(corr, params);
            if (geo::rotation_angle_deg_between(res.pose.rotation, pose.rotation) < 5.0 &&
                geo::norm(res.pose.translation - pose.translation) < 0.02 &&
                std::abs(res.pose.scale - pose.scale) / pose.scale < 0.05)
                ++good;
        } catch (const scope::Error&) {
        }
    }
    const double seconds = timer.seconds();
    report(2, good >= 190 && seconds < 60.0, "robust registration under 50% outliers",
           fmt("%d/%d trials within bounds, %.2f s", good, trials, seconds));
}

// ---------------------------------------------------------------------------
// 3. Closed-form marginal vs stepwise compounding
// ---------------------------------------------------------------------------
void criterion_3() {
    const auto sched = diff::default_schedule(1000);
    Rng rng(0xacc3);
    const int n = 10000;
    const std::vector<double> pixels{0.1, 0.35, 0.7, 0.95};
    bool all_ok = true;
    std::string detail;
    for (int t_probe : {1, 100, 999}) {
        for (double x0 : pixels) {
            std::vector<double> compound(n), oneshot(n);
            for (int i = 0; i < n; ++i) {
                double x = x0;
                for (int t = 0; t <= t_probe; ++t)
                    x = std::sqrt(1.0 - sched.betas[static_cast<size_t>(t)]) * x +
                        std::sqrt(sched.betas[static_cast<size_t>(t)]) * rng.normal();
                compound[static_cast<size_t>(i)] = x;
                oneshot[static_cast<size_t>(i)] =
                    sched.signal(t_probe) * x0 + sched.noise(t_probe) * rng.normal();
            }
            auto stats = [&](const std::vector<double>& v) {
                double m = 0;
                for (double x : v) m += x;
                m /= n;
                double var = 0;
                for (double x : v) var += (x - m) * (x - m);
                var /= (n - 1);
                return std::pair<double, double>{m, var};
            };
            const auto [m1, v1] = stats(compound);
            const auto [m2, v2] = stats(oneshot);
            const double se_mean = std::sqrt(v1 / n + v2 / n);
            const double se_var = std::sqrt(2.0 / (n - 1)) * (v1 + v2);
            if (std::abs(m1 - m2) >= 3 * se_mean || std::abs(v1 - v2) >= 3 * se_var) {
                all_ok = false;
                detail += fmt(" [t=%d x0=%.2f: dm=%.2e (3se %.2e) dv=%.2e (3se %.2e)]", t_probe, x0,
                              std::abs(m1 - m2), 3 * se_mean, std::abs(v1 - v2), 3 * se_var);
            }
        }
    }
    report(3, all_ok, "forward-diffusion marginal consistency",
           all_ok ? "t in {1,100,999}, 4 pixels, 10k samples, 3 standard errors" : detail);
}

// ---------------------------------------------------------------------------
// 4. Gradient fidelity of every differentiable layer
// ---------------------------------------------------------------------------
void criterion_4() {
    Rng rng(0xacc4);
    bool all_ok = true;
    std::string detail;

    auto check_layer = [&](const std::string& name, const std::function<nn::Tensor<double>()>& loss,
                           nn::Tensor<double>& target) {
        target.zero_grad();
        auto res = ts::gradcheck([&] { return (*loss().data)[0]; }, [&] { loss().backward(); },
                                 target, 20, rng);
        if (!res.ok(1e-4)) {
            all_ok = false;
            detail += " " + name + fmt("=%.2e", res.max_rel_err);
        } else {
            detail += " " + name + fmt("=%.1e", res.max_rel_err);
        }
    };

    {
        auto x = nn::Tensor<double>::randn({3, 8, 8}, rng, 1.0, true);
        auto w = nn::init_conv_weight<double>(4, 3, 3, 3, rng);
        auto b = nn::Tensor<double>::randn({4}, rng, 0.1, true);
        auto loss = [&] { return nn::mean_all(nn::mul(nn::conv2d(x, w, b), nn::conv2d(x, w, b))); };
        check_layer("conv.x", loss, x);
        check_layer("conv.w", loss, w);
    }
    {
        auto x = nn::Tensor<double>::randn({8, 6, 6}, rng, 1.5, true);
        auto gamma = nn::Tensor<double>::full({8}, 1.0, true);
        auto beta = nn::Tensor<double>::zeros({8}, true);
        auto loss = [&] {
            auto y = nn::group_norm(x, gamma, beta, 4);
            return nn::mean_all(nn::mul(y, nn::silu(y)));
        };
        check_layer("norm.x", loss, x);
        check_layer("norm.gamma", loss, gamma);
    }
    {
        nn::SelfAttentionBlock<double> block(8, rng);
        block.out_proj = nn::Linear<double>(8, 8, rng);
        auto x = nn::Tensor<double>::randn({8, 4, 4}, rng, 1.0, true);
        auto loss = [&] { return nn::mean_all(nn::mul(block.forward(x), block.forward(x))); };
        check_layer("self_attn.x", loss, x);
        check_layer("self_attn.q", loss, block.q_proj.weight);
    }
    {
        nn::CrossAttentionBlock<double> block(8, 6, rng);
        block.out_proj = nn::Linear<double>(8, 8, rng);
        auto x = nn::Tensor<double>::randn({8, 4, 4}, rng, 1.0, true);
        auto s = nn::Tensor<double>::randn({5, 6}, rng);
        auto loss = [&] { return nn::mean_all(nn::mul(block.forward(x, s), block.forward(x, s))); };
        check_layer("cross_attn.x", loss, x);
        check_layer("cross_attn.k", loss, block.k_proj.weight);
    }
    {
        nn::UNetConfig cfg;
        cfg.base_width = 8;
        cfg.depth = 2;
        cfg.attn_down_index = 1;
        cfg.attn_up_index = 1;
        cfg.embed_dim = 6;
        cfg.time_embed_dim = 8;
        cfg.num_timesteps = 50;
        nn::UNet<double> net(cfg, rng);
        net.conv_out = nn::Conv2d<double>(cfg.width(0), 3, 3, 1, 1, rng);
        // move zero-initialized output projections off zero so every probed
        // parameter sees real gradient flow
        net.down_self_attn.out_proj = nn::Linear<double>(cfg.width(1), cfg.width(1), rng);
        net.down_cross_attn.out_proj = nn::Linear<double>(cfg.width(1), cfg.width(1), rng);
        net.up_self_attn.out_proj = nn::Linear<double>(cfg.width(0), cfg.width(0), rng);
        net.up_cross_attn.out_proj = nn::Linear<double>(cfg.width(0), cfg.width(0), rng);
        auto x = nn::Tensor<double>::randn({3, 8, 8}, rng);
        auto cond = nn::Tensor<double>::randn({6, 8, 8}, rng);
        auto tokens = nn::Tensor<double>::randn({5, 6}, rng);
        auto target = nn::Tensor<double>::randn({3, 8, 8}, rng);
        auto loss = [&] { return nn::mse(net.forward(x, 7, cond, tokens), target); };
        auto params = net.params();
        for (const char* pname : {"conv_in.weight", "down_attn.cross.k.weight", "mid.res.conv1.weight"}) {
            for (auto& p : params)
                if (p.name == pname) {
                    for (auto& q : params) q.tensor->zero_grad();
                    check_layer(std::string("unet.") + pname, loss, *p.tensor);
                }
        }
    }
    report(4, all_ok, "finite-difference gradient fidelity (64-bit, 20 probes per layer)", detail);
}

// ---------------------------------------------------------------------------
// 5. Metric oracles
// ---------------------------------------------------------------------------
void criterion_5() {
    Rng rng(0xacc5);
    bool all_ok = true;
    std::string detail;

    // iou3d vs Monte-Carlo point sampling
    double worst_iou_gap = 0;
    for (int trial = 0; trial < 100; ++trial) {
        met::OrientedBox a, b;
        a.rotation = geo::random_rotation(rng);
        b.rotation = geo::random_rotation(rng);
        a.center = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)};
        b.center = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)};
        a.extents = {rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2)};
        b.extents = {rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2)};
        const double analytic = met::iou3d(a, b);
        const int n = 1000000;
        int hits = 0;
        const geo::Mat3 binv = b.rotation.transposed();
        for (int i = 0; i < n; ++i) {
            const geo::Vec3 local{rng.uniform(-0.5, 0.5) * a.extents[0],
                                  rng.uniform(-0.5, 0.5) * a.extents[1],
                                  rng.uniform(-0.5, 0.5) * a.extents[2]};
            const geo::Vec3 in_b = binv * ((a.rotation * local + a.center) - b.center);
            if (std::abs(in_b[0]) <= 0.5 * b.extents[0] && std::abs(in_b[1]) <= 0.5 * b.extents[1] &&
                std::abs(in_b[2]) <= 0.5 * b.extents[2])
                ++hits;
        }
        const double inter = a.volume() * hits / n;
        const double mc = inter / (a.volume() + b.volume() - inter);
        worst_iou_gap = std::max(worst_iou_gap, std::abs(analytic - mc));
    }
    if (worst_iou_gap >= 0.01) {
        all_ok = false;
        detail += fmt(" iou_gap=%.4f!", worst_iou_gap);
    } else {
        detail += fmt(" iou_gap=%.4f", worst_iou_gap);
    }

    // ADD-S: accelerated path equals the exhaustive oracle exactly
    bool adds_exact = true;
    for (int n_pts : {100, 1000, 2000}) {
        std::vector<geo::Vec3> pts;
        for (int i = 0; i < n_pts; ++i)
            pts.push_back({rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)});
        geo::PoseSim3 gt, pred;
        gt.rotation = geo::random_rotation(rng);
        pred.rotation = geo::random_rotation(rng);
        pred.translation = {0.02, -0.01, 0.03};
        const auto m = met::add_metrics(pred, gt, pts, met::SymmetrySpec::none(), 1.0);
        std::vector<geo::Vec3> tp(pts.size()), tg(pts.size());
        for (size_t i = 0; i < pts.size(); ++i) {
            tp[i] = pred.apply(pts[i]);
            tg[i] = gt.apply(pts[i]);
        }
        double oracle = 0;
        for (size_t i = 0; i < pts.size(); ++i) {
            double best = 1e300;
            for (size_t j = 0; j < pts.size(); ++j) best = std::min(best, geo::norm(tg[i] - tp[j]));
            oracle += best;
        }
        oracle /= static_cast<double>(pts.size());
        if (m.add_s != oracle) adds_exact = false;
    }
    if (!adds_exact) {
        all_ok = false;
        detail += " add_s_mismatch!";
    } else {
        detail += " add_s=exact";
    }

    // threshold monotonicity on randomized reports
    bool monotone = true;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<met::SampleMetrics> samples;
        for (int i = 0; i < 100; ++i) {
            met::SampleMetrics s;
            s.category = i % 3 ? "a" : "b";
            s.rot_err_deg = rng.uniform(0, 25);
            s.rot_err_raw_deg = s.rot_err_deg;
            s.trans_err = rng.uniform(0, 0.08);
            s.iou = rng.uniform(0, 1);
            s.add_s = rng.uniform(0, 0.15);
            s.add_sel = s.add_s;
            samples.push_back(s);
        }
        const auto r = met::aggregate(samples);
        for (const auto& [cat, slot] : r.recalls) {
            monotone &= slot.at("15d5cm") >= slot.at("10d5cm");
            monotone &= slot.at("10d5cm") >= slot.at("5d5cm");
            monotone &= slot.at("10d2cm") >= slot.at("5d2cm");
            monotone &= slot.at("IoU25") >= slot.at("IoU50");
            monotone &= slot.at("IoU50") >= slot.at("IoU75");
        }
    }
    if (!monotone) {
        all_ok = false;
        detail += " monotonicity_violated!";
    } else {
        detail += " monotone=yes";
    }
    report(5, all_ok, "metric oracles (IoU Monte-Carlo, exhaustive ADD-S, monotonicity)", detail);
}

// ---------------------------------------------------------------------------
// 6. Oracle-NOCS registration ceiling
// ---------------------------------------------------------------------------
void criterion_6() {
    sg::DatagenConfig gen;
    gen.seed = 0xacc6;
    gen.scenes = 200;
    gen.resolution = 32;
    gen.max_objects = 1;  // clean, unoccluded crops
    std::vector<sg::InputCrop> crops;
    for (auto& record : sg::generate_scenes(gen))
        for (auto& crop : record.crops) crops.push_back(std::move(crop));
    while (crops.size() > 200) crops.pop_back();

    pl::RunConfig cfg;
    cfg.seed = 0xacc6;
    pl::InferOptions opt;
    opt.oracle_nocs = true;
    opt.sampled_points = 500;
    const auto outcome = pl::evaluate<float>(nullptr, crops, cfg, opt);
    const double iou75 = outcome.report.overall("IoU75");
    const double r5d5 = outcome.report.overall("5d5cm");
    report(6, iou75 > 0.99 && r5d5 > 0.95, "ground-truth NOCS registration ceiling",
           fmt("%zu crops, IoU75 recall %.3f (need >0.99), 5d5cm recall %.3f (need >0.95)",
               crops.size(), iou75, r5d5));
}

// ---------------------------------------------------------------------------
// 7/8/9. Desk-scale training, symmetry property, ablation trends
// ---------------------------------------------------------------------------

struct TrainedArtifacts {
    bool trained = false;
    fs::path workdir;
    std::vector<sg::InputCrop> test_crops;
    pl::RunConfig cfg;
    std::optional<nn::UNet<float>> model;
    pl::EvalOutcome cond_eval;
};

pl::RunConfig desk_config(const fs::path& out, const std::string& conditioning) {
    pl::RunConfig cfg;
    cfg.seed = 4242;
    cfg.out_dir = out.string();
    cfg.resolution = 32;
    cfg.epochs = 12;
    cfg.batch_size = 8;
    cfg.unet.base_width = 16;
    cfg.unet.depth = 3;
    cfg.unet.attn_down_index = 2;
    cfg.unet.attn_up_index = 1;
    cfg.unet.embed_dim = 32;
    cfg.unet.time_embed_dim = 64;
    cfg.patch_size = 8;
    cfg.optimizer.lr = 1e-3;        // desk-scale budget: short schedule
    cfg.optimizer.warmup_steps = 300;
    cfg.conditioning = conditioning;
    return cfg;
}

nn::UNet<float> load_model(const pl::RunConfig& cfg, const fs::path& checkpoint) {
    Rng rng(1);
    nn::UNetConfig ucfg = cfg.unet;
    ucfg.num_timesteps = cfg.schedule_timesteps;
    nn::UNet<float> model(ucfg, rng);
    pl::load_train_checkpoint<float>(checkpoint, model, nullptr, nullptr);
    return model;
}

double category_recall(const std::vector<met::SampleMetrics>& samples,
                       const std::set<std::string>& cats, bool raw) {
    int total = 0, pass = 0;
    for (const auto& s : samples) {
        if (!cats.count(s.category)) continue;
        ++total;
        const double rot = raw ? s.rot_err_raw_deg : s.rot_err_deg;
        if (!s.failed && rot < 10.0 && s.trans_err < 0.05 * s.range) ++pass;
    }
    return total ? static_cast<double>(pass) / total : 0.0;
}

TrainedArtifacts criterion_7() {
    TrainedArtifacts art;
    Timer total_timer;
    art.workdir = fs::temp_directory_path() / "scope_acceptance";
    fs::create_directories(art.workdir);

    // dataset: >= 2000 training crops at 32x32, held-out instances in test
    sg::DatagenConfig gen;
    gen.seed = scope::derive_seed(4242, 0, 0xda7a);
    gen.scenes = 1100;
    gen.resolution = 32;
    std::vector<sg::InputCrop> train_crops;
    for (auto& record : sg::generate_scenes(gen))
        for (auto& crop : record.crops) train_crops.push_back(std::move(crop));

    sg::DatagenConfig test_gen = gen;
    test_gen.seed = scope::derive_seed(4242, 2, 0xda7a);
    test_gen.scenes = 150;
    for (auto& record : sg::generate_scenes(test_gen))
        for (auto& crop : record.crops) art.test_crops.push_back(std::move(crop));
    while (art.test_crops.size() > 220) art.test_crops.pop_back();

    if (train_crops.size() < 2000) {
        report(7, false, "desk-scale end-to-end learning",
               fmt("dataset too small: %zu crops", train_crops.size()));
        return art;
    }

    // conditioned model
    art.cfg = desk_config(art.workdir / "run_cond", "toy");
    std::printf("  [c7] training conditioned model: %zu crops, %d epochs...\n", train_crops.size(),
                art.cfg.epochs);
    std::fflush(stdout);
    auto cond_result = pl::train<float>(art.cfg, train_crops, nullptr);

    // constant-conditioning ablation, same budget
    pl::RunConfig const_cfg = desk_config(art.workdir / "run_const", "constant");
    std::printf("  [c7] training constant-conditioning ablation...\n");
    std::fflush(stdout);
    auto const_result = pl::train<float>(const_cfg, train_crops, nullptr);

    const double train_seconds = total_timer.seconds();

    auto cond_model = load_model(art.cfg, cond_result.best_checkpoint);
    auto const_model = load_model(const_cfg, const_result.best_checkpoint);
    Rng rng(1);
    nn::UNetConfig ucfg = art.cfg.unet;
    ucfg.num_timesteps = art.cfg.schedule_timesteps;
    nn::UNet<float> untrained(ucfg, rng);

    pl::InferOptions opt;
    opt.sampler_steps = art.cfg.sampler_steps;
    opt.sampled_points = art.cfg.sampled_points;
    art.cond_eval = pl::evaluate<float>(&cond_model, art.test_crops, art.cfg, opt);
    auto const_eval = pl::evaluate<float>(&const_model, art.test_crops, const_cfg, opt);
    auto untrained_eval = pl::evaluate<float>(&untrained, art.test_crops, art.cfg, opt);

    const double recall10 = art.cond_eval.report.overall("10d5pct");
    const double const10 = const_eval.report.overall("10d5pct");
    const double margin = recall10 - const10;

    bool beats_untrained = true;
    std::string worst_metric;
    for (const std::string name : {"IoU25", "IoU50", "IoU75", "5d2cm", "5d5cm", "10d2cm", "10d5cm",
                                   "15d5cm", "10d5pct", "ADD-S", "ADD(-S)"}) {
        const double trained_v = art.cond_eval.report.overall(name);
        const double untrained_v = untrained_eval.report.overall(name);
        if (!(trained_v > untrained_v)) {
            beats_untrained = false;
            worst_metric += " " + name + fmt("(%.3f<=%.3f)", trained_v, untrained_v);
        }
    }

    const bool in_budget = train_seconds < 7200.0;
    const bool ok = recall10 >= 0.6 && beats_untrained && margin > 0.0 && in_budget;
    report(7, ok, "desk-scale end-to-end learning + conditioning ablation",
           fmt("10deg@5%%range recall %.3f (need >=0.6), conditioning margin %+.3f (need >0), "
               "beats untrained on all metrics: %s%s, training %.0f s (budget 7200)",
               recall10, margin, beats_untrained ? "yes" : "no", worst_metric.c_str(), train_seconds));
    std::printf("  [c7] detail: conditioned 10d5pct=%.3f const=%.3f untrained=%.3f\n", recall10,
                const10, untrained_eval.report.overall("10d5pct"));

    art.trained = true;  // downstream criteria run on the artifacts either way
    art.model = std::move(cond_model);
    return art;
}

void criterion_8(const TrainedArtifacts& art) {
    if (!art.trained || art.cond_eval.samples.empty()) {
        report(8, false, "implicit symmetry handling", "no trained artifacts available");
        return;
    }
    const double axial = category_recall(art.cond_eval.samples, {"cylinder", "bowl"}, false);
    const double axial_raw = category_recall(art.cond_eval.samples, {"cylinder", "bowl"}, true);
    const double asym = category_recall(art.cond_eval.samples, {"cuboid"}, false);
    const bool ok = axial >= asym - 0.10;
    report(8, ok, "implicit symmetry handling (symmetry-aware rotation error)",
           fmt("axial 10deg recall %.3f vs asymmetric %.3f (allowed gap 0.10); raw-rotation axial "
               "recall %.3f (reported only - spin is unconstrained)",
               axial, asym, axial_raw));
}

void criterion_9(const TrainedArtifacts& art) {
    if (!art.model) {
        report(9, false, "ablation trends", "no trained model available");
        return;
    }
    const auto cells = pl::ablate<float>(&*art.model, art.test_crops, art.cfg, 120);
    std::map<std::string, std::map<int, const pl::AblationCell*>> grid;
    for (const auto& cell : cells) grid[cell.axis][cell.value] = &cell;

    bool ok = true;
    std::string detail;

    const auto* s1 = grid["denoising_steps"][1];
    const auto* s5 = grid["denoising_steps"][5];
    if (!s1 || !s5 || !s1->ok || !s5->ok) {
        ok = false;
        detail += " steps_cells_failed";
    } else {
        // paper anchor 5.5 vs 49.2 at the tight threshold: one step collapses
        const bool far_below = s1->r5d5 < s5->r5d5 && s1->r5d5 <= 0.6 * s5->r5d5;
        if (!far_below) ok = false;
        detail += fmt(" 5d5cm@1step=%.3f vs @5steps=%.3f%s", s1->r5d5, s5->r5d5,
                      far_below ? "" : " (not far below!)");
    }

    bool time_monotone = true;
    double prev = -1;
    std::string times = " refine_total_s=";
    for (int r : {1, 3, 6, 10}) {
        const auto* cell = grid["refinement_steps"][r];
        if (!cell || !cell->ok) {
            time_monotone = false;
            break;
        }
        times += fmt("%.3f,", cell->total_s);
        if (cell->total_s <= prev) time_monotone = false;
        prev = cell->total_s;
    }
    if (!time_monotone) ok = false;
    detail += times + (time_monotone ? "monotone" : "NOT-monotone");

    const auto* p500 = grid["sampled_points"][500];
    const auto* p1000 = grid["sampled_points"][1000];
    if (!p500 || !p1000 || !p500->ok || !p1000->ok || p1000->registration_s <= p500->registration_s) {
        ok = false;
        detail += " reg_time_not_growing";
    } else {
        detail += fmt(" reg_s@500=%.4f @1000=%.4f", p500->registration_s, p1000->registration_s);
    }

    report(9, ok, "ablation trends (steps collapse, refinement time, registration time)", detail);
    std::printf("%s\n", pl::ablation_to_table(cells).c_str());
}

}  // namespace

int main(int argc, char** argv) {
    // optional filter: run only the listed criteria (e.g. "./acceptance 1 2 5")
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    auto wanted = [&](int c) { return only.empty() || only.count(c); };

    std::printf("acceptance suite, version %s\n", scope::kVersion);
    if (wanted(1)) criterion_1();
    if (wanted(2)) criterion_2();
    if (wanted(3)) criterion_3();
    if (wanted(4)) criterion_4();
    if (wanted(5)) criterion_5();
    if (wanted(6)) criterion_6();
    if (wanted(7) || wanted(8) || wanted(9)) {
        TrainedArtifacts art = criterion_7();
        if (wanted(8)) criterion_8(art);
        if (wanted(9)) criterion_9(art);
    }
    std::printf("%d criteria failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
