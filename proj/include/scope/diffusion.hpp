#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "scope/tensor.hpp"

namespace scope::diffusion {

using scope::nn::Tensor;

// ============================================================================
// Noise schedule
// ============================================================================

enum class ScheduleKind { Linear };

struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;
    std::vector<double> alphas_cumprod;

    double alpha_bar(int t) const { return alphas_cumprod[static_cast<size_t>(t)]; }
    // signal / noise coefficients of the closed-form marginal
    double signal(int t) const { return std::sqrt(alpha_bar(t)); }
    double noise(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }
    double log_snr(int t) const { return std::log(signal(t) / noise(t)); }

    void check_t(int t) const {
        if (t < 0 || t >= T)
            throw DomainError("timestep " + std::to_string(t) + " outside [0," + std::to_string(T) + ")");
    }
};

inline NoiseSchedule make_schedule(int T, ScheduleKind kind, double beta_min, double beta_max) {
    if (T < 1) throw ConfigError("schedule: T must be >= 1");
    if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
        throw ConfigError("schedule: require 0 < beta_min <= beta_max < 1, got [" +
                          std::to_string(beta_min) + "," + std::to_string(beta_max) + "]");
    if (kind != ScheduleKind::Linear) throw ConfigError("schedule: unsupported kind");
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(static_cast<size_t>(T));
    s.alphas_cumprod.resize(static_cast<size_t>(T));
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t) / (T - 1);
        const double beta = beta_min + (beta_max - beta_min) * frac;
        prod *= 1.0 - beta;
        s.betas[static_cast<size_t>(t)] = beta;
        s.alphas_cumprod[static_cast<size_t>(t)] = prod;
    }
    return s;
}

inline NoiseSchedule default_schedule(int T = 1000) {
    return make_schedule(T, ScheduleKind::Linear, 1e-4, 0.02);
}

// ============================================================================
// Forward diffusion (closed-form marginal)
// ============================================================================

template <class T>
struct DiffusionSample {
    Tensor<T> x0, eps, xt;
    int t = 0;
};

template <class T>
Tensor<T> forward_diffuse(const Tensor<T>& x0, int t, const Tensor<T>& eps,
                          const NoiseSchedule& sched) {
    sched.check_t(t);
    scope::nn::detail::require_same_shape(x0, eps, "forward_diffuse");
    const T a = static_cast<T>(sched.signal(t));
    const T b = static_cast<T>(sched.noise(t));
    Tensor<T> xt = Tensor<T>::zeros(x0.shape);
    const T* px = x0.ptr();
    const T* pe = eps.ptr();
    T* po = xt.ptr();
    for (size_t i = 0; i < xt.numel(); ++i) po[i] = a * px[i] + b * pe[i];
    return xt;
}

template <class T>
DiffusionSample<T> make_diffusion_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps,
                                         const NoiseSchedule& sched) {
    return {x0, eps, forward_diffuse(x0, t, eps, sched), t};
}

// ============================================================================
// Training objective
// ============================================================================

template <class T>
struct BatchItem {
    Tensor<T> x0;           // clean target image [3,H,W]
    Tensor<T> cond_image;   // conditioning image [6,H,W]
    Tensor<T> cond_tokens;  // [N_tokens, D]
};

// Mean squared error between drawn and predicted noise, averaged over the
// batch. Per item, in order: t ~ U[0,T) then eps ~ N(0,I) are drawn from
// `rng`, which keeps the draw sequence reproducible for oracles.
template <class T, class Model>
Tensor<T> ddpm_loss(const Model& model, const std::vector<BatchItem<T>>& batch,
                    const NoiseSchedule& sched, Rng& rng) {
    if (batch.empty()) throw ConfigError("ddpm_loss: empty batch");
    Tensor<T> total;
    for (const auto& item : batch) {
        const int t = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(sched.T)));
        Tensor<T> eps = Tensor<T>::randn(item.x0.shape, rng);
        Tensor<T> xt = forward_diffuse(item.x0, t, eps, sched);
        Tensor<T> eps_hat = model.predict_eps(xt, t, item.cond_image, item.cond_tokens);
        Tensor<T> item_loss = scope::nn::mse(eps_hat, eps);
        total = total.defined() ? scope::nn::add(total, item_loss) : item_loss;
    }
    return scope::nn::mul_scalar(total, T(1) / static_cast<T>(batch.size()));
}

// ============================================================================
// Sampling
// ============================================================================

template <class T>
Tensor<T> clamp01(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    const T* px = x.ptr();
    T* po = out.ptr();
    for (size_t i = 0; i < x.numel(); ++i) po[i] = std::clamp(px[i], T(0), T(1));
    return out;
}

template <class T>
struct SampleResult {
    Tensor<T> x0;
    int model_evals = 0;
    double seconds = 0.0;
};

// Ancestral DDPM sampling. `noise` is called once for x_T and once per
// posterior step t > 0; injecting it keeps trajectories testable.
template <class T, class Model, class NoiseFn>
SampleResult<T> ancestral_sample(const Model& model, const Tensor<T>& cond_image,
                                 const Tensor<T>& cond_tokens, const NoiseSchedule& sched,
                                 NoiseFn&& noise, const std::vector<int>& x_shape = {3, 0, 0}) {
    scope::nn::NoGradGuard no_grad;
    Timer timer;
    std::vector<int> shape = x_shape;
    if (shape.size() != 3 || shape[1] <= 0)
        shape = {3, cond_image.shape[1], cond_image.shape[2]};
    Tensor<T> x = noise(shape);
    SampleResult<T> res;
    for (int t = sched.T - 1; t >= 0; --t) {
        Tensor<T> eps_hat = model.predict_eps(x, t, cond_image, cond_tokens);
        ++res.model_evals;
        const double beta = sched.betas[static_cast<size_t>(t)];
        const double abar = sched.alpha_bar(t);
        const double abar_prev = t > 0 ? sched.alpha_bar(t - 1) : 1.0;
        // posterior mean through the data prediction, which is clamped to the
        // NOCS range each step so imperfect noise estimates cannot drive the
        // trajectory off the data manifold
        const double a = sched.signal(t), s = sched.noise(t);
        const double coef_x0 = std::sqrt(abar_prev) * beta / (1.0 - abar);
        const double coef_xt = std::sqrt(1.0 - beta) * (1.0 - abar_prev) / (1.0 - abar);
        Tensor<T> next = Tensor<T>::zeros(x.shape);
        const T* px = x.ptr();
        const T* pe = eps_hat.ptr();
        T* pn = next.ptr();
        for (size_t i = 0; i < x.numel(); ++i) {
            const double x0_hat = std::clamp((px[i] - s * pe[i]) / a, 0.0, 1.0);
            pn[i] = static_cast<T>(coef_x0 * x0_hat + coef_xt * px[i]);
        }
        if (t > 0) {
            const double var = (1.0 - abar_prev) / (1.0 - abar) * beta;
            const double sdev = std::sqrt(var);
            Tensor<T> z = noise(x.shape);
            const T* pz = z.ptr();
            for (size_t i = 0; i < next.numel(); ++i) pn[i] += static_cast<T>(sdev) * pz[i];
        }
        x = next;
    }
    res.x0 = clamp01(x);
    res.seconds = timer.seconds();
    return res;
}

// Discrete timesteps whose log-SNR values are uniformly spaced between the
// ends of the schedule. First entry is T-1, last is 0, strictly decreasing.
inline std::vector<int> log_snr_timesteps(const NoiseSchedule& sched, int steps) {
    if (steps < 1) throw ConfigError("sampler: steps must be >= 1");
    if (steps > sched.T) throw ConfigError("sampler: steps exceed schedule length");
    const double l0 = sched.log_snr(sched.T - 1);
    const double l1 = sched.log_snr(0);
    std::vector<int> ts(static_cast<size_t>(steps) + 1);
    ts[0] = sched.T - 1;
    ts[static_cast<size_t>(steps)] = 0;
    for (int i = 1; i < steps; ++i) {
        const double target = l0 + (l1 - l0) * static_cast<double>(i) / steps;
        // log-SNR is strictly increasing as t decreases; binary search
        int lo = 0, hi = sched.T - 1;
        while (lo < hi) {
            const int mid = (lo + hi) / 2;
            if (sched.log_snr(mid) >= target) lo = mid + 1;
            else hi = mid;
        }
        int pick = lo;
        if (pick > 0 && std::abs(sched.log_snr(pick - 1) - target) < std::abs(sched.log_snr(pick) - target))
            pick = pick - 1;
        ts[static_cast<size_t>(i)] = pick;
    }
    // enforce strict decrease (duplicates collapse when steps ~ T)
    for (int i = 1; i <= steps; ++i) {
        const int max_allowed = ts[static_cast<size_t>(i - 1)] - 1;
        if (ts[static_cast<size_t>(i)] > max_allowed) ts[static_cast<size_t>(i)] = max_allowed;
        const int min_needed = steps - i;  // room to keep decreasing to 0
        if (ts[static_cast<size_t>(i)] < min_needed) ts[static_cast<size_t>(i)] = min_needed;
    }
    return ts;
}

// Deterministic second-order multistep solver (data-prediction formulation)
// over the log-SNR discretization above. Exactly `steps` model evaluations.
template <class T, class Model>
SampleResult<T> fast_sample(const Model& model, const Tensor<T>& cond_image,
                            const Tensor<T>& cond_tokens, const NoiseSchedule& sched,
                            int steps, const Tensor<T>& x_T) {
    scope::nn::NoGradGuard no_grad;
    Timer timer;
    const std::vector<int> ts = log_snr_timesteps(sched, steps);
    SampleResult<T> res;
    Tensor<T> x = x_T;
    Tensor<T> prev_x0;
    double prev_h = 0.0;
    for (int i = 1; i <= steps; ++i) {
        const int t_prev = ts[static_cast<size_t>(i - 1)];
        const int t_cur = ts[static_cast<size_t>(i)];
        Tensor<T> eps_hat = model.predict_eps(x, t_prev, cond_image, cond_tokens);
        ++res.model_evals;
        // data prediction at the evaluation point, clamped to the NOCS range
        // so early high-noise estimates cannot blow up the multistep update
        Tensor<T> x0_pred = Tensor<T>::zeros(x.shape);
        {
            const double a = sched.signal(t_prev), s = sched.noise(t_prev);
            const T* px = x.ptr();
            const T* pe = eps_hat.ptr();
            T* p0 = x0_pred.ptr();
            for (size_t j = 0; j < x.numel(); ++j)
                p0[j] = static_cast<T>(std::clamp((px[j] - s * pe[j]) / a, 0.0, 1.0));
        }
        const double h = sched.log_snr(t_cur) - sched.log_snr(t_prev);
        Tensor<T> d = x0_pred;
        if (prev_x0.defined() && prev_h != 0.0) {
            const double r = prev_h / h;
            const double c0 = 1.0 + 1.0 / (2.0 * r);
            const double c1 = -1.0 / (2.0 * r);
            d = Tensor<T>::zeros(x.shape);
            const T* pc = x0_pred.ptr();
            const T* pp = prev_x0.ptr();
            T* pd = d.ptr();
            for (size_t j = 0; j < x.numel(); ++j)
                pd[j] = static_cast<T>(c0 * pc[j] + c1 * pp[j]);
        }
        // x_{t} = (sigma_t/sigma_s) x_s - alpha_t (e^{-h} - 1) D
        const double sig_ratio = sched.noise(t_cur) / sched.noise(t_prev);
        const double coef_d = -sched.signal(t_cur) * (std::exp(-h) - 1.0);
        Tensor<T> next = Tensor<T>::zeros(x.shape);
        {
            const T* px = x.ptr();
            const T* pd = d.ptr();
            T* pn = next.ptr();
            for (size_t j = 0; j < x.numel(); ++j)
                pn[j] = static_cast<T>(sig_ratio * px[j] + coef_d * pd[j]);
        }
        x = next;
        prev_x0 = x0_pred;
        prev_h = h;
    }
    res.x0 = clamp01(x);
    res.seconds = timer.seconds();
    return res;
}

// ============================================================================
// Multi-sample refinement
// ============================================================================

struct RegistrarVerdict {
    bool ok = false;
    double residual = 0.0;
    std::string error;
};

template <class T>
struct RefineResult {
    Tensor<T> x0;          // NOCS estimate of the winning sample
    int best_index = -1;
    double best_residual = 0.0;
    int model_evals = 0;
    double nocs_seconds = 0.0;
    double registration_seconds = 0.0;
};

// Runs fast_sample n_samples times with independent noise initializations,
// registers each estimate, and keeps the lowest registration residual (ties
// broken by lowest sample index). Throws when every registration fails.
template <class T, class Model, class Registrar>
RefineResult<T> refine(const Model& model, const Tensor<T>& cond_image,
                       const Tensor<T>& cond_tokens, const NoiseSchedule& sched,
                       int steps, int n_samples, Registrar&& registrar, Rng& rng) {
    if (n_samples < 1) throw ConfigError("refine: n_samples must be >= 1");
    const uint64_t base_seed = rng.next_u64();
    RefineResult<T> res;
    std::vector<std::string> failures;
    const std::vector<int> shape{3, cond_image.shape[1], cond_image.shape[2]};
    for (int i = 0; i < n_samples; ++i) {
        Rng sample_rng(derive_seed(base_seed, static_cast<uint64_t>(i)));
        Tensor<T> x_T = Tensor<T>::randn(shape, sample_rng);
        Timer nocs_timer;
        SampleResult<T> sample = fast_sample(model, cond_image, cond_tokens, sched, steps, x_T);
        res.nocs_seconds += nocs_timer.seconds();
        res.model_evals += sample.model_evals;
        Timer reg_timer;
        RegistrarVerdict verdict = registrar(sample.x0, i);
        res.registration_seconds += reg_timer.seconds();
        if (!verdict.ok) {
            failures.push_back("sample " + std::to_string(i) + ": " + verdict.error);
            continue;
        }
        if (res.best_index < 0 || verdict.residual < res.best_residual) {
            res.best_index = i;
            res.best_residual = verdict.residual;
            res.x0 = sample.x0;
        }
    }
    if (res.best_index < 0) {
        std::string msg = "refine: all registrations failed";
        for (const auto& f : failures) msg += "; " + f;
        throw RobustFailureError(msg);
    }
    return res;
}

}  // namespace scope::diffusion
