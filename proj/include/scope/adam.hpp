#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "scope/nn.hpp"

namespace scope::nn {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int warmup_steps = 1000;  // lr ramps linearly from zero over these steps
};

// Adam with bias correction and linear warm-up. Tensors whose gradient
// contains a non-finite value are skipped for that step and the incident is
// recorded; their moment buffers are left untouched.
template <class T>
class Adam {
public:
    Adam() = default;
    Adam(ParamList<T> params, AdamConfig cfg, IncidentLog* incidents = nullptr)
        : params_(std::move(params)), cfg_(cfg), incidents_(incidents) {
        for (auto& p : params_) {
            m_.push_back(std::vector<T>(p.tensor->numel(), T(0)));
            v_.push_back(std::vector<T>(p.tensor->numel(), T(0)));
        }
    }

    int64_t step_count() const { return step_; }
    const AdamConfig& config() const { return cfg_; }

    double effective_lr(int64_t step) const {
        if (cfg_.warmup_steps <= 0) return cfg_.lr;
        const double ramp = std::min(1.0, static_cast<double>(step) / cfg_.warmup_steps);
        return cfg_.lr * ramp;
    }

    void step() {
        ++step_;
        const double lr_t = effective_lr(step_);
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor<T>* t = params_[i].tensor;
            if (!t->grad || t->grad->size() != t->numel()) continue;
            const T* g = t->grad_ptr();
            const size_t n = t->numel();
            if (!all_finite(g, n)) {
                if (incidents_)
                    incidents_->record("adam: non-finite gradient for '" + params_[i].name +
                                       "' at step " + std::to_string(step_) + "; update rejected");
                continue;
            }
            T* w = t->ptr();
            T* m = m_[i].data();
            T* v = v_[i].data();
            const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
            for (size_t j = 0; j < n; ++j) {
                m[j] = b1 * m[j] + (T(1) - b1) * g[j];
                v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
                const double mhat = static_cast<double>(m[j]) / bc1;
                const double vhat = static_cast<double>(v[j]) / bc2;
                w[j] -= static_cast<T>(lr_t * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor->zero_grad();
    }

    // Moment buffers exposed for checkpointing, keyed by parameter name.
    std::vector<std::pair<std::string, std::vector<T>*>> moments() {
        std::vector<std::pair<std::string, std::vector<T>*>> out;
        for (size_t i = 0; i < params_.size(); ++i) {
            out.push_back({"adam.m." + params_[i].name, &m_[i]});
            out.push_back({"adam.v." + params_[i].name, &v_[i]});
        }
        return out;
    }

    void set_step_count(int64_t s) { step_ = s; }

private:
    ParamList<T> params_;
    AdamConfig cfg_;
    IncidentLog* incidents_ = nullptr;
    std::vector<std::vector<T>> m_, v_;
    int64_t step_ = 0;
};

}  // namespace scope::nn
