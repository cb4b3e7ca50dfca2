#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "scope/tensor.hpp"

namespace scope::nn {

// ============================================================================
// Parameter registry
// ============================================================================

template <class T>
struct ParamRef {
    std::string name;
    Tensor<T>* tensor;
};

template <class T>
using ParamList = std::vector<ParamRef<T>>;

// Kaiming-style fan-in uniform init.
template <class T>
Tensor<T> init_conv_weight(int cout, int cin, int kh, int kw, Rng& rng) {
    const T bound = std::sqrt(T(3) / static_cast<T>(cin * kh * kw));
    return Tensor<T>::rand_uniform({cout, cin, kh, kw}, rng, -bound, bound, true);
}

template <class T>
Tensor<T> init_linear_weight(int in_dim, int out_dim, Rng& rng) {
    const T bound = std::sqrt(T(3) / static_cast<T>(in_dim));
    return Tensor<T>::rand_uniform({in_dim, out_dim}, rng, -bound, bound, true);
}

// Largest divisor of c that is <= limit; group count for normalization.
inline int norm_groups(int c, int limit = 8) {
    for (int g = std::min(c, limit); g >= 1; --g)
        if (c % g == 0) return g;
    return 1;
}

// ============================================================================
// Sinusoidal timestep embedding
// ============================================================================

template <class T>
Tensor<T> sinusoidal_embedding(double t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw ConfigError("sinusoidal_embedding: dim must be even and >= 2");
    Tensor<T> out = Tensor<T>::zeros({1, dim});
    const int half = dim / 2;
    T* p = out.ptr();
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        p[i] = static_cast<T>(std::sin(t * freq));
        p[half + i] = static_cast<T>(std::cos(t * freq));
    }
    return out;
}

// ============================================================================
// Layer modules. Each holds its parameters and registers them by name.
// ============================================================================

template <class T>
struct Conv2d {
    Tensor<T> weight, bias;
    int stride = 1, pad = 1;

    Conv2d() = default;
    Conv2d(int cin, int cout, int k, int stride, int pad, Rng& rng)
        : weight(init_conv_weight<T>(cout, cin, k, k, rng)),
          bias(Tensor<T>::zeros({cout}, true)),
          stride(stride), pad(pad) {}

    void zero_init() {
        std::fill(weight.data->begin(), weight.data->end(), T(0));
        std::fill(bias.data->begin(), bias.data->end(), T(0));
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }

    void collect(ParamList<T>& out, const std::string& prefix) {
        out.push_back({prefix + ".weight", &weight});
        out.push_back({prefix + ".bias", &bias});
    }
};

template <class T>
struct Linear {
    Tensor<T> weight, bias;

    Linear() = default;
    Linear(int in_dim, int out_dim, Rng& rng)
        : weight(init_linear_weight<T>(in_dim, out_dim, rng)),
          bias(Tensor<T>::zeros({out_dim}, true)) {}

    void zero_init() {
        std::fill(weight.data->begin(), weight.data->end(), T(0));
        std::fill(bias.data->begin(), bias.data->end(), T(0));
    }

    Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }

    void collect(ParamList<T>& out, const std::string& prefix) {
        out.push_back({prefix + ".weight", &weight});
        out.push_back({prefix + ".bias", &bias});
    }
};

template <class T>
struct GroupNorm {
    Tensor<T> gamma, beta;
    int groups = 1;

    GroupNorm() = default;
    explicit GroupNorm(int c)
        : gamma(Tensor<T>::full({c}, T(1), true)),
          beta(Tensor<T>::zeros({c}, true)),
          groups(norm_groups(c)) {}

    Tensor<T> forward(const Tensor<T>& x) const { return group_norm(x, gamma, beta, groups); }

    void collect(ParamList<T>& out, const std::string& prefix) {
        out.push_back({prefix + ".gamma", &gamma});
        out.push_back({prefix + ".beta", &beta});
    }
};

// ----------------------------------------------------------------------------
// Residual block: norm -> silu -> conv, timestep affine, norm -> silu -> conv,
// plus identity / 1x1 skip.
// ----------------------------------------------------------------------------

template <class T>
struct ResBlock {
    GroupNorm<T> norm1, norm2;
    Conv2d<T> conv1, conv2;
    Linear<T> time_affine;
    Conv2d<T> skip;  // 1x1, only when channel count changes
    bool has_skip = false;

    ResBlock() = default;
    ResBlock(int cin, int cout, int time_dim, Rng& rng)
        : norm1(cin), norm2(cout),
          conv1(cin, cout, 3, 1, 1, rng),
          conv2(cout, cout, 3, 1, 1, rng),
          time_affine(time_dim, cout, rng),
          has_skip(cin != cout) {
        if (has_skip) skip = Conv2d<T>(cin, cout, 1, 1, 0, rng);
    }

    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& temb) const {
        Tensor<T> h = conv1.forward(silu(norm1.forward(x)));
        Tensor<T> tvec = reshape(time_affine.forward(temb), {h.shape[0]});
        h = add_channel_bias(h, tvec);
        h = conv2.forward(silu(norm2.forward(h)));
        return add(h, has_skip ? skip.forward(x) : x);
    }

    void collect(ParamList<T>& out, const std::string& prefix) {
        norm1.collect(out, prefix + ".norm1");
        conv1.collect(out, prefix + ".conv1");
        time_affine.collect(out, prefix + ".time");
        norm2.collect(out, prefix + ".norm2");
        conv2.collect(out, prefix + ".conv2");
        if (has_skip) skip.collect(out, prefix + ".skip");
    }
};

// ----------------------------------------------------------------------------
// Attention blocks. Queries always come from the feature map; keys/values
// come from the feature map (self) or from the frozen conditioning tokens
// (cross). A residual connection preserves the input pathway, so zero
// projections reduce to the identity.
// ----------------------------------------------------------------------------

template <class T>
Tensor<T> tokens_from_chw(const Tensor<T>& x) {
    const int c = x.shape[0], hw = x.shape[1] * x.shape[2];
    return transpose(reshape(x, {c, hw}));  // [HW, C]
}

template <class T>
Tensor<T> chw_from_tokens(const Tensor<T>& tokens, int c, int h, int w) {
    return reshape(transpose(tokens), {c, h, w});
}

template <class T>
struct SelfAttentionBlock {
    GroupNorm<T> norm;
    Linear<T> q_proj, k_proj, v_proj, out_proj;

    SelfAttentionBlock() = default;
    SelfAttentionBlock(int channels, Rng& rng)
        : norm(channels),
          q_proj(channels, channels, rng),
          k_proj(channels, channels, rng),
          v_proj(channels, channels, rng),
          out_proj(channels, channels, rng) {
        out_proj.zero_init();
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
        Tensor<T> tokens = tokens_from_chw(norm.forward(x));
        Tensor<T> q = q_proj.forward(tokens);
        Tensor<T> k = k_proj.forward(tokens);
        Tensor<T> v = v_proj.forward(tokens);
        Tensor<T> att = out_proj.forward(scaled_dot_attention(q, k, v));
        return add(x, chw_from_tokens(att, c, h, w));
    }

    void collect(ParamList<T>& out, const std::string& prefix) {
        norm.collect(out, prefix + ".norm");
        q_proj.collect(out, prefix + ".q");
        k_proj.collect(out, prefix + ".k");
        v_proj.collect(out, prefix + ".v");
        out_proj.collect(out, prefix + ".out");
    }
};

template <class T>
struct CrossAttentionBlock {
    GroupNorm<T> norm;
    Linear<T> q_proj, k_proj, v_proj, out_proj;
    int embed_dim = 0;

    CrossAttentionBlock() = default;
    CrossAttentionBlock(int channels, int embed_dim, Rng& rng)
        : norm(channels),
          q_proj(channels, channels, rng),
          k_proj(embed_dim, channels, rng),
          v_proj(embed_dim, channels, rng),
          out_proj(channels, channels, rng),
          embed_dim(embed_dim) {
        out_proj.zero_init();
    }

    // tokens: [N_tokens, D] conditioning matrix. It is consumed as a frozen
    // constant: no gradient is ever written into it.
    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& tokens) const {
        if (tokens.ndim() != 2 || tokens.shape[1] != embed_dim)
            throw ConfigError("cross-attention: conditioning dim " +
                              std::to_string(tokens.ndim() == 2 ? tokens.shape[1] : -1) +
                              " does not match projection dim " + std::to_string(embed_dim));
        const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
        Tensor<T> frozen = tokens.detach();
        Tensor<T> q = q_proj.forward(tokens_from_chw(norm.forward(x)));
        Tensor<T> k = k_proj.forward(frozen);
        Tensor<T> v = v_proj.forward(frozen);
        Tensor<T> att = out_proj.forward(scaled_dot_attention(q, k, v));
        return add(x, chw_from_tokens(att, c, h, w));
    }

    void collect(ParamList<T>& out, const std::string& prefix) {
        norm.collect(out, prefix + ".norm");
        q_proj.collect(out, prefix + ".q");
        k_proj.collect(out, prefix + ".k");
        v_proj.collect(out, prefix + ".v");
        out_proj.collect(out, prefix + ".out");
    }
};

}  // namespace scope::nn
