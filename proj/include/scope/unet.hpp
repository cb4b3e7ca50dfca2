#pragma once

#include <string>
#include <vector>

#include "scope/nn.hpp"

namespace scope::nn {

// ============================================================================
// Attention U-Net noise predictor.
//
// The noisy target and the 6-channel conditioning image are concatenated
// channelwise at the input. Timesteps enter through a sinusoidal embedding
// mapped by a per-block learned affine. Self- plus cross-attention run at the
// deepest down block and the second up block; cross-attention keys/values are
// projected from frozen conditioning tokens.
// ============================================================================

struct UNetConfig {
    int in_channels = 6;       // conditioning image channels (rgb + normals)
    int out_channels = 3;      // predicted noise channels
    int base_width = 32;
    int depth = 3;             // number of down-sampling blocks
    int attn_down_index = 2;   // deepest down block
    int attn_up_index = 1;     // second up block
    int embed_dim = 32;        // conditioning token dim
    int time_embed_dim = 64;
    int num_timesteps = 1000;

    void validate() const {
        if (in_channels < 1 || out_channels < 1 || base_width < 1)
            throw ConfigError("unet: channel counts must be positive");
        if (depth < 1) throw ConfigError("unet: depth must be >= 1");
        if (attn_down_index != depth - 1)
            throw ConfigError("unet: attention must sit at the deepest down block (index " +
                              std::to_string(depth - 1) + ")");
        if (attn_up_index != std::min(1, depth - 1))
            throw ConfigError("unet: attention must sit at the second up block");
        if (embed_dim < 1 || time_embed_dim < 2 || time_embed_dim % 2 != 0)
            throw ConfigError("unet: invalid embedding dims");
        if (num_timesteps < 1) throw ConfigError("unet: num_timesteps must be >= 1");
    }

    int width(int level) const { return base_width * std::min(1 << level, 4); }
};

template <class T>
struct UNet {
    UNetConfig cfg;
    Conv2d<T> conv_in;
    std::vector<ResBlock<T>> down_res;
    std::vector<Conv2d<T>> down_conv;      // stride-2
    SelfAttentionBlock<T> down_self_attn;
    CrossAttentionBlock<T> down_cross_attn;
    ResBlock<T> mid_res;
    std::vector<Conv2d<T>> up_conv;        // after nearest upsample
    std::vector<ResBlock<T>> up_res;
    SelfAttentionBlock<T> up_self_attn;
    CrossAttentionBlock<T> up_cross_attn;
    GroupNorm<T> norm_out;
    Conv2d<T> conv_out;

    UNet() = default;

    UNet(const UNetConfig& config, Rng& rng) : cfg(config) {
        cfg.validate();
        conv_in = Conv2d<T>(cfg.out_channels + cfg.in_channels, cfg.width(0), 3, 1, 1, rng);
        for (int l = 0; l < cfg.depth; ++l) {
            down_res.emplace_back(cfg.width(l), cfg.width(l), cfg.time_embed_dim, rng);
            down_conv.emplace_back(cfg.width(l), cfg.width(l + 1), 3, 2, 1, rng);
        }
        down_self_attn = SelfAttentionBlock<T>(cfg.width(cfg.attn_down_index), rng);
        down_cross_attn = CrossAttentionBlock<T>(cfg.width(cfg.attn_down_index), cfg.embed_dim, rng);
        mid_res = ResBlock<T>(cfg.width(cfg.depth), cfg.width(cfg.depth), cfg.time_embed_dim, rng);
        for (int l = cfg.depth - 1; l >= 0; --l) {
            up_conv.emplace_back(cfg.width(l + 1), cfg.width(l), 3, 1, 1, rng);
            up_res.emplace_back(2 * cfg.width(l), cfg.width(l), cfg.time_embed_dim, rng);
        }
        const int attn_up_level = cfg.depth - 1 - cfg.attn_up_index;
        up_self_attn = SelfAttentionBlock<T>(cfg.width(attn_up_level), rng);
        up_cross_attn = CrossAttentionBlock<T>(cfg.width(attn_up_level), cfg.embed_dim, rng);
        norm_out = GroupNorm<T>(cfg.width(0));
        conv_out = Conv2d<T>(cfg.width(0), cfg.out_channels, 3, 1, 1, rng);
        conv_out.zero_init();  // untrained model predicts zero noise
    }

    // x_t: [out_channels,H,W], cond_image: [in_channels,H,W],
    // cond_tokens: [N_tokens, embed_dim] (frozen).
    Tensor<T> forward(const Tensor<T>& x_t, int t, const Tensor<T>& cond_image,
                      const Tensor<T>& cond_tokens) const {
        if (x_t.ndim() != 3 || x_t.shape[0] != cfg.out_channels)
            throw ShapeError("unet: x_t must be [" + std::to_string(cfg.out_channels) + ",H,W], got " +
                             shape_str(x_t.shape));
        if (cond_image.ndim() != 3 || cond_image.shape[0] != cfg.in_channels)
            throw ShapeError("unet: conditioning image must be [" + std::to_string(cfg.in_channels) +
                             ",H,W], got " + shape_str(cond_image.shape));
        if (cond_image.shape[1] != x_t.shape[1] || cond_image.shape[2] != x_t.shape[2])
            throw ShapeError("unet: x_t and conditioning image spatial sizes differ");
        const int h = x_t.shape[1], w = x_t.shape[2];
        const int factor = 1 << cfg.depth;
        if (h % factor != 0 || w % factor != 0)
            throw ConfigError("unet: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                              " not divisible by " + std::to_string(factor));
        if (t < 0 || t >= cfg.num_timesteps)
            throw DomainError("unet: timestep " + std::to_string(t) + " outside [0," +
                              std::to_string(cfg.num_timesteps) + ")");

        Tensor<T> temb = sinusoidal_embedding<T>(static_cast<double>(t), cfg.time_embed_dim);
        Tensor<T> hcur = conv_in.forward(concat_channels(x_t, cond_image));
        std::vector<Tensor<T>> skips;
        for (int l = 0; l < cfg.depth; ++l) {
            hcur = down_res[static_cast<size_t>(l)].forward(hcur, temb);
            if (l == cfg.attn_down_index) {
                hcur = down_self_attn.forward(hcur);
                hcur = down_cross_attn.forward(hcur, cond_tokens);
            }
            skips.push_back(hcur);
            hcur = down_conv[static_cast<size_t>(l)].forward(hcur);
        }
        hcur = mid_res.forward(hcur, temb);
        for (int u = 0; u < cfg.depth; ++u) {
            hcur = up_conv[static_cast<size_t>(u)].forward(upsample_nearest2(hcur));
            hcur = up_res[static_cast<size_t>(u)].forward(concat_channels(hcur, skips.back()), temb);
            skips.pop_back();
            if (u == cfg.attn_up_index) {
                hcur = up_self_attn.forward(hcur);
                hcur = up_cross_attn.forward(hcur, cond_tokens);
            }
        }
        return conv_out.forward(silu(norm_out.forward(hcur)));
    }

    // Adapter used by the diffusion module.
    Tensor<T> predict_eps(const Tensor<T>& x_t, int t, const Tensor<T>& cond_image,
                          const Tensor<T>& cond_tokens) const {
        return forward(x_t, t, cond_image, cond_tokens);
    }

    ParamList<T> params() {
        ParamList<T> out;
        conv_in.collect(out, "conv_in");
        for (int l = 0; l < cfg.depth; ++l) {
            const std::string p = "down" + std::to_string(l);
            down_res[static_cast<size_t>(l)].collect(out, p + ".res");
            down_conv[static_cast<size_t>(l)].collect(out, p + ".down");
        }
        down_self_attn.collect(out, "down_attn.self");
        down_cross_attn.collect(out, "down_attn.cross");
        mid_res.collect(out, "mid.res");
        for (int u = 0; u < cfg.depth; ++u) {
            const std::string p = "up" + std::to_string(u);
            up_conv[static_cast<size_t>(u)].collect(out, p + ".conv");
            up_res[static_cast<size_t>(u)].collect(out, p + ".res");
        }
        up_self_attn.collect(out, "up_attn.self");
        up_cross_attn.collect(out, "up_attn.cross");
        norm_out.collect(out, "norm_out");
        conv_out.collect(out, "conv_out");
        return out;
    }

    void zero_all_weights() {
        for (auto& p : params()) std::fill(p.tensor->data->begin(), p.tensor->data->end(), T(0));
    }

    size_t param_count() {
        size_t n = 0;
        for (auto& p : params()) n += p.tensor->numel();
        return n;
    }
};

}  // namespace scope::nn
